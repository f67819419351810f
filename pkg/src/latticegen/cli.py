"""Command-line entry points.

Subcommands: ingest, train, serve, generate, attack, experiment, bench,
fixture.  Configuration files are JSON; TOML is accepted when the running
Python ships ``tomllib``.  Exit codes: 0 success, 2 configuration error,
3 runtime failure.  ``LATTICEGEN_OUT`` overrides any configured output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .attacks import (
    DEFAULT_BEAM_WIDTH,
    beam_search_attack,
    exact_attack,
    hypotheses_to_json,
    rbs_attack,
    save_report,
)
from .corpus import FixtureSpec, bodies, ingest, load_split, write_fixture
from .embeddings import PpmiEmbeddings
from .experiment import (
    ExperimentSpec,
    bench_speed,
    bench_to_text,
    run_experiment,
    run_non_lattice_baseline,
    save_json,
    to_csv,
)
from .lm import NGramModel, SamplerConfig, train
from .protocol import (
    LatticeServer,
    SchemeSpec,
    SessionConfig,
    SocketTransport,
    VocabInfo,
    run_in_process,
    run_session,
)
from .rng import Rng
from .transcript import TranscriptRecord
from .vocab import Vocabulary


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            raise ConfigError("TOML configs need Python >= 3.11; use JSON") from None
        return tomllib.loads(p.read_text(encoding="utf-8"))
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from None


def _out_dir(configured: str) -> str:
    return os.environ.get("LATTICEGEN_OUT", configured)


def cmd_ingest(args) -> int:
    result = ingest(
        args.corpus, out_dir=args.out, vocab_cap=args.vocab_cap, include_eot=args.eot
    )
    print(json.dumps(result.manifest, sort_keys=True, indent=2))
    return 0


def cmd_train(args) -> int:
    vocab = Vocabulary.load(Path(args.data) / "vocab.txt")
    rows = load_split(args.data, args.split)
    model = train(
        bodies(rows),
        order=args.order,
        vocab_size=len(vocab),
        bos_id=vocab.bos_id,
        add_k=args.add_k,
    )
    model.save(args.out)
    print(f"trained order-{args.order} model on {len(rows)} documents -> {args.out}")
    if args.embeddings:
        emb = PpmiEmbeddings.build(bodies(rows), len(vocab))
        emb.save(args.embeddings)
        print(f"embeddings -> {args.embeddings}")
    return 0


def cmd_serve(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    model = NGramModel.load(args.model)
    host, _, port = args.listen.rpartition(":")
    server = LatticeServer(
        (host or "127.0.0.1", int(port)),
        model,
        VocabInfo.of(vocab),
        store_full=args.full_vector,
        max_k=args.max_k,
    )
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def _session_config_from_args(args, vocab: Vocabulary) -> SessionConfig:
    prompt = tuple(vocab.encode(args.prompt)) if args.prompt else ()
    return SessionConfig(
        n=args.n,
        g=args.g,
        t_max=args.t,
        k=args.k,
        sampler=SamplerConfig(
            k=args.sample_k, temperature=args.temperature,
            repetition_penalty=args.repetition_penalty,
        ),
        scheme=SchemeSpec(
            name=args.scheme, noise_k=args.noise_k, mix_ratio=args.mix_ratio,
            prompt_mix_ratio=args.prompt_mix_ratio,
        ),
        prompt=prompt,
        prime=args.prime,
    )


def cmd_generate(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    config = _session_config_from_args(args, vocab)
    emb = None
    if args.scheme == "synonym":
        if not args.embeddings:
            raise ConfigError("--embeddings is required for the synonym scheme")
        emb = PpmiEmbeddings.load(args.embeddings)

    if args.server:
        host, _, port = args.server.rpartition(":")
        transport = SocketTransport(host or "127.0.0.1", int(port))
        try:
            transcript, outcome = run_session(
                config, Rng(args.seed), transport, VocabInfo.of(vocab), emb=emb
            )
        finally:
            transport.close()
    else:
        if not args.model:
            raise ConfigError("either --server or --model is required")
        model = NGramModel.load(args.model)
        transcript, outcome, _ = run_in_process(
            config, model, VocabInfo.of(vocab), client_seed=args.seed,
            emb=emb, store_full=args.full_vector,
        )
    print(vocab.decode(list(outcome.true_seq)))
    if args.transcript:
        if transcript is None:
            print("note: remote server holds the transcript; nothing to save", file=sys.stderr)
        else:
            transcript.save(args.transcript)
            print(f"transcript -> {args.transcript}", file=sys.stderr)
    return 0


def cmd_attack(args) -> int:
    tr = TranscriptRecord.load(args.transcript)
    truth = None
    if args.truth:
        truth = [int(x) for x in Path(args.truth).read_text().split()]
    if args.exact:
        hyps = [exact_attack(tr)]
    elif args.rbs:
        hyps = list(rbs_attack(tr, args.beam_width))
    else:
        hyps = [beam_search_attack(tr, args.beam_width)]
    report = hypotheses_to_json(hyps, truth)
    if args.out:
        save_report(args.out, report)
        print(f"report -> {args.out}")
    else:
        print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_experiment(args) -> int:
    obj = _load_config(args.config)
    obj["out_dir"] = _out_dir(obj.get("out_dir", "results"))
    spec = ExperimentSpec.from_json(obj)
    rows = run_experiment(spec)
    print(to_csv(rows))
    if args.baseline:
        baseline = run_non_lattice_baseline(spec)
        save_json(Path(spec.out_dir) / "baseline.json", baseline)
        print(json.dumps(baseline, sort_keys=True, indent=2))
    failed = [r for r in rows if r["status"] != "ok"]
    return 3 if failed else 0


def cmd_bench(args) -> int:
    obj = _load_config(args.config)
    obj["out_dir"] = _out_dir(obj.get("out_dir", "results"))
    spec = ExperimentSpec.from_json(obj)
    rows = bench_speed(spec, sessions_per_cell=args.sessions)
    text = bench_to_text(rows)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_fixture(args) -> int:
    write_fixture(args.out, FixtureSpec(seed=args.seed))
    print(f"fixture corpus -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticegen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="tokenize a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-cap", type=int, default=corpus_mod.DEFAULT_VOCAB_CAP)
    p.add_argument("--eot", action="store_true", help="append an end-of-text token per document")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit an n-gram model on an ingested split")
    p.add_argument("--data", required=True, help="ingested corpus directory")
    p.add_argument("--split", default="train")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--add-k", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", help="also build co-occurrence embeddings to this path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="run the lattice inference server")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--listen", default="127.0.0.1:7609")
    p.add_argument("--max-k", type=int, default=512,
                   help="largest top-K a client may request")
    p.add_argument("--full-vector", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("generate", help="run one client session")
    p.add_argument("--vocab", required=True)
    p.add_argument("--model", help="in-process backend model path")
    p.add_argument("--server", help="host:port of a running server")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--g", type=int, default=1)
    p.add_argument("--t", type=int, default=60)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--scheme", default="mixing", choices=["synonym", "parallel", "mixing"])
    p.add_argument("--noise-k", type=int, default=5)
    p.add_argument("--mix-ratio", type=float, default=0.1)
    p.add_argument("--prompt-mix-ratio", type=float, default=0.2)
    p.add_argument("--sample-k", type=int, default=50)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--repetition-penalty", type=float, default=1.05)
    p.add_argument("--prompt", default="")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--prime", type=int, default=2_147_483_647)
    p.add_argument("--embeddings")
    p.add_argument("--transcript", help="save the server-side transcript here (.lgt)")
    p.add_argument("--full-vector", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("attack", help="decode a transcript")
    p.add_argument("--transcript", required=True)
    p.add_argument("--beam-width", type=int, default=DEFAULT_BEAM_WIDTH)
    p.add_argument("--rbs", action="store_true", help="repeated beam search")
    p.add_argument("--exact", action="store_true", help="exact dynamic-programming oracle")
    p.add_argument("--truth", help="file of true token ids, for match flags")
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="run a grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", action="store_true", help="also run the no-lattice baseline")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="speed comparison across the grid")
    p.add_argument("--config", required=True)
    p.add_argument("--sessions", type=int, default=2)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fixture", help="regenerate the synthetic fixture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=FixtureSpec.seed)
    p.set_defaults(func=cmd_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
