"""Experiment orchestration: grids of (N, G, scheme) cells, baselines, bench.

A cell fully determines its sessions: per-trial seeds derive from the master
seed and the cell coordinates, so cells are independent and the emitted CSV
is byte-identical across runs and platforms.  Failed cells keep their row
with a recorded reason; nothing is silently dropped.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .attacks import beam_search_attack, rbs_attack
from .corpus import bodies, load_split
from .embeddings import PpmiEmbeddings
from .lattice import is_prime
from .lm import NGramModel, SamplerConfig, TokenId, perplexity, plain_generate, sample, train
from .metrics import max_true_ratio, pmi, semantic_overlap_proxy, true_ratio
from .noise import SYNONYM_SKIP, SYNONYM_TAKE
from .protocol import SchemeSpec, SessionConfig, VocabInfo, run_in_process
from .rng import Rng, derive_seed
from .vocab import Vocabulary


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """One grid run: corpus, cells, sampling, seeds, output layout."""

    data_dir: str
    out_dir: str = "results"
    ns: tuple[int, ...] = (2,)
    gs: tuple[int, ...] = (1,)
    schemes: tuple[str, ...] = ("synonym", "parallel", "mixing")
    mix_ratios: tuple[float, ...] = (0.1,)
    trials: int = 50
    t_max: int = 60
    k: int = 50
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    noise_k: int = 5
    prompt_mix_ratio: float | None = 0.2
    prompt_len: int = 0
    master_seed: int = 10007
    add_k: float = 0.1
    lambda_mode: str = "uniform"
    beam_width: int = 16
    full_vector: bool = True
    include_vanilla: bool = True
    eval_split: str = "heldout"
    workers: int = 0

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        kwargs = dict(obj)
        if "sampler" in kwargs:
            kwargs["sampler"] = SamplerConfig(**kwargs["sampler"])
        for key in ("ns", "gs", "schemes", "mix_ratios"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        unknown = set(kwargs) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ExperimentError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class Cell:
    n: int
    g: int
    scheme: str
    mix_ratio: float | None = None

    @property
    def label(self) -> str:
        base = f"N{self.n}-G{self.g}-{self.scheme}"
        if self.mix_ratio is not None:
            base += f"-mr{self.mix_ratio:g}"
        return base


def grid_cells(spec: ExperimentSpec) -> list[Cell]:
    cells: list[Cell] = []
    for g in spec.gs:
        if spec.include_vanilla:
            cells.append(Cell(n=1, g=g, scheme="vanilla"))
        for n in spec.ns:
            for scheme in spec.schemes:
                if scheme == "mixing":
                    cells.extend(
                        Cell(n=n, g=g, scheme=scheme, mix_ratio=r)
                        for r in spec.mix_ratios
                    )
                else:
                    cells.append(Cell(n=n, g=g, scheme=scheme))
    return cells


def _lambdas(order: int, mode: str) -> list[float] | None:
    if mode == "uniform":
        return None  # model default
    if mode == "top":
        return [0.0] * (order - 1) + [1.0]
    raise ExperimentError(f"unknown lambda mode {mode!r}")


class Workbench:
    """Shared immutable assets for one experiment: corpus, models, embeddings."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        data = Path(spec.data_dir)
        self.vocab = Vocabulary.load(data / "vocab.txt")
        self.train_rows = load_split(data, "train")
        try:
            self.eval_rows = load_split(data, spec.eval_split)
        except Exception:
            self.eval_rows = self.train_rows
        try:
            self.prompt_rows = load_split(data, "test")
        except Exception:
            self.prompt_rows = self.train_rows
        self._models: dict[int, NGramModel] = {}
        self._evaluators: dict[int, NGramModel] = {}
        self._emb: PpmiEmbeddings | None = None

    def model(self, g: int) -> NGramModel:
        if g not in self._models:
            order = g + 1
            self._models[g] = train(
                bodies(self.train_rows),
                order=order,
                vocab_size=len(self.vocab),
                bos_id=self.vocab.bos_id,
                add_k=self.spec.add_k,
                lambdas=_lambdas(order, self.spec.lambda_mode),
            )
        return self._models[g]

    def evaluator(self, g: int) -> NGramModel:
        # Quality judged by a higher-order model fit on held-out text.
        if g not in self._evaluators:
            order = g + 2
            self._evaluators[g] = train(
                bodies(self.eval_rows),
                order=order,
                vocab_size=len(self.vocab),
                bos_id=self.vocab.bos_id,
                add_k=self.spec.add_k,
                lambdas=_lambdas(order, self.spec.lambda_mode),
            )
        return self._evaluators[g]

    @property
    def emb(self) -> PpmiEmbeddings:
        if self._emb is None:
            self._emb = PpmiEmbeddings.build(bodies(self.train_rows), len(self.vocab))
        return self._emb

    def prompt_for(self, trial: int) -> tuple[TokenId, ...]:
        if self.spec.prompt_len <= 0:
            return ()
        prompt_ids, body_ids = self.prompt_rows[trial % len(self.prompt_rows)]
        source = prompt_ids if prompt_ids else body_ids
        return tuple(source[: self.spec.prompt_len])


def trial_seed(spec: ExperimentSpec, cell: Cell, trial: int) -> int:
    return derive_seed(
        spec.master_seed,
        "cell",
        cell.n,
        cell.g,
        cell.scheme,
        "mr",
        "" if cell.mix_ratio is None else f"{cell.mix_ratio:.6g}",
        "trial",
        trial,
    )


def trial_prime(spec: ExperimentSpec, cell: Cell, trial: int, vocab_size: int) -> int:
    cand = (derive_seed(trial_seed(spec, cell, trial), "prime") % (1 << 40)) + vocab_size + 2
    while not is_prime(cand):
        cand += 1
    return cand


def _session_config(spec: ExperimentSpec, cell: Cell, bench: Workbench, trial: int) -> SessionConfig:
    scheme = SchemeSpec(
        name=cell.scheme,
        noise_k=spec.noise_k,
        mix_ratio=cell.mix_ratio if cell.mix_ratio is not None else 0.0,
        prompt_mix_ratio=spec.prompt_mix_ratio,
    )
    return SessionConfig(
        n=cell.n,
        g=cell.g,
        t_max=spec.t_max,
        k=spec.k,
        sampler=spec.sampler,
        scheme=scheme,
        prompt=bench.prompt_for(trial),
        prime=trial_prime(spec, cell, trial, len(bench.vocab)),
    )


def run_trial(spec: ExperimentSpec, cell: Cell, bench: Workbench, trial: int) -> dict:
    """One session plus attacks plus metrics; returns a flat metric dict."""
    model = bench.model(cell.g)
    evaluator = bench.evaluator(cell.g)
    seed = trial_seed(spec, cell, trial)
    prompt = bench.prompt_for(trial)

    if cell.scheme == "vanilla":
        rng = Rng(seed).spawn("true")
        truth = plain_generate(
            model, prompt, spec.t_max, spec.sampler, rng,
            wire_k=spec.k, eot_id=bench.vocab.eot_id,
        )
        bs_ratio = 1.0
        rbs_ratio = 1.0
        mean_hyp = 1.0
        bs_proxy = rbs_proxy = 1.0
    else:
        config = _session_config(spec, cell, bench, trial)
        emb = bench.emb if cell.scheme == "synonym" else None
        transcript, outcome, _ = run_in_process(
            config,
            model,
            VocabInfo.of(bench.vocab),
            client_seed=seed,
            emb=emb,
            store_full=spec.full_vector,
        )
        truth = list(outcome.true_seq)
        bs = beam_search_attack(transcript, spec.beam_width)
        hyps = rbs_attack(transcript, spec.beam_width)
        bs_ratio = true_ratio(bs.path, truth)
        rbs_ratio = max_true_ratio([h.path for h in hyps], truth)
        mean_hyp = sum(true_ratio(h.path, truth) for h in hyps) / len(hyps)
        bs_proxy = semantic_overlap_proxy(bs.path, truth, bench.emb)
        rbs_proxy = max(
            semantic_overlap_proxy(h.path, truth, bench.emb) for h in hyps
        )

    row = {
        "ppl": perplexity(evaluator, truth),
        "pmi": pmi(truth[len(prompt):], prompt, evaluator) if prompt else None,
        "bs_true_ratio": bs_ratio,
        "rbs_max_true_ratio": rbs_ratio,
        "mean_hyp_true_ratio": mean_hyp,
        "bs_proxy": bs_proxy,
        "rbs_max_proxy": rbs_proxy,
    }
    return row


_METRICS = (
    "ppl",
    "pmi",
    "bs_true_ratio",
    "rbs_max_true_ratio",
    "mean_hyp_true_ratio",
    "bs_proxy",
    "rbs_max_proxy",
)


def _aggregate(rows: list[dict]) -> dict:
    out = {}
    for key in _METRICS:
        values = [r[key] for r in rows if r.get(key) is not None]
        if not values:
            out[f"{key}_mean"] = None
            out[f"{key}_stderr"] = None
            continue
        out[f"{key}_mean"] = statistics.fmean(values)
        out[f"{key}_stderr"] = (
            statistics.stdev(values) / math.sqrt(len(values)) if len(values) > 1 else 0.0
        )
    return out


def run_cell(spec: ExperimentSpec, cell: Cell, bench: Workbench) -> dict:
    base = {
        "cell": cell.label,
        "n": cell.n,
        "g": cell.g,
        "scheme": cell.scheme,
        "mix_ratio": cell.mix_ratio,
        "trials": spec.trials,
    }
    try:
        rows = [run_trial(spec, cell, bench, i) for i in range(spec.trials)]
        base.update(status="ok", reason="")
        base.update(_aggregate(rows))
    except Exception as exc:  # the cell is voided, never dropped
        base.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
        base.update({f"{k}_mean": None for k in _METRICS})
        base.update({f"{k}_stderr": None for k in _METRICS})
    return base


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Run every grid cell; write results.csv and results.md; return rows."""
    bench = Workbench(spec)
    cells = grid_cells(spec)
    # Warm the shared caches before any pool fans out.
    for g in spec.gs:
        bench.model(g)
        bench.evaluator(g)
    _ = bench.emb  # overlap proxy uses it in every non-vanilla cell
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(lambda c: run_cell(spec, c, bench), cells))
    else:
        rows = [run_cell(spec, c, bench) for c in cells]
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(to_csv(rows), encoding="utf-8")
    (out / "results.md").write_text(to_markdown(rows), encoding="utf-8")
    return rows


_CSV_COLUMNS = (
    ["cell", "n", "g", "scheme", "mix_ratio", "trials", "status", "reason"]
    + [f"{k}_{suffix}" for k in _METRICS for suffix in ("mean", "stderr")]
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def to_csv(rows: list[dict]) -> str:
    lines = [",".join(_CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(col)) for col in _CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def to_markdown(rows: list[dict]) -> str:
    header = (
        "| Config | PPL | PMI | True-Ratio BS | True-Ratio RBS (max) "
        "| Overlap proxy BS | Overlap proxy RBS (max) |"
    )
    sep = "|---|---|---|---|---|---|---|"
    lines = [header, sep]
    for row in rows:
        if row["status"] != "ok":
            lines.append(f"| {row['cell']} | failed: {row['reason']} | | | | | |")
            continue

        def cell(key):
            mean, err = row.get(f"{key}_mean"), row.get(f"{key}_stderr")
            if mean is None:
                return "/"
            return f"{mean:.3f} ± {err:.3f}"

        lines.append(
            f"| {row['cell']} | {cell('ppl')} | {cell('pmi')} | {cell('bs_true_ratio')} "
            f"| {cell('rbs_max_true_ratio')} | {cell('bs_proxy')} | {cell('rbs_max_proxy')} |"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Non-lattice synonym baseline


def non_lattice_generate(
    model: NGramModel,
    emb: PpmiEmbeddings,
    prompt: Sequence[TokenId],
    t_max: int,
    cfg: SamplerConfig,
    ratio: float,
    seed: int,
    wire_k: int,
    skip: int = SYNONYM_SKIP,
    take: int = SYNONYM_TAKE,
) -> tuple[list[TokenId], list[TokenId]]:
    """Sample true tokens while the model only ever sees a noised history.

    With probability ``ratio`` the token fed back is an embedding neighbor
    of the true one.  Returns (true sequence, server-visible sequence).
    """
    true_rng = Rng(seed).spawn("true")
    noise_rng = Rng(seed).spawn("noise")
    g = model.order - 1
    true_seq: list[TokenId] = []
    visible: list[TokenId] = []
    for t in range(1, t_max + 1):
        if t <= len(prompt):
            w = prompt[t - 1]
        else:
            padded = [model.bos_id] * g + visible
            tail = tuple(padded[len(padded) - g :])
            dist = model.next_dist((), tail, k=wire_k)
            w = sample(dist, cfg, true_seq, true_rng)
        true_seq.append(w)
        v = w
        if ratio > 0.0 and noise_rng.random() < ratio:
            cands = emb.nearest_tokens(w, skip, take, rng=noise_rng)
            v = cands[noise_rng.randbelow(len(cands))]
        visible.append(v)
    return true_seq, visible


def run_non_lattice_baseline(
    spec: ExperimentSpec, ratios: Sequence[float] = (1.0, 0.5)
) -> list[dict]:
    """Quality metrics for synonym noising without any lattice."""
    bench = Workbench(spec)
    rows = []
    for g in spec.gs:
        model = bench.model(g)
        evaluator = bench.evaluator(g)
        for ratio in ratios:
            per_trial = []
            for i in range(spec.trials):
                cell = Cell(n=1, g=g, scheme=f"nolattice-syn{ratio:g}")
                seed = trial_seed(spec, cell, i)
                prompt = bench.prompt_for(i)
                truth, _ = non_lattice_generate(
                    model, bench.emb, prompt, spec.t_max, spec.sampler,
                    ratio, seed, spec.k,
                )
                per_trial.append(
                    {
                        "ppl": perplexity(evaluator, truth),
                        "pmi": pmi(truth[len(prompt):], prompt, evaluator)
                        if prompt
                        else None,
                    }
                )
            row = {
                "cell": f"G{g}-nolattice-syn{ratio:g}",
                "g": g,
                "ratio": ratio,
                "trials": spec.trials,
                "ppl_mean": statistics.fmean(r["ppl"] for r in per_trial),
                "pmi_mean": (
                    statistics.fmean(r["pmi"] for r in per_trial)
                    if per_trial and per_trial[0]["pmi"] is not None
                    else None
                ),
            }
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Speed bench


def _best_time(fn, repeats: int = 5) -> float:
    # Minimum over repeats: scheduling noise only ever inflates a run.
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_speed(
    spec: ExperimentSpec, sessions_per_cell: int = 2, repeats: int = 5
) -> list[dict]:
    """Seconds-per-token for plain generation vs lattice sessions.

    Reports the per-step inference fan-out N^G and the slowdown multiplier
    against the same-order plain model.
    """
    bench = Workbench(spec)
    vocab_info = VocabInfo.of(bench.vocab)
    rows = []
    for g in spec.gs:
        model = bench.model(g)

        def run_vanilla():
            for i in range(sessions_per_cell):
                rng = Rng(derive_seed(spec.master_seed, "bench", g, i)).spawn("true")
                plain_generate(model, (), spec.t_max, spec.sampler, rng, wire_k=spec.k)

        run_vanilla()  # warmup
        vanilla_time = _best_time(run_vanilla, repeats) / (sessions_per_cell * spec.t_max)
        rows.append(
            {
                "system": f"vanilla-G{g}",
                "n": 1,
                "g": g,
                "fanout": 1,
                "sec_per_token": vanilla_time,
                "slowdown": 1.0,
            }
        )
        for n in spec.ns:
            cell = Cell(n=n, g=g, scheme="parallel")

            def run_lg():
                for i in range(sessions_per_cell):
                    config = _session_config(spec, cell, bench, i)
                    run_in_process(
                        config, model, vocab_info,
                        client_seed=trial_seed(spec, cell, i),
                        store_full=False,
                    )

            run_lg()  # warmup
            lg_time = _best_time(run_lg, repeats) / (sessions_per_cell * spec.t_max)
            rows.append(
                {
                    "system": f"LG-N{n}-G{g}",
                    "n": n,
                    "g": g,
                    "fanout": n**g,
                    "sec_per_token": lg_time,
                    "slowdown": lg_time / vanilla_time,
                }
            )
    return rows


def bench_to_text(rows: list[dict]) -> str:
    lines = ["system,n,g,fanout,sec_per_token,slowdown"]
    for r in rows:
        lines.append(
            f"{r['system']},{r['n']},{r['g']},{r['fanout']},"
            f"{r['sec_per_token']:.6g},{r['slowdown']:.4g}"
        )
    return "\n".join(lines) + "\n"


def save_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
