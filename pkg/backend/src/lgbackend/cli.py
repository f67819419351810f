"""Backend CLI: init a base model, serve it, or lattice-finetune it."""

from __future__ import annotations

import argparse
import sys

from .finetune import DEFAULT_P, FinetuneError, llg_finetune, loss_decreased
from .model import ModelError, init_model
from .service import DEFAULT_K, serve_backend


def cmd_init(args) -> int:
    out = init_model(
        args.vocab, args.out,
        n_embd=args.embd, n_layer=args.layers, n_head=args.heads,
        n_positions=args.positions, seed=args.seed,
    )
    print(f"base model -> {out}")
    return 0


def cmd_serve(args) -> int:
    server = serve_backend(
        args.model, port=args.port, host=args.host, k=args.k,
        device=args.device, verbose=args.verbose,
    )
    print(f"serving {args.model} on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_finetune(args) -> int:
    out, losses = llg_finetune(
        args.model, args.ids, args.out,
        n=args.n, g=args.g, p=args.p,
        epochs=args.epochs, lr=args.lr, batch_size=args.batch,
        seed=args.seed, max_samples=args.max_samples, max_len=args.max_len,
        device=args.device,
    )
    trend = "down" if loss_decreased(losses) else "flat"
    print(f"finetuned model -> {out} ({len(losses)} batches, loss trend {trend})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgbackend", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a randomly initialized base model")
    p.add_argument("--vocab", required=True, help="vocabulary file (one token per line)")
    p.add_argument("--out", required=True)
    p.add_argument("--embd", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--positions", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("serve", help="serve a model directory over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7610)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--device", default="cpu")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("finetune", help="lattice-finetune a base model")
    p.add_argument("--model", required=True, help="base model directory")
    p.add_argument("--ids", required=True, help="ingested split file (train.ids)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--g", type=int, default=1)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_finetune)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, FinetuneError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
