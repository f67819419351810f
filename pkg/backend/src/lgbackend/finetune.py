"""Finetuning a base model to predict through a linearized lattice.

Each training sample is paired with N-1 other corpus samples acting as
parallel noise; one lattice column per time-step holds the sample's token
plus the noise tokens, shuffled.  The model is then trained to predict the
sample's next token at P randomly chosen positions, conditioning on the
flattened lattice prefix, the ``<predict>`` marker, and the true G-token
tail.  For N > 2 the noise samples are drawn independently of each other.
"""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass
from pathlib import Path

import torch

from .model import CONFIG_NAME, VOCAB_NAME, ModelBundle, ModelError

DEFAULT_P = 8


class FinetuneError(RuntimeError):
    pass


def read_ids_split(path: str | Path) -> list[list[int]]:
    """Read a ``<split>.ids`` file (the ingest output format): one document
    per line, optional TAB between prompt and body ids; both sides count."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        ids = [int(x) for x in line.replace("\t", " ").split()]
        rows.append(ids)
    return rows


@dataclass
class LlgExample:
    input_ids: list[int]
    label: int


def build_examples(
    samples: list[list[int]],
    n: int,
    g: int,
    p: int,
    rng: random.Random,
    bos_id: int,
    predict_id: int,
    max_len: int,
) -> list[LlgExample]:
    """Construct the per-position training examples for every sample."""
    if len(samples) < 2:
        raise FinetuneError("need at least 2 corpus samples to build noise pairs")
    examples: list[LlgExample] = []
    for d, sample in enumerate(samples):
        t_len = min(len(sample), max_len)
        if t_len < g + 1:
            continue
        noise_idx = []
        while len(noise_idx) < n - 1:
            cand = rng.randrange(len(samples))
            if cand != d and cand not in noise_idx:
                noise_idx.append(cand)
        noise = [samples[i] for i in noise_idx]
        columns = []
        for t in range(t_len):
            col = [sample[t]] + [ns[t % len(ns)] for ns in noise]
            rng.shuffle(col)
            columns.append(col)
        positions = sorted(rng.sample(range(1, t_len + 1), min(p, t_len)))
        for pos in positions:  # predict token at 1-based step pos
            flat = [bos_id]
            for col in columns[: pos - 1]:
                flat.extend(col)
            tail = ([bos_id] * g + sample[: pos - 1])[-g:]
            examples.append(
                LlgExample(flat + [predict_id] + tail, sample[pos - 1])
            )
    if not examples:
        raise FinetuneError("no usable samples (all shorter than the tail)")
    return examples


def _batches(examples: list[LlgExample], batch_size: int):
    for i in range(0, len(examples), batch_size):
        yield examples[i : i + batch_size]


def llg_finetune(
    base_model_dir: str | Path,
    ids_path: str | Path,
    out_dir: str | Path,
    n: int = 2,
    g: int = 1,
    p: int = DEFAULT_P,
    epochs: int = 1,
    lr: float = 5e-4,
    batch_size: int = 8,
    seed: int = 0,
    max_samples: int | None = None,
    max_len: int = 48,
    device: str = "cpu",
) -> tuple[Path, list[float]]:
    """Train and save a lattice-format model; returns (artifact dir, losses).

    ``losses`` holds one mean cross-entropy per batch, in order, so callers
    can check the learning curve.
    """
    bundle = ModelBundle.load(base_model_dir, device=device)
    if bundle.is_llg:
        raise FinetuneError("model is already lattice-finetuned")
    samples = read_ids_split(ids_path)
    if max_samples is not None:
        samples = samples[:max_samples]
    if len(samples) < 2:
        raise FinetuneError("need at least 2 corpus samples")

    rng = random.Random(seed)
    torch.manual_seed(seed)
    examples = build_examples(
        samples, n, g, p, rng,
        bos_id=bundle.config["bos_id"],
        predict_id=bundle.config["predict_token_id"],
        max_len=max_len,
    )
    rng.shuffle(examples)

    net = bundle.net
    net.train()
    optim = torch.optim.AdamW(net.parameters(), lr=lr)
    losses: list[float] = []
    pad_id = bundle.config["bos_id"]
    for _ in range(epochs):
        for batch in _batches(examples, batch_size):
            width = max(len(ex.input_ids) for ex in batch)
            input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
            attention = torch.zeros((len(batch), width), dtype=torch.long)
            last = []
            for row, ex in enumerate(batch):
                L = len(ex.input_ids)
                input_ids[row, :L] = torch.tensor(ex.input_ids)
                attention[row, :L] = 1
                last.append(L - 1)
            input_ids = input_ids.to(device)
            attention = attention.to(device)
            logits = net(input_ids, attention_mask=attention).logits
            picked = logits[range(len(batch)), last, : bundle.vocab_size]
            labels = torch.tensor([ex.label for ex in batch], device=device)
            loss = torch.nn.functional.cross_entropy(picked, labels)
            optim.zero_grad()
            loss.backward()
            optim.step()
            losses.append(float(loss.detach()))
    net.eval()

    config = dict(bundle.config)
    config.update(llg=True, n=n, g=g, p=p, finetune_seed=seed)
    tuned = ModelBundle(config, net, device=device)
    out = tuned.save(out_dir, vocab_src=Path(base_model_dir) / VOCAB_NAME)
    (out / "train_log.json").write_text(
        json.dumps({"losses": losses, "examples": len(examples)}, indent=2) + "\n"
    )
    return out, losses


def loss_decreased(losses: list[float]) -> bool:
    """Monotone-on-average check: last third clearly below the first third."""
    if len(losses) < 6:
        raise FinetuneError("too few batches to judge a learning curve")
    third = len(losses) // 3
    return statistics.fmean(losses[-third:]) < statistics.fmean(losses[:third])
