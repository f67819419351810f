"""Corpus ingestion and the committed synthetic fixture.

Input is plain UTF-8 text, one document per line; a line may carry a single
TAB separating a prompt from its continuation.  Ingestion is deterministic:
the vocabulary is frequency-sorted with ties broken by first occurrence,
specials first, so a given corpus always produces byte-identical id files
and manifests.

The fixture generator synthesizes a corpus from a seeded sparse word-graph
with Zipf-weighted successor sets.  It exists so the test and experiment
suites run offline on committed data with realistic n-gram sharpness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .rng import Rng
from .vocab import Vocabulary

TokenId = int

DEFAULT_VOCAB_CAP = 8192


class CorpusError(ValueError):
    pass


@dataclass
class Document:
    prompt: list[str] | None
    body: list[str]

    def all_tokens(self) -> list[str]:
        return (self.prompt or []) + self.body


def parse_line(line: str, path: str, lineno: int) -> Document | None:
    """One document per line; a single TAB splits prompt from body."""
    line = line.rstrip("\n")
    if not line.strip():
        return None
    parts = line.split("\t")
    if len(parts) == 1:
        return Document(None, parts[0].split())
    if len(parts) == 2:
        prompt, body = parts[0].split(), parts[1].split()
        if not prompt or not body:
            raise CorpusError(f"{path}:{lineno}: empty prompt or body in pair line")
        return Document(prompt, body)
    raise CorpusError(f"{path}:{lineno}: more than one TAB in line")


def read_corpus_file(path: Path) -> list[Document]:
    docs = []
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8 ({exc})") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        doc = parse_line(line, str(path), lineno)
        if doc is not None:
            docs.append(doc)
    return docs


def build_vocabulary(
    docs: list[Document], cap: int = DEFAULT_VOCAB_CAP, include_eot: bool = False
) -> Vocabulary:
    """Frequency-sorted word list, ties by first occurrence, specials first."""
    freq: dict[str, int] = {}
    first: dict[str, int] = {}
    pos = 0
    for doc in docs:
        for tok in doc.all_tokens():
            freq[tok] = freq.get(tok, 0) + 1
            if tok not in first:
                first[tok] = pos
            pos += 1
    ranked = sorted(freq, key=lambda w: (-freq[w], first[w]))
    return Vocabulary.from_words(ranked[:cap], include_eot=include_eot)


@dataclass
class IngestResult:
    vocab: Vocabulary
    splits: dict[str, list[tuple[list[TokenId] | None, list[TokenId]]]]
    manifest: dict


def ingest(
    corpus_dir: str | Path,
    out_dir: str | Path | None = None,
    vocab_cap: int = DEFAULT_VOCAB_CAP,
    include_eot: bool = False,
) -> IngestResult:
    """Tokenize every ``*.txt`` split in a directory and fix the vocabulary.

    The vocabulary is built from the ``train`` split when present, otherwise
    from all splits.  With ``out_dir`` set, writes ``vocab.txt``, one
    ``<split>.ids`` file per split, and ``manifest.json``.
    """
    corpus_dir = Path(corpus_dir)
    files = sorted(corpus_dir.glob("*.txt"))
    if not files:
        raise CorpusError(f"no .txt files found in {corpus_dir}")
    split_docs: dict[str, list[Document]] = {}
    for path in files:
        docs = read_corpus_file(path)
        if docs:
            split_docs[path.stem] = docs
    if not split_docs:
        raise CorpusError(f"corpus in {corpus_dir} is empty")

    vocab_source = split_docs.get("train")
    if vocab_source is None:
        vocab_source = [doc for docs in split_docs.values() for doc in docs]
    vocab = build_vocabulary(vocab_source, cap=vocab_cap, include_eot=include_eot)

    eot_suffix = [vocab.eot_id] if include_eot and vocab.eot_id is not None else []
    splits: dict[str, list[tuple[list[TokenId] | None, list[TokenId]]]] = {}
    token_counts: dict[str, int] = {}
    for name, docs in split_docs.items():
        rows = []
        count = 0
        for doc in docs:
            prompt_ids = (
                [vocab.id_of(t) for t in doc.prompt] if doc.prompt is not None else None
            )
            body_ids = [vocab.id_of(t) for t in doc.body] + eot_suffix
            rows.append((prompt_ids, body_ids))
            count += len(doc.all_tokens())
        splits[name] = rows
        token_counts[name] = count

    manifest = {
        "files": [p.name for p in files],
        "splits": {
            name: {"documents": len(rows), "tokens": token_counts[name]}
            for name, rows in splits.items()
        },
        "vocab_size": len(vocab),
        "vocab_hash": vocab.content_hash(),
        "vocab_cap": vocab_cap,
        "include_eot": include_eot,
    }
    result = IngestResult(vocab=vocab, splits=splits, manifest=manifest)
    if out_dir is not None:
        write_ingest(result, out_dir)
    return result


def write_ingest(result: IngestResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.vocab.save(out / "vocab.txt")
    for name, rows in sorted(result.splits.items()):
        lines = []
        for prompt_ids, body_ids in rows:
            body = " ".join(map(str, body_ids))
            if prompt_ids is None:
                lines.append(body)
            else:
                lines.append(" ".join(map(str, prompt_ids)) + "\t" + body)
        (out / f"{name}.ids").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "manifest.json").write_text(
        json.dumps(result.manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_split(out_dir: str | Path, name: str) -> list[tuple[list[TokenId] | None, list[TokenId]]]:
    path = Path(out_dir) / f"{name}.ids"
    if not path.exists():
        raise CorpusError(f"missing split file {path}")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) == 2:
            rows.append(
                ([int(x) for x in parts[0].split()], [int(x) for x in parts[1].split()])
            )
        else:
            rows.append((None, [int(x) for x in parts[0].split()]))
    return rows


def bodies(rows: list[tuple[list[TokenId] | None, list[TokenId]]]) -> list[list[TokenId]]:
    return [body for _, body in rows]


# ---------------------------------------------------------------------------
# Synthetic fixture corpus


_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gr", "kl", "pl", "st", "tr", "sk"]
_NUCLEI = ["a", "e", "i", "o", "u", "ae", "ia", "ou"]
_CODAS = ["", "n", "r", "s", "l", "m", "x", "th"]


def _make_words(count: int, rng: Rng) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < count:
        syllables = 2 + rng.randbelow(2)
        word = "".join(
            _ONSETS[rng.randbelow(len(_ONSETS))]
            + _NUCLEI[rng.randbelow(len(_NUCLEI))]
            + (_CODAS[rng.randbelow(len(_CODAS))] if s == syllables - 1 else "")
            for s in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass(frozen=True)
class FixtureSpec:
    """Shape of the synthetic corpus; defaults match the committed fixture."""

    seed: int = 20240717
    vocab_words: int = 500
    train_lines: int = 2200
    heldout_lines: int = 400
    test_lines: int = 120
    min_len: int = 50
    max_len: int = 90
    min_successors: int = 24
    max_successors: int = 64
    zipf_exponent: float = 1.15
    prompt_len: int = 8


def synth_corpus(spec: FixtureSpec = FixtureSpec()) -> dict[str, str]:
    """Generate the fixture corpus files as {filename: content}.

    Every word gets its own Zipf-weighted successor set drawn with
    popularity bias, so bigram conditionals are sharp but wide enough that
    a mid-rank sample is visibly less likely than a top-rank one.
    """
    rng = Rng(spec.seed)
    words = _make_words(spec.vocab_words, rng)
    v = len(words)

    popularity = [1.0 / (1 + rng.randbelow(v)) for _ in range(v)]

    def pick_by_popularity() -> int:
        return rng.sample_index(popularity)

    successors: list[list[int]] = []
    weights: list[list[float]] = []
    for w in range(v):
        m = spec.min_successors + rng.randbelow(spec.max_successors - spec.min_successors + 1)
        chosen: list[int] = []
        seen = {w}
        while len(chosen) < m:
            cand = pick_by_popularity()
            if cand not in seen:
                seen.add(cand)
                chosen.append(cand)
        successors.append(chosen)
        weights.append([1.0 / (r + 1) ** spec.zipf_exponent for r in range(m)])

    def gen_line(length: int) -> list[str]:
        cur = pick_by_popularity()
        out = [words[cur]]
        for _ in range(length - 1):
            cur = successors[cur][rng.sample_index(weights[cur])]
            out.append(words[cur])
        return out

    def gen_block(lines: int, with_prompt: bool) -> str:
        rows = []
        for _ in range(lines):
            length = spec.min_len + rng.randbelow(spec.max_len - spec.min_len + 1)
            toks = gen_line(length)
            if with_prompt:
                rows.append(" ".join(toks[: spec.prompt_len]) + "\t" + " ".join(toks))
            else:
                rows.append(" ".join(toks))
        return "\n".join(rows) + "\n"

    return {
        "train.txt": gen_block(spec.train_lines, with_prompt=False),
        "heldout.txt": gen_block(spec.heldout_lines, with_prompt=False),
        "test.txt": gen_block(spec.test_lines, with_prompt=True),
    }


def write_fixture(out_dir: str | Path, spec: FixtureSpec = FixtureSpec()) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(synth_corpus(spec).items()):
        (out / name).write_text(content, encoding="utf-8")
