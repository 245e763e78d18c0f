"""Vocabulary, tokenization, dataset files, and synthetic task generation.

Tokenization is whitespace word-level throughout: one tokenizer for data
and metrics alike. Reserved ids 0..4 are pinned (pad, bos, eos, sep, unk)
and are never produced by corpus counting.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD_ID, BOS_ID, EOS_ID, SEP_ID, UNK_ID = range(5)
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>", "<unk>")

SYNTH_TASKS = ("copy", "reverse", "sort", "parity_label")
PARITY_LABELS = ("even", "odd")
PARITY_MARK = "mark"


class IngestionError(ValueError):
    """A data file could not be read; message carries path and line number."""


class Vocab:
    """Bidirectional token <-> id map with the reserved tokens first."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:5]) != list(RESERVED_TOKENS):
            raise ValueError("vocabulary must start with the five reserved tokens")
        self.tokens = list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, UNK_ID) for tok in text.split()]

    def decode(self, ids) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(lines, max_size: int, min_freq: int = 1) -> Vocab:
    """Frequency-ranked word vocabulary; ties break lexicographically."""
    if max_size <= len(RESERVED_TOKENS):
        raise ValueError(f"max_size must exceed {len(RESERVED_TOKENS)} reserved slots")
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        counts.update(line.split())
    if n_lines == 0 or not counts:
        raise IngestionError("empty corpus: nothing to build a vocabulary from")
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_freq and tok not in RESERVED_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    keep = ranked[: max_size - len(RESERVED_TOKENS)]
    return Vocab(list(RESERVED_TOKENS) + keep)


@dataclass
class PairExample:
    """One (source, target) instance; ids filled once a vocabulary exists."""

    raw_source: str
    raw_target: str
    source: list[int] = field(default_factory=list)
    target: list[int] = field(default_factory=list)

    def tokenize(self, vocab: Vocab) -> "PairExample":
        self.source = vocab.encode(self.raw_source)
        self.target = vocab.encode(self.raw_target)
        return self


def load_pairs(path, fmt: str, vocab: Vocab | None = None) -> list[PairExample]:
    """Read tsv (source<TAB>target) or jsonl ({"source":..,"target":..}) pairs.

    Malformed lines raise IngestionError naming the file and line number.
    Extra jsonl fields are ignored; empty targets are allowed.
    """
    if fmt not in ("tsv", "jsonl"):
        raise ValueError(f"unknown pair format {fmt!r} (expected tsv or jsonl)")
    pairs: list[PairExample] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise IngestionError(f"{path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if fmt == "tsv":
                if "\t" not in line:
                    raise IngestionError(f"{path}:{lineno}: expected source<TAB>target")
                src, tgt = line.split("\t", 1)
            else:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise IngestionError(f"{path}:{lineno}: bad JSON ({e.msg})") from e
                if "source" not in rec or "target" not in rec:
                    raise IngestionError(f"{path}:{lineno}: record missing 'source' or 'target'")
                src, tgt = str(rec["source"]), str(rec["target"])
            pairs.append(PairExample(raw_source=src, raw_target=tgt))
    if vocab is not None:
        for ex in pairs:
            ex.tokenize(vocab)
    return pairs


@dataclass
class SynthData:
    """A generated task: vocabulary, disjoint splits, and span widths."""

    task: str
    vocab: Vocab
    train: list[PairExample]
    valid: list[PairExample]
    test: list[PairExample]
    source_len: int
    target_len: int

    def split(self, name: str) -> list[PairExample]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]


def synth_task(name: str, n: int, len_range: tuple[int, int], vocab_size: int,
               seed: int) -> SynthData:
    """Generate a deterministic toy task with disjoint 80/10/10 splits.

    copy/reverse/sort targets transform the source tokens; parity_label
    targets are the single class token "even"/"odd" for the count of the
    marked symbol (the content token named "mark").
    """
    if name not in SYNTH_TASKS:
        raise ValueError(f"unknown task {name!r} (expected one of {SYNTH_TASKS})")
    lo, hi = len_range
    if not (1 <= lo <= hi):
        raise ValueError(f"bad length range {len_range}")
    if vocab_size < 2:
        raise ValueError("need at least 2 content tokens")
    if n < 10:
        raise ValueError("need n >= 10 to split 80/10/10")

    width = len(str(vocab_size - 1))
    if name == "parity_label":
        content = [PARITY_MARK] + [f"w{i:0{width}d}" for i in range(1, vocab_size)]
        extra = list(PARITY_LABELS)
    else:
        content = [f"w{i:0{width}d}" for i in range(vocab_size)]
        extra = []
    vocab = Vocab(list(RESERVED_TOKENS) + extra + content)
    content_ids = np.array([vocab.token_to_id[t] for t in content])

    space = sum(vocab_size**length for length in range(lo, hi + 1))
    if space < 2 * n:
        raise ValueError(
            f"cannot draw {n} distinct sources from a space of {space}; "
            "grow vocab_size or the length range"
        )

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    seen: set[tuple[int, ...]] = set()
    sources: list[tuple[int, ...]] = []
    while len(sources) < n:
        length = int(rng.integers(lo, hi + 1))
        src = tuple(int(i) for i in rng.choice(content_ids, size=length))
        if src in seen:
            continue
        seen.add(src)
        sources.append(src)

    mark_id = vocab.token_to_id[PARITY_MARK] if name == "parity_label" else -1
    examples = []
    for src in sources:
        if name == "copy":
            tgt = list(src)
        elif name == "reverse":
            tgt = list(reversed(src))
        elif name == "sort":
            tgt = sorted(src)
        else:
            parity = PARITY_LABELS[sum(1 for i in src if i == mark_id) % 2]
            tgt = [vocab.token_to_id[parity]]
        src_text = vocab.decode(src)
        tgt_text = vocab.decode(tgt)
        examples.append(PairExample(src_text, tgt_text, list(src), tgt))

    n_train = int(0.8 * n)
    n_valid = int(0.1 * n)
    return SynthData(
        task=name,
        vocab=vocab,
        train=examples[:n_train],
        valid=examples[n_train : n_train + n_valid],
        test=examples[n_train + n_valid :],
        source_len=hi,
        target_len=1 if name == "parity_label" else hi,
    )


def write_pairs_tsv(path, pairs: list[PairExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in pairs:
            fh.write(f"{ex.raw_source}\t{ex.raw_target}\n")
