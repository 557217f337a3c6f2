"""Protein sequences, interaction labels, splits, and dedup mini-batches."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

# 20 standard residues plus ambiguity codes B, Z, X and the rare U, O.
# Unknown letters are mapped to X on input.
ALPHABET = "ACDEFGHIKLMNPQRSTVWYBZXUO"
ALPHABET_INDEX = {aa: i for i, aa in enumerate(ALPHABET)}
UNKNOWN_INDEX = ALPHABET_INDEX["X"]


class ParseError(ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetError(ValueError):
    """The dataset cannot satisfy the requested operation."""


@dataclass(frozen=True)
class ProteinRecord:
    """One protein: identifier, tokenized sequence, optional feature matrix."""

    id: str
    tokens: tuple[int, ...]
    profile: np.ndarray | None = None

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError(f"{self.id}: empty sequence")
        if self.profile is not None and self.profile.shape[0] != len(self.tokens):
            raise ValueError(
                f"{self.id}: profile has {self.profile.shape[0]} rows "
                f"for {len(self.tokens)} residues"
            )

    @property
    def length(self) -> int:
        return len(self.tokens)

    def letters(self) -> str:
        return "".join(ALPHABET[t] for t in self.tokens)


def tokenize(sequence: str) -> tuple[int, ...]:
    return tuple(ALPHABET_INDEX.get(ch, UNKNOWN_INDEX) for ch in sequence.upper())


def parse_fasta(text) -> list[ProteinRecord]:
    """Parse FASTA text (str, bytes, or line iterable) into records.

    Header ids are the first whitespace-delimited token after '>'. Sequences
    are upper-cased; letters outside the alphabet become X; non-alphabetic
    characters, duplicate ids, and empty records are parse errors.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = [l.decode("utf-8") if isinstance(l, bytes) else l for l in text]

    records: list[ProteinRecord] = []
    seen: set[str] = set()
    current_id: str | None = None
    current_seq: list[str] = []
    header_line = 0

    def flush():
        if current_id is None:
            return
        seq = "".join(current_seq)
        if not seq:
            raise ParseError(f"record {current_id!r} has no sequence", header_line)
        records.append(ProteinRecord(current_id, tokenize(seq)))

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            header = line[1:].strip()
            if not header:
                raise ParseError("header with no identifier", lineno)
            current_id = header.split()[0]
            if current_id in seen:
                raise ParseError(f"duplicate id {current_id!r}", lineno)
            seen.add(current_id)
            current_seq = []
            header_line = lineno
        else:
            if current_id is None:
                raise ParseError("sequence data before first '>' header", lineno)
            if not line.isalpha():
                raise ParseError(f"non-alphabetic residue in {line!r}", lineno)
            current_seq.append(line)
    flush()
    return records


def truncate(rec: ProteinRecord, max_len: int) -> ProteinRecord:
    """Keep the first max_len residues (and profile rows); shorter is unchanged."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if rec.length <= max_len:
        return rec
    profile = rec.profile[:max_len] if rec.profile is not None else None
    return replace(rec, tokens=rec.tokens[:max_len], profile=profile)


# --------------------------------------------------------------------------
# Interaction pairs


Pair = tuple[str, str]


def canonical_pair(a: str, b: str) -> Pair:
    return (a, b) if a <= b else (b, a)


@dataclass
class InteractionDataset:
    """Positive and negative unordered id pairs with split assignments."""

    positives: set[Pair]
    negatives: set[Pair]
    split: dict[Pair, str] = field(default_factory=dict)

    def __post_init__(self):
        overlap = self.positives & self.negatives
        if overlap:
            raise DatasetError(f"{len(overlap)} pairs appear in both Y+ and Y-")

    def pairs_for(self, part: str) -> tuple[list[Pair], list[Pair]]:
        pos = sorted(p for p in self.positives if self.split.get(p) == part)
        neg = sorted(p for p in self.negatives if self.split.get(p) == part)
        return pos, neg

    def labeled_pairs(self, part: str | None = None) -> list[tuple[str, str, int]]:
        out = []
        for p in sorted(self.positives):
            if part is None or self.split.get(p) == part:
                out.append((p[0], p[1], 1))
        for p in sorted(self.negatives):
            if part is None or self.split.get(p) == part:
                out.append((p[0], p[1], 0))
        return out


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Counter-based generator; extra stream tokens derive independent streams."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for token in stream:
        if isinstance(token, str):
            token = sum((i + 1) * b for i, b in enumerate(token.encode())) & 0xFFFFFFFFFFFFFFFF
        words.append(int(token) & 0xFFFFFFFFFFFFFFFF)
    key = np.zeros(2, dtype=np.uint64)
    for i, w in enumerate(words):
        key[i % 2] ^= np.uint64(w * 0x9E3779B97F4A7C15 % (1 << 64))
    return np.random.Generator(np.random.Philox(key=key))


def _pair_from_flat(k: int, n: int) -> tuple[int, int]:
    # Decode a flat index over the upper triangle including the diagonal.
    i = int((2 * n + 1 - np.sqrt((2 * n + 1) ** 2 - 8 * k)) // 2)
    offset = k - i * (2 * n - i + 1) // 2
    return i, i + offset


def sample_negatives(
    positives: set[Pair],
    proteins: Sequence[str],
    ratio: float,
    seed: int,
    localization: Mapping[str, str] | None = None,
) -> set[Pair]:
    """Uniformly sample unordered non-positive pairs (self-pairs included).

    With localization labels, only pairs whose proteins live in different
    compartments are eligible. Raises if fewer eligible pairs exist than
    round(ratio * |positives|).
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    ids = sorted(set(proteins))
    n = len(ids)
    target = int(round(ratio * len(positives)))

    total = n * (n + 1) // 2
    if localization is not None:
        missing = [i for i in ids if i not in localization]
        if missing:
            raise DatasetError(f"no localization label for {missing[:3]}...")
        counts: dict[str, int] = {}
        for i in ids:
            counts[localization[i]] = counts.get(localization[i], 0) + 1
        vals = list(counts.values())
        same = sum(c * (c + 1) // 2 for c in vals)
        total = total - same  # self-pairs always share a label
        eligible_positives = sum(
            1 for a, b in positives if localization.get(a) != localization.get(b)
        )
    else:
        eligible_positives = len(positives)
    eligible = total - eligible_positives
    if eligible < target:
        raise DatasetError(
            f"need {target} negative pairs but only {eligible} eligible pairs exist "
            f"(short by {target - eligible})"
        )

    rng = make_rng(seed, "negatives")
    chosen: set[Pair] = set()
    flat_total = n * (n + 1) // 2
    while len(chosen) < target:
        k = int(rng.integers(0, flat_total))
        i, j = _pair_from_flat(k, n)
        pair = canonical_pair(ids[i], ids[j])
        if pair in positives or pair in chosen:
            continue
        if localization is not None and localization[pair[0]] == localization[pair[1]]:
            continue
        chosen.add(pair)
    return chosen


def split_dataset(
    dataset: InteractionDataset,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> InteractionDataset:
    """Shuffle and partition Y+ and Y- into train/val/test at the same fractions."""
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    assignment: dict[Pair, str] = {}
    names = ("train", "val", "test")
    for label, pairs in (("pos", dataset.positives), ("neg", dataset.negatives)):
        ordered = sorted(pairs)
        rng = make_rng(seed, "split", label)
        rng.shuffle(ordered)
        n = len(ordered)
        bounds = [int(round(sum(fractions[: i + 1]) * n)) for i in range(3)]
        start = 0
        for name, stop in zip(names, bounds):
            for p in ordered[start:stop]:
                assignment[p] = name
            start = stop
    return InteractionDataset(set(dataset.positives), set(dataset.negatives), assignment)


# --------------------------------------------------------------------------
# Dedup batching


@dataclass
class Batch:
    """Unique sequences plus pair lists expressed as indices into them."""

    unique_records: list[ProteinRecord]
    pos_pairs: list[tuple[int, int]]
    neg_pairs: list[tuple[int, int]]

    def __post_init__(self):
        ids = [r.id for r in self.unique_records]
        if len(set(ids)) != len(ids):
            raise DatasetError("batch contains a duplicated sequence")
        for i, j in self.pos_pairs + self.neg_pairs:
            if not (0 <= i < len(ids) and 0 <= j < len(ids)):
                raise DatasetError("pair index out of range")

    @property
    def n_pairs(self) -> int:
        return len(self.pos_pairs) + len(self.neg_pairs)


def make_batches(
    labeled_pairs: Sequence[tuple[str, str, int]],
    sequences: Mapping[str, ProteinRecord],
    batch_size: int,
    seed: int,
) -> list[Batch]:
    """Shuffle pairs, chunk them, and collect each chunk's proteins once.

    Every pair becomes a pair of indices into the chunk's unique-record
    list, so one encoder pass per unique protein serves all of its pairs.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    missing = sorted({i for a, b, _ in labeled_pairs for i in (a, b)} - set(sequences))
    if missing:
        raise DatasetError(f"pairs reference unknown proteins: {missing[:5]}")
    order = list(labeled_pairs)
    make_rng(seed, "batches").shuffle(order)
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        index: dict[str, int] = {}
        records: list[ProteinRecord] = []
        pos, neg = [], []
        for a, b, label in chunk:
            for pid in (a, b):
                if pid not in index:
                    index[pid] = len(records)
                    records.append(sequences[pid])
            (pos if label == 1 else neg).append((index[a], index[b]))
        batches.append(Batch(records, pos, neg))
    return batches


# --------------------------------------------------------------------------
# File formats


def parse_pairs_tsv(text) -> list[tuple[str, str, int | None]]:
    """id_a <tab> id_b [<tab> label in {0,1}]; '#' lines are comments."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) == 2:
            rows.append((parts[0], parts[1], None))
        elif len(parts) == 3:
            if parts[2] not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {parts[2]!r}", lineno)
            rows.append((parts[0], parts[1], int(parts[2])))
        else:
            raise ParseError(f"expected 2 or 3 tab-separated columns, got {len(parts)}", lineno)
    return rows


def dataset_from_rows(rows: Iterable[tuple[str, str, int | None]]) -> InteractionDataset:
    positives, negatives = set(), set()
    for a, b, label in rows:
        if label is None:
            raise DatasetError(f"pair ({a}, {b}) is unlabeled")
        (positives if label == 1 else negatives).add(canonical_pair(a, b))
    return InteractionDataset(positives, negatives)


def parse_localization_tsv(text) -> dict[str, str]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 2 columns, got {len(parts)}", lineno)
        out[parts[0]] = parts[1]
    return out


def load_profiles(directory, records: Sequence[ProteinRecord]) -> list[ProteinRecord]:
    """Attach per-position feature matrices from <id>.tsv files in a directory.

    Row counts must match the untruncated sequence length.
    """
    directory = Path(directory)
    out = []
    for rec in records:
        path = directory / f"{rec.id}.tsv"
        if not path.exists():
            raise DatasetError(f"no profile file for {rec.id} at {path}")
        matrix = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if matrix.shape[0] != rec.length:
            raise DatasetError(
                f"{rec.id}: profile has {matrix.shape[0]} rows, sequence has {rec.length}"
            )
        out.append(replace(rec, profile=matrix))
    return out
