"""Synthetic interaction benchmark with planted sequence motifs.

Each protein carries exactly one of a small set of fixed 8-residue motifs,
inserted at a random position into an otherwise uniform-random sequence.
Two proteins interact exactly when they carry the same motif, so the
dataset is separable from sequence alone and the planted spans give ground
truth for gate interpretability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    ALPHABET,
    InteractionDataset,
    ProteinRecord,
    canonical_pair,
    make_rng,
    sample_negatives,
    split_dataset,
    tokenize,
)

# Motifs are drawn uniformly from the 20 standard residues; background
# positions follow natural amino-acid frequencies (UniProt averages), so a
# conserved motif stands out against the skewed composition the way real
# domains do.
_STANDARD = ALPHABET[:20]
_BACKGROUND_FREQ = {
    "A": 8.25, "C": 1.38, "D": 5.45, "E": 6.72, "F": 3.86,
    "G": 7.08, "H": 2.27, "I": 5.91, "K": 5.80, "L": 9.65,
    "M": 2.41, "N": 4.06, "P": 4.73, "Q": 3.93, "R": 5.53,
    "S": 6.63, "T": 5.35, "V": 6.86, "W": 1.10, "Y": 2.92,
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_proteins: int = 200
    min_len: int = 100
    max_len: int = 300
    motif_len: int = 8
    n_motif_types: int = 4
    n_positives: int = 500
    negative_ratio: float = 1.0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0


@dataclass
class SyntheticData:
    records: dict[str, ProteinRecord]
    dataset: InteractionDataset
    motif_type: dict[str, int]
    spans: dict[str, list[tuple[str, int, int]]]  # 1-based inclusive, one per protein
    motifs: list[str] = field(default_factory=list)

    @property
    def annotations(self) -> dict[str, list[tuple[str, int, int]]]:
        return self.spans


def make_motif_dataset(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    rng = make_rng(spec.seed, "synthetic")
    letters = np.array(list(_STANDARD))
    background = np.array([_BACKGROUND_FREQ[a] for a in _STANDARD])
    background = background / background.sum()

    motifs = []
    while len(motifs) < spec.n_motif_types:
        motif = "".join(rng.choice(letters, size=spec.motif_len))
        if motif not in motifs:
            motifs.append(motif)

    records: dict[str, ProteinRecord] = {}
    motif_type: dict[str, int] = {}
    spans: dict[str, list[tuple[str, int, int]]] = {}
    assignment = np.arange(spec.n_proteins) % spec.n_motif_types
    rng.shuffle(assignment)
    for i in range(spec.n_proteins):
        pid = f"syn{i:04d}"
        kind = int(assignment[i])
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        seq = list(rng.choice(letters, size=length, p=background))
        start = int(rng.integers(0, length - spec.motif_len + 1))
        seq[start : start + spec.motif_len] = list(motifs[kind])
        records[pid] = ProteinRecord(pid, tokenize("".join(seq)))
        motif_type[pid] = kind
        spans[pid] = [(f"motif{kind}", start + 1, start + spec.motif_len)]

    ids = sorted(records)
    same_type_pairs = [
        canonical_pair(a, b)
        for ai, a in enumerate(ids)
        for b in ids[ai + 1 :]
        if motif_type[a] == motif_type[b]
    ]
    if len(same_type_pairs) < spec.n_positives:
        raise ValueError(
            f"only {len(same_type_pairs)} same-motif pairs available, "
            f"need {spec.n_positives}"
        )
    pick = rng.choice(len(same_type_pairs), size=spec.n_positives, replace=False)
    positives = {same_type_pairs[k] for k in sorted(pick)}

    # Remaining same-motif pairs would be label noise as negatives, so the
    # motif type doubles as a localization label: only cross-type pairs are
    # eligible.
    localization = {pid: str(motif_type[pid]) for pid in ids}
    negatives = sample_negatives(
        positives, ids, spec.negative_ratio, spec.seed, localization=localization
    )
    dataset = split_dataset(
        InteractionDataset(positives, negatives), spec.fractions, spec.seed
    )
    return SyntheticData(records, dataset, motif_type, spans, motifs)


def write_fixture_files(data: SyntheticData, directory) -> dict[str, str]:
    """Write FASTA / pairs / motifs files for CLI runs; returns the paths."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fasta = directory / "sequences.fasta"
    with open(fasta, "w") as fh:
        for pid in sorted(data.records):
            fh.write(f">{pid}\n{data.records[pid].letters()}\n")

    paths = {"fasta": str(fasta)}
    for part in ("train", "val", "test", None):
        name = part if part else "all"
        path = directory / f"pairs_{name}.tsv"
        with open(path, "w") as fh:
            fh.write("# id_a\tid_b\tlabel\n")
            for a, b, label in data.dataset.labeled_pairs(part):
                fh.write(f"{a}\t{b}\t{label}\n")
        paths[f"pairs_{name}"] = str(path)

    motifs = directory / "motifs.tsv"
    with open(motifs, "w") as fh:
        fh.write("# id\tmotif_id\tstart\tend\n")
        for pid in sorted(data.spans):
            for motif_id, start, end in data.spans[pid]:
                fh.write(f"{pid}\t{motif_id}\t{start}\t{end}\n")
    paths["motifs"] = str(motifs)
    return paths
