"""Load delimited-text tables into an in-memory corpus, sanitize cell text to
the 8-bit character range, compute text-length statistics, and produce
deterministic train/val/test splits.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_BUCKETS = ("train", "val", "test")


@dataclass
class Column:
    column_id: str
    entries: list[str]


@dataclass
class Table:
    table_id: str
    column_names: list[str]
    columns: list[Column]

    @property
    def row_count(self) -> int:
        return len(self.columns[0].entries)


@dataclass
class Corpus:
    root: str
    tables: list[Table]

    def columns(self) -> list[Column]:
        """All columns across tables, in sorted table order then header order."""
        out: list[Column] = []
        for table in sorted(self.tables, key=lambda t: t.table_id):
            out.extend(table.columns)
        return out

    def column_ids(self) -> list[str]:
        return [c.column_id for c in self.columns()]

    def get_column(self, column_id: str) -> Column:
        for table in self.tables:
            for col in table.columns:
                if col.column_id == column_id:
                    return col
        raise KeyError(f"unknown column id: {column_id}")


@dataclass
class CorpusManifest:
    """Record of which files make up a corpus and how its columns were split."""

    root: str
    tables: list[tuple[str, str]]  # (path, table_id)
    column_count: int
    splits: dict[str, str] = field(default_factory=dict)  # column_id -> bucket
    seed: int = 0
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)

    def bucket_ids(self, bucket: str) -> list[str]:
        if bucket not in SPLIT_BUCKETS:
            raise ValueError(f"unknown split bucket: {bucket}")
        return sorted(cid for cid, b in self.splits.items() if b == bucket)

    def save(self, path: str | Path) -> None:
        doc = {
            "root": self.root,
            "tables": [{"path": p, "table_id": t} for p, t in self.tables],
            "column_count": self.column_count,
            "splits": self.splits,
            "seed": self.seed,
            "ratios": list(self.ratios),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        doc = json.loads(Path(path).read_text())
        return cls(
            root=doc["root"],
            tables=[(t["path"], t["table_id"]) for t in doc["tables"]],
            column_count=doc["column_count"],
            splits=dict(doc["splits"]),
            seed=doc["seed"],
            ratios=tuple(doc["ratios"]),
        )


@dataclass
class LengthStats:
    mean: float
    std_dev: float
    variance: float
    min: int
    max: int
    coverage_at: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_dev": self.std_dev,
            "variance": self.variance,
            "min": self.min,
            "max": self.max,
            "coverage_at": {str(k): v for k, v in sorted(self.coverage_at.items())},
        }


def sanitize(text: str) -> str:
    """Replace every character above code point 255 with NUL.

    Characters representable in 8 bits (extended ASCII range) pass through
    unchanged, so the function is total and idempotent.
    """
    if text.isascii():
        return text
    return "".join(c if ord(c) <= 255 else "\x00" for c in text)


def column_text_length(column: Column) -> int:
    """Total character count over all entries of the column."""
    return sum(len(e) for e in column.entries)


def _unique_names(names: list[str]) -> list[str]:
    """Disambiguate duplicate header names with ordinal suffixes."""
    seen: dict[str, int] = {}
    out = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return out


def load_table(path: str | Path, delimiter: str = ",", table_id: str | None = None) -> Table:
    """Parse one delimited text file into a Table.

    The first row is the header; every data row must have the same arity.
    Cell text is sanitized to the 8-bit range but otherwise kept verbatim.
    """
    path = Path(path)
    if table_id is None:
        table_id = path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise ValueError(f"empty table: {path}")
    header, data = rows[0], rows[1:]
    if not data:
        raise ValueError(f"empty table (no data rows): {path}")
    for i, row in enumerate(data, start=2):
        if len(row) != len(header):
            raise ValueError(f"ragged row at line {i} in {path}")
    names = _unique_names([h for h in header])
    columns = [
        Column(
            column_id=f"{table_id}/{name}",
            entries=[sanitize(row[j]) for row in data],
        )
        for j, name in enumerate(names)
    ]
    return Table(table_id=table_id, column_names=names, columns=columns)


def discover_tables(root: str | Path, pattern: str = "*.csv") -> list[tuple[str, str]]:
    """List (path, table_id) pairs under root, sorted by table_id.

    The table id is the path relative to root without its extension, so a
    layout like ``201-csv/14.csv`` yields the id ``201-csv/14``.
    """
    root = Path(root)
    pairs = []
    for p in sorted(root.rglob(pattern)):
        rel = p.relative_to(root)
        table_id = str(rel.with_suffix("")).replace("\\", "/")
        pairs.append((str(p), table_id))
    return pairs


def load_corpus(root: str | Path, delimiter: str = ",", pattern: str = "*.csv") -> Corpus:
    """Load every table file under root into a Corpus."""
    pairs = discover_tables(root, pattern)
    if not pairs:
        raise ValueError(f"no table files under {root}")
    tables = [load_table(p, delimiter=delimiter, table_id=tid) for p, tid in pairs]
    return Corpus(root=str(root), tables=tables)


def build_manifest(corpus: Corpus, pattern: str = "*.csv") -> CorpusManifest:
    pairs = discover_tables(corpus.root, pattern)
    return CorpusManifest(
        root=corpus.root,
        tables=pairs,
        column_count=len(corpus.column_ids()),
    )


def compute_length_stats(corpus: Corpus, cutoffs: tuple[int, ...] = (250,)) -> LengthStats:
    """Per-column total text lengths summarized over the corpus.

    Moments use the population convention (divide by N); coverage_at maps
    each cutoff to the fraction of columns whose total length fits within it.
    """
    lengths = np.array([column_text_length(c) for c in corpus.columns()], dtype=np.int64)
    if lengths.size == 0:
        raise ValueError("empty corpus")
    mean = float(np.mean(lengths, dtype=np.float64))
    variance = float(np.var(lengths, dtype=np.float64))
    coverage = {int(c): coverage_at_cutoff(corpus, int(c)) for c in cutoffs}
    return LengthStats(
        mean=mean,
        std_dev=math.sqrt(variance),
        variance=variance,
        min=int(lengths.min()),
        max=int(lengths.max()),
        coverage_at=coverage,
    )


def coverage_at_cutoff(corpus: Corpus, cutoff: int) -> float:
    """Fraction of columns whose full text fits within the cutoff length."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    lengths = [column_text_length(c) for c in corpus.columns()]
    if not lengths:
        raise ValueError("empty corpus")
    return sum(1 for n in lengths if n <= cutoff) / len(lengths)


def split_columns(
    column_ids: list[str],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> dict[str, str]:
    """Assign column ids to train/val/test buckets by a seeded permutation.

    Bucket sizes follow the largest-remainder rule so each matches its ratio
    to within one column. The assignment depends only on the sorted id list,
    the ratios, and the seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1.0, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    n = len(column_ids)
    n_buckets = sum(1 for r in ratios if r > 0)
    if n < n_buckets:
        raise ValueError(f"fewer columns ({n}) than split buckets ({n_buckets})")

    sizes = [math.floor(n * r) for r in ratios]
    remainders = [n * r - s for r, s in zip(ratios, sizes)]
    for _ in range(n - sum(sizes)):
        i = max(range(3), key=lambda j: (remainders[j], -j))
        sizes[i] += 1
        remainders[i] = -1.0

    ordered = sorted(column_ids)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ordered[i] for i in perm]
    assignment: dict[str, str] = {}
    start = 0
    for bucket, size in zip(SPLIT_BUCKETS, sizes):
        for cid in shuffled[start : start + size]:
            assignment[cid] = bucket
        start += size
    return assignment


def split_corpus(
    manifest: CorpusManifest,
    column_ids: list[str],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> CorpusManifest:
    """Return a copy of the manifest with a fresh deterministic split."""
    return CorpusManifest(
        root=manifest.root,
        tables=list(manifest.tables),
        column_count=len(column_ids),
        splits=split_columns(column_ids, ratios, seed),
        seed=seed,
        ratios=tuple(ratios),
    )
