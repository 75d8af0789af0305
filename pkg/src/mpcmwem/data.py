"""Schemas, CSV ingestion, local histograms and share files."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .mwem import HistogramDomain
from .ring import RING_BITS, FixedPointCodec
from .sharing import Share, share_secret


class DataFormatError(ValueError):
    """Malformed schema, CSV or share file."""


@dataclass(frozen=True)
class Column:
    name: str
    categories: tuple[str, ...]


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label: str | None = None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def domain(self) -> HistogramDomain:
        return HistogramDomain(self.names, tuple(len(c.categories) for c in self.columns))

    def label_index(self) -> int:
        if self.label is None:
            raise DataFormatError("schema has no label column")
        return self.names.index(self.label)

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """One column per line: ``name categorical cat1,cat2,... [label]``; ``#`` comments."""
        cols, label = [], None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "label"):
                raise DataFormatError(f"schema line {lineno}: expected 'name categorical values [label]'")
            name, kind, values = parts[:3]
            if kind != "categorical":
                raise DataFormatError(f"schema line {lineno}: unsupported column type {kind!r}")
            cats = tuple(values.split(","))
            if any(not c for c in cats) or len(set(cats)) != len(cats):
                raise DataFormatError(f"schema line {lineno}: categories must be non-empty and distinct")
            if name in {c.name for c in cols}:
                raise DataFormatError(f"schema line {lineno}: duplicate column {name!r}")
            cols.append(Column(name, cats))
            if len(parts) == 4:
                if label is not None:
                    raise DataFormatError("schema declares more than one label column")
                label = name
        if not cols:
            raise DataFormatError("schema has no columns")
        return cls(tuple(cols), label)

    @classmethod
    def load(cls, path) -> "Schema":
        try:
            return cls.parse(Path(path).read_text())
        except OSError as exc:
            raise DataFormatError(f"cannot read schema {path}: {exc}") from exc


def bundled_path(name: str) -> Path:
    """Path of a file shipped in ``mpcmwem/datasets`` (e.g. ``car.csv``)."""
    return Path(str(resources.files("mpcmwem") / "datasets" / name))


def load_csv_discretize(path, schema: Schema) -> np.ndarray:
    """Read a headed CSV into an (rows, columns) array of category indices (schema order)."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    lookup = [{v: i for i, v in enumerate(c.categories)} for c in schema.columns]
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if sorted(header) != sorted(schema.names):
            raise DataFormatError(f"{path}: header {header} does not match schema columns {list(schema.names)}")
        order = [header.index(n) for n in schema.names]
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise DataFormatError(f"{path}: line {lineno} has {len(rec)} fields, expected {len(header)}")
            out = []
            for j, src in enumerate(order):
                value = rec[src].strip()
                try:
                    out.append(lookup[j][value])
                except KeyError:
                    raise DataFormatError(
                        f"{path}: line {lineno}, column {schema.names[j]!r}: unknown category {value!r}") from None
            rows.append(out)
    return np.array(rows, dtype=np.int64).reshape(-1, len(schema.columns))


def write_csv(path, records: np.ndarray, schema: Schema) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names)
        for rec in np.asarray(records, dtype=np.int64):
            w.writerow([schema.columns[j].categories[v] for j, v in enumerate(rec)])


def build_local_histogram(records, domain: HistogramDomain) -> np.ndarray:
    records = np.asarray(records, dtype=np.int64).reshape(-1, len(domain.cards))
    if records.size and (np.any(records < 0) or np.any(records >= np.array(domain.cards))):
        raise DataFormatError("record outside the domain")
    return np.bincount(domain.cell_index(records), minlength=domain.size).astype(np.int64)


def sample_synthetic(A, n: int, seed: int, domain: HistogramDomain) -> np.ndarray:
    """``n`` i.i.d. records drawn from the distribution proportional to ``A``."""
    A = np.asarray(A, dtype=np.float64)
    rng = np.random.default_rng(seed)
    cells = rng.choice(A.size, size=int(n), p=A / A.sum())
    return domain.cell_tuple(cells)


# ---------------------------------------------------------------- share files

MAGIC = b"MWEMSHR1"
FILE_VERSION = 1
_HEADER = struct.Struct("<8s6Q")


@dataclass
class ShareFile:
    party: int
    holder: int
    f: int
    a: np.ndarray
    b: np.ndarray
    k: int = RING_BITS
    version: int = FILE_VERSION

    @property
    def cells(self) -> int:
        return int(self.a.size)

    def share(self) -> Share:
        return Share(self.a, self.b, self.party)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, self.version, self.k, self.f, self.cells, self.party, self.holder)
        pairs = np.empty(2 * self.cells, dtype="<u8")
        pairs[0::2], pairs[1::2] = self.a, self.b
        return head + pairs.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "ShareFile":
        if len(data) < _HEADER.size:
            raise DataFormatError(f"{source}: truncated share-file header")
        magic, version, k, f, cells, party, holder = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DataFormatError(f"{source}: not a share file (bad magic)")
        if version != FILE_VERSION or k != RING_BITS:
            raise DataFormatError(f"{source}: unsupported version {version} / ring size {k}")
        if party > 2:
            raise DataFormatError(f"{source}: party id {party} out of range")
        body = data[_HEADER.size:]
        if len(body) != 16 * cells:
            raise DataFormatError(f"{source}: payload has {len(body)} bytes, header implies {16 * cells}")
        pairs = np.frombuffer(body, dtype="<u8").astype(np.uint64)
        return cls(party, holder, f, pairs[0::2].copy(), pairs[1::2].copy(), k, version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ShareFile":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise DataFormatError(f"cannot read share file {path}: {exc}") from exc
        return cls.from_bytes(data, str(path))


def share_histogram_file(histogram, codec: FixedPointCodec, rng: np.random.Generator,
                         holder: int = 0) -> list[ShareFile]:
    """Three share files (one per computing party) for a holder's integer counts."""
    h = np.asarray(histogram)
    if h.dtype.kind == "f" and not np.all(h == np.round(h)):
        raise DataFormatError("histogram counts must be integers")
    h = h.astype(np.int64)
    if np.any(h < 0) or np.any(h >= 2 ** (RING_BITS - codec.f - 1)):
        raise DataFormatError("counts outside the codec's integer range")
    views = share_secret(h, rng)
    return [ShareFile(v.pid, holder, codec.f, v.a.copy(), v.b.copy()) for v in views]


def aggregate_shares(files: Sequence[ShareFile]) -> Share:
    """Sum one party's share files across holders (local, no communication)."""
    if not files:
        raise DataFormatError("no share files given")
    first = files[0]
    for sf in files[1:]:
        if (sf.k, sf.f, sf.cells, sf.party) != (first.k, first.f, first.cells, first.party):
            raise DataFormatError(
                f"share-file header mismatch: (k={sf.k}, f={sf.f}, cells={sf.cells}, party={sf.party}) vs "
                f"(k={first.k}, f={first.f}, cells={first.cells}, party={first.party})")
    holders = [sf.holder for sf in files]
    if len(set(holders)) != len(holders):
        raise DataFormatError(f"duplicate holder ids {holders}")
    a = np.sum([sf.a for sf in files], axis=0, dtype=np.uint64)
    b = np.sum([sf.b for sf in files], axis=0, dtype=np.uint64)
    return Share(a, b, first.party)
