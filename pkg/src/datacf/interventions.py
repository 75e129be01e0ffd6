"""Dataset treatments: resize, class upsampling, and informed upsampling.

Treatments only manipulate sample ids; features are materialized later from
the pool. Added samples are always fresh draws taken from the dataset's
lineage cursor, so they never collide with ids already seen in that lineage.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from ._hashing import sha256_hex
from .synth import Cursor, DataPool, SampleId

GRID_PERCENTAGES = (0.0, 0.05, 0.10, 0.20, 0.30, 0.50)
DEFAULT_MAJORITY = 0.8


class InterventionError(ValueError):
    pass


@dataclass(frozen=True)
class BaseDataset:
    """Ordered training ids plus the lineage cursor for further fresh draws.

    ``nominal_size`` is the dataset length that upsampling percentages refer
    to. It defaults to ``len(ids)`` and is carried unchanged through upsampling
    treatments, so two successive 10% upsamplings of a 100-sample base add 10
    samples each.
    """

    ids: tuple[SampleId, ...]
    cursor: Cursor
    nominal_size: int | None = None

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise InterventionError("dataset contains duplicate sample ids")

    def __len__(self):
        return len(self.ids)

    @property
    def reference_size(self) -> int:
        return len(self.ids) if self.nominal_size is None else self.nominal_size

    def class_counts(self, num_classes: int | None = None) -> tuple[int, ...]:
        k = num_classes if num_classes is not None else len(self.cursor.positions)
        counts = Counter(s.class_index for s in self.ids)
        return tuple(counts.get(c, 0) for c in range(k))

    def digest(self) -> str:
        return sha256_hex([[s.class_index, s.draw_index] for s in self.ids])


@dataclass(frozen=True)
class TreatedDataset(BaseDataset):
    base_digest: str = ""
    spec: "InterventionSpec" = None


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class Identity:
    def __str__(self):
        return "identity"


@dataclass(frozen=True)
class Resize:
    target_n: int

    def __post_init__(self):
        if self.target_n < 1:
            raise InterventionError("resize target must be >= 1")

    def __str__(self):
        return f"resize:{self.target_n}"


@dataclass(frozen=True)
class UpsampleClass:
    class_index: int
    percentage: float

    def __post_init__(self):
        _check_percentage(self.percentage)

    def __str__(self):
        return f"upsample:c={self.class_index},p={self.percentage:.2f}"


@dataclass(frozen=True)
class InformedUpsample:
    class_index: int
    percentage: float
    majority_fraction: float = DEFAULT_MAJORITY

    def __post_init__(self):
        _check_percentage(self.percentage)
        if not 0.5 < self.majority_fraction <= 1.0:
            raise InterventionError("majority_fraction must lie in (0.5, 1]")

    def __str__(self):
        return (f"informed:c={self.class_index},p={self.percentage:.2f},"
                f"m={self.majority_fraction:g}")


InterventionSpec = Union[Identity, Resize, UpsampleClass, InformedUpsample]


def _check_percentage(p):
    if not p >= 0:
        raise InterventionError("percentage must be non-negative")


_SPEC_RE = {
    "resize": re.compile(r"^resize:(\d+)$"),
    "upsample": re.compile(r"^upsample:c=(\d+),p=([0-9.eE+-]+)$"),
    "informed": re.compile(r"^informed:c=(\d+),p=([0-9.eE+-]+),m=([0-9.eE+-]+)$"),
}


def parse_spec(text: str) -> InterventionSpec:
    """Inverse of ``str(spec)``; also accepts free-form percentages."""
    text = text.strip().replace(" ", "")
    if text == "identity":
        return Identity()
    for kind, rx in _SPEC_RE.items():
        m = rx.match(text)
        if not m:
            continue
        try:
            if kind == "resize":
                return Resize(int(m[1]))
            if kind == "upsample":
                return UpsampleClass(int(m[1]), float(m[2]))
            return InformedUpsample(int(m[1]), float(m[2]), float(m[3]))
        except ValueError as exc:
            raise InterventionError(f"bad intervention {text!r}: {exc}") from exc
    raise InterventionError(f"unrecognized intervention {text!r}")


# ---------------------------------------------------------------------------
# operators


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def scaled_count(fraction: float, n: int) -> int:
    """``round(fraction * n)`` with half-up rounding on the decimal value of ``fraction``."""
    return round_half_up(Fraction(str(fraction)) * n)


def _draw_ids(cursor: Cursor, class_index: int, n: int) -> tuple[list[SampleId], Cursor]:
    start = cursor.positions[class_index]
    return [SampleId(class_index, start + i) for i in range(n)], cursor.advance(class_index, n)


def _check_class(pool: DataPool, c: int):
    if not 0 <= c < pool.config.num_classes:
        raise InterventionError(f"class {c} out of range [0, {pool.config.num_classes})")


def _treated(base: BaseDataset, ids, cursor, spec, nominal_size=None) -> TreatedDataset:
    return TreatedDataset(tuple(ids), cursor, nominal_size, base.digest(), spec)


def empty_dataset(pool: DataPool) -> BaseDataset:
    return BaseDataset((), Cursor.start(pool.config.num_classes))


def make_base(pool: DataPool, n: int) -> BaseDataset:
    """Class-balanced base dataset of ``n`` fresh samples."""
    grown = resize(pool, empty_dataset(pool), n)
    return BaseDataset(grown.ids, grown.cursor)


def resize(pool: DataPool, base: BaseDataset, target_n: int) -> TreatedDataset:
    spec = Resize(target_n)
    n = len(base)
    if target_n <= n:
        return _treated(base, base.ids[:target_n], base.cursor, spec, target_n)
    counts = list(base.class_counts(pool.config.num_classes))
    ids = list(base.ids)
    cursor = base.cursor
    for _ in range(target_n - n):
        # least represented class first, ties to the lowest index
        c = min(range(len(counts)), key=lambda k: (counts[k], k))
        new, cursor = _draw_ids(cursor, c, 1)
        ids.extend(new)
        counts[c] += 1
    return _treated(base, ids, cursor, spec, target_n)


def upsample_class(pool: DataPool, base: BaseDataset, class_index: int,
                   percentage: float) -> TreatedDataset:
    _check_class(pool, class_index)
    spec = UpsampleClass(class_index, percentage)
    n_new = scaled_count(percentage, base.reference_size)
    new, cursor = _draw_ids(base.cursor, class_index, n_new)
    return _treated(base, list(base.ids) + new, cursor, spec, base.reference_size)


def informed_upsample(pool: DataPool, base: BaseDataset, class_index: int, percentage: float,
                      majority_fraction: float = DEFAULT_MAJORITY) -> TreatedDataset:
    """Append ``round(p*N)`` fresh samples, ``round(m*added)`` of them from ``class_index``.

    The remainder is dealt one at a time over the other classes in ascending
    index order.
    """
    _check_class(pool, class_index)
    spec = InformedUpsample(class_index, percentage, majority_fraction)
    added = scaled_count(percentage, base.reference_size)
    major = scaled_count(majority_fraction, added)
    others = [c for c in range(pool.config.num_classes) if c != class_index]
    per_class = Counter({class_index: major})
    for i in range(added - major):
        per_class[others[i % len(others)]] += 1

    ids = list(base.ids)
    cursor = base.cursor
    for c in range(pool.config.num_classes):
        new, cursor = _draw_ids(cursor, c, per_class.get(c, 0))
        ids.extend(new)
    return _treated(base, ids, cursor, spec, base.reference_size)


def apply(pool: DataPool, base: BaseDataset, spec: InterventionSpec) -> TreatedDataset:
    if isinstance(spec, Identity):
        return _treated(base, base.ids, base.cursor, spec, base.reference_size)
    if isinstance(spec, Resize):
        return resize(pool, base, spec.target_n)
    if isinstance(spec, UpsampleClass):
        return upsample_class(pool, base, spec.class_index, spec.percentage)
    if isinstance(spec, InformedUpsample):
        return informed_upsample(pool, base, spec.class_index, spec.percentage,
                                 spec.majority_fraction)
    raise InterventionError(f"unknown intervention {spec!r}")
