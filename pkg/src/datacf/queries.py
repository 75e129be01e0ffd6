"""Per-sample flip probabilities between training regimes.

For a base regime and a treated regime evaluated on the same frozen test set,
the forward flip probability is the fraction of base-misclassified samples that
the treated model gets right::

    P(correct under treated | wrong under base)
        = #{wrong under base and right under treated} / #{wrong under base}

which is the joint event frequency divided by the marginal event frequency.
The inverse flip probability measures degradation: the fraction of
base-correct samples that the treated model gets wrong.

An estimate with an empty denominator is *undefined* (``None``) and is kept
distinct from zero everywhere, including rendered output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .synth import SampleId

UNDEFINED = "undefined"


class AlignmentError(ValueError):
    pass


class MissingRegimeError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing outcome vectors: {self.missing}")


@dataclass(frozen=True)
class OutcomeVector:
    """Correctness of one trained model on every test sample, in test-set order."""

    regime: Hashable
    ids: tuple[SampleId, ...]
    correct: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        arr = np.asarray(self.correct, dtype=bool)
        if arr.ndim != 1 or arr.shape[0] != len(self.ids):
            raise AlignmentError("correct vector must have one entry per sample id")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "correct", arr)

    def __len__(self):
        return len(self.ids)

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((s.class_index for s in self.ids), dtype=np.int64, count=len(self.ids))

    @classmethod
    def from_records(cls, regime, records) -> "OutcomeVector":
        return cls(regime, tuple(r.sample_id for r in records), [r.correct for r in records])


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


@dataclass(frozen=True)
class FlipEstimate:
    n_total: int
    n_wrong_base: int
    n_correct_base: int
    n_flip_fw: int
    n_flip_inv: int

    @property
    def forward(self) -> float | None:
        return _ratio(self.n_flip_fw, self.n_wrong_base)

    @property
    def inverse(self) -> float | None:
        return _ratio(self.n_flip_inv, self.n_correct_base)

    @property
    def forward_fraction(self) -> Fraction | None:
        return None if self.n_wrong_base == 0 else Fraction(self.n_flip_fw, self.n_wrong_base)

    @property
    def inverse_fraction(self) -> Fraction | None:
        return None if self.n_correct_base == 0 else Fraction(self.n_flip_inv, self.n_correct_base)


class QueryDecomposition(NamedTuple):
    joint: float
    marginal: float
    n_joint: int
    n_marginal: int
    n_total: int

    def ratio(self) -> Fraction | None:
        """joint / marginal in exact arithmetic."""
        if self.n_marginal == 0:
            return None
        return Fraction(self.n_joint, self.n_total) / Fraction(self.n_marginal, self.n_total)


def _check_aligned(a: OutcomeVector, b: OutcomeVector):
    if len(a) != len(b):
        raise AlignmentError(f"length mismatch: {len(a)} vs {len(b)}")
    if a.ids != b.ids:
        raise AlignmentError("outcome vectors refer to different test samples")


def flip_probability(base: OutcomeVector, treated: OutcomeVector) -> FlipEstimate:
    _check_aligned(base, treated)
    b, t = base.correct, treated.correct
    return FlipEstimate(
        n_total=len(b),
        n_wrong_base=int(np.count_nonzero(~b)),
        n_correct_base=int(np.count_nonzero(b)),
        n_flip_fw=int(np.count_nonzero(~b & t)),
        n_flip_inv=int(np.count_nonzero(b & ~t)),
    )


def event_probability(outcomes: OutcomeVector) -> float:
    """Frequency of correct classification over the test set."""
    if len(outcomes) == 0:
        raise ValueError("empty outcome vector")
    return int(np.count_nonzero(outcomes.correct)) / len(outcomes)


def decompose_query(base: OutcomeVector, treated: OutcomeVector) -> QueryDecomposition:
    """Joint frequency of (wrong under base, right under treated) and marginal of wrong under base."""
    _check_aligned(base, treated)
    n = len(base)
    if n == 0:
        raise ValueError("empty outcome vectors")
    n_joint = int(np.count_nonzero(~base.correct & treated.correct))
    n_marg = int(np.count_nonzero(~base.correct))
    return QueryDecomposition(n_joint / n, n_marg / n, n_joint, n_marg, n)


BaseOutcomes = Union[OutcomeVector, Mapping[int, OutcomeVector]]


def informed_flip_probability(base: BaseOutcomes,
                              treated_by_class: Mapping[int, OutcomeVector]) -> FlipEstimate:
    """Flip estimate where each test sample is judged under the treatment for its own class.

    ``base`` is usually a single regime. It may also be a per-class mapping,
    for contrasts between two informed families (e.g. percentage p1 vs p2).
    """
    base_of = base if isinstance(base, Mapping) else None
    first = next(iter(base_of.values())) if base_of else base
    labels = first.labels
    classes = sorted(set(labels.tolist()))
    missing = [c for c in classes if c not in treated_by_class]
    if base_of is not None:
        missing += [("base", c) for c in classes if c not in base_of]
    if missing:
        raise MissingRegimeError(missing)

    n_wrong = n_correct = n_fw = n_inv = 0
    for c in classes:
        b_vec = base_of[c] if base_of is not None else base
        t_vec = treated_by_class[c]
        _check_aligned(first, b_vec)
        _check_aligned(first, t_vec)
        mask = labels == c
        b = b_vec.correct[mask]
        t = t_vec.correct[mask]
        n_wrong += int(np.count_nonzero(~b))
        n_correct += int(np.count_nonzero(b))
        n_fw += int(np.count_nonzero(~b & t))
        n_inv += int(np.count_nonzero(b & ~t))
    return FlipEstimate(len(labels), n_wrong, n_correct, n_fw, n_inv)


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class ClassFamily:
    """Axis entry standing for one regime per class (informed treatments)."""

    by_class: tuple[tuple[int, Hashable], ...]

    @classmethod
    def of(cls, mapping: Mapping[int, Hashable]) -> "ClassFamily":
        return cls(tuple(sorted(mapping.items())))


AxisRef = Union[Hashable, ClassFamily]


def mean_se(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var / len(values))


@dataclass(frozen=True)
class FlipCell:
    estimates: tuple[FlipEstimate, ...]
    forward_mean: float | None
    forward_se: float | None
    inverse_mean: float | None
    inverse_se: float | None

    @classmethod
    def from_estimates(cls, estimates: Sequence[FlipEstimate]) -> "FlipCell":
        fw = [e.forward for e in estimates if e.forward is not None]
        inv = [e.inverse for e in estimates if e.inverse is not None]
        return cls(tuple(estimates), *mean_se(fw), *mean_se(inv))

    @property
    def n_forward_defined(self) -> int:
        return sum(e.forward is not None for e in self.estimates)

    @property
    def n_inverse_defined(self) -> int:
        return sum(e.inverse is not None for e in self.estimates)

    def count(self, attr: str) -> int:
        return sum(getattr(e, attr) for e in self.estimates)


@dataclass(frozen=True)
class FlipMatrix:
    name: str
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    cells: Mapping[tuple[int, int], FlipCell] = field(compare=False)
    replicates: int

    def cell(self, row: str, col: str) -> FlipCell:
        return self.cells[(self.row_labels.index(row), self.col_labels.index(col))]

    def forward_array(self) -> np.ndarray:
        """Mean forward flips as floats, NaN marking undefined cells (for plotting only)."""
        out = np.full((len(self.row_labels), len(self.col_labels)), np.nan)
        for (i, j), c in self.cells.items():
            if c.forward_mean is not None:
                out[i, j] = c.forward_mean
        return out


def _lookup(store, key, r):
    try:
        return store[(key, r)]
    except KeyError:
        return None


def build_matrix(name: str, rows: Sequence[tuple[str, AxisRef]], cols: Sequence[tuple[str, AxisRef]],
                 replicates: int, store: Mapping) -> FlipMatrix:
    """Seed-matched flip estimates for every (row, col) pair of regimes.

    ``store`` maps ``(regime_key, replicate)`` to an :class:`OutcomeVector`.
    Replicate ``r`` of the row is contrasted with replicate ``r`` of the column.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    def keys_of(ref):
        return [k for _, k in ref.by_class] if isinstance(ref, ClassFamily) else [ref]

    missing = []
    for _, ref in list(rows) + list(cols):
        for key in keys_of(ref):
            for r in range(replicates):
                if _lookup(store, key, r) is None and (key, r) not in missing:
                    missing.append((key, r))
    if missing:
        raise MissingRegimeError(missing)

    def resolve(ref, r):
        if isinstance(ref, ClassFamily):
            return {c: store[(k, r)] for c, k in ref.by_class}
        return store[(ref, r)]

    cells = {}
    for i, (_, row_ref) in enumerate(rows):
        for j, (_, col_ref) in enumerate(cols):
            ests = []
            for r in range(replicates):
                base, treated = resolve(row_ref, r), resolve(col_ref, r)
                if isinstance(treated, Mapping):
                    ests.append(informed_flip_probability(base, treated))
                elif isinstance(base, Mapping):
                    ests.append(informed_flip_probability(
                        base, {c: treated for c in base}))
                else:
                    ests.append(flip_probability(base, treated))
            cells[(i, j)] = FlipCell.from_estimates(ests)
    return FlipMatrix(name, tuple(l for l, _ in rows), tuple(l for l, _ in cols), cells, replicates)


# ---------------------------------------------------------------------------
# serialization


MATRIX_CSV_HEADER = ("matrix", "row", "col", "forward_mean", "forward_se", "inverse_mean",
                     "inverse_se", "replicates", "forward_defined", "inverse_defined",
                     "n_total", "n_wrong_base", "n_flip_fw", "n_correct_base", "n_flip_inv")


def fmt(value: float | None) -> str:
    return UNDEFINED if value is None else repr(float(value))


def matrix_rows(matrix: FlipMatrix) -> list[list[str]]:
    out = []
    for i, row in enumerate(matrix.row_labels):
        for j, col in enumerate(matrix.col_labels):
            c = matrix.cells[(i, j)]
            out.append([matrix.name, row, col, fmt(c.forward_mean), fmt(c.forward_se),
                        fmt(c.inverse_mean), fmt(c.inverse_se), str(matrix.replicates),
                        str(c.n_forward_defined), str(c.n_inverse_defined),
                        str(c.count("n_total")), str(c.count("n_wrong_base")),
                        str(c.count("n_flip_fw")), str(c.count("n_correct_base")),
                        str(c.count("n_flip_inv"))])
    return out


def write_matrices_csv(matrices: Sequence[FlipMatrix], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATRIX_CSV_HEADER)
        for m in matrices:
            w.writerows(matrix_rows(m))


def _pct(mean, se):
    if mean is None:
        return UNDEFINED
    s = f"{100 * mean:.2f}%"
    return s if se is None else f"{s} ±{100 * se:.2f}"


def render_table(matrix: FlipMatrix, which: str = "forward", corner: str = "From / To") -> str:
    """Aligned-column text table, rows are base regimes, columns treated regimes."""
    header = [corner] + list(matrix.col_labels)
    body = []
    for i, row in enumerate(matrix.row_labels):
        line = [row]
        for j in range(len(matrix.col_labels)):
            c = matrix.cells[(i, j)]
            if which == "forward":
                line.append(_pct(c.forward_mean, c.forward_se))
            else:
                line.append(_pct(c.inverse_mean, c.inverse_se))
        body.append(line)
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[k]) if k == 0 else cell.rjust(widths[k])
                       for k, cell in enumerate(r)) for r in [header] + body]
    title = f"{matrix.name} ({which} flip probability, mean ± s.e. over {matrix.replicates} seeds)"
    return "\n".join([title, "-" * len(lines[0])] + lines) + "\n"
