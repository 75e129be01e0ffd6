"""Deterministic synthetic multiclass pools with persistent per-sample perturbations.

Every sample is addressed by ``(class_index, draw_index)`` and its features are
a pure function of that id and the pool configuration. Training streams use
draw indices ``0, 1, 2, ...`` per class; test samples live in a reserved block
starting at :data:`TEST_OFFSET` so the two never meet.

Feature rule::

    x0 = class_mean + noise_scale * g
    features = x0 + perturbation_strength * (r * Rot(x0) - x0)

where ``g`` is standard normal, ``Rot`` rotates ``x0`` by a sample-specific
angle inside a sample-specific random plane and ``r`` is a log-normal radial
scale. All three are drawn from a generator seeded by a stable hash of
``(master_seed, class_index, draw_index)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ._hashing import sha256_hex, stable_seed

TEST_OFFSET = 2**40
MAX_SEED = 2**64


class PoolConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PoolConfig:
    num_classes: int = 5
    feature_dim: int = 16
    class_separation: float = 3.0
    noise_scale: float = 1.0
    perturbation_strength: float = 0.6
    master_seed: int = 0

    def __post_init__(self):
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            raise PoolConfigError("num_classes must be an integer >= 2")
        if not isinstance(self.feature_dim, int) or self.feature_dim < 2:
            raise PoolConfigError("feature_dim must be an integer >= 2")
        if not self.class_separation > 0:
            raise PoolConfigError("class_separation must be positive")
        if not self.noise_scale > 0:
            raise PoolConfigError("noise_scale must be positive")
        if not self.perturbation_strength >= 0:
            raise PoolConfigError("perturbation_strength must be non-negative")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < MAX_SEED:
            raise PoolConfigError("master_seed must be a 64-bit unsigned integer")
        for name in ("class_separation", "noise_scale", "perturbation_strength"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def digest(self) -> str:
        return sha256_hex(self)


@dataclass(frozen=True, order=True)
class SampleId:
    class_index: int
    draw_index: int

    @property
    def is_test(self) -> bool:
        return self.draw_index >= TEST_OFFSET


@dataclass(frozen=True)
class Sample:
    id: SampleId
    features: np.ndarray = field(compare=False, repr=False)

    @property
    def label(self) -> int:
        return self.id.class_index


@dataclass(frozen=True)
class Cursor:
    """Next unused training draw index for each class."""

    positions: tuple[int, ...]

    @classmethod
    def start(cls, num_classes: int) -> "Cursor":
        return cls((0,) * num_classes)

    def advance(self, class_index: int, n: int) -> "Cursor":
        pos = list(self.positions)
        pos[class_index] += n
        return Cursor(tuple(pos))


@dataclass(frozen=True)
class TestSet:
    samples: tuple[Sample, ...]
    provenance: str

    __test__ = False  # not a pytest class

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def ids(self) -> tuple[SampleId, ...]:
        return tuple(s.id for s in self.samples)

    @cached_property
    def X(self) -> np.ndarray:
        x = np.stack([s.features for s in self.samples])
        x.setflags(write=False)
        return x

    @cached_property
    def y(self) -> np.ndarray:
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        y.setflags(write=False)
        return y


class DataPool:
    """Unbounded per-class sample streams for one :class:`PoolConfig`.

    Instances are value-like: two pools with equal configs produce identical
    samples. Generated features are memoized internally.
    """

    def __init__(self, config: PoolConfig):
        self.config = config
        self._cache: dict[SampleId, np.ndarray] = {}

    def __repr__(self):
        return f"DataPool({self.config!r})"

    def _check_class(self, class_index: int):
        if not 0 <= class_index < self.config.num_classes:
            raise IndexError(f"class {class_index} out of range [0, {self.config.num_classes})")

    def features(self, sid: SampleId) -> np.ndarray:
        self._check_class(sid.class_index)
        if sid.draw_index < 0:
            raise IndexError("draw_index must be non-negative")
        x = self._cache.get(sid)
        if x is None:
            x = _generate(self.config, sid)
            x.setflags(write=False)
            self._cache[sid] = x
        return x

    def sample(self, sid: SampleId) -> Sample:
        return Sample(sid, self.features(sid))

    def samples(self, ids: Iterable[SampleId]) -> list[Sample]:
        return [self.sample(s) for s in ids]

    def arrays(self, ids: Sequence[SampleId]) -> tuple[np.ndarray, np.ndarray]:
        d = self.config.feature_dim
        X = np.empty((len(ids), d))
        y = np.empty(len(ids), dtype=np.int64)
        for i, sid in enumerate(ids):
            X[i] = self.features(sid)
            y[i] = sid.class_index
        return X, y


def class_mean(config: PoolConfig, class_index: int) -> np.ndarray:
    """``separation * e_class``; with more classes than axes, evenly spaced unit vectors in
    the plane of the first two axes."""
    mean = np.zeros(config.feature_dim)
    if config.num_classes <= config.feature_dim:
        mean[class_index] = config.class_separation
    else:
        angle = 2 * np.pi * class_index / config.num_classes
        mean[:2] = config.class_separation * np.array([np.cos(angle), np.sin(angle)])
    return mean


def _generate(config: PoolConfig, sid: SampleId) -> np.ndarray:
    d = config.feature_dim
    rng = np.random.default_rng(stable_seed(config.master_seed, sid.class_index, sid.draw_index))
    g = rng.standard_normal(d)
    x0 = config.noise_scale * g + class_mean(config, sid.class_index)

    # always consume the warp draws so features do not depend on strength branching
    a, b = rng.standard_normal((2, d))
    theta = rng.uniform(-np.pi, np.pi)
    radial = np.exp(0.5 * rng.standard_normal())
    if config.perturbation_strength == 0.0:
        return x0

    a /= np.linalg.norm(a)
    b -= (b @ a) * a
    b /= np.linalg.norm(b)
    pa, pb = x0 @ a, x0 @ b
    c, s = np.cos(theta), np.sin(theta)
    rotated = x0 + (pa * (c - 1) - pb * s) * a + (pa * s + pb * (c - 1)) * b
    return x0 + config.perturbation_strength * (radial * rotated - x0)


def make_pool(config: PoolConfig) -> DataPool:
    return DataPool(config)


def draw(pool: DataPool, class_index: int, n: int, cursor: Cursor) -> tuple[list[Sample], Cursor]:
    """Draw ``n`` fresh training samples of one class, continuing from ``cursor``."""
    pool._check_class(class_index)
    if n < 0:
        raise ValueError("n must be non-negative")
    start = cursor.positions[class_index]
    if start + n > TEST_OFFSET:
        raise OverflowError("training stream would run into the reserved test block")
    out = [pool.sample(SampleId(class_index, start + i)) for i in range(n)]
    return out, cursor.advance(class_index, n)


def make_test_set(pool: DataPool, per_class: int) -> TestSet:
    """Balanced, frozen test set drawn from the reserved id block of every class."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    ids = [SampleId(c, TEST_OFFSET + i)
           for c in range(pool.config.num_classes) for i in range(per_class)]
    return TestSet(tuple(pool.samples(ids)), provenance=f"{pool.config.digest()}:{per_class}")


def export_csv(pool: DataPool, ids: Sequence[SampleId], path) -> None:
    """Write samples as CSV to ``path`` (a filesystem path or an open text stream)."""
    if hasattr(path, "write"):
        _write_samples(pool, ids, path)
        return
    with open(path, "w", newline="") as fh:
        _write_samples(pool, ids, fh)


def _write_samples(pool: DataPool, ids: Sequence[SampleId], fh) -> None:
    d = pool.config.feature_dim
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["class", "draw_index"] + [f"f{j}" for j in range(d)] + ["label"])
    for sid in ids:
        x = pool.features(sid)
        w.writerow([sid.class_index, sid.draw_index] + [repr(float(v)) for v in x]
                   + [sid.class_index])
