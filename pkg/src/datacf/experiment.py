"""Experiment grid definition, cached execution, and the run manifest.

A *regime* is one training condition: a base dataset size, a dataset
treatment, and a replicate index. Replicate ``r`` uses the same network
initialization and shuffle seeds in every regime, so two regimes with the same
``r`` differ only in their training data.

Outputs live under ``output_dir``::

    manifest.json
    outcomes/<regime-hash>.csv     # one EvalRecord CSV per trained regime
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import interventions as iv
from ._hashing import sha256_hex, stable_seed
from .synth import DataPool, PoolConfig, TestSet, make_pool, make_test_set
from .trainer import (RECORD_HEADER, ModelConfig, evaluate, train_arrays, write_records)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SIZES = (100, 400, 1600, 6400)
MANIFEST_NAME = "manifest.json"


class ConfigError(ValueError):
    pass


class CacheMismatchError(RuntimeError):
    pass


class IncompleteManifestError(RuntimeError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} regime outcome(s) missing, e.g. {self.missing[:3]}")


@dataclass(frozen=True)
class ModelSettings:
    """Network settings independent of the pool's feature and class counts."""

    hidden_sizes: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    learning_rate: float = 0.01
    epochs: int = 15
    batch_size: int = 32
    init_seed: int = 0
    shuffle_seed: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    pool: PoolConfig = field(default_factory=PoolConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    size_grid: tuple[int, ...] = DEFAULT_SIZES
    upsample_percentages: tuple[float, ...] = iv.GRID_PERCENTAGES
    upsample_classes: tuple[int, ...] | None = None
    informed: bool = True
    majority_fraction: float = iv.DEFAULT_MAJORITY
    reference_percentage: float = 0.20
    replicates: int = 5
    test_per_class: int | None = None
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "size_grid", tuple(int(s) for s in self.size_grid))
        object.__setattr__(self, "upsample_percentages",
                           tuple(float(p) for p in self.upsample_percentages))
        if self.upsample_classes is not None:
            object.__setattr__(self, "upsample_classes", tuple(int(c) for c in self.upsample_classes))
        object.__setattr__(self, "model", replace(
            self.model, hidden_sizes=tuple(int(h) for h in self.model.hidden_sizes),
            learning_rate=float(self.model.learning_rate)))
        for name in ("majority_fraction", "reference_percentage"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.size_grid or not self.upsample_percentages:
            raise ConfigError("size_grid and upsample_percentages must be non-empty")
        if any(b <= a for a, b in zip(self.size_grid, self.size_grid[1:])) or self.size_grid[0] < 1:
            raise ConfigError("size_grid must be positive and strictly increasing")
        if any(p < 0 for p in self.upsample_percentages):
            raise ConfigError("upsample percentages must be non-negative")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.test_per_class is not None and self.test_per_class < 1:
            raise ConfigError("test_per_class must be >= 1")
        if not 0.5 < self.majority_fraction <= 1.0:
            raise ConfigError("majority_fraction must lie in (0.5, 1]")
        k = self.pool.num_classes
        if any(not 0 <= c < k for c in self.classes):
            raise ConfigError(f"upsample_classes must lie in [0, {k})")
        try:
            self.model_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def classes(self) -> tuple[int, ...]:
        if self.upsample_classes is None:
            return tuple(range(self.pool.num_classes))
        return self.upsample_classes

    @property
    def nonzero_percentages(self) -> tuple[float, ...]:
        return tuple(p for p in self.upsample_percentages if p > 0)

    @property
    def n_test_per_class(self) -> int:
        if self.test_per_class is not None:
            return self.test_per_class
        # 20% of the largest grid size, split evenly over classes
        return max(1, iv.scaled_count(0.2, self.size_grid[-1]) // self.pool.num_classes)

    def model_config(self, replicate: int) -> ModelConfig:
        m = self.model
        return ModelConfig(
            (self.pool.feature_dim, *m.hidden_sizes, self.pool.num_classes),
            m.activation, m.learning_rate, m.epochs, m.batch_size,
            stable_seed("init", m.init_seed, replicate),
            stable_seed("shuffle", m.shuffle_seed, replicate),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["hidden_sizes"] = list(self.model.hidden_sizes)
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return sha256_hex(d)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    data = dict(data)
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "pool" in data:
            data["pool"] = PoolConfig(**data["pool"])
        if "model" in data:
            data["model"] = ModelSettings(**data["model"])
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# regimes


@dataclass(frozen=True)
class Regime:
    size: int
    spec: Any
    replicate: int

    @property
    def key(self) -> str:
        return regime_key(self.size, self.spec)


def regime_key(size: int, spec) -> str:
    return f"n={size}|{spec}"


def grown_size(size: int, p: float) -> int:
    return size + iv.scaled_count(p, size)


def regime_specs(config: ExperimentConfig) -> list[tuple[int, Any]]:
    """Every (base size, treatment) pair in the grid, in a fixed order."""
    out = []
    for size in config.size_grid:
        out.append((size, iv.Identity()))
        for p in config.nonzero_percentages:
            out.append((size, iv.Resize(grown_size(size, p))))
        for c in config.classes:
            for p in config.nonzero_percentages:
                out.append((size, iv.UpsampleClass(c, p)))
        if config.informed:
            for c in range(config.pool.num_classes):
                for p in config.nonzero_percentages:
                    out.append((size, iv.InformedUpsample(c, p, config.majority_fraction)))
    return out


def enumerate_regimes(config: ExperimentConfig) -> list[Regime]:
    return [Regime(size, spec, r) for size, spec in regime_specs(config)
            for r in range(config.replicates)]


@lru_cache(maxsize=8)
def _pool(pool_config: PoolConfig) -> DataPool:
    return make_pool(pool_config)


@lru_cache(maxsize=8)
def _test_set(pool_config: PoolConfig, per_class: int) -> TestSet:
    return make_test_set(_pool(pool_config), per_class)


@lru_cache(maxsize=64)
def _base(pool_config: PoolConfig, size: int) -> iv.BaseDataset:
    return iv.make_base(_pool(pool_config), size)


def regime_dataset(config: ExperimentConfig, size: int, spec) -> iv.TreatedDataset:
    pool = _pool(config.pool)
    return iv.apply(pool, _base(config.pool, size), spec)


def regime_hash(config: ExperimentConfig, dataset: iv.BaseDataset, replicate: int) -> str:
    return sha256_hex({
        "schema": SCHEMA_VERSION,
        "pool": asdict(config.pool),
        "model": asdict(config.model_config(replicate)),
        "dataset": dataset.digest(),
        "test_per_class": config.n_test_per_class,
    })


def _header_ok(path: Path) -> bool:
    try:
        with open(path) as fh:
            return fh.readline().rstrip("\n") == ",".join(RECORD_HEADER)
    except OSError:
        return False


def _execute(config: ExperimentConfig, size: int, spec_text: str, replicate: int,
             path: str) -> dict:
    """Train and evaluate one regime, writing its EvalRecord CSV. Runs in worker processes."""
    spec = iv.parse_spec(spec_text)
    dataset = regime_dataset(config, size, spec)
    pool = _pool(config.pool)
    X, y = pool.arrays(dataset.ids)
    model = train_arrays(X, y, config.model_config(replicate), dataset.digest())
    records, metrics = evaluate(model, _test_set(config.pool, config.n_test_per_class))
    tmp = path + ".tmp"
    write_records(records, tmp)
    os.replace(tmp, path)
    return {"accuracy": metrics.accuracy, "macro_f1": metrics.macro_f1}


@dataclass
class RunManifest:
    path: Path
    data: dict

    @property
    def root(self) -> Path:
        return self.path.parent

    @property
    def config(self) -> ExperimentConfig:
        return config_from_dict(self.data["config"])

    @property
    def regimes(self) -> list[dict]:
        return self.data["regimes"]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.regimes:
            out[r["status"]] = out.get(r["status"], 0) + 1
        return out

    def outcome_path(self, entry: Mapping) -> Path:
        return self.root / entry["path"]

    def missing(self) -> list[str]:
        return [f"{e['key']}#r{e['replicate']}" for e in self.regimes
                if e["status"] not in ("done", "cached") or not _header_ok(self.outcome_path(e))]

    def write(self) -> None:
        tmp = self.path.with_suffix(".json.tmp")
        with open(tmp, "w") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        return RunManifest(path, json.load(fh))


def run(config: ExperimentConfig, *, output_dir: str | os.PathLike | None = None,
        jobs: int = 1, rebuild: bool = False) -> RunManifest:
    """Train and evaluate every regime of the grid, skipping cached ones.

    Raises
    ------
    CacheMismatchError
        If ``output_dir`` holds a manifest for a different configuration and
        ``rebuild`` is false.
    """
    root = Path(output_dir if output_dir is not None else config.output_dir)
    (root / "outcomes").mkdir(parents=True, exist_ok=True)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists() and not rebuild:
        old = load_manifest(manifest_path)
        if old.data.get("config_hash") != config.digest():
            raise CacheMismatchError(
                f"{manifest_path} was produced by a different configuration; use --rebuild")

    regimes = enumerate_regimes(config)
    entries = []
    todo: dict[str, tuple] = {}
    for reg in regimes:
        dataset = regime_dataset(config, reg.size, reg.spec)
        h = regime_hash(config, dataset, reg.replicate)
        rel = f"outcomes/{h}.csv"
        entry = {"key": reg.key, "size": reg.size, "spec": str(reg.spec),
                 "replicate": reg.replicate, "train_size": len(dataset), "hash": h, "path": rel}
        if not rebuild and _header_ok(root / rel):
            entry["status"] = "cached"
        elif h in todo:
            entry["status"] = "pending"  # same dataset as an earlier regime; shares its file
        else:
            entry["status"] = "pending"
            todo[h] = (reg.size, str(reg.spec), reg.replicate, str(root / rel))
        entries.append(entry)

    manifest = RunManifest(manifest_path, {
        "schema_version": SCHEMA_VERSION,
        "record_header": list(RECORD_HEADER),
        "config_hash": config.digest(),
        "config": config.to_dict(),
        "test_per_class": config.n_test_per_class,
        "regimes": entries,
    })
    manifest.write()
    logger.info("%d regimes, %d to train, %d cached", len(entries), len(todo),
                sum(e["status"] == "cached" for e in entries))

    results: dict[str, dict] = {}
    items = list(todo.items())
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {h: ex.submit(_execute, config, *args) for h, args in items}
            for i, (h, fut) in enumerate(futures.items(), 1):
                results[h] = fut.result()
                if i % 50 == 0:
                    logger.info("trained %d/%d", i, len(items))
    else:
        for i, (h, args) in enumerate(items, 1):
            results[h] = _execute(config, *args)
            if i % 50 == 0:
                logger.info("trained %d/%d", i, len(items))

    for entry in entries:
        if entry["status"] == "pending":
            entry["status"] = "done"
    manifest.data["trained"] = len(items)
    manifest.write()
    return manifest
