"""Flip-probability tables, F1-by-size summary, and trend verdicts for a finished run.

Everything here is computed from the persisted outcome CSVs listed in the
manifest, never from in-memory training state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import interventions as iv
from .experiment import (ExperimentConfig, IncompleteManifestError, RunManifest, grown_size,
                         regime_key)
from .queries import (ClassFamily, FlipCell, FlipEstimate, FlipMatrix, OutcomeVector, mean_se,
                      build_matrix, fmt, render_table, write_matrices_csv)
from .trainer import macro_f1, read_records

POOL_MAX = "pool-max"


@dataclass
class ReportBundle:
    matrices: list[FlipMatrix]
    f1_rows: list[dict]
    verdicts: dict
    files: list[Path] = field(default_factory=list)

    def matrix(self, name: str) -> FlipMatrix:
        for m in self.matrices:
            if m.name == name:
                return m
        raise KeyError(name)


def load_outcomes(manifest: RunManifest):
    """``{(regime_key, replicate): OutcomeVector}`` plus per-regime (predicted, labels)."""
    missing = manifest.missing()
    if missing:
        raise IncompleteManifestError(missing)
    store, preds = {}, {}
    by_path: dict[str, tuple] = {}
    for e in manifest.regimes:
        if e["path"] not in by_path:
            records = read_records(manifest.outcome_path(e))
            by_path[e["path"]] = (records, [r.predicted for r in records],
                                  [r.label for r in records])
        records, p, lbl = by_path[e["path"]]
        k = (e["key"], e["replicate"])
        store[k] = OutcomeVector(k[0], tuple(r.sample_id for r in records),
                                 [r.correct for r in records])
        preds[k] = (p, lbl)
    return store, preds


def _pair_estimates(base, treated, replicates, store) -> tuple[FlipEstimate, ...]:
    m = build_matrix("pair", [("b", base)], [("t", treated)], replicates, store)
    return m.cell("b", "t").estimates


def _combine(estimates: Sequence[FlipEstimate]) -> FlipEstimate:
    return FlipEstimate(*(sum(getattr(e, f) for e in estimates) for f in
                          ("n_total", "n_wrong_base", "n_correct_base", "n_flip_fw", "n_flip_inv")))


def _grouped_matrix(name, row_labels, col_labels, groups, replicates, store) -> FlipMatrix:
    """Cells pool the counts of several (base, treated) pairs per replicate."""
    cells = {}
    for i, row in enumerate(row_labels):
        for j, col in enumerate(col_labels):
            pairs = groups[(row, col)]
            per_rep = [_pair_estimates(b, t, replicates, store) for b, t in pairs]
            cells[(i, j)] = FlipCell.from_estimates(
                [_combine([ests[r] for ests in per_rep]) for r in range(replicates)])
    return FlipMatrix(name, tuple(row_labels), tuple(col_labels), cells, replicates)


def _informed_family(config: ExperimentConfig, size: int, p: float) -> ClassFamily:
    return ClassFamily.of({
        c: regime_key(size, iv.InformedUpsample(c, p, config.majority_fraction))
        for c in range(config.pool.num_classes)})


def _pct_label(p: float) -> str:
    return f"{p:.2f}"


def build_report(manifest: RunManifest) -> ReportBundle:
    config = manifest.config
    store, preds = load_outcomes(manifest)
    R = config.replicates
    sizes = config.size_grid
    base = {s: regime_key(s, iv.Identity()) for s in sizes}
    pcts = config.nonzero_percentages
    p_ref = config.reference_percentage
    matrices: list[FlipMatrix] = []

    # (e) macro-F1 by size
    f1_rows = []
    for s in sizes:
        f1s, accs = [], []
        for r in range(R):
            m = macro_f1(*preds[(base[s], r)])
            f1s.append(m.macro_f1)
            accs.append(m.accuracy)
        f1_mean, f1_se = mean_se(f1s)
        acc_mean, acc_se = mean_se(accs)
        f1_rows.append({"size": s, "replicates": R, "macro_f1_mean": f1_mean, "macro_f1_se": f1_se,
                        "accuracy_mean": acc_mean, "accuracy_se": acc_se,
                        "macro_f1_per_replicate": f1s})

    # (a) random size changes
    size_matrix = None
    if len(sizes) > 1:
        size_axis = [(str(s), base[s]) for s in sizes]
        size_matrix = build_matrix("size", size_axis, size_axis, R, store)
        matrices.append(size_matrix)

    # (b), (c) class-upsampling curves against size
    if pcts and config.classes:
        rows = [str(s) for s in sizes]
        cols = [f"class {c}" for c in config.classes]
        groups = {(str(s), f"class {c}"): [(base[s], regime_key(s, iv.UpsampleClass(c, p)))
                                           for p in pcts]
                  for s in sizes for c in config.classes}
        matrices.append(_grouped_matrix("upsample_by_class", rows, cols, groups, R, store))
        cols = [_pct_label(p) for p in pcts]
        groups = {(str(s), _pct_label(p)): [(base[s], regime_key(s, iv.UpsampleClass(c, p)))
                                            for c in config.classes]
                  for s in sizes for p in pcts}
        matrices.append(_grouped_matrix("upsample_by_percentage", rows, cols, groups, R, store))
        if p_ref in pcts:
            for s in sizes:
                axis = [(f"class {c}", regime_key(s, iv.UpsampleClass(c, p_ref)))
                        for c in config.classes]
                matrices.append(build_matrix(f"class_x_class_n={s}_p={_pct_label(p_ref)}",
                                             axis, axis, R, store))

    # (d) informed interventions
    comparison = None
    if config.informed and p_ref in pcts:
        fam = {s: _informed_family(config, s, p_ref) for s in sizes}
        cols = [str(s) for s in sizes]
        rows = [(POOL_MAX, base[sizes[-1]])] + [(str(s), fam[s]) for s in sizes]
        matrices.append(build_matrix(f"informed_size_p={_pct_label(p_ref)}", rows,
                                     [(str(s), fam[s]) for s in sizes], R, store))
        for s in sizes:
            fams = [(_pct_label(p), _informed_family(config, s, p)) for p in pcts]
            matrices.append(build_matrix(f"informed_percentage_n={s}",
                                         [("base", base[s])] + fams, fams, R, store))

        labels = ["informed", "random", "class upsampling"]
        groups = {}
        for s in sizes:
            groups[(str(s), "informed")] = [(base[s], fam[s])]
            groups[(str(s), "random")] = [
                (base[s], regime_key(s, iv.Resize(grown_size(s, p_ref))))]
            groups[(str(s), "class upsampling")] = [
                (base[s], regime_key(s, iv.UpsampleClass(c, p_ref))) for c in config.classes]
        comparison = _grouped_matrix(f"treatment_comparison_p={_pct_label(p_ref)}",
                                     [str(s) for s in sizes], labels, groups, R, store)
        matrices.append(comparison)

    verdicts = trend_verdicts(config, f1_rows, size_matrix, comparison, matrices)
    return ReportBundle(matrices, f1_rows, verdicts)


def _se_diff(a, b):
    return math.sqrt((a or 0.0) ** 2 + (b or 0.0) ** 2)


def trend_verdicts(config: ExperimentConfig, f1_rows, size_matrix: FlipMatrix | None,
                   comparison: FlipMatrix | None, matrices) -> dict:
    """Machine-readable checks of the qualitative trends.

    "Within one standard error" compares consecutive means against the
    standard error of their difference, ``sqrt(se_a**2 + se_b**2)``.
    """
    sizes = list(config.size_grid)
    out: dict = {}

    means = [r["macro_f1_mean"] for r in f1_rows]
    ses = [r["macro_f1_se"] for r in f1_rows]
    out["f1_trend"] = {
        "sizes": sizes, "means": means, "ses": ses,
        "non_decreasing_within_se": all(
            b >= a - _se_diff(sa, sb) for a, b, sa, sb in zip(means, means[1:], ses, ses[1:])),
        "gain": means[-1] - means[0],
    }

    if size_matrix is not None:
        top = str(sizes[-1])
        cells = [size_matrix.cell(str(s), top) for s in sizes]
        fw = [c.forward_mean for c in cells]
        fse = [c.forward_se for c in cells]
        defined = all(v is not None for v in fw)
        out["diminishing_flip"] = {
            "to_size": sizes[-1], "from_sizes": sizes, "forward_means": fw, "forward_ses": fse,
            "strictly_decreasing": defined and all(b < a for a, b in zip(fw, fw[1:])),
            "strictly_decreasing_within_se": defined and all(
                b < a + _se_diff(sa, sb) for a, b, sa, sb in zip(fw, fw[1:], fse, fse[1:])),
        }

    if comparison is not None:
        rows = [str(s) for s in sizes]
        inf = [comparison.cell(s, "informed") for s in rows]
        rnd = [comparison.cell(s, "random") for s in rows]
        cls = [comparison.cell(s, "class upsampling") for s in rows]

        def gt(a, b):
            return a is not None and b is not None and a > b

        out["informed_vs_random"] = {
            "percentage": config.reference_percentage, "sizes": sizes,
            "informed": [c.forward_mean for c in inf],
            "random": [c.forward_mean for c in rnd],
            "class_upsampling": [c.forward_mean for c in cls],
            "informed_beats_random": all(gt(a.forward_mean, b.forward_mean)
                                         for a, b in zip(inf, rnd)),
            "informed_beats_class_upsampling": all(gt(a.forward_mean, b.forward_mean)
                                                   for a, b in zip(inf, cls)),
        }
        flagged = [s for s, c in zip(sizes, inf)
                   if not gt(c.forward_mean, c.inverse_mean)]
        largest = sizes[-2:]
        out["inverse_bound"] = {
            "sizes": sizes,
            "forward": [c.forward_mean for c in inf],
            "inverse": [c.inverse_mean for c in inf],
            "checked_sizes": largest,
            "holds": not any(s in flagged for s in largest),
            "flagged_sizes": flagged,
        }

    undefined = []
    diag_nonzero = []
    for m in matrices:
        for (i, j), c in m.cells.items():
            if c.forward_mean is None:
                undefined.append(f"{m.name}:{m.row_labels[i]}->{m.col_labels[j]}")
            if m.row_labels[i] == m.col_labels[j] and c.forward_mean not in (None, 0.0):
                diag_nonzero.append(f"{m.name}:{m.row_labels[i]}")
    out["undefined_cells"] = undefined
    out["nonzero_diagonal_cells"] = diag_nonzero
    return out


# ---------------------------------------------------------------------------
# rendering


F1_HEADER = ("size", "replicates", "macro_f1_mean", "macro_f1_se", "accuracy_mean", "accuracy_se")


def write_report(bundle: ReportBundle, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    path = out / "flip_matrices.csv"
    write_matrices_csv(bundle.matrices, path)
    files.append(path)

    path = out / "f1_by_size.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(F1_HEADER)
        for r in bundle.f1_rows:
            w.writerow([r["size"], r["replicates"]] + [fmt(r[k]) for k in F1_HEADER[2:]])
    files.append(path)

    path = out / "verdicts.json"
    with open(path, "w") as fh:
        json.dump(bundle.verdicts, fh, indent=1, sort_keys=True)
        fh.write("\n")
    files.append(path)

    path = out / "tables.txt"
    with open(path, "w") as fh:
        fh.write(render_f1_table(bundle.f1_rows))
        for m in bundle.matrices:
            corner = "From / To" if not m.name.startswith("upsample_by") else "Base size"
            fh.write("\n" + render_table(m, "forward", corner))
            fh.write("\n" + render_table(m, "inverse", corner))
        flagged = bundle.verdicts.get("inverse_bound", {}).get("flagged_sizes", [])
        if flagged:
            fh.write("\nWARNING: informed treatments with inverse flip >= forward flip at sizes "
                     f"{flagged}\n")
    files.append(path)
    bundle.files = files
    return files


def render_f1_table(rows) -> str:
    lines = ["macro-F1 of base datasets (mean ± s.e.)", "-" * 40]
    for r in rows:
        se = "" if r["macro_f1_se"] is None else f" ±{100 * r['macro_f1_se']:.2f}"
        lines.append(f"{r['size']:>8}  {100 * r['macro_f1_mean']:6.2f}%{se}")
    return "\n".join(lines) + "\n"


def report(manifest: RunManifest, out_dir) -> ReportBundle:
    bundle = build_report(manifest)
    write_report(bundle, out_dir)
    return bundle
