"""End-to-end runs: fit a dataset, evaluate results against truth, reproduce
the simulation studies.

Parcels are independent units of work. Each parcel job builds its own
adjacency and spatial basis and runs its chain with a seed derived from the
master seed and the parcel index alone, so outputs do not depend on the number
of workers or on scheduling order.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from . import dataio
from .data import ComplexDataset
from .design import DesignVector, design_for_length
from .errors import CvfmriError, InvalidSpecError
from .metrics import (
    REPORT_COLUMNS,
    classification_metrics,
    magnitude_fidelity,
    report_row,
    roc_auc,
)
from .parcellation import EDGE_CORNER, build_adjacency, build_spatial_basis, partition_grid
from .sampler import (
    NONSPATIAL,
    ChainSummary,
    ResultMaps,
    SamplerConfig,
    derive_seed,
    run_parcel_chain,
    stitch_voxel_field,
    summarize,
)
from .simulate import (
    DEFAULT_MULTIPLIER,
    NoiseSpec,
    SignalSpec,
    generate_true_maps,
    simulate_ar1,
    simulate_iid,
    simulate_realistic,
    realistic_design,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "fit_dataset",
    "write_fit_outputs",
    "evaluate_pair",
    "evaluate_dirs",
    "write_report_csv",
    "simulate_study_dataset",
    "reproduce",
    "REALISTIC_COLUMNS",
]

#: Default per-study sampler settings for the 50x50 regimes.
STUDY_PSI = ndtri(0.47)
REALISTIC_PSI = ndtri(0.11)
REALISTIC_G = 49

REALISTIC_COLUMNS = ("tp", "fp", "fn", "tn", "precision", "recall", "time_seconds")


@dataclass
class FitConfig:
    """Everything a fit needs besides the data and the design."""

    n_parcels: int = 9
    neighborhood: str = EDGE_CORNER
    workers: int | None = None
    trace_voxels: tuple = ()
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def resolved_workers(self) -> int:
        w = self.workers if self.workers is not None else (os.cpu_count() or 1)
        return max(1, min(w, self.n_parcels))


@dataclass
class FitResult:
    maps: ResultMaps
    incl_prob: np.ndarray
    mcse: np.ndarray
    converged: bool
    time_seconds: float
    config: FitConfig
    traces: dict | None = None


def _parcel_job(args):
    (pid, voxels, y_parcel, x, sampler_cfg, neighborhood, dims, master_seed,
     trace_local) = args
    try:
        basis = None
        if sampler_cfg.mode != NONSPATIAL:
            adjacency = build_adjacency(voxels, dims, neighborhood)
            basis = build_spatial_basis(adjacency, sampler_cfg.q)
        summary = run_parcel_chain(
            y_parcel,
            basis,
            x,
            sampler_cfg,
            parcel_seed=derive_seed(master_seed, pid),
            trace_voxels=trace_local or None,
        )
        return pid, summary
    except CvfmriError as exc:
        raise type(exc)(f"parcel {pid}: {exc}") from None


def fit_dataset(dataset: ComplexDataset, design: DesignVector, cfg: FitConfig) -> FitResult:
    """Partition, run all parcel chains, and stitch the result maps.

    The output is a pure function of (dataset, design, sampler config, seed);
    worker count only affects wall-clock time.
    """
    if design.n_time != dataset.n_time:
        raise InvalidSpecError(
            f"design length {design.n_time} does not match dataset T {dataset.n_time}"
        )
    started = time.perf_counter()
    partition = partition_grid(dataset.dims, cfg.n_parcels)
    if cfg.sampler.mode != NONSPATIAL:
        smallest = int(partition.parcel_sizes().min())
        if cfg.sampler.q > smallest:
            raise InvalidSpecError(
                f"q={cfg.sampler.q} exceeds the smallest parcel ({smallest} voxels); "
                "reduce q or the parcel count"
            )

    flat = dataset.voxel_view()
    x = design.bold
    trace_by_parcel = {}
    for gv in cfg.trace_voxels:
        pid = int(partition.assignment[gv])
        local = int(np.flatnonzero(partition.parcel_voxel_lists[pid] == gv)[0])
        trace_by_parcel.setdefault(pid, []).append((local, gv))

    jobs = [
        (
            pid,
            voxels,
            flat[voxels],
            x,
            cfg.sampler,
            cfg.neighborhood,
            dataset.dims,
            cfg.sampler.seed,
            [loc for loc, _ in trace_by_parcel.get(pid, [])],
        )
        for pid, voxels in enumerate(partition.parcel_voxel_lists)
    ]

    workers = cfg.resolved_workers()
    results: list[ChainSummary | None] = [None] * len(jobs)
    if workers == 1:
        for job in jobs:
            pid, summary = _parcel_job(job)
            results[pid] = summary
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for pid, summary in pool.map(_parcel_job, jobs):
                results[pid] = summary

    maps = summarize(results, partition, cfg.sampler.threshold)
    incl = stitch_voxel_field(partition, results, lambda s: s.incl_prob)
    errs = stitch_voxel_field(partition, results, lambda s: s.mcse)
    traces = None
    if trace_by_parcel:
        traces = {}
        for pid, pairs in trace_by_parcel.items():
            for local, gv in pairs:
                traces[gv] = results[pid].trace[local]
    return FitResult(
        maps=maps,
        incl_prob=incl,
        mcse=errs,
        converged=all(s.converged for s in results),
        time_seconds=time.perf_counter() - started,
        config=cfg,
        traces=traces,
    )


# --------------------------------------------------------------------------
# output files
# --------------------------------------------------------------------------

def write_fit_outputs(result: FitResult, out_dir, extra_manifest: dict | None = None):
    """Write maps, summary, and manifest into ``out_dir``.

    Data outputs (activation/magnitude/phase/incl_prob/mcse maps) depend only
    on (data, config, seed); summary.csv and manifest.txt additionally record
    wall-clock time and worker count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = result.maps
    dataio.write_map(out / "activation.csv", maps.activation, integer=True)
    dataio.write_map(out / "magnitude.csv", maps.magnitude)
    dataio.write_map(out / "phase.csv", maps.phase)
    dataio.write_map(out / "incl_prob.csv", result.incl_prob)
    dataio.write_map(out / "mcse.csv", result.mcse)

    act = maps.activation
    mag = maps.magnitude
    if act.ndim == 2:
        dataio.write_pgm(out / "activation.pgm", act.astype(np.uint8) * 255)
        mag_scale = 255.0 / mag.max() if mag.max() > 0 else 0.0
        dataio.write_pgm(out / "magnitude.pgm", mag * mag_scale)
    else:
        mag_scale = 255.0 / mag.max() if mag.max() > 0 else 0.0
        for s in range(act.shape[0]):
            dataio.write_pgm(out / f"activation_slice{s}.pgm", act[s].astype(np.uint8) * 255)
            dataio.write_pgm(out / f"magnitude_slice{s}.pgm", mag[s] * mag_scale)

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["converged", "max_mcse", "n_kept", "threshold", "mode", "time_seconds"])
        writer.writerow([
            int(result.converged),
            repr(float(result.mcse.max())),
            result.config.sampler.n_kept,
            result.config.sampler.threshold,
            result.config.sampler.mode,
            repr(result.time_seconds),
        ])

    if result.traces:
        for gv, buf in result.traces.items():
            with open(out / f"trace_voxel{gv}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["iteration", "gamma", "beta_re", "beta_im", "rho_re", "rho_im", "sigma2"]
                )
                for it, row in enumerate(buf):
                    writer.writerow([it, int(row[0])] + [repr(float(v)) for v in row[1:]])

    manifest = {
        "n_parcels": result.config.n_parcels,
        "neighborhood": result.config.neighborhood,
        "workers": result.config.resolved_workers(),
        "psi": repr(float(result.config.sampler.psi)),
        "q": result.config.sampler.q,
        "a_kappa": result.config.sampler.a_kappa,
        "b_kappa": result.config.sampler.b_kappa,
        "n_iter": result.config.sampler.n_iter,
        "n_burn": result.config.sampler.n_burn,
        "threshold": result.config.sampler.threshold,
        "mode": result.config.sampler.mode,
        "mcse_tol": result.config.sampler.mcse_tol,
        "seed": result.config.sampler.seed,
        "magnitude_pgm_scale": repr(float(mag_scale)),
        "time_seconds": repr(result.time_seconds),
        "converged": int(result.converged),
    }
    manifest.update(extra_manifest or {})
    dataio.write_keyvalues(out / "manifest.txt", manifest)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def evaluate_arrays(true_active, true_magnitude, activation, magnitude, incl_prob,
                    time_seconds=None, label="dataset"):
    """Build one metrics row from in-memory fields."""
    cls = classification_metrics(true_active, activation)
    fid = magnitude_fidelity(true_magnitude, magnitude)
    auc = roc_auc(true_active, incl_prob)
    return report_row(label, cls, fid, auc, time_seconds)


def _read_time_seconds(result_dir: Path):
    summary = result_dir / "summary.csv"
    if not summary.exists():
        return None
    with open(summary, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        return float(rows[1][rows[0].index("time_seconds")])
    except (IndexError, ValueError):
        return None


def evaluate_pair(truth_dir, result_dir, label=None):
    """Metrics row for one truth/result directory pair."""
    truth_dir = Path(truth_dir)
    result_dir = Path(result_dir)
    true_active = dataio.read_map(truth_dir / "true_activation.csv")
    true_mag = dataio.read_map(truth_dir / "true_magnitude.csv")
    activation = dataio.read_map(result_dir / "activation.csv")
    magnitude = dataio.read_map(result_dir / "magnitude.csv")
    incl = dataio.read_map(result_dir / "incl_prob.csv")
    return evaluate_arrays(
        true_active,
        true_mag,
        activation,
        magnitude,
        incl,
        time_seconds=_read_time_seconds(result_dir),
        label=label or result_dir.name,
    )


def evaluate_dirs(truth_dir, result_dir):
    """Evaluate a single pair, or matching replicate subdirectories.

    When both directories contain subdirectories with common names, each pair
    contributes one row; otherwise the directories themselves form one pair.
    """
    truth_dir = Path(truth_dir)
    result_dir = Path(result_dir)
    if (truth_dir / "true_activation.csv").exists():
        return [evaluate_pair(truth_dir, result_dir)]
    names = sorted(
        p.name
        for p in truth_dir.iterdir()
        if p.is_dir() and (result_dir / p.name).is_dir()
    )
    if not names:
        raise InvalidSpecError(
            f"{truth_dir} has neither truth maps nor replicate subdirectories"
        )
    return [evaluate_pair(truth_dir / n, result_dir / n, label=n) for n in names]


def _mean_row(rows):
    """Arithmetic mean of the numeric cells, skipping NA."""
    means = ["mean"]
    for j in range(1, len(REPORT_COLUMNS) + 1):
        vals = [float(r[j]) for r in rows if r[j] != "NA"]
        means.append(repr(sum(vals) / len(vals)) if vals else "NA")
    return means


def write_report_csv(path, rows, columns=("dataset",) + REPORT_COLUMNS, mean_row=True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
        if mean_row and rows:
            writer.writerow(_mean_row(rows))


# --------------------------------------------------------------------------
# study harness
# --------------------------------------------------------------------------

def simulate_study_dataset(study: str, seed: int, n_time: int = 200,
                           multiplier: float = DEFAULT_MULTIPLIER):
    """One dataset of the named study with its ground truth and design.

    Returns ``(dataset, maps, design)``. Seeds for the map and the noise are
    derived from ``seed`` so replicates differ in both.
    """
    if study == "realistic":
        dataset, maps = simulate_realistic(derive_seed(seed, 2))
        return dataset, maps, realistic_design(dataset.n_time)
    design = design_for_length(n_time)
    maps = generate_true_maps((50, 50), regions=None, multiplier=multiplier,
                              seed=derive_seed(seed, 0))
    sig = SignalSpec(beta0=0.4909, theta0=np.pi / 4)
    if study == "iid":
        noise = NoiseSpec("iid", sigma=0.04909)
        dataset = simulate_iid(maps, design, sig, noise, derive_seed(seed, 1))
    elif study == "ar1":
        noise = NoiseSpec("ar1", sigma=0.04909, ar_coeff=0.2 + 0.9j)
        dataset = simulate_ar1(maps, design, sig, noise, derive_seed(seed, 1))
    else:
        raise InvalidSpecError(f"unknown study {study!r}")
    return dataset, maps, design


def _study_fit_config(seed, n_parcels=9, psi=STUDY_PSI, workers=None,
                      n_iter=1000) -> FitConfig:
    return FitConfig(
        n_parcels=n_parcels,
        workers=workers,
        sampler=SamplerConfig(psi=psi, n_iter=n_iter, seed=seed),
    )


def _run_replicate(study, master_seed, rep, fit_cfg: FitConfig, n_time=200):
    rep_seed = derive_seed(master_seed, rep)
    dataset, maps, design = simulate_study_dataset(study, rep_seed, n_time=n_time)
    cfg = replace(fit_cfg, sampler=replace(fit_cfg.sampler, seed=derive_seed(rep_seed, 3)))
    result = fit_dataset(dataset, design, cfg)
    row = evaluate_arrays(
        maps.active,
        maps.magnitude,
        result.maps.activation,
        result.maps.magnitude,
        result.incl_prob,
        time_seconds=result.time_seconds,
        label=f"rep{rep:03d}",
    )
    return row, result


def _reproduce_simple(study, n_replicates, seed, workers):
    rows = []
    cfg = _study_fit_config(0, workers=workers)
    for rep in range(n_replicates):
        row, _ = _run_replicate(study, seed, rep, cfg)
        rows.append(row)
    return rows


def _reproduce_params(n_replicates, seed, workers):
    """One-at-a-time sweeps over psi, parcel count, and series length."""
    sections = []
    for p in (0.02, 0.20, 0.35, 0.47):
        sections.append((f"psi=ndtri({p})", dict(psi=ndtri(p))))
    for g in (1, 4, 9, 16):
        sections.append((f"G={g}", dict(n_parcels=g)))
    for n_time in (80, 200, 500, 1000):
        opts = dict(n_time=n_time)
        if n_time == 1000:
            opts["psi"] = ndtri(0.02)
        sections.append((f"T={n_time}", opts))
    rows = []
    for section_idx, (label, opts) in enumerate(sections):
        n_time = opts.pop("n_time", 200)
        cfg = _study_fit_config(0, workers=workers, **opts)
        section_rows = []
        for rep in range(n_replicates):
            row, _ = _run_replicate("ar1", derive_seed(seed, 1000 + section_idx), rep,
                                    cfg, n_time=n_time)
            section_rows.append(row)
        mean = _mean_row(section_rows)
        mean[0] = label
        rows.append(mean)
    return rows


def _reproduce_realistic(seed, workers):
    """Per-slice detection table for the seven-slice dynamic-phase volume."""
    dataset, maps = simulate_realistic(derive_seed(seed, 2))
    design = realistic_design(dataset.n_time)
    rows = []
    for s in range(dataset.dims[0]):
        sl = dataset.slice_dataset(s)
        truth = maps.slice_maps(s)
        cfg = FitConfig(
            n_parcels=REALISTIC_G,
            workers=workers,
            sampler=SamplerConfig(psi=REALISTIC_PSI, seed=derive_seed(seed, 100 + s)),
        )
        result = fit_dataset(sl, design, cfg)
        cls = classification_metrics(truth.active, result.maps.activation)
        rows.append([
            f"slice{s + 1}",
            cls.tp,
            cls.fp,
            cls.fn,
            cls.tn,
            "NA" if cls.precision is None else repr(cls.precision),
            "NA" if cls.recall is None else repr(cls.recall),
            repr(result.time_seconds),
        ])
    return rows


def reproduce(study: str, n_replicates: int, seed: int, out_dir, workers=None):
    """Run simulate -> fit -> evaluate end to end and write the study report.

    ``study`` is one of iid, ar1, params, realistic. Returns the report rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if study in ("iid", "ar1"):
        rows = _reproduce_simple(study, n_replicates, seed, workers)
        write_report_csv(out / "report.csv", rows)
    elif study == "params":
        rows = _reproduce_params(n_replicates, seed, workers)
        write_report_csv(out / "report.csv", rows,
                         columns=("setting",) + REPORT_COLUMNS, mean_row=False)
    elif study == "realistic":
        rows = _reproduce_realistic(seed, workers)
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("slice",) + REALISTIC_COLUMNS)
            writer.writerows(rows)
    else:
        raise InvalidSpecError(f"unknown study {study!r}")
    dataio.write_keyvalues(
        out / "manifest.txt",
        {"study": study, "replicates": n_replicates, "seed": seed},
    )
    return rows
