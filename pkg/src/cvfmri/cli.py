"""Command-line interface.

Subcommands: simulate, fit, evaluate, reproduce. Every flag of ``fit`` can
also come from a flat "key = value" config file (# comments allowed); explicit
flags override the file. Exit codes: 0 success, 2 invalid specification or
config, 3 file/format problems, 4 numerical or degenerate failures, 1
anything unexpected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from scipy.special import ndtri

from . import dataio, pipeline
from .design import design_for_length
from .errors import (
    CvfmriError,
    DataFormatError,
    DegenerateDesignError,
    DegeneratePosteriorError,
    InsufficientDataError,
    InvalidSpecError,
    ShapeMismatchError,
    SingularBasisError,
    UndefinedMetricError,
)
from .parcellation import EDGE, EDGE_CORNER
from .sampler import NONSPATIAL, SPATIAL, SamplerConfig
from .simulate import DEFAULT_MULTIPLIER

_EXIT_CODES = (
    ((InvalidSpecError, ShapeMismatchError), 2),
    ((DataFormatError, OSError), 3),
    (
        (
            DegenerateDesignError,
            DegeneratePosteriorError,
            InsufficientDataError,
            SingularBasisError,
            UndefinedMetricError,
        ),
        4,
    ),
)

#: fit settings that may come from a config file, with their coercions.
_FIT_KEYS = {
    "data": str,
    "G": int,
    "psi": float,
    "q": int,
    "iters": int,
    "burn": int,
    "threshold": float,
    "mode": str,
    "neighborhood": str,
    "workers": int,
    "seed": int,
    "mcse_tol": float,
    "a_kappa": float,
    "b_kappa": float,
    "stimulus_on": int,
    "stimulus_off": int,
    "stimulus_on_first": lambda s: str(s).lower() in ("1", "true", "yes", "on"),
    "stimulus_warmup": int,
}

_FIT_DEFAULTS = {
    "G": 9,
    "psi": float(ndtri(0.47)),
    "q": 5,
    "iters": 1000,
    "mode": SPATIAL,
    "neighborhood": EDGE_CORNER,
    "seed": 0,
    "mcse_tol": 0.05,
    "a_kappa": 0.5,
    "b_kappa": 2000.0,
    "stimulus_on": 20,
    "stimulus_off": 20,
    "stimulus_on_first": True,
    "stimulus_warmup": 0,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvfmri",
        description="Bayesian activation mapping for complex-valued fMRI time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    sim.add_argument("--study", required=True, choices=["iid", "ar1", "realistic"])
    sim.add_argument("--seed", required=True, type=int)
    sim.add_argument("--out", required=True)
    sim.add_argument("--T", type=int, default=200, help="time points (iid/ar1 studies)")
    sim.add_argument("--multiplier", type=float, default=DEFAULT_MULTIPLIER,
                     help="peak magnitude of the true maps (iid/ar1 studies)")

    fit = sub.add_parser("fit", help="fit a dataset and write result maps")
    fit.add_argument("--data", help="CVF1 dataset file")
    fit.add_argument("--config", help="flat key = value config file")
    fit.add_argument("--out", required=True)
    fit.add_argument("--G", type=int, help="number of parcels")
    fit.add_argument("--psi", type=float, help="probit prior offset")
    fit.add_argument("--q", type=int, help="spatial basis rank")
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burn", type=int)
    fit.add_argument("--threshold", type=float)
    fit.add_argument("--mode", choices=[SPATIAL, NONSPATIAL])
    fit.add_argument("--neighborhood", choices=[EDGE, EDGE_CORNER])
    fit.add_argument("--workers", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--mcse-tol", dest="mcse_tol", type=float)
    fit.add_argument("--stimulus-on", dest="stimulus_on", type=int)
    fit.add_argument("--stimulus-off", dest="stimulus_off", type=int)
    fit.add_argument("--stimulus-warmup", dest="stimulus_warmup", type=int)
    fit.add_argument("--trace-voxels", dest="trace_voxels",
                     help="comma-separated flat voxel indices to trace")

    ev = sub.add_parser("evaluate", help="compare result maps against ground truth")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--result", required=True)
    ev.add_argument("--out", required=True)

    rep = sub.add_parser("reproduce", help="run a full simulation study")
    rep.add_argument("--study", required=True,
                     choices=["iid", "ar1", "params", "realistic"])
    rep.add_argument("--replicates", type=int, default=20)
    rep.add_argument("--seed", type=int, default=20260101)
    rep.add_argument("--out", required=True)
    rep.add_argument("--workers", type=int)
    return parser


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, maps, design = pipeline.simulate_study_dataset(
        args.study, args.seed, n_time=args.T, multiplier=args.multiplier
    )
    dataio.write_dataset(out / "dataset.cvf", dataset)
    dataio.write_map(out / "true_activation.csv", maps.active, integer=True)
    dataio.write_map(out / "true_magnitude.csv", maps.magnitude)
    dataio.write_keyvalues(
        out / "manifest.txt",
        {
            "study": args.study,
            "seed": args.seed,
            "T": dataset.n_time,
            "dims": ",".join(str(d) for d in dataset.dims),
            "multiplier": args.multiplier,
        },
    )
    print(f"wrote {out / 'dataset.cvf'} ({dataset.n_voxels} voxels, T={dataset.n_time})")
    return 0


def _fit_settings(args) -> dict:
    settings = dict(_FIT_DEFAULTS)
    if args.config:
        raw = dataio.read_keyvalues(args.config)
        unknown = set(raw) - set(_FIT_KEYS)
        if unknown:
            raise InvalidSpecError(f"unknown config keys: {sorted(unknown)}")
        for key, value in raw.items():
            try:
                settings[key] = _FIT_KEYS[key](value)
            except ValueError as exc:
                raise InvalidSpecError(f"config key {key}: {exc}") from None
    for key in _FIT_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if "data" not in settings or settings.get("data") in (None, ""):
        raise InvalidSpecError("no dataset given (use --data or the config file)")
    return settings


def _cmd_fit(args) -> int:
    settings = _fit_settings(args)
    dataset = dataio.read_dataset(settings["data"])
    design = design_for_length(
        dataset.n_time,
        on_len=settings["stimulus_on"],
        off_len=settings["stimulus_off"],
        on_first=settings["stimulus_on_first"],
        warmup=settings["stimulus_warmup"],
    )
    sampler = SamplerConfig(
        psi=settings["psi"],
        q=settings["q"],
        a_kappa=settings["a_kappa"],
        b_kappa=settings["b_kappa"],
        n_iter=settings["iters"],
        n_burn=settings.get("burn"),
        threshold=settings.get("threshold"),
        mode=settings["mode"],
        mcse_tol=settings["mcse_tol"],
        seed=settings["seed"],
    )
    trace = ()
    if getattr(args, "trace_voxels", None):
        trace = tuple(int(t) for t in args.trace_voxels.split(","))
    cfg = pipeline.FitConfig(
        n_parcels=settings["G"],
        neighborhood=settings["neighborhood"],
        workers=settings.get("workers"),
        trace_voxels=trace,
        sampler=sampler,
    )
    result = pipeline.fit_dataset(dataset, design, cfg)
    pipeline.write_fit_outputs(
        result,
        args.out,
        extra_manifest={
            "data": settings["data"],
            "stimulus_on": settings["stimulus_on"],
            "stimulus_off": settings["stimulus_off"],
            "stimulus_on_first": settings["stimulus_on_first"],
            "stimulus_warmup": settings["stimulus_warmup"],
        },
    )
    status = "converged" if result.converged else "NOT converged (max MCSE above tolerance)"
    print(f"fit finished in {result.time_seconds:.2f}s, {status}; outputs in {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    rows = pipeline.evaluate_dirs(args.truth, args.result)
    pipeline.write_report_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} dataset row(s) + mean)")
    return 0


def _cmd_reproduce(args) -> int:
    rows = pipeline.reproduce(
        args.study, args.replicates, args.seed, args.out, workers=args.workers
    )
    print(f"study {args.study}: {len(rows)} report row(s) in {Path(args.out) / 'report.csv'}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "reproduce": _cmd_reproduce,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CvfmriError as exc:
        for classes, code in _EXIT_CODES:
            if isinstance(exc, classes):
                break
        else:
            code = 1
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
