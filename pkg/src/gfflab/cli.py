"""Command-line harness: experiment configuration, persistence, reports.

Exit codes: 0 success, 2 invalid arguments or configuration (including
resume conflicts and a held output-directory lock), 3 dense size cap
exceeded, 4 missing data.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import brw as brw_mod
from . import extremes, hierarchy, lattice, sampling
from .green import (DEFAULT_DENSE_CAP, DenseSizeError, green_dense,
                    green_spectral, write_green_csv)
from .lattice import BoxSpec
from .sampling import SeedSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SIZE_CAP = 3
EXIT_MISSING_DATA = 4

# Streams are partitioned per level: level n owns stream indices
# [n << 40, n << 40 + samples), so adding levels or workers never
# perturbs the draws of another level.
LEVEL_STREAM_SHIFT = 40


class LockHeldError(RuntimeError):
    """Another experiment process owns the output directory."""


@dataclass
class ExperimentConfig:
    n_min: int = 1
    n_max: int = 6
    samples: int = 10000
    seed: int = 1
    workers: int = 1
    dense_cutoff: int = DEFAULT_DENSE_CAP
    out_dir: str = "results"
    detector_threshold: float = 2.0
    se_mult_inequality: float = 2.0
    se_mult_point: float = 3.0

    def validate(self) -> "ExperimentConfig":
        if self.n_min < 1:
            raise ValueError("n_min must be at least 1")
        if self.n_max < self.n_min:
            raise ValueError("n_max must be at least n_min")
        if self.samples < 100:
            raise ValueError("samples must be at least 100")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.dense_cutoff < 2:
            raise ValueError("dense cutoff must be at least 2")
        for name in ("detector_threshold", "se_mult_inequality",
                     "se_mult_point"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        return self


_CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**raw)


def resolve_config(args) -> ExperimentConfig:
    """Defaults, overlaid by the JSON config, overlaid by CLI flags."""
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    overrides = {
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "out_dir": getattr(args, "out", None),
        "n_min": getattr(args, "n_min", None),
        "n_max": getattr(args, "n_max", None),
        "samples": getattr(args, "samples", None),
        "dense_cutoff": getattr(args, "dense_cutoff", None),
        "detector_threshold": getattr(args, "detector_k", None),
    }
    cfg = dataclasses.replace(
        cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


@contextlib.contextmanager
def hold_dir_lock(out_dir: Path):
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeldError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if that run is dead)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _parse_side(value: int) -> BoxSpec:
    return BoxSpec.from_side(value)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_green(args) -> int:
    cfg = resolve_config(args)
    box = _parse_side(args.n)
    if args.spectral and args.dense:
        raise ValueError("choose at most one of --dense / --spectral")
    if args.spectral:
        if not args.profile and box.side > cfg.dense_cutoff:
            raise DenseSizeError(
                f"full-matrix export above the cap {cfg.dense_cutoff} is "
                f"not supported; export the variance profile instead")
        op = green_spectral(box)
    else:
        op = green_dense(box, cfg.dense_cutoff)
    with _open_out(args.out) as fh:
        write_green_csv(op, fh, profile=args.profile)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    box = _parse_side(args.n)
    if args.count < 1:
        raise ValueError("count must be positive")
    out_dir = Path(cfg.out_dir)
    if args.dump_fields:
        out_dir.mkdir(parents=True, exist_ok=True)
    seed = SeedSpec(cfg.seed)
    maxima = []
    for i, field in enumerate(
            sampling.batch_sample(box, args.count, seed, cfg.workers)):
        value, site = extremes.field_max(field)
        maxima.append(value)
        print(f"field {i}: max {value:.6f} at {site}")
        if args.dump_fields:
            if args.format == "csv":
                lattice.write_field_csv(field, out_dir / f"field_{i:05d}.csv")
            else:
                lattice.write_field_binary(field, out_dir / f"field_{i:05d}.bin")
    print(f"mean of maxima over {args.count} fields: "
          f"{sum(maxima) / len(maxima):.6f}")
    return EXIT_OK


def cmd_hierarchy(args) -> int:
    cfg = resolve_config(args)
    box = _parse_side(args.n)
    k = args.k
    if args.exact:
        block_dev, off_dev = hierarchy.markov_block_check(
            box, k, cfg.dense_cutoff)
        verdict = "PASS" if max(block_dev, off_dev) <= 1e-8 else "FAIL"
        print(f"markov check at level {k}: {verdict} "
              f"(max block deviation {block_dev:.3e}, "
              f"max off-block entry {off_dev:.3e})")
        return EXIT_OK
    if args.decompose:
        field = sampling.sample_spectral(box, SeedSpec(cfg.seed))
        dec = hierarchy.decompose(field)
        gap = float(abs((dec.total() - field).values).max())
        with _open_out(args.out) as fh:
            hierarchy.write_decomposition_csv(dec, fh)
        print(f"telescoping residual: {gap:.3e}", file=sys.stderr)
        return EXIT_OK
    ds = hierarchy.dyadic_set(box, k)
    print(f"A_{k} for side {box.side}: {sorted(ds.members)}")
    print(f"line coordinates through level {k}: "
          f"{hierarchy.level_line_coords(box, k)}")
    return EXIT_OK


def _extremes_stats(cfg: ExperimentConfig, results_path: Path
                    ) -> list[extremes.MaxStats]:
    existing: dict[int, extremes.MaxStats] = {}
    if results_path.exists():
        persisted_seed, existing = extremes.load_results(results_path)
        if persisted_seed != cfg.seed:
            raise extremes.ResumeMismatchError(
                f"results file holds seed {persisted_seed}, "
                f"config says {cfg.seed}")
    stats = []
    for n in range(cfg.n_min, cfg.n_max + 1):
        if n in existing:
            st = existing[n]
            if st.samples != cfg.samples:
                raise extremes.ResumeMismatchError(
                    f"level {n} persisted with {st.samples} samples, "
                    f"config says {cfg.samples}")
        else:
            st = extremes.mc_max_stats(
                n, cfg.samples,
                SeedSpec(cfg.seed, n << LEVEL_STREAM_SHIFT), cfg.workers)
            extremes.append_result(results_path, cfg.seed, st)
        stats.append(st)
    return stats


def cmd_extremes(args) -> int:
    cfg = resolve_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with hold_dir_lock(out_dir):
        stats = _extremes_stats(cfg, out_dir / "results.csv")
        report = extremes.render_report(
            stats, cfg.detector_threshold, cfg.se_mult_inequality)
        (out_dir / "report.txt").write_text(report)
        print(report, end="")
    return EXIT_OK


def cmd_brw(args) -> int:
    cfg = resolve_config(args)
    sigma: float | tuple[float, ...]
    if "," in args.sigma:
        sigma = tuple(float(s) for s in args.sigma.split(","))
    else:
        sigma = float(args.sigma)
    spec = brw_mod.BrwSpec(depth=args.depth, branching=args.branching,
                           sigma=sigma)
    run = brw_mod.brw_run(spec, step=args.step)
    with _open_out(args.out) as fh:
        brw_mod.write_brw_run_csv(run, fh)
    if args.dump_cdf:
        with open(args.dump_cdf, "w") as fh:
            brw_mod.write_cdf_csv(run.grids[-1], fh)
    if args.simulate:
        sim = brw_mod.brw_simulate(spec, args.simulate, SeedSpec(cfg.seed),
                                   cfg.workers)
        target = run.records[-1].mean
        print(f"simulation mean {sim.mean:.5f} vs recursion {target:.5f} "
              f"(|diff| {abs(sim.mean - target):.5f}, "
              f"3 SE = {3 * sim.se_mean:.5f})", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = resolve_config(args)
    results_path = Path(cfg.out_dir) / "results.csv"
    if not results_path.exists():
        print(f"no results at {results_path}", file=sys.stderr)
        return EXIT_MISSING_DATA
    _, persisted = extremes.load_results(results_path)
    if not persisted:
        print(f"results file {results_path} holds no levels", file=sys.stderr)
        return EXIT_MISSING_DATA
    print(extremes.render_report(
        sorted(persisted.values(), key=lambda s: s.n),
        cfg.detector_threshold, cfg.se_mult_inequality), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker thread count")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--config", help="JSON experiment config")

    parser = argparse.ArgumentParser(
        prog="gfflab",
        description="Discrete 2D Gaussian-free-field laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("green", parents=[common],
                       help="export a Green matrix or variance profile")
    p.add_argument("--n", type=int, required=True, help="box side (power of 2)")
    p.add_argument("--dense", action="store_true")
    p.add_argument("--spectral", action="store_true")
    p.add_argument("--profile", action="store_true",
                   help="variance profile instead of the full matrix")
    p.add_argument("--dense-cutoff", type=int, dest="dense_cutoff")
    p.set_defaults(func=cmd_green)

    p = sub.add_parser("sample", parents=[common],
                       help="draw fields and summarize their maxima")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dump-fields", action="store_true")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("hierarchy", parents=[common],
                       help="dyadic sets, exact Markov check, decomposition")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--exact", action="store_true",
                   help="run the exact residual-covariance block check")
    p.add_argument("--decompose", action="store_true",
                   help="decompose one sampled field to CSV")
    p.add_argument("--dense-cutoff", type=int, dest="dense_cutoff")
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("extremes", parents=[common],
                       help="per-level maximum statistics and reports")
    p.add_argument("--n-min", type=int, dest="n_min")
    p.add_argument("--n-max", type=int, dest="n_max")
    p.add_argument("--samples", type=int)
    p.add_argument("--detector-k", type=float, dest="detector_k")
    p.set_defaults(func=cmd_extremes)

    p = sub.add_parser("brw", parents=[common],
                       help="branching-walk maximum law and simulation")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--sigma", default="1.0",
                   help="increment std, scalar or comma list per generation")
    p.add_argument("--step", type=float, help="CDF grid step")
    p.add_argument("--simulate", type=int,
                   help="also simulate this many samples")
    p.add_argument("--dump-cdf", help="write the final-generation CDF here")
    p.set_defaults(func=cmd_brw)

    p = sub.add_parser("report", parents=[common],
                       help="render reports from persisted results")
    p.add_argument("--detector-k", type=float, dest="detector_k")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DenseSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE_CAP
    except FileNotFoundError as exc:
        print(f"error: missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except (ValueError, extremes.ResumeMismatchError, LockHeldError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
