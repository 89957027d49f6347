"""Branching random walk on a b-ary tree: maximum-displacement laws.

The comparison object for the dyadic field hierarchy is a walk on a
four-ary tree with independent Gaussian increments per generation.  The
law of the maximal displacement M_g obeys the exact recursion

    F_{g+1}(x) = ( integral of F_g(x - s) against the N(0, sigma^2)
                   increment law ds ) ^ b,

which this module iterates on a uniform CDF grid, alongside a direct
Monte Carlo simulator used as an independent cross-check.  Per
generation the paired gap E|M - M'| comes from the grid identity
E|M - M'| = 2 * integral F (1 - F), and the mean increment
E M_{g+1} - E M_g is verified against its lower bound, half the gap.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .sampling import SeedSpec

COVERAGE_TOL = 1e-9


class GridCoverageError(RuntimeError):
    """The CDF support cannot be bracketed by the working grid."""


class BudgetError(RuntimeError):
    """Simulation size exceeds the configured node budget."""


@dataclass(frozen=True)
class CdfGrid:
    """Distribution function sampled on a uniform grid.

    ``values[i]`` is F(origin + i*step); the grid must cover the support,
    i.e. start below 1e-9 and end above 1 - 1e-9.
    """

    origin: float
    step: float
    values: np.ndarray

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(vals) < -1e-12):
            raise ValueError("CDF values must be nondecreasing")
        if vals[0] > COVERAGE_TOL or vals[-1] < 1.0 - COVERAGE_TOL:
            raise ValueError(
                f"grid does not cover the support: F spans "
                f"[{vals[0]:.3g}, {vals[-1]:.3g}]")

    @classmethod
    def point_mass(cls, location: float, step: float) -> "CdfGrid":
        loc = round(location / step) * step
        return cls(loc - step, step, np.array([0.0, 1.0, 1.0]))

    @property
    def xs(self) -> np.ndarray:
        return self.origin + self.step * np.arange(len(self.values))

    def atom_location(self) -> float | None:
        """Position of a unit atom, if this grid is a point mass."""
        diffs = np.diff(self.values)
        jumps = np.nonzero(diffs > 1e-12)[0]
        if len(jumps) == 1 and diffs[jumps[0]] >= 1.0 - 2 * COVERAGE_TOL:
            return float(self.origin + self.step * (jumps[0] + 1))
        return None

    def mean(self) -> float:
        atom = self.atom_location()
        if atom is not None:
            return atom
        xs = self.xs
        boundary = xs[-1] * self.values[-1] - xs[0] * self.values[0]
        return float(boundary - trapezoid(self.values, xs))

    def variance(self) -> float:
        atom = self.atom_location()
        if atom is not None:
            return 0.0
        xs = self.xs
        boundary = xs[-1] ** 2 * self.values[-1] - xs[0] ** 2 * self.values[0]
        second = boundary - trapezoid(2.0 * xs * self.values, xs)
        return float(second - self.mean() ** 2)

    def quantile(self, prob: float) -> float:
        atom = self.atom_location()
        if atom is not None:
            return atom
        vals = self.values
        i = int(np.searchsorted(vals, prob, side="left"))
        if i == 0:
            return float(self.xs[0])
        i = min(i, len(vals) - 1)
        lo, hi = vals[i - 1], vals[i]
        x_lo = self.origin + self.step * (i - 1)
        if hi <= lo:
            return float(x_lo + self.step)
        return float(x_lo + self.step * (prob - lo) / (hi - lo))

    def dh_gap(self) -> float:
        """E|M - M'| for two independent copies: 2 * integral F(1-F)."""
        if self.atom_location() is not None:
            return 0.0
        return float(2.0 * trapezoid(self.values * (1.0 - self.values), self.xs))

    def emax_pair_two_ways(self) -> tuple[float, float]:
        """E max(M, M') via the squared CDF and via (2 E M + E|M-M'|)/2."""
        atom = self.atom_location()
        if atom is not None:
            return atom, atom
        xs = self.xs
        sq = self.values ** 2
        boundary = xs[-1] * sq[-1] - xs[0] * sq[0]
        from_law = float(boundary - trapezoid(sq, xs))
        from_identity = self.mean() + self.dh_gap() / 2.0
        return from_law, from_identity


@dataclass(frozen=True)
class BrwSpec:
    """b-ary tree walk with Gaussian increments.

    ``sigma`` is either one standard deviation for every generation or a
    tuple with one entry per generation.  The standard comparison object
    is branching 4 with unit increments; branching 1 (plain convolution)
    and sigma 0 (frozen walk) are admitted as degenerate cases.
    """

    depth: int
    branching: int = 4
    sigma: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if self.branching < 1:
            raise ValueError("branching factor must be at least 1")
        sig = self.sigma
        if isinstance(sig, (int, float)):
            if sig < 0:
                raise ValueError("sigma must be nonnegative")
        else:
            sig = tuple(float(s) for s in sig)
            object.__setattr__(self, "sigma", sig)
            if len(sig) != self.depth:
                raise ValueError(
                    f"need one sigma per generation: got {len(sig)} "
                    f"for depth {self.depth}")
            if any(s < 0 for s in sig):
                raise ValueError("sigma must be nonnegative")

    def sigma_at(self, generation: int) -> float:
        if not 1 <= generation <= max(self.depth, 1):
            raise ValueError(f"generation {generation} out of range")
        if isinstance(self.sigma, tuple):
            return self.sigma[generation - 1]
        return float(self.sigma)

    @property
    def max_sigma(self) -> float:
        if isinstance(self.sigma, tuple):
            return max(self.sigma) if self.sigma else 0.0
        return float(self.sigma)


def _gaussian_cell_masses(sigma: float, step: float) -> np.ndarray:
    """Kernel cell masses out to 8 sigma: mass of N(0, sigma^2) per cell."""
    half = math.ceil(8.0 * sigma / step)
    edges = (np.arange(-half, half + 1 + 1) - 0.5) * step / sigma
    return np.diff(ndtr(edges))


def brw_cdf_step(cdf: CdfGrid, spec: BrwSpec, generation: int,
                 grid: tuple[float, int] | None = None) -> CdfGrid:
    """One generation of the maximum-law recursion.

    Convolves the CDF with the generation's increment law (by cell-mass
    quadrature on the grid; analytically when the input is a point mass),
    raises the result to the branching factor, and returns it on a grid
    extended far enough to keep the support covered.  ``grid`` pins the
    output to (origin, npoints) instead of automatic extension.
    """
    sigma = spec.sigma_at(generation)
    if sigma <= 0:
        raise ValueError("the CDF recursion needs a positive sigma")
    b = spec.branching
    h = cdf.step
    drift = math.sqrt(2.0 * math.log(b)) * sigma if b > 1 else 0.0
    pad_left = math.ceil(7.5 * sigma / h)
    pad_right = math.ceil((drift + 7.5 * sigma) / h)

    for _ in range(8):
        if grid is not None:
            out_origin, n_out = grid
        else:
            out_origin = cdf.origin - pad_left * h
            n_out = len(cdf.values) + pad_left + pad_right

        shift = (cdf.origin - out_origin) / h
        if abs(shift - round(shift)) > 1e-9:
            raise GridCoverageError("input and output grids are misaligned")
        shift = int(round(shift))

        atom = cdf.atom_location()
        if atom is not None:
            xs = out_origin + h * np.arange(n_out)
            out = ndtr((xs - atom) / sigma) ** b
        else:
            weights = _gaussian_cell_masses(sigma, h)
            half = (len(weights) - 1) // 2
            ext = np.empty(n_out + 2 * half)
            lo = shift + half  # index of cdf.values[0] inside ext
            ext[:lo] = 0.0
            ext[lo:lo + len(cdf.values)] = cdf.values
            ext[lo + len(cdf.values):] = 1.0
            conv = fftconvolve(ext, weights, mode="valid")
            out = np.clip(conv, 0.0, 1.0) ** b

        np.maximum.accumulate(out, out=out)
        if out[0] <= COVERAGE_TOL and out[-1] >= 1.0 - COVERAGE_TOL:
            return CdfGrid(out_origin, h, out)
        if grid is not None:
            raise GridCoverageError(
                "pinned grid does not bracket the support after one step")
        pad_left *= 2
        pad_right *= 2
    raise GridCoverageError("support could not be bracketed after extension")


@dataclass(frozen=True)
class BrwGenRecord:
    generation: int
    mean: float
    median: float
    q10: float
    q90: float
    dh_gap: float


@dataclass(frozen=True)
class BrwRun:
    spec: BrwSpec
    grids: list[CdfGrid]
    records: list[BrwGenRecord]


def _record(generation: int, grid: CdfGrid) -> BrwGenRecord:
    return BrwGenRecord(
        generation=generation, mean=grid.mean(), median=grid.quantile(0.5),
        q10=grid.quantile(0.1), q90=grid.quantile(0.9), dh_gap=grid.dh_gap())


def brw_run(spec: BrwSpec, step: float | None = None,
            gap_tol: float = 1e-6) -> BrwRun:
    """Iterate the CDF recursion from a point mass at the root.

    The working grid is allocated once, wide enough for the full depth
    (linear drift plus 6-sigma diffusive tails).  Each generation's mean
    increment is checked against half the previous paired gap, which is a
    theorem for the exact laws; violation beyond ``gap_tol`` aborts.
    """
    sigma_ref = spec.max_sigma
    if spec.depth > 0 and sigma_ref <= 0:
        raise ValueError("the CDF recursion needs a positive sigma")
    if step is None:
        step = 1e-3 * (sigma_ref if sigma_ref > 0 else 1.0)

    grids = [CdfGrid.point_mass(0.0, step)]
    records = [_record(0, grids[0])]
    if spec.depth > 0:
        spread = 6.0 * sigma_ref * math.sqrt(spec.depth) + 2.0
        drift = math.sqrt(2.0 * math.log(max(spec.branching, 2))) * sigma_ref
        lo = -step * math.ceil(spread / step)
        hi = step * math.ceil((drift * spec.depth + spread) / step)
        master = (lo, int(round((hi - lo) / step)) + 1)
        for g in range(1, spec.depth + 1):
            grids.append(brw_cdf_step(grids[-1], spec, g, grid=master))
            records.append(_record(g, grids[-1]))
            gain = records[-1].mean - records[-2].mean
            bound = records[-2].dh_gap / 2.0
            if gain < bound - gap_tol:
                raise RuntimeError(
                    f"generation {g}: mean increment {gain:.3e} fell below "
                    f"the paired-gap bound {bound:.3e}")
    return BrwRun(spec, grids, records)


@dataclass(frozen=True)
class BrwSimStats:
    """Monte Carlo record of the maximal displacement at fixed depth."""

    depth: int
    branching: int
    samples: int
    mean: float
    se_mean: float
    var: float
    dh_gap: float
    dh_se: float
    q10: float
    q50: float
    q90: float


def brw_simulate(spec: BrwSpec, samples: int, seed: SeedSpec,
                 workers: int = 1, max_nodes: int = 1 << 34) -> BrwSimStats:
    """Direct tree simulation of the maximal displacement.

    Sample i uses stream ``seed.stream + i``; each sample materializes one
    generation of positions at a time (so memory is one tree level).  The
    total node count b^depth * samples must stay within ``max_nodes``.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    b, depth = spec.branching, spec.depth
    leaves = b ** depth
    if leaves > 1 << 26 or leaves * samples > max_nodes:
        raise BudgetError(
            f"{leaves} leaves x {samples} samples exceeds the node budget")
    sigmas = [spec.sigma_at(g) for g in range(1, depth + 1)]

    maxima = np.empty(samples)

    def run_one(i: int) -> None:
        rng = seed.child(i).generator()
        pos = np.zeros(1)
        for g in range(1, depth + 1):
            pos = np.repeat(pos, b)
            pos += sigmas[g - 1] * rng.standard_normal(len(pos))
        maxima[i] = pos.max()

    if workers <= 1:
        for i in range(samples):
            run_one(i)
    else:
        step = -(-samples // (workers * 4))

        def fill(lo: int, hi: int) -> None:
            for i in range(lo, hi):
                run_one(i)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = [pool.submit(fill, lo, min(lo + step, samples))
                    for lo in range(0, samples, step)]
            for job in jobs:
                job.result()

    mean = math.fsum(maxima) / samples
    var = math.fsum((maxima - mean) ** 2) / (samples - 1)
    npairs = samples // 2
    gaps = np.abs(maxima[0::2][:npairs] - maxima[1::2][:npairs])
    dh_gap = math.fsum(gaps) / npairs
    dh_var = math.fsum((gaps - dh_gap) ** 2) / max(npairs - 1, 1)
    ordered = np.sort(maxima)

    def rank(p: float) -> float:
        return float(ordered[max(math.ceil(p * samples), 1) - 1])

    return BrwSimStats(
        depth=depth, branching=b, samples=samples, mean=mean,
        se_mean=math.sqrt(var / samples), var=var, dh_gap=dh_gap,
        dh_se=math.sqrt(dh_var / npairs), q10=rank(0.1), q50=rank(0.5),
        q90=rank(0.9))


# ---------------------------------------------------------------------------
# CSV output.
# ---------------------------------------------------------------------------

def write_brw_run_csv(run: BrwRun, fh) -> None:
    fh.write("generation,mean,median,q10,q90,dh_gap\n")
    for r in run.records:
        fh.write(f"{r.generation},{r.mean!r},{r.median!r},"
                 f"{r.q10!r},{r.q90!r},{r.dh_gap!r}\n")


def write_cdf_csv(grid: CdfGrid, fh) -> None:
    fh.write("x,F(x)\n")
    xs = grid.xs
    for i, v in enumerate(grid.values):
        fh.write(f"{float(xs[i])!r},{float(v)!r}\n")
