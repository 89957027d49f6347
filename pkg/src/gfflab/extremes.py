"""Monte Carlo statistics of the field maximum across dyadic levels.

Z_n denotes the maximum of the field over the whole box of side 2^n,
boundary included, so Z_n >= 0 always.  Per level this module estimates
the mean and variance of Z_n, quantiles of the centered maximum
Z_n - E Z_n, and the paired gap E|Z_n - Z_n'| between two independent
copies.  Half that gap is a lower bound for the mean increment
E Z_{n+1} - E Z_n, which makes bounded increments and tight centered
maxima two sides of the same report.

The leading-order growth constant of E Z_n per unit log N is
2*sqrt(2/pi); the level-1 box has a single interior N(0, 1) value, so
E Z_1 = 1/sqrt(2*pi) and the level-1 paired gap is 1/sqrt(pi) exactly.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .lattice import BoxSpec, Field, Site
from .sampling import SeedSpec, spectral_interior

GROWTH_C = 2.0 * math.sqrt(2.0 / math.pi)
LEVEL1_MEAN = 1.0 / math.sqrt(2.0 * math.pi)
LEVEL1_GAP = 1.0 / math.sqrt(math.pi)

QUANTILE_PROBS = (0.10, 0.25, 0.50, 0.75, 0.90)


class ResumeMismatchError(RuntimeError):
    """Persisted results conflict with the requested configuration."""


@dataclass(frozen=True)
class MaxStats:
    """Monte Carlo record for one level."""

    n: int
    side: int
    samples: int
    mean_max: float
    se_mean: float
    var_max: float
    dh_gap: float
    dh_se: float
    q10: float
    q25: float
    q50: float
    q75: float
    q90: float

    def __post_init__(self):
        if self.mean_max < 0:
            raise ValueError("mean of the maximum cannot be negative")
        expect = math.sqrt(self.var_max / self.samples)
        if abs(self.se_mean - expect) > 1e-12 * max(1.0, expect):
            raise ValueError("se_mean inconsistent with var_max / samples")
        qs = self.quantiles
        if any(qs[i] > qs[i + 1] for i in range(len(qs) - 1)):
            raise ValueError("quantiles must be nondecreasing")

    @property
    def quantiles(self) -> tuple[float, ...]:
        return (self.q10, self.q25, self.q50, self.q75, self.q90)


def field_max(field: Field) -> tuple[float, Site]:
    """Maximum over all sites (boundary included) and its first attaining
    site in lexicographic (x, y) order."""
    flat = int(np.argmax(field.values))
    side = field.box.side
    site = (flat // (side + 1), flat % (side + 1))
    return float(field.values[site]), site


def nearest_rank_quantile(sorted_values: np.ndarray, prob: float) -> float:
    rank = math.ceil(prob * len(sorted_values))
    return float(sorted_values[max(rank, 1) - 1])


def emax_paired_two_ways(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """E max over pairs, directly and through max = (a+b+|a-b|)/2."""
    pairs = len(a)
    direct = math.fsum(np.maximum(a, b)) / pairs
    via_identity = (math.fsum(a) + math.fsum(b)
                    + math.fsum(np.abs(a - b))) / (2 * pairs)
    return direct, via_identity


def stats_from_maxima(n: int, maxima: np.ndarray) -> MaxStats:
    """Summarize per-sample maxima for level n into a MaxStats record.

    The paired gap uses consecutive samples (2i, 2i+1) as independent
    copies; quantiles are nearest-rank over the centered values.
    """
    maxima = np.asarray(maxima, dtype=np.float64)
    samples = len(maxima)
    if samples < 100:
        raise ValueError(f"need at least 100 samples, got {samples}")
    mean = math.fsum(maxima) / samples
    var = math.fsum((maxima - mean) ** 2) / (samples - 1)
    se = math.sqrt(var / samples)

    npairs = samples // 2
    a = maxima[0::2][:npairs]
    b = maxima[1::2][:npairs]
    gaps = np.abs(a - b)
    dh_gap = math.fsum(gaps) / npairs
    dh_var = math.fsum((gaps - dh_gap) ** 2) / (npairs - 1)
    dh_se = math.sqrt(dh_var / npairs)

    # Guard on the paired estimator: the two routes to E max(Z, Z') must
    # agree to rounding; a discrepancy means corrupted pairing.
    direct, via_identity = emax_paired_two_ways(a, b)
    if abs(direct - via_identity) > 1e-12 * max(1.0, abs(direct)):
        raise RuntimeError("paired-maximum cross-check failed")

    centered = np.sort(maxima - mean)
    qs = [nearest_rank_quantile(centered, p) for p in QUANTILE_PROBS]
    return MaxStats(n, 1 << n, samples, mean, se, var, dh_gap, dh_se, *qs)


def _sample_maxima(n: int, samples: int, seed: SeedSpec,
                   workers: int = 1) -> np.ndarray:
    box = BoxSpec(n)
    out = np.empty(samples)

    def fill(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            rng = seed.child(i).generator()
            out[i] = max(float(spectral_interior(box, rng).max()), 0.0)

    if workers <= 1:
        fill(0, samples)
        return out
    step = -(-samples // (workers * 4))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        jobs = [pool.submit(fill, lo, min(lo + step, samples))
                for lo in range(0, samples, step)]
        for job in jobs:
            job.result()
    return out


def mc_max_stats(n: int, samples: int, seed: SeedSpec,
                 workers: int = 1) -> MaxStats:
    """Estimate the level-n maximum statistics from fresh samples.

    Sample i is drawn from stream ``seed.stream + i``, so the result is a
    pure function of (n, samples, seed) regardless of ``workers``.
    """
    if n < 1:
        raise ValueError("level must be at least 1")
    if samples < 100:
        raise ValueError(f"need at least 100 samples, got {samples}")
    return stats_from_maxima(n, _sample_maxima(n, samples, seed, workers))


# ---------------------------------------------------------------------------
# Reports over per-level statistics.
# ---------------------------------------------------------------------------

def _check_consecutive(stats: list[MaxStats]) -> list[MaxStats]:
    if len(stats) < 2:
        raise ValueError("need at least two consecutive levels")
    ordered = sorted(stats, key=lambda s: s.n)
    ns = [s.n for s in ordered]
    if any(b - a != 1 for a, b in zip(ns, ns[1:])):
        raise ValueError(f"levels are not consecutive: {ns}")
    return ordered


@dataclass(frozen=True)
class StepVerdict:
    n_lo: int
    n_hi: int
    delta: float
    combined_se: float
    monotone_ok: bool
    gap_bound: float
    gap_se: float
    gap_ok: bool


@dataclass(frozen=True)
class MonotonicityReport:
    se_mult: float
    steps: list[StepVerdict]

    @property
    def all_ok(self) -> bool:
        return all(s.monotone_ok and s.gap_ok for s in self.steps)


def monotonicity_report(stats: list[MaxStats],
                        se_mult: float = 2.0) -> MonotonicityReport:
    """Check E Z_{n+1} >= E Z_n and the paired-gap lower bound per step.

    Both inequalities are theorems for the exact expectations; they are
    asserted here up to ``se_mult`` combined standard errors, so a failure
    indicates a sampling or estimation bug rather than randomness.
    """
    ordered = _check_consecutive(stats)
    steps = []
    for lo, hi in zip(ordered, ordered[1:]):
        delta = hi.mean_max - lo.mean_max
        cse = math.hypot(lo.se_mean, hi.se_mean)
        gap_se = math.sqrt(lo.se_mean ** 2 + hi.se_mean ** 2
                           + (lo.dh_se / 2) ** 2)
        steps.append(StepVerdict(
            n_lo=lo.n, n_hi=hi.n, delta=delta, combined_se=cse,
            monotone_ok=delta >= -se_mult * cse,
            gap_bound=lo.dh_gap / 2, gap_se=gap_se,
            gap_ok=delta >= lo.dh_gap / 2 - se_mult * gap_se))
    return MonotonicityReport(se_mult, steps)


@dataclass(frozen=True)
class DetectorReport:
    threshold: float
    window: tuple[int, int]
    detected: tuple[int, ...]
    density: float
    slope_per_level: float
    violation_density_bound: float


def subsequence_detector(stats: list[MaxStats], threshold: float) -> DetectorReport:
    """Levels whose mean increment stays below ``threshold``.

    Reports the detected set, its empirical density over the scanned
    window, the fitted per-level slope c of E Z_n, and the asymptotic
    bound c/threshold on the density of violating levels.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    ordered = _check_consecutive(stats)
    detected = tuple(lo.n for lo, hi in zip(ordered, ordered[1:])
                     if hi.mean_max <= lo.mean_max + threshold)
    ns = np.array([s.n for s in ordered], dtype=float)
    means = np.array([s.mean_max for s in ordered])
    slope = float(np.polyfit(ns, means, 1)[0])
    return DetectorReport(
        threshold=threshold,
        window=(ordered[0].n, ordered[-1].n),
        detected=detected,
        density=len(detected) / (len(ordered) - 1),
        slope_per_level=slope,
        violation_density_bound=slope / threshold)


@dataclass(frozen=True)
class GrowthFit:
    """Least-squares growth of E Z against (log N, log log N, 1)."""

    c_hat: float
    c2_hat: float
    intercept: float
    residuals: tuple[float, ...]
    pinned_c: float
    pinned_c2: float
    pinned_intercept: float
    pinned_residuals: tuple[float, ...]
    simple_c: float
    simple_intercept: float


def growth_fit(stats: list[MaxStats]) -> GrowthFit:
    """Fit E Z ~ c log N - c2 log log N + const over the given levels.

    Also reports a two-parameter fit with c pinned to the known growth
    constant, and a plain one-term regression of E Z on log N.
    """
    ordered = sorted(stats, key=lambda s: s.n)
    ns = [s.n for s in ordered]
    if len(ordered) < 4 or ns[-1] - ns[0] < 4:
        raise ValueError(
            "degenerate design matrix: need at least 4 levels spanning "
            "a window of width 4 or more")
    log_n = np.array([s.n * math.log(2.0) for s in ordered])
    loglog_n = np.log(log_n)
    means = np.array([s.mean_max for s in ordered])

    design = np.stack([log_n, -loglog_n, np.ones_like(log_n)], axis=1)
    coef, *_ = np.linalg.lstsq(design, means, rcond=None)
    residuals = means - design @ coef

    pinned_design = np.stack([-loglog_n, np.ones_like(log_n)], axis=1)
    shifted = means - GROWTH_C * log_n
    pinned, *_ = np.linalg.lstsq(pinned_design, shifted, rcond=None)
    pinned_res = shifted - pinned_design @ pinned

    simple = np.polyfit(log_n, means, 1)
    return GrowthFit(
        c_hat=float(coef[0]), c2_hat=float(coef[1]), intercept=float(coef[2]),
        residuals=tuple(float(r) for r in residuals),
        pinned_c=GROWTH_C, pinned_c2=float(pinned[0]),
        pinned_intercept=float(pinned[1]),
        pinned_residuals=tuple(float(r) for r in pinned_res),
        simple_c=float(simple[0]), simple_intercept=float(simple[1]))


@dataclass(frozen=True)
class TightnessRow:
    n: int
    spread_90_10: float
    iqr: float
    dh_gap: float
    var_over_n: float


@dataclass(frozen=True)
class TightnessReport:
    rows: tuple[TightnessRow, ...]
    spread_ratio: float
    iqr_ratio: float


def tightness_diagnostic(stats: list[MaxStats]) -> TightnessReport:
    """Quantile spreads of the centered maximum across levels.

    Stable spreads (ratio near 1) are the finite-size signature of a
    tight family of centered maxima; the per-level paired gap and
    variance-per-level are included as companion diagnostics.
    """
    if len(stats) < 3:
        raise ValueError("need at least three levels")
    ordered = sorted(stats, key=lambda s: s.n)
    rows = tuple(TightnessRow(
        n=s.n, spread_90_10=s.q90 - s.q10, iqr=s.q75 - s.q25,
        dh_gap=s.dh_gap, var_over_n=s.var_max / s.n) for s in ordered)

    def ratio(vals):
        lo, hi = min(vals), max(vals)
        return hi / lo if lo > 0 else math.inf

    return TightnessReport(
        rows=rows,
        spread_ratio=ratio([r.spread_90_10 for r in rows]),
        iqr_ratio=ratio([r.iqr for r in rows]))


# ---------------------------------------------------------------------------
# CSV persistence.  One file per experiment; the first line pins the
# schema version and master seed, then the column header, then one row
# per level.  Floats use repr, which round-trips exactly.
# ---------------------------------------------------------------------------

RESULTS_COLUMNS = ("n,N,samples,mean_max,se_mean,var_max,dh_gap,dh_se,"
                   "q10,q25,q50,q75,q90")
_SCHEMA_RE = re.compile(r"# gfflab-extremes schema=1 seed=(\d+)$")


def _schema_line(seed_master: int) -> str:
    return f"# gfflab-extremes schema=1 seed={seed_master}"


def format_result_row(st: MaxStats) -> str:
    vals = [st.mean_max, st.se_mean, st.var_max, st.dh_gap, st.dh_se,
            st.q10, st.q25, st.q50, st.q75, st.q90]
    return ",".join([str(st.n), str(st.side), str(st.samples)]
                    + [repr(float(v)) for v in vals])


def load_results(path) -> tuple[int, dict[int, MaxStats]]:
    """Read a results file; returns (master seed, stats keyed by level)."""
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        match = _SCHEMA_RE.match(first)
        if not match:
            raise ResumeMismatchError(f"unrecognized results header: {first!r}")
        seed_master = int(match.group(1))
        header = fh.readline().rstrip("\n")
        if header != RESULTS_COLUMNS:
            raise ResumeMismatchError(f"unexpected column header: {header!r}")
        out: dict[int, MaxStats] = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            st = MaxStats(int(parts[0]), int(parts[1]), int(parts[2]),
                          *[float(p) for p in parts[3:]])
            if st.n in out and out[st.n] != st:
                raise ResumeMismatchError(
                    f"conflicting persisted rows for level {st.n}")
            out[st.n] = st
    return seed_master, out


def append_result(path, seed_master: int, st: MaxStats) -> None:
    """Append one level's row, creating the file (with header) if needed."""
    try:
        existing_seed, existing = load_results(path)
    except FileNotFoundError:
        with open(path, "w") as fh:
            fh.write(_schema_line(seed_master) + "\n")
            fh.write(RESULTS_COLUMNS + "\n")
            fh.write(format_result_row(st) + "\n")
        return
    if existing_seed != seed_master:
        raise ResumeMismatchError(
            f"results file was produced with seed {existing_seed}, "
            f"not {seed_master}")
    if st.n in existing:
        if existing[st.n] != st:
            raise ResumeMismatchError(
                f"level {st.n} already persisted with different values")
        return
    with open(path, "a") as fh:
        fh.write(format_result_row(st) + "\n")


# ---------------------------------------------------------------------------
# Plain-text report rendering.
# ---------------------------------------------------------------------------

def render_level_table(stats: list[MaxStats]) -> str:
    lines = ["level table",
             "  n     N   samples   mean_max    se_mean     dh_gap      dh_se"]
    for s in sorted(stats, key=lambda x: x.n):
        lines.append(f"{s.n:3d} {s.side:5d} {s.samples:9d} "
                     f"{s.mean_max:10.5f} {s.se_mean:10.5f} "
                     f"{s.dh_gap:10.5f} {s.dh_se:10.5f}")
    return "\n".join(lines)


def render_closed_form_checks(stats: list[MaxStats], se_mult: float = 3.0) -> str:
    by_n = {s.n: s for s in stats}
    if 1 not in by_n:
        return ""
    s = by_n[1]
    lines = ["level-1 closed forms"]
    for label, got, want, se in (
            ("mean_max", s.mean_max, LEVEL1_MEAN, s.se_mean),
            ("dh_gap", s.dh_gap, LEVEL1_GAP, s.dh_se)):
        ok = abs(got - want) <= se_mult * se
        lines.append(f"  {label}: {got:.5f} vs exact {want:.5f} "
                     f"({'PASS' if ok else 'FAIL'} at {se_mult:g} SE)")
    return "\n".join(lines)


def render_monotonicity(rep: MonotonicityReport) -> str:
    lines = [f"monotonicity and gap bound (tolerance {rep.se_mult:g} SE)",
             "  step      delta   combined_se   monotone   gap_bound   gap_ok"]
    for s in rep.steps:
        lines.append(
            f"  {s.n_lo}->{s.n_hi} {s.delta:10.5f} {s.combined_se:12.5f}   "
            f"{'PASS' if s.monotone_ok else 'FAIL':8s} "
            f"{s.gap_bound:10.5f}   {'PASS' if s.gap_ok else 'FAIL'}")
    return "\n".join(lines)


def render_detector(rep: DetectorReport) -> str:
    detected = ", ".join(str(n) for n in rep.detected) or "(none)"
    return "\n".join([
        f"bounded-increment detector, threshold K={rep.threshold:g}",
        f"  window n in [{rep.window[0]}, {rep.window[1]}]",
        f"  detected levels: {detected}",
        f"  empirical density: {rep.density:.3f}",
        f"  fitted slope per level: {rep.slope_per_level:.4f}",
        f"  asymptotic violating-level density bound: "
        f"{rep.violation_density_bound:.3f}"])


def render_growth(fit: GrowthFit) -> str:
    return "\n".join([
        "growth fit of mean_max",
        f"  three-term: c_hat={fit.c_hat:.5f}  c2_hat={fit.c2_hat:.5f}  "
        f"intercept={fit.intercept:.5f}",
        f"  pinned c={fit.pinned_c:.5f}: c2={fit.pinned_c2:.5f}  "
        f"intercept={fit.pinned_intercept:.5f}",
        f"  plain log-N slope: {fit.simple_c:.5f}  "
        f"(reference constant {GROWTH_C:.5f})"])


def render_tightness(rep: TightnessReport) -> str:
    lines = ["centered-maximum tightness diagnostic",
             "  n   q90-q10       iqr    dh_gap   var/n"]
    for r in rep.rows:
        lines.append(f"{r.n:3d} {r.spread_90_10:9.5f} {r.iqr:9.5f} "
                     f"{r.dh_gap:9.5f} {r.var_over_n:7.4f}")
    lines.append(f"  spread ratio (max/min): {rep.spread_ratio:.3f}")
    lines.append(f"  iqr ratio (max/min): {rep.iqr_ratio:.3f}")
    return "\n".join(lines)


def render_report(stats: list[MaxStats], detector_threshold: float = 2.0,
                  se_mult: float = 2.0) -> str:
    """All tables that the persisted levels support."""
    stats = sorted(stats, key=lambda s: s.n)
    blocks = [render_level_table(stats)]
    closed = render_closed_form_checks(stats)
    if closed:
        blocks.append(closed)
    ns = [s.n for s in stats]
    consecutive = all(b - a == 1 for a, b in zip(ns, ns[1:]))
    if len(stats) >= 2 and consecutive:
        blocks.append(render_monotonicity(monotonicity_report(stats, se_mult)))
        blocks.append(render_detector(
            subsequence_detector(stats, detector_threshold)))
    if len(stats) >= 3:
        blocks.append(render_tightness(tightness_diagnostic(stats)))
    if len(stats) >= 4 and ns[-1] - ns[0] >= 4:
        blocks.append(render_growth(growth_fit(stats)))
    return "\n\n".join(blocks) + "\n"
