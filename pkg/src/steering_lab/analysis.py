"""Experimental data pipeline.

Ingests phase-sweep click counts, estimates probabilities, fits each outcome
pair to a cosine, extracts the 4x4 setting table through the relative-phase
permutation construction, evaluates the inequality margin S - S_max, and
propagates counting and local-oscillator-amplitude uncertainty by Monte
Carlo resampling.

Counts file format: UTF-8, line oriented; full-line comments start with '#';
data lines are `phase_radians N_pp N_pm N_mp N_mm` whitespace separated with
phases strictly ascending. Results file: key=value lines followed by a
histogram block of `bin_lo bin_hi count` rows.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import curve_fit

from .errors import (ExtractionError, FitError, ParseError, ValidationError)
from .fock_ops import TWO_PI
from .inequality import (InequalityFamily, build_probability_inequality,
                         evaluate_steering)
from .quantum_model import ProbabilityTable

OUTCOME_LABELS = ("pp", "pm", "mp", "mm")
NEAREST_POINT_TOL = 0.05      # rad; max distance of a sweep sample to a setting
GRID_SPACING = 1e-4           # r_B spacing of the cached bound grid
MC_CHUNK = 2048               # runs per worker task, independent of threads


# --- counts ingestion --------------------------------------------------------

@dataclass(frozen=True)
class CountsRecord:
    """Phase-sweep click counts: one row of four outcome counts per phase."""

    phases: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if phases.ndim != 1 or counts.shape != (phases.size, 4):
            raise ValidationError(
                f"counts shape {counts.shape} does not match "
                f"{phases.size} phases x 4 outcomes")
        if phases.size < 4:
            raise ValidationError(
                f"at least 4 phase points required, got {phases.size}")
        if np.any(np.diff(phases) <= 0.0):
            raise ValidationError("phases must be strictly ascending")
        if counts.min() < 0:
            raise ValidationError("counts must be non-negative")
        if counts.sum(axis=1).min() < 1:
            raise ValidationError("every row needs a total of at least 1")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "counts", counts)

    @property
    def n_points(self):
        return self.phases.size


def load_counts(path):
    """Parse a counts file into a CountsRecord.

    Malformed rows, negative counts, zero-total rows and non-ascending
    phases raise ParseError carrying the offending line number.
    """
    phases = []
    counts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 5:
                raise ParseError(
                    f"expected 5 fields (phase + 4 counts), got "
                    f"{len(tokens)}", line=lineno)
            try:
                phase = float(tokens[0])
            except ValueError:
                raise ParseError(f"invalid phase {tokens[0]!r}", line=lineno)
            if not math.isfinite(phase):
                raise ParseError(f"non-finite phase {tokens[0]!r}", line=lineno)
            row = []
            for tok in tokens[1:]:
                try:
                    value = int(tok)
                except ValueError:
                    raise ParseError(f"invalid count {tok!r}", line=lineno)
                if value < 0:
                    raise ParseError(f"negative count {tok!r}", line=lineno)
                row.append(value)
            if sum(row) < 1:
                raise ParseError("row total must be at least 1", line=lineno)
            if phases and phase <= phases[-1]:
                raise ParseError(
                    f"phase {phase!r} does not ascend past {phases[-1]!r}",
                    line=lineno)
            phases.append(phase)
            counts.append(row)
    if len(phases) < 4:
        raise ParseError(f"file has {len(phases)} data rows; at least 4 "
                         "phase points are required")
    return CountsRecord(phases=np.array(phases), counts=np.array(counts))


def write_counts(path, record: CountsRecord, header=None):
    """Write a CountsRecord in the loadable counts format."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.append("# phase_radians N_pp N_pm N_mp N_mm")
    for phase, row in zip(record.phases, record.counts):
        lines.append("%.17g %d %d %d %d" % (phase, *row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def probabilities_from_counts(record: CountsRecord):
    """Maximum-likelihood outcome frequencies per phase point, rows sum to 1."""
    totals = record.counts.sum(axis=1, keepdims=True)
    return record.counts / totals


def synthesize_counts(phases, probs, events_per_point, seed=0):
    """Poisson-sample a counts record from per-phase outcome probabilities.

    Each count is drawn as Poisson(events_per_point * p); a row that comes
    out all-zero is redrawn so the record invariant (total >= 1) holds.
    """
    phases = np.asarray(phases, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (phases.size, 4):
        raise ValidationError(
            f"probability array shape {probs.shape} does not match "
            f"{phases.size} phases x 4 outcomes")
    if events_per_point <= 0:
        raise ValidationError("events_per_point must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    counts = rng.poisson(events_per_point * probs)
    for i in range(phases.size):
        while counts[i].sum() < 1:
            counts[i] = rng.poisson(events_per_point * probs[i])
    return CountsRecord(phases=phases, counts=counts)


# --- cosine fitting ----------------------------------------------------------

@dataclass(frozen=True)
class CosineFit:
    """Per-outcome-pair least-squares fit p(phi) = A + B cos(phi - phi0).

    Arrays are indexed by outcome pair in OUTCOME_LABELS order. B >= 0 is
    canonical; a constant signal reports B = 0 and phi0 = 0. clamped marks
    pairs whose fitted range A +/- B leaves [0, 1].
    """

    offset: np.ndarray
    amplitude: np.ndarray
    phase0: np.ndarray
    rss: np.ndarray
    clamped: np.ndarray
    n_points: int

    def evaluate(self, phase):
        """Fitted outcome-pair values at one phase, shape (4,), unclamped."""
        return self.offset + self.amplitude * np.cos(phase - self.phase0)


def fit_cosine(phases, probs):
    """Fit each outcome pair to A + B cos(phi - phi0) by linear least squares.

    The fit is linear in (A, B cos phi0, B sin phi0). A rank-deficient
    design (too few independent phase points) raises FitError.
    """
    phases = np.asarray(phases, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if phases.size < 4 or np.unique(phases).size < 4:
        raise ValidationError(
            f"at least 4 distinct phases required, got {phases.size}")
    if probs.shape != (phases.size, 4):
        raise ValidationError(
            f"probability array shape {probs.shape} does not match "
            f"{phases.size} phases x 4 outcomes")
    design = np.column_stack(
        [np.ones_like(phases), np.cos(phases), np.sin(phases)])
    coef, _, rank, _ = np.linalg.lstsq(design, probs, rcond=None)
    if rank < 3:
        raise FitError(
            "phase design is rank-deficient; the swept phases do not "
            "determine amplitude and phase offset")
    offset = coef[0]
    amplitude = np.hypot(coef[1], coef[2])
    phase0 = np.where(amplitude > 1e-14,
                      np.arctan2(coef[2], coef[1]) % TWO_PI, 0.0)
    amplitude = np.where(amplitude > 1e-14, amplitude, 0.0)
    rss = ((design @ coef - probs) ** 2).sum(axis=0)
    clamped = ((offset + amplitude > 1.0 + 1e-12)
               | (offset - amplitude < -1e-12))
    return CosineFit(offset=offset, amplitude=amplitude, phase0=phase0,
                     rss=rss, clamped=clamped, n_points=int(phases.size))


# --- setting-table extraction ------------------------------------------------

def _validate_x_phases(x_phases):
    x_phases = np.asarray(x_phases, dtype=float)
    if x_phases.shape != (4,):
        raise ValidationError(f"x_phases must hold 4 values, got "
                              f"{x_phases.shape}")
    if np.abs(np.diff(x_phases) - np.pi / 2).max() > 1e-6:
        raise ValidationError(
            "x_phases must be spaced pi/2 apart (within 1e-6) for the "
            "permutation construction to apply")
    return x_phases


def _circular_distance(a, b):
    return np.abs((a - b + np.pi) % TWO_PI - np.pi)


def extract_setting_table(source, x_phases, mode="from_fit"):
    """Build the 4x4 setting table from sweep data.

    With both sides' phases on the same pi/2-spaced ladder the joint
    distribution depends only on the relative phase, so cell (x, y) is the
    sweep distribution at relative phase index (x - y) mod 4. mode
    'from_fit' evaluates a CosineFit at the four x_phases; 'nearest_point'
    takes the closest measured sweep row (within 0.05 rad) of a
    CountsRecord. Each cell is clipped to be non-negative and normalized.
    """
    x_phases = _validate_x_phases(x_phases)
    if mode == "from_fit":
        if not isinstance(source, CosineFit):
            raise ValidationError("mode 'from_fit' needs a CosineFit source")
        dists = np.array([source.evaluate(ph) for ph in x_phases])
    elif mode == "nearest_point":
        if not isinstance(source, CountsRecord):
            raise ValidationError(
                "mode 'nearest_point' needs a CountsRecord source")
        probs = probabilities_from_counts(source)
        dists = np.empty((4, 4))
        for j, target in enumerate(x_phases):
            dist = _circular_distance(source.phases, target)
            idx = int(np.argmin(dist))
            if dist[idx] > NEAREST_POINT_TOL:
                raise ExtractionError(
                    f"no sweep sample within {NEAREST_POINT_TOL} rad of "
                    f"phase {target:.6f} (closest is {dist[idx]:.4f} rad "
                    "away)")
            dists[j] = probs[idx]
    else:
        raise ValidationError(
            f"mode must be 'from_fit' or 'nearest_point', got {mode!r}")
    dists = np.clip(dists, 0.0, None)
    totals = dists.sum(axis=1)
    if totals.min() <= 0.0:
        raise ExtractionError("an extracted distribution has no weight")
    dists = dists / totals[:, None]
    table = np.empty((2, 2, 4, 4))
    for x in range(4):
        for y in range(4):
            table[:, :, x, y] = dists[(x - y) % 4].reshape(2, 2)
    anchored = tuple((x_phases % TWO_PI).tolist())
    return ProbabilityTable(probs=table, alice_phases=anchored,
                            bob_phases=anchored)


@dataclass(frozen=True)
class AnalysisReport:
    s_value: float
    delta_s: float
    fit: CosineFit
    table: ProbabilityTable


def evaluate_record(record: CountsRecord, family: InequalityFamily,
                    x_phases=(0.0, np.pi / 2, np.pi, 3 * np.pi / 2),
                    mode="from_fit"):
    """Full pipeline: counts -> fit -> setting table -> S and S - S_max."""
    if family.m != 4:
        raise ValidationError(
            f"the relative-phase construction needs m = 4, got {family.m}")
    fit = fit_cosine(record.phases, probabilities_from_counts(record))
    source = fit if mode == "from_fit" else record
    table = extract_setting_table(source, x_phases, mode=mode)
    ineq = build_probability_inequality(family)
    s_value, delta_s = evaluate_steering(ineq, table)
    return AnalysisReport(s_value=s_value, delta_s=delta_s, fit=fit,
                          table=table)


# --- Monte Carlo error estimation --------------------------------------------

@dataclass(frozen=True)
class MonteCarloConfig:
    """Resampling controls.

    r_a_sigma/resample_r_a mirror the trusted-side option for the untrusted
    amplitude: when enabled, r_A is redrawn per run, but it enters neither
    the functional nor the bound (both live on the trusted side), so it
    changes only the random stream. Off by default.
    """

    runs: int = 200000
    r_b_mean: float = 0.217
    r_b_sigma: float = 0.005
    seed: int = 0
    resample_r_a: bool = False
    r_a_mean: float = 0.233
    r_a_sigma: float = 0.013

    def __post_init__(self):
        if not isinstance(self.runs, int) or self.runs < 1:
            raise ValidationError(f"runs must be a positive integer, got "
                                  f"{self.runs}")
        if self.r_b_mean <= 0.0:
            raise ValidationError(f"r_b_mean must be positive, got "
                                  f"{self.r_b_mean}")
        if self.r_b_sigma < 0.0 or self.r_a_sigma < 0.0:
            raise ValidationError("amplitude sigmas must be non-negative")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, "
                                  f"got {self.seed}")


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    std: float
    runs: int
    seed: int
    bin_edges: np.ndarray = field(repr=False)
    bin_counts: np.ndarray = field(repr=False)
    binning: str
    gaussian_fit: tuple
    redraws: int
    zero_total_redraws: int
    grid_error: float
    point_estimate: float
    samples: np.ndarray = field(repr=False)


def setting_counts_from_record(record: CountsRecord, x_phases=None):
    """Reduce a sweep record to the four relative-phase count rows.

    A 4-row pi/2-spaced record is used directly; otherwise x_phases selects
    the nearest measured rows (within 0.05 rad each).
    """
    if x_phases is None:
        if record.n_points != 4:
            raise ValidationError(
                f"record has {record.n_points} rows; pass x_phases to "
                "select 4 of them")
        _validate_x_phases(record.phases)
        return record.counts.copy()
    x_phases = _validate_x_phases(x_phases)
    rows = np.empty((4, 4), dtype=np.int64)
    for j, target in enumerate(x_phases):
        dist = _circular_distance(record.phases, target)
        idx = int(np.argmin(dist))
        if dist[idx] > NEAREST_POINT_TOL:
            raise ExtractionError(
                f"no sweep sample within {NEAREST_POINT_TOL} rad of phase "
                f"{target:.6f}")
        rows[j] = record.counts[idx]
    return rows


def _aggregate_coefficients(ineq):
    """Sum inequality coefficients over the (x, y) cells sharing each
    relative-phase index, so S = sum_j agg[j] . d_j + c0 for tables built by
    the permutation construction."""
    agg = np.zeros((4, 4))
    for x in range(4):
        for y in range(4):
            j = (x - y) % 4
            agg[j, 0] += ineq.c_pp[x, y]
            agg[j, 1] += ineq.c_pm[x, y]
            agg[j, 2] += ineq.c_mp[x, y]
            agg[j, 3] += ineq.c_mm[x, y]
    return agg


class _BoundGrid:
    """Inequality coefficients and full-space bound on an r_B grid.

    build_probability_inequality is evaluated on a GRID_SPACING-spaced grid
    spanning +/- 8 sigma around the mean; per-run values are linear
    interpolations. Draws outside the grid (or a zero-width grid) fall back
    to exact evaluation. The interpolation error is probed at off-grid
    points and reported.
    """

    def __init__(self, family: InequalityFamily, r_b_mean, r_b_sigma):
        self.family = family
        if r_b_sigma > 0.0:
            lo = max(GRID_SPACING, r_b_mean - 8.0 * r_b_sigma)
            hi = min(0.999, r_b_mean + 8.0 * r_b_sigma)
            n = int(math.ceil((hi - lo) / GRID_SPACING)) + 1
            self.r_grid = lo + GRID_SPACING * np.arange(n)
            tables = [self._exact(r) for r in self.r_grid]
            self.agg_grid = np.array([t[0] for t in tables])
            self.smax_grid = np.array([t[1] for t in tables])
            self.c0_grid = np.array([t[2] for t in tables])
        else:
            self.r_grid = None
        self._exact_cache = {}

    def _exact(self, r_b):
        ineq = build_probability_inequality(
            InequalityFamily(s=self.family.s, t=self.family.t,
                             m=self.family.m,
                             alice_phases=self.family.alice_phases,
                             bob_amplitude=float(r_b),
                             bob_phases=self.family.bob_phases))
        return _aggregate_coefficients(ineq), ineq.s_max, ineq.c0

    def lookup(self, r_b):
        """(aggregated coefficients, s_max, c0) at r_b."""
        if self.r_grid is not None:
            i = int((r_b - self.r_grid[0]) / GRID_SPACING)
            if 0 <= i < self.r_grid.size - 1:
                w = (r_b - self.r_grid[i]) / GRID_SPACING
                agg = (1.0 - w) * self.agg_grid[i] + w * self.agg_grid[i + 1]
                smax = (1.0 - w) * self.smax_grid[i] + w * self.smax_grid[i + 1]
                c0 = (1.0 - w) * self.c0_grid[i] + w * self.c0_grid[i + 1]
                return agg, smax, c0
        key = round(float(r_b), 12)
        if key not in self._exact_cache:
            self._exact_cache[key] = self._exact(r_b)
        return self._exact_cache[key]

    def probe_error(self):
        """Max interpolation error of s_max and coefficients at off-grid
        points straddling the mean."""
        if self.r_grid is None or self.r_grid.size < 2:
            return 0.0
        worst = 0.0
        n = self.r_grid.size
        for frac in (0.25, 0.5, 0.75):
            for base in (n // 2 - 1, n // 2, n // 2 + 1):
                if not 0 <= base < n - 1:
                    continue
                r = self.r_grid[base] + frac * GRID_SPACING
                agg_i, smax_i, c0_i = self.lookup(r)
                agg_e, smax_e, c0_e = self._exact(r)
                worst = max(worst, abs(smax_i - smax_e), abs(c0_i - c0_e),
                            float(np.abs(agg_i - agg_e).max()))
        return worst


def _run_chunk(start, stop, base_counts, grid, mc):
    samples = np.empty(stop - start)
    redraws = 0
    zero_redraws = 0
    for i in range(start, stop):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((mc.seed, i))))
        resampled = rng.poisson(base_counts)
        totals = resampled.sum(axis=1)
        while totals.min() < 1:
            j = int(np.argmin(totals))
            resampled[j] = rng.poisson(base_counts[j])
            totals[j] = resampled[j].sum()
            zero_redraws += 1
        if mc.r_b_sigma > 0.0:
            r_b = rng.normal(mc.r_b_mean, mc.r_b_sigma)
            while r_b <= 0.0:
                redraws += 1
                r_b = rng.normal(mc.r_b_mean, mc.r_b_sigma)
        else:
            r_b = mc.r_b_mean
        if mc.resample_r_a and mc.r_a_sigma > 0.0:
            r_a = rng.normal(mc.r_a_mean, mc.r_a_sigma)
            while r_a <= 0.0:
                redraws += 1
                r_a = rng.normal(mc.r_a_mean, mc.r_a_sigma)
        agg, smax, c0 = grid.lookup(r_b)
        dists = resampled / totals[:, None]
        samples[i - start] = float((agg * dists).sum()) + c0 - smax
    return samples, redraws, zero_redraws


def monte_carlo(counts, family: InequalityFamily, mc: MonteCarloConfig,
                x_phases=None, threads=1):
    """Propagate counting and amplitude uncertainty into S - S_max.

    counts is a CountsRecord (reduced via setting_counts_from_record) or a
    (4, 4) array of relative-phase rows. Per run every count is
    Poisson-resampled, r_B is Gaussian-resampled (non-positive draws
    redrawn and counted), the inequality coefficients and the full-space
    bound are re-evaluated at the drawn r_B through the grid cache, and
    S - S_max is recorded. Each run owns a seed-derived stream, so results
    are bit-identical for a given config regardless of thread count.
    """
    if family.m != 4:
        raise ValidationError(
            f"the relative-phase construction needs m = 4, got {family.m}")
    if isinstance(counts, CountsRecord):
        base_counts = setting_counts_from_record(counts, x_phases)
    else:
        base_counts = np.asarray(counts)
        if base_counts.shape != (4, 4):
            raise ValidationError(
                f"setting counts must have shape (4, 4), got "
                f"{base_counts.shape}")
        if base_counts.min() < 0:
            raise ValidationError("counts must be non-negative")
        if base_counts.sum(axis=1).min() < 1:
            raise ValidationError("every row needs a total of at least 1")
    base_counts = base_counts.astype(float)

    grid = _BoundGrid(family, mc.r_b_mean, mc.r_b_sigma)
    agg0, smax0, c00 = grid._exact(mc.r_b_mean)
    dists0 = base_counts / base_counts.sum(axis=1, keepdims=True)
    point_estimate = float((agg0 * dists0).sum()) + c00 - smax0

    bounds = [(s, min(s + MC_CHUNK, mc.runs))
              for s in range(0, mc.runs, MC_CHUNK)]
    samples = np.empty(mc.runs)
    redraws = 0
    zero_redraws = 0
    threads = max(1, int(threads or 1))
    if threads == 1:
        results = [_run_chunk(a, b, base_counts, grid, mc) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda ab: _run_chunk(*ab, base_counts, grid, mc), bounds))
    for (a, b), (chunk, rd, zr) in zip(bounds, results):
        samples[a:b] = chunk
        redraws += rd
        zero_redraws += zr

    mean = float(samples.mean())
    std = float(samples.std(ddof=1)) if mc.runs > 1 else 0.0
    bin_counts, bin_edges = np.histogram(samples, bins="fd")
    gaussian = _fit_histogram_gaussian(bin_edges, bin_counts, mean, std)
    return MonteCarloResult(
        mean=mean, std=std, runs=mc.runs, seed=mc.seed,
        bin_edges=bin_edges, bin_counts=bin_counts.astype(np.int64),
        binning="freedman-diaconis", gaussian_fit=gaussian,
        redraws=redraws, zero_total_redraws=zero_redraws,
        grid_error=grid.probe_error(), point_estimate=point_estimate,
        samples=samples)


def _fit_histogram_gaussian(bin_edges, bin_counts, mean, std):
    """Least-squares Gaussian through the histogram, as a visual aid; the
    sample standard deviation stays the estimator of record. None when the
    fit cannot be made."""
    if bin_counts.size < 4 or std <= 0.0:
        return None
    mids = 0.5 * (bin_edges[:-1] + bin_edges[1:])

    def gauss(x, amp, mu, sigma):
        return amp * np.exp(-0.5 * ((x - mu) / sigma) ** 2)

    try:
        popt, _ = curve_fit(gauss, mids, bin_counts.astype(float),
                            p0=(float(bin_counts.max()), mean, std),
                            maxfev=10000)
    except RuntimeError:
        return None
    return (float(popt[0]), float(popt[1]), float(abs(popt[2])))


def format_mc_result(result: MonteCarloResult):
    """Results-file text: key=value lines then the histogram block."""
    lines = [
        "mean=%.17g" % result.mean,
        "std=%.17g" % result.std,
        "runs=%d" % result.runs,
        "seed=%d" % result.seed,
        "redraws=%d" % result.redraws,
        "zero_total_redraws=%d" % result.zero_total_redraws,
        "grid_error=%.17g" % result.grid_error,
        "point_estimate=%.17g" % result.point_estimate,
        "binning=%s" % result.binning,
    ]
    if result.gaussian_fit is not None:
        amp, mu, sigma = result.gaussian_fit
        lines.append("gauss_amp=%.17g" % amp)
        lines.append("gauss_mean=%.17g" % mu)
        lines.append("gauss_std=%.17g" % sigma)
    lines.append("histogram")
    for lo, hi, c in zip(result.bin_edges[:-1], result.bin_edges[1:],
                         result.bin_counts):
        lines.append("%.17g %.17g %d" % (lo, hi, c))
    return "\n".join(lines) + "\n"


def write_mc_result(path, result: MonteCarloResult):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mc_result(result))
