"""Unsteerability certification via convex feasibility, and phase optimization.

An assemblage admits a local-hidden-state model iff there are PSD operators
sigma_lambda, one per deterministic outcome assignment lambda, satisfying

    sum_lambda D_lambda(+|x) sigma_lambda = sigma_{+|x}   for every setting x
    sum_lambda sigma_lambda               = sigma_R

The decision problem is solved by reflecting between the affine set (linear
constraints above; closed-form projection through the pseudoinverse of the
small strategy matrix) and the product of 2x2 PSD cones (closed-form
eigenprojection per block). Two feasibility exits exist: the PSD-projected
candidate satisfying the linear constraints within tol, or the affine-exact
iterate becoming PSD up to -1e-9, in which case that iterate itself is the
certificate. Infeasibility is declared either through a separating-
functional (Farkas) witness built from the iterate's negative part, proven
by direct arithmetic, or when the candidate residual plateaus above
10*tol; hitting the iteration cap is reported as indeterminate.

The critical efficiency eta* is the largest eta at which the lossy-state
assemblage stays feasible, found by bisection (the assemblage is exactly
linear in eta, so endpoint interpolation is exact). Measurement phases are
optimized by a hand-rolled Nelder-Mead; the simplex objective is the
closed-form qubit bound of the family adapted to the candidate phases (a
smooth surrogate sharing its minimizer, the equally spaced ladder, with the
critical efficiency - ranking vertices through a bisected eta* would need
resolution far below the bisection quantization). The reported eta* is
always the bisected critical efficiency of the actual candidate phases.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import IndeterminateFeasibilityError, ValidationError
from .fock_ops import TWO_PI, DisplacementSetting
from .inequality import InequalityFamily, deterministic_strategies, qubit_bound
from .quantum_model import Assemblage, compute_assemblage, make_state

PSD_SLACK = 1e-9          # certificate blocks may dip this far below PSD
ITERATION_CAP = 200000
PLATEAU_WINDOW = 1000
PLATEAU_REL_CHANGE = 1e-12


@dataclass(frozen=True)
class LhsProblem:
    """Assemblage family linear in eta, held as its two endpoints.

    sig_steered / r_steered are the no-click conditional states and reduced
    state at eta = 1; sig_vacuum / r_vacuum at eta = 0. Intermediate eta is
    exact linear interpolation.
    """

    sig_steered: np.ndarray = field(repr=False)
    r_steered: np.ndarray = field(repr=False)
    sig_vacuum: np.ndarray = field(repr=False)
    r_vacuum: np.ndarray = field(repr=False)

    @property
    def m(self):
        return self.sig_steered.shape[0]

    def assemblage_at(self, eta):
        sig = eta * self.sig_steered + (1.0 - eta) * self.sig_vacuum
        sr = eta * self.r_steered + (1.0 - eta) * self.r_vacuum
        return sig, sr

    @classmethod
    def from_model(cls, r_a, alice_phases):
        settings = [DisplacementSetting(r_a, th) for th in alice_phases]
        hi = compute_assemblage(make_state(1.0), settings)
        lo = compute_assemblage(make_state(0.0), settings)
        return cls(sig_steered=hi.sigma[0], r_steered=hi.sigma_r,
                   sig_vacuum=lo.sigma[0], r_vacuum=lo.sigma_r)


@dataclass(frozen=True)
class LhsCertificate:
    """Hidden states sigma_lambda witnessing feasibility.

    residual bounds both the worst linear-constraint violation and the worst
    PSD deficit of the blocks.
    """

    hidden_states: np.ndarray = field(repr=False)
    residual: float


@dataclass(frozen=True)
class FeasibilityReport:
    verdict: str                    # 'feasible' | 'infeasible' | 'indeterminate'
    iterations: int
    residual: float
    min_eig: float
    certificate: LhsCertificate = None
    final_iterate: np.ndarray = field(default=None, repr=False)

    @property
    def feasible(self):
        return self.verdict == "feasible"


def _min_eigs_2x2(blocks):
    a = blocks[:, 0, 0].real
    d = blocks[:, 1, 1].real
    mean = 0.5 * (a + d)
    rad = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(blocks[:, 0, 1]) ** 2)
    return mean - rad


def _max_eigs_2x2(blocks):
    a = blocks[:, 0, 0].real
    d = blocks[:, 1, 1].real
    mean = 0.5 * (a + d)
    rad = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(blocks[:, 0, 1]) ** 2)
    return mean + rad


def _psd_project_2x2(blocks):
    """Nearest-PSD projection of a stack of Hermitian 2x2 blocks, in place-free form."""
    a = blocks[:, 0, 0].real
    d = blocks[:, 1, 1].real
    mean = 0.5 * (a + d)
    rad = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(blocks[:, 0, 1]) ** 2)
    lp = mean + rad
    lm = mean - rad
    out = blocks.copy()
    dead = lp <= 0.0
    mixed = (lm < 0.0) & ~dead
    if np.any(dead):
        out[dead] = 0.0
    if np.any(mixed):
        w = lp[mixed] / (lp[mixed] - lm[mixed])
        out[mixed] = w[:, None, None] * (
            blocks[mixed] - lm[mixed, None, None] * np.eye(2))
    return out


def _constraint_operator(m):
    """Rows: one per setting (strategy indicators) plus the all-ones sum row."""
    strat = deterministic_strategies(m).astype(float)
    mmat = np.vstack([strat.T, np.ones((1, strat.shape[0]))])
    gram_inv = np.linalg.inv(mmat @ mmat.T)
    kt = mmat.T @ gram_inv
    return mmat, kt, gram_inv


def _hermitize_stack(blocks):
    return 0.5 * (blocks + np.conj(np.transpose(blocks, (0, 2, 1))))


def _farkas_certified_infeasible(affine, candidate, mmat, gram_inv, targets):
    """Dual (separating-functional) proof of infeasibility.

    u = affine - candidate is the blockwise negative part of the
    affine-exact iterate; its row-space projection w = M*(MM*)^-1 M u acts
    identically on every point of the affine set, with value
    beta = <(MM*)^-1 M u, B>. Any feasible point x would be PSD with block
    traces summing to 1, so <w, x> <= max_lambda eig_max(w_lambda). A beta
    strictly above that bound therefore certifies infeasibility by direct
    arithmetic, independent of how the iterate was produced. As the
    reflections converge, u approaches the gap vector between the two sets
    (which is PSD-polar and lies in the row space), making beta -> |u|^2 > 0
    and the bound -> 0 for genuinely infeasible problems.
    """
    u = affine - candidate
    mu = np.einsum('rk,kij->rij', mmat, u)
    y = np.einsum('rs,sij->rij', gram_inv, mu)
    beta = float(np.real(np.einsum('rij,rij->', np.conj(y), targets)))
    w = np.einsum('rk,rij->kij', mmat, y)
    bound = float(_max_eigs_2x2(w).max())
    return beta > bound + 1e-10 * max(1.0, abs(beta), abs(bound))


def lhs_feasible(assemblage, tol=1e-9, iteration_cap=ITERATION_CAP,
                 warm_start=None):
    """Decide whether an assemblage admits a local-hidden-state model.

    assemblage is either an Assemblage or a (sig_plus, sigma_r) pair with
    sig_plus of shape (m, 2, 2). Returns a FeasibilityReport; a feasible
    verdict carries an LhsCertificate whose residual is at most tol.
    """
    if isinstance(assemblage, Assemblage):
        sig_plus, sigma_r = assemblage.sigma[0], assemblage.sigma_r
    else:
        sig_plus, sigma_r = assemblage
    sig_plus = np.asarray(sig_plus, dtype=complex)
    sigma_r = np.asarray(sigma_r, dtype=complex)
    m = sig_plus.shape[0]
    mmat, kt, gram_inv = _constraint_operator(m)
    n_strat = mmat.shape[1]
    targets = np.concatenate([sig_plus, sigma_r[None]], axis=0)

    def project_affine(blocks):
        gap = np.einsum('rk,kij->rij', mmat, blocks) - targets
        return blocks - np.einsum('kr,rij->kij', kt, gap)

    def linear_residual(blocks):
        return float(np.abs(
            np.einsum('rk,kij->rij', mmat, blocks) - targets).max())

    z = (np.zeros((n_strat, 2, 2), dtype=complex) if warm_start is None
         else np.array(warm_start, dtype=complex))
    res_hist = np.empty(iteration_cap)
    res = math.inf
    best_res = math.inf
    min_eig = -math.inf
    for it in range(iteration_cap):
        affine = project_affine(z)
        min_eig = float(_min_eigs_2x2(affine).min())
        if min_eig >= -PSD_SLACK:
            cert = LhsCertificate(
                hidden_states=_hermitize_stack(affine),
                residual=max(0.0, -min_eig))
            return FeasibilityReport(verdict="feasible", iterations=it,
                                     residual=cert.residual, min_eig=min_eig,
                                     certificate=cert, final_iterate=z)
        candidate = _psd_project_2x2(affine)
        res = linear_residual(candidate)
        best_res = min(best_res, res)
        res_hist[it] = res
        if res <= tol:
            cert = LhsCertificate(hidden_states=_hermitize_stack(candidate),
                                  residual=res)
            return FeasibilityReport(verdict="feasible", iterations=it,
                                     residual=res, min_eig=min_eig,
                                     certificate=cert, final_iterate=z)
        if res > 10.0 * tol:
            if _farkas_certified_infeasible(affine, candidate, mmat,
                                            gram_inv, targets):
                return FeasibilityReport(verdict="infeasible", iterations=it,
                                         residual=best_res, min_eig=min_eig,
                                         final_iterate=z)
            if it >= PLATEAU_WINDOW:
                prev = res_hist[it - PLATEAU_WINDOW]
                if abs(prev - res) < PLATEAU_REL_CHANGE * prev:
                    return FeasibilityReport(verdict="infeasible",
                                             iterations=it, residual=best_res,
                                             min_eig=min_eig, final_iterate=z)
        reflected = _psd_project_2x2(2.0 * affine - z)
        z = z + reflected - affine
    return FeasibilityReport(verdict="indeterminate", iterations=iteration_cap,
                             residual=res, min_eig=min_eig, final_iterate=z)


def verify_certificate(cert: LhsCertificate, assemblage):
    """Re-check a certificate by direct arithmetic.

    Returns the worst violation over: linear constraint residual, PSD deficit
    of the blocks, and the trace-sum deviation from 1.
    """
    if isinstance(assemblage, Assemblage):
        sig_plus, sigma_r = assemblage.sigma[0], assemblage.sigma_r
    else:
        sig_plus, sigma_r = assemblage
    blocks = cert.hidden_states
    m = np.asarray(sig_plus).shape[0]
    strat = deterministic_strategies(m).astype(float)
    lin = 0.0
    for x in range(m):
        rebuilt = np.einsum('k,kij->ij', strat[:, x], blocks)
        lin = max(lin, float(np.abs(rebuilt - sig_plus[x]).max()))
    lin = max(lin, float(np.abs(blocks.sum(axis=0) - sigma_r).max()))
    psd_deficit = max(0.0, -float(_min_eigs_2x2(blocks).min()))
    trace_dev = abs(float(np.trace(blocks.sum(axis=0)).real) - 1.0)
    return max(lin, psd_deficit, trace_dev)


@dataclass(frozen=True)
class CriticalEfficiency:
    """Bisection result: eta_star with its final bracket and evidence."""

    eta_star: float
    bracket_width: float
    lo: float
    hi: float
    evidence_lo: FeasibilityReport
    evidence_hi: FeasibilityReport


def critical_eta(r_a, alice_phases, precision=1e-3, tol=1e-9,
                 iteration_cap=ITERATION_CAP):
    """Largest efficiency at which the lossy assemblage stays unsteerable.

    Bisects lhs_feasible over eta in [0, 1]. When even eta = 1 is feasible
    (e.g. all phases equal: a single effective setting is never steerable)
    eta_star is 1 with zero bracket. An indeterminate probe aborts with a
    diagnostic since the bisection invariant would be lost.
    """
    if precision < 1e-4:
        raise ValidationError(f"precision must be >= 1e-4, got {precision}")
    problem = LhsProblem.from_model(r_a, alice_phases)

    def probe(eta, warm):
        rep = lhs_feasible(problem.assemblage_at(eta), tol=tol,
                           iteration_cap=iteration_cap, warm_start=warm)
        if rep.verdict == "indeterminate":
            raise IndeterminateFeasibilityError(
                f"feasibility undecided at eta={eta:.6f} after "
                f"{rep.iterations} iterations (residual {rep.residual:.3e}); "
                "tighten tol or raise the iteration cap")
        return rep

    top = probe(1.0, None)
    if top.feasible:
        return CriticalEfficiency(eta_star=1.0, bracket_width=0.0,
                                  lo=1.0, hi=1.0,
                                  evidence_lo=top, evidence_hi=top)
    bottom = probe(0.0, None)
    lo, hi = 0.0, 1.0
    ev_lo, ev_hi = bottom, top
    warm = None
    while hi - lo > precision:
        mid = 0.5 * (lo + hi)
        rep = probe(mid, warm)
        warm = rep.final_iterate
        if rep.feasible:
            lo, ev_lo = mid, rep
        else:
            hi, ev_hi = mid, rep
    return CriticalEfficiency(eta_star=0.5 * (lo + hi), bracket_width=hi - lo,
                              lo=lo, hi=hi, evidence_lo=ev_lo, evidence_hi=ev_hi)


# --- phase optimization ------------------------------------------------------

def nelder_mead(f, x0, initial_offset=0.3, diam_tol=1e-3, max_iter=2000):
    """Minimize f over R^n with the downhill simplex method.

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 0.5, 0.5); the initial simplex is x0 plus one offset per
    coordinate; terminates when the simplex diameter (max pairwise max-norm)
    drops below diam_tol. Returns (best point, best value, evaluations).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] += initial_offset
        simplex.append(v)
    values = [f(v) for v in simplex]
    evals = n + 1
    for _ in range(max_iter):
        order = np.argsort(values)
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        diam = max(np.abs(a - b).max()
                   for i, a in enumerate(simplex) for b in simplex[i + 1:])
        if diam < diam_tol:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = centroid + 1.0 * (centroid - worst)
        f_r = f(reflected)
        evals += 1
        if f_r < values[0]:
            expanded = centroid + 2.0 * (centroid - worst)
            f_e = f(expanded)
            evals += 1
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            contracted = centroid + 0.5 * (worst - centroid)
            f_c = f(contracted)
            evals += 1
            if f_c < values[-1]:
                simplex[-1], values[-1] = contracted, f_c
            else:
                best = simplex[0]
                for i in range(1, n + 1):
                    simplex[i] = best + 0.5 * (simplex[i] - best)
                    values[i] = f(simplex[i])
                evals += n
    best = int(np.argmin(values))
    return simplex[best], values[best], evals


def canonical_phases(phases):
    """Rotation/relabeling-invariant form: subtract the first, sort ascending."""
    arr = np.asarray(phases, dtype=float)
    rel = np.sort((arr - arr[0]) % TWO_PI)
    return tuple(rel)


def ladder_distance(phases, m=None):
    """Max circular distance of canonicalized phases from the uniform ladder."""
    rel = np.asarray(canonical_phases(phases))
    m = rel.size if m is None else m
    ladder = np.arange(m) * TWO_PI / m
    diff = np.abs(rel - ladder)
    return float(np.minimum(diff, TWO_PI - diff).max())


@dataclass(frozen=True)
class RestartRecord:
    start_phases: tuple
    end_phases: tuple
    eta_star_start: float
    eta_star_end: float


@dataclass(frozen=True)
class PhaseOptimum:
    phases: tuple
    eta_star: float
    restarts: tuple


def optimize_phases(r_a, m, restarts=10, seed=0, precision=1e-3):
    """Search measurement phases minimizing the critical efficiency.

    Random-restart Nelder-Mead over the m phases. The simplex ranks
    candidates by the closed-form qubit bound of the family adapted to them
    (same minimizer as eta*, see module docstring); the critical efficiency
    is then bisected for every restart's start and end phases, and the best
    candidate by actual eta* is returned, so the result never loses to its
    own starting point. Fully reproducible from the seed.
    """
    if restarts < 1:
        raise ValidationError(f"restarts must be >= 1, got {restarts}")
    rng = np.random.Generator(np.random.Philox(seed))

    def surrogate(phases):
        return qubit_bound(InequalityFamily(m=m, alice_phases=phases))

    records = []
    best = None
    for _ in range(restarts):
        start = rng.uniform(0.0, TWO_PI, size=m)
        end, _, _ = nelder_mead(surrogate, start)
        eta_start = critical_eta(r_a, tuple(start), precision).eta_star
        eta_end = critical_eta(r_a, tuple(end % TWO_PI), precision).eta_star
        rec = RestartRecord(start_phases=tuple(start),
                            end_phases=tuple(end % TWO_PI),
                            eta_star_start=eta_start, eta_star_end=eta_end)
        records.append(rec)
        for phases, eta in ((rec.start_phases, eta_start),
                            (rec.end_phases, eta_end)):
            if best is None or eta < best[1]:
                best = (phases, eta)
    return PhaseOptimum(phases=best[0], eta_star=best[1],
                        restarts=tuple(records))
