"""Numerical checks of the monotone H_M bound, the optimal mode assignment and
the Gaussian affinity ratio, each against an independent computation."""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .models import ObservationModel
from .samplers import make_rng

ENUMERATION_LIMIT = 10**6


# ---------------------------------------------------------------- H_M by exact enumeration

def _log_density_matrix(obs, x, atoms):
    x = np.asarray(x, dtype=np.float64)
    atoms = np.asarray(atoms, dtype=np.float64)
    if obs.kind == "gaussian":
        x = x.reshape(len(x), -1)
        atoms = atoms.reshape(len(atoms), -1)
        d = x.shape[1]
        sq = ((x[:, None, :] - atoms[None, :, :]) ** 2).sum(-1)
        return -sq / (2 * obs.sigma ** 2) - 0.5 * d * math.log(2 * math.pi * obs.sigma ** 2)
    x = x.reshape(-1)
    atoms = atoms.reshape(-1)
    return x[:, None] * np.log(atoms)[None, :] - atoms[None, :] - special.gammaln(x + 1)[:, None]


def exact_HM(x_points, atoms, probs, obs, M, chunk=20_000):
    """Exact expectation of ``-(1/N) sum_i log (1/M) sum_j p(x_i | theta_j)``.

    The expectation runs over all ``J**M`` ordered draws of theta from the
    finite-support mixing distribution ``sum_j probs[j] delta(atoms[j])``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    J = len(probs)
    if M < 1:
        raise ValueError("M must be at least 1")
    if J ** M > ENUMERATION_LIMIT:
        raise ValueError(f"J**M = {J}**{M} exceeds the enumeration limit {ENUMERATION_LIMIT}; "
                         "use a Monte-Carlo estimate instead")
    logp = _log_density_matrix(obs, x_points, atoms)          # (N, J)
    logprob = np.log(probs)
    total = 0.0
    tuples = itertools.product(range(J), repeat=M)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(tuples, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        idx = block.reshape(-1, M)
        weight = np.exp(logprob[idx].sum(axis=1))              # (T,)
        lp = logp[:, idx]                                      # (N, T, M)
        lme = special.logsumexp(lp, axis=2) - math.log(M)      # (N, T)
        total += float(weight @ (-lme.mean(axis=0)))
    return total


def exact_cross_entropy(x_points, atoms, probs, obs):
    """``-(1/N) sum_i log sum_j probs[j] p(x_i | atoms[j])``: the M -> infinity limit of H_M."""
    logp = _log_density_matrix(obs, x_points, atoms)
    return float(-np.mean(special.logsumexp(logp + np.log(np.asarray(probs))[None, :], axis=1)))


# ---------------------------------------------------------------- optimal mode assignment

@dataclass
class AssignmentResult:
    m: np.ndarray                 # optimal counts (reals)
    interior: bool                # closed form nonnegative everywhere
    nonvanishing: np.ndarray      # per-mode flag n_k > threshold
    threshold: float
    constrained: np.ndarray = None


def _check_assignment_args(n, N, M, K, u, v):
    n = np.asarray(n, dtype=np.float64)
    if not u > v > 0:
        raise ValueError(f"need u > v > 0 (separated modes), got u={u}, v={v}")
    if len(n) != K:
        raise ValueError(f"expected {K} mode counts, got {len(n)}")
    if np.any(n < 0) or not math.isclose(n.sum(), N, rel_tol=0, abs_tol=1e-9 * max(N, 1)):
        raise ValueError("mode counts must be nonnegative and sum to N")
    if M <= 0:
        raise ValueError("M must be positive")
    return n


def assignment_objective(m, n, M, u, v):
    """``-sum_k n_k log(m_k u + (M - m_k) v)``."""
    m = np.asarray(m, dtype=np.float64)
    return float(-np.sum(np.asarray(n) * np.log(m * u + (M - m) * v)))


def vanishing_threshold(N, K, u, v):
    """Data count above which a mode keeps a nonzero share of generated mass."""
    return N / K / (1.0 + (u - v) / (K * v))


def theorem1_closed_form(n, N, M, K, u, v):
    """Stationary point ``m_k/M = n_k/N + (n_k/N - 1/K) K v / (u - v)``.

    When some coordinate comes out negative the nonnegativity-constrained
    optimum from :func:`theorem1_numeric_opt` is attached as ``constrained``.
    """
    n = _check_assignment_args(n, N, M, K, u, v)
    frac = n / N
    m = M * (frac + (frac - 1.0 / K) * K * v / (u - v))
    thr = vanishing_threshold(N, K, u, v)
    res = AssignmentResult(m=m, interior=bool(np.all(m >= 0)), nonvanishing=n > thr, threshold=thr)
    if not res.interior:
        res.constrained = theorem1_numeric_opt(n, N, M, K, u, v)
    return res


def theorem1_numeric_opt(n, N, M, K, u, v, tol=1e-13, max_iter=500):
    """Minimize the assignment objective over ``{m >= 0, sum m = M}`` numerically.

    For a fixed Lagrange multiplier ``beta`` each coordinate solves a 1-D
    convex problem, ``m_k = max(0, n_k / beta - M v / (u - v))``; ``beta`` is
    found by bisection so that the coordinates sum to ``M``.
    """
    n = _check_assignment_args(n, N, M, K, u, v)
    c = M * v / (u - v)

    def total(beta):
        return np.maximum(0.0, n / beta - c).sum()

    # total() is decreasing in beta
    lo, hi = n.sum() / (M + K * c), n.max() / c
    while total(lo) < M:
        lo *= 0.5
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if total(mid) > M:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    else:
        raise RuntimeError(f"bisection did not converge; bracket width {hi - lo:.3e}")
    m = np.maximum(0.0, n / (0.5 * (lo + hi)) - c)
    # remove the residual bisection error from the active coordinates
    active = m > 0
    m[active] += (M - m.sum()) / active.sum()
    return m


def integer_rounding(m, M):
    """Largest-remainder rounding of a relaxed assignment to integer counts summing to ``M``."""
    m = np.maximum(np.asarray(m, dtype=np.float64), 0.0)
    m = m * (M / m.sum())
    base = np.floor(m).astype(np.int64)
    short = int(M - base.sum())
    order = np.argsort(-(m - base), kind="stable")
    base[order[:short]] += 1
    return base


def kkt_residual(m, n, M, u, v):
    """Largest violation of the KKT conditions at ``m`` (0 at the constrained optimum)."""
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    grad = -n * (u - v) / (m * (u - v) + M * v)
    active = m > 1e-12
    beta = -grad[active].mean()
    stationarity = np.abs(grad[active] + beta).max(initial=0.0)
    # inactive coordinates: reduced gradient grad + beta must be nonnegative
    dual = np.maximum(0.0, -(grad[~active] + beta)).max(initial=0.0)
    return float(max(stationarity, dual, abs(m.sum() - M), max(0.0, -m.min())))


def iterated_threshold_support(n, N, M, K, u, v):
    """Support of the constrained optimum obtained by reapplying the vanishing threshold.

    Drop every mode with ``n_k`` at or below the threshold, recompute the
    threshold for the remaining modes and data, and repeat until stable.
    """
    n = np.asarray(n, dtype=np.float64)
    keep = np.ones(len(n), dtype=bool)
    while True:
        k_a = keep.sum()
        n_a = n[keep].sum()
        thr = n_a / k_a / (1.0 + (u - v) / (k_a * v))
        new_keep = keep & (n > thr)
        if new_keep.sum() == keep.sum():
            return keep
        keep = new_keep


# ---------------------------------------------------------------- Gaussian affinity ratio

def corollary1_closed_form(c):
    if c <= 0:
        raise ValueError("c must be positive (u = v at c = 0)")
    return 1.0 / math.expm1(c * c / 6.0)


def rbf_mgf_closed_form(dim, noncentrality):
    """``E exp(-chi)`` for ``chi`` noncentral chi-squared: ``3^(-dim/2) exp(-lambda/3)``."""
    return 3.0 ** (-dim / 2) * math.exp(-noncentrality / 3.0)


def corollary1_ratio(c, dim=2, mc_samples=10**6, seed=0, chunk=250_000):
    """Closed form and Monte-Carlo estimate of ``v / (u - v)``.

    ``u`` and ``v`` are ``E exp(-|x - theta|^2 / 2)`` for independent unit-variance
    Gaussians whose means coincide (u) or are ``c`` apart (v). Both use the same
    pairs (common random numbers); the standard error comes from the delta
    method on the pair of means.
    """
    closed = corollary1_closed_form(c)
    rng = make_rng(seed, 7, int(round(c * 1000)), dim)
    shift = np.zeros(dim)
    shift[0] = c
    su = sv = suu = svv = suv = 0.0
    done = 0
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        x = rng.standard_normal((k, dim))
        theta = rng.standard_normal((k, dim))
        diff = x - theta
        u = np.exp(-0.5 * (diff ** 2).sum(1))
        v = np.exp(-0.5 * ((diff + shift) ** 2).sum(1))
        su += u.sum()
        sv += v.sum()
        suu += (u * u).sum()
        svv += (v * v).sum()
        suv += (u * v).sum()
        done += k
    n = mc_samples
    mu, mv = su / n, sv / n
    var_u = suu / n - mu * mu
    var_v = svv / n - mv * mv
    cov = suv / n - mu * mv
    ratio = mv / (mu - mv)
    # gradient of v/(u - v) with respect to (u, v)
    du = -mv / (mu - mv) ** 2
    dv = mu / (mu - mv) ** 2
    var_r = (du * du * var_u + dv * dv * var_v + 2 * du * dv * cov) / n
    return {"c": c, "dim": dim, "closed_form": closed, "monte_carlo": float(ratio), "stderr": math.sqrt(var_r),
            "u": mu, "v": mv, "u_closed": rbf_mgf_closed_form(dim, 0.0),
            "v_closed": rbf_mgf_closed_form(dim, c * c / 2.0), "samples": n}


def mgf_spot_check(dim=2, noncentrality=0.0, mc_samples=10**6, seed=0):
    """Monte-Carlo ``E exp(-chi)`` over noncentral chi-squared draws versus the closed form."""
    rng = make_rng(seed, 8, dim)
    draws = rng.noncentral_chisquare(dim, noncentrality, size=mc_samples) if noncentrality > 0 \
        else rng.chisquare(dim, size=mc_samples)
    vals = np.exp(-draws)
    return {"dim": dim, "noncentrality": noncentrality, "closed_form": rbf_mgf_closed_form(dim, noncentrality),
            "monte_carlo": float(vals.mean()), "stderr": float(vals.std(ddof=1) / math.sqrt(mc_samples)),
            "samples": mc_samples}


# ---------------------------------------------------------------- verdicts (CLI / acceptance)

def check_lemma1(n_instances=5, J=3, max_M=4, seed=0):
    """H_1 >= ... >= H_max_M >= exact cross-entropy on random finite-support instances."""
    rng = make_rng(seed, 11)
    obs = ObservationModel("gaussian", sigma=1.0, dim=1)
    cases = []
    ok = True
    for _ in range(n_instances):
        atoms = rng.uniform(-2.0, 2.0, size=(J, 1))
        probs = rng.dirichlet(np.ones(J))
        x = rng.normal(0.0, 1.5, size=(6, 1))
        H = [exact_HM(x, atoms, probs, obs, M) for M in range(1, max_M + 1)]
        h_inf = exact_cross_entropy(x, atoms, probs, obs)
        gaps = [H[i] - H[i + 1] for i in range(len(H) - 1)]
        passed = min(gaps) > 1e-10 and min(H) >= h_inf
        ok &= passed
        cases.append({"H": H, "cross_entropy": h_inf, "min_gap": min(gaps), "passed": bool(passed)})
    return {"check": "lemma1", "passed": bool(ok), "tolerance": {"min_gap": 1e-10}, "cases": cases}


def _random_counts(rng, K, N):
    return rng.multinomial(N, rng.dirichlet(np.ones(K)))


def check_theorem1(n_interior=100, n_boundary=20, seed=0):
    """Closed form versus numerical optimum (interior) and threshold consistency (boundary)."""
    rng = make_rng(seed, 12)
    interior = []
    boundary = []
    while len(interior) < n_interior or len(boundary) < n_boundary:
        K = int(rng.integers(2, 11))
        N = int(rng.integers(50, 2000))
        M = float(rng.integers(10, 500))
        u = float(rng.uniform(0.2, 1.0))
        v = float(u * rng.uniform(0.005, 0.6))
        n = _random_counts(rng, K, N)
        cf = theorem1_closed_form(n, N, M, K, u, v)
        num = theorem1_numeric_opt(n, N, M, K, u, v)
        if cf.interior and len(interior) < n_interior:
            err = float(np.abs(cf.m - num).max())
            interior.append({"K": K, "max_abs_diff": err, "passed": err < 1e-6,
                             "sum_error": float(abs(cf.m.sum() - M))})
        elif not cf.interior and len(boundary) < n_boundary:
            below = ~cf.nonvanishing
            support = iterated_threshold_support(n, N, M, K, u, v)
            consistent = bool(np.all(num[below] < 1e-9)
                              and np.array_equal(num > 1e-9, support)
                              and kkt_residual(num, n, M, u, v) < 1e-8)
            boundary.append({"K": K, "below_threshold": int(below.sum()), "zero_modes": int((num < 1e-9).sum()),
                             "passed": consistent})
    ok = all(c["passed"] for c in interior) and all(c["passed"] for c in boundary)
    return {"check": "theorem1", "passed": bool(ok), "tolerance": {"interior_abs": 1e-6},
            "max_interior_diff": max(c["max_abs_diff"] for c in interior),
            "interior": interior, "boundary": boundary}


def check_corollary1(cs=(1.0, 2.0, 3.0), mc_samples=10**6, seed=0):
    """Monte-Carlo ratio within 3 standard errors of the closed form, plus the MGF spot check."""
    results = [corollary1_ratio(c, mc_samples=mc_samples, seed=seed) for c in cs]
    for r in results:
        r["passed"] = bool(abs(r["monte_carlo"] - r["closed_form"]) < 3 * r["stderr"])
    mgf = mgf_spot_check(2, 0.0, mc_samples=mc_samples, seed=seed)
    mgf["passed"] = bool(abs(mgf["monte_carlo"] - mgf["closed_form"]) < 3 * mgf["stderr"])
    ok = all(r["passed"] for r in results) and mgf["passed"]
    return {"check": "corollary1", "passed": bool(ok), "tolerance": {"stderr_multiple": 3},
            "ratios": results, "mgf": mgf}


CHECKS = {"lemma1": check_lemma1, "theorem1": check_theorem1, "corollary1": check_corollary1}
