"""Power allocation across subchannels and between common/private signals.

The allocators maximize a weighted sum rate with weight ``mu`` on the
common (multicast) message under a total power budget.  Following the
structure of the optimum, each subchannel carries at most the common
signal plus the strongest user's private signal, with scalar (isotropic)
covariances, so the decision variables reduce to per-subchannel powers
``P`` and private-signal powers ``P1``.

The inner maximization runs on the rational surrogate of the
marginal-utility kernel, where the subchannel powers come from a
water-filling dual and the power split from a single monotone root.  The
outer minimization distributes the weight ``mu`` over users by projected
subgradient descent on the scaled simplex.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import ChannelStats
from .rates import LN2, RateEstimator, RateResult, multicast_rate_matrix, phi_capacity, rate_tuple

MODE_OFF = "off"
MODE_UNICAST = "unicast-only"
MODE_MULTICAST = "multicast-only"
MODE_SUPERPOSITION = "superposition"

# per-subchannel branch restrictions for the water-filling
BRANCH_BOTH = 0
BRANCH_UNICAST = 1
BRANCH_MULTICAST = 2


class ConvergenceError(RuntimeError):
    """Raised when a root or waterline search exhausts its iteration budget."""


@dataclass(frozen=True)
class AllocatorOptions:
    """Numerical knobs; tolerances are absolute except tol_power (relative)."""

    tol_power: float = 1e-6       # waterline tolerance, relative to p_t
    tol_root: float = 1e-10       # Newton tolerance on the function value
    max_newton_iters: int = 50
    max_outer_iters: int = 200
    outer_step_c: float = 1.0     # step schedule c/sqrt(t), scaled by mu/|g|

    def __post_init__(self):
        if min(self.tol_power, self.tol_root, self.max_newton_iters,
               self.max_outer_iters, self.outer_step_c) <= 0:
            raise ValueError("all options must be positive")


DEFAULT_OPTIONS = AllocatorOptions()


@dataclass(frozen=True)
class Allocation:
    """Per-subchannel powers, selected users, modes, and duals.

    ``p1[i]`` is the private-signal power inside ``p_total[i]``;
    ``selected_user[i]`` is the served user (None when no private signal);
    ``lam`` is the water-filling dual; ``mu_vec`` the per-user weight split.
    """

    p_total: np.ndarray
    p1: np.ndarray
    selected_user: tuple
    mode: tuple
    lam: float
    mu_vec: np.ndarray

    @property
    def p0(self) -> np.ndarray:
        return self.p_total - self.p1


def classify_mode(p_total: float, p1: float) -> str:
    if p_total <= 0:
        return MODE_OFF
    if p1 <= 0:
        return MODE_MULTICAST
    if p1 >= p_total:
        return MODE_UNICAST
    return MODE_SUPERPOSITION


def allocation_invariant_errors(alloc: Allocation, stats: ChannelStats, p_t: float,
                                opts: AllocatorOptions = DEFAULT_OPTIONS) -> list:
    """Check power conservation, bounds, and mode consistency; return messages."""
    errors = []
    P, p1 = alloc.p_total, alloc.p1
    if np.any(p1 < -1e-12) or np.any(p1 > P + 1e-12 * max(p_t, 1.0)):
        errors.append("private power outside [0, P]")
    if abs(P.sum() - p_t) > opts.tol_power * p_t:
        errors.append(f"total power {P.sum()!r} != budget {p_t!r}")
    for i, mode in enumerate(alloc.mode):
        if classify_mode(P[i], p1[i]) != mode:
            errors.append(f"subchannel {i}: mode {mode} inconsistent with powers")
        if mode in (MODE_UNICAST, MODE_SUPERPOSITION) and alloc.selected_user[i] is None:
            errors.append(f"subchannel {i}: private signal without a selected user")
    mu = alloc.mu_vec
    if np.any(mu < -1e-12):
        errors.append("negative weight component")
    return errors


# ---------------------------------------------------------------------------
# surrogate utility functions and their zeros

def utility_u0_hat(x: float, i: int, mu_vec, lam: float, stats: ChannelStats,
                   alpha: float, n_r: int = 1) -> float:
    """Marginal utility of subchannel power when the common signal is on top."""
    s = stats.snr[i]
    mu_vec = np.asarray(mu_vec, dtype=float)
    return float(np.sum(mu_vec * s * n_r / (1.0 + alpha * s * x))
                 - lam * LN2 / stats.eta[i])


def utility_u1_hat(x: float, i: int, lam: float, stats: ChannelStats,
                   alpha: float, n_r: int = 1) -> float:
    """Marginal utility when the subchannel carries only the private signal."""
    s = stats.strongest_snr(i)
    return float(s * n_r / (1.0 + alpha * s * x) - lam * LN2 / stats.eta[i])


def z1_closed_form(i: int, lam: float, stats: ChannelStats, alpha: float,
                   n_r: int = 1) -> float:
    """Zero of the private-only utility; may be negative (caller clamps)."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    return float((n_r * stats.eta[i] / (lam * LN2) - 1.0 / stats.strongest_snr(i)) / alpha)


def _z0_roots(lam: float, stats: ChannelStats, mu_vec: np.ndarray, alpha: float,
              n_r: int, opts: AllocatorOptions, active: np.ndarray) -> np.ndarray:
    """Vectorized Newton for the zeros of the common-signal utilities.

    Returns -inf where the utility is already nonpositive at x = 0 (no
    positive zero).  The utility is convex and decreasing, so Newton from
    the left converges monotonically.
    """
    M = stats.n_subchannels
    roots = np.full(M, -np.inf)
    c = lam * LN2 / stats.eta  # (M,)
    s = stats.snr              # (M, K)
    w = mu_vec[None, :] * s * n_r

    f0 = np.sum(w, axis=1) - c
    mask = active & (f0 > 0)
    if not np.any(mask):
        return roots

    x = np.zeros(M)
    live = mask.copy()
    for _ in range(opts.max_newton_iters):
        den = 1.0 + alpha * s[live] * x[live, None]
        f = np.sum(w[live] / den, axis=1) - c[live]
        fp = -np.sum(w[live] * alpha * s[live] / den ** 2, axis=1)
        step = f / fp
        x[live] = x[live] - step
        done = np.abs(f) <= opts.tol_root * (1.0 + c[live])
        idx = np.nonzero(live)[0]
        live[idx[done]] = False
        if not np.any(live):
            break
    if np.any(live):
        # bisection fallback on the stragglers
        for i in np.nonzero(live)[0]:
            lo, hi = 0.0, max(x[i], 1.0)
            while utility_u0_hat(hi, i, mu_vec, lam, stats, alpha, n_r) > 0:
                hi *= 2.0
                if hi > 1e300:
                    raise ConvergenceError(f"no bracket for subchannel {i} utility zero")
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if utility_u0_hat(mid, i, mu_vec, lam, stats, alpha, n_r) > 0:
                    lo = mid
                else:
                    hi = mid
            x[i] = 0.5 * (lo + hi)
    roots[mask] = x[mask]
    return roots


def _powers_at(lam: float, stats: ChannelStats, mu_vec: np.ndarray, alpha: float,
               n_r: int, opts: AllocatorOptions, branch: np.ndarray) -> np.ndarray:
    """Per-subchannel power max{z0, z1, 0} under the branch restrictions."""
    M = stats.n_subchannels
    best = np.array([stats.strongest_snr(i) for i in range(M)])
    z1 = (n_r * stats.eta / (lam * LN2) - 1.0 / best) / alpha
    z1 = np.where(branch != BRANCH_MULTICAST, z1, -np.inf)
    z0 = _z0_roots(lam, stats, mu_vec, alpha, n_r, opts, branch != BRANCH_UNICAST)
    return np.maximum(np.maximum(z0, z1), 0.0)


def solve_waterline(stats: ChannelStats, mu_vec, alpha: float, p_t: float,
                    opts: AllocatorOptions = DEFAULT_OPTIONS, n_r: int = 1,
                    branch=None, lam_hint: float | None = None):
    """Bisection on the dual ``lam`` until the powers sum to the budget.

    Total power is decreasing in ``lam``, so the bracket grows geometrically
    and then bisects.  Returns ``(lam, p_total)`` with
    ``|sum(p_total) - p_t| <= tol_power * p_t``.
    """
    if p_t <= 0:
        raise ValueError("p_t must be positive")
    mu_vec = np.asarray(mu_vec, dtype=float)
    if branch is None:
        branch = np.full(stats.n_subchannels, BRANCH_BOTH)
    branch = np.asarray(branch)

    def total(lam):
        return _powers_at(lam, stats, mu_vec, alpha, n_r, opts, branch).sum()

    lam = lam_hint if lam_hint and lam_hint > 0 else 1.0
    t = total(lam)
    lo = hi = lam
    if t > p_t:
        for _ in range(600):
            lo = hi
            hi *= 10.0
            if total(hi) <= p_t:
                break
        else:
            raise ConvergenceError(f"waterline bracket not found, lam in [{lo}, {hi}]")
    else:
        for _ in range(600):
            hi = lo
            lo /= 10.0
            if total(lo) >= p_t:
                break
        else:
            raise ConvergenceError(f"waterline bracket not found, lam in [{lo}, {hi}]")

    tol = opts.tol_power * p_t
    for _ in range(500):
        lam = 0.5 * (lo + hi)
        t = total(lam)
        if abs(t - p_t) <= tol:
            break
        if t > p_t:
            lo = lam
        else:
            hi = lam
        if (hi - lo) <= 1e-15 * hi:
            break
    else:
        raise ConvergenceError(f"waterline bisection stalled, lam in [{lo}, {hi}]")
    p = _powers_at(lam, stats, mu_vec, alpha, n_r, opts, branch)
    if abs(p.sum() - p_t) > tol:
        raise ConvergenceError(
            f"waterline residual {p.sum() - p_t!r} exceeds tolerance, lam in [{lo}, {hi}]")
    return float(lam), p


def _g_split(x, i: int, mu_vec: np.ndarray, stats: ChannelStats, alpha: float):
    """Crossing function of the two utilities; increasing, asymptote mu - 1."""
    inv = 1.0 / stats.snr[i]
    inv1 = 1.0 / stats.strongest_snr(i)
    return -1.0 + np.sum(mu_vec * (inv1 + alpha * np.asarray(x)) / (inv + alpha * np.asarray(x)))


def split_power(i: int, p_i: float, mu_vec, stats: ChannelStats, alpha: float,
                opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Split subchannel power between the common and private signals.

    Returns ``(p0, p1, mode)``.  The private signal gets everything up to
    the unique crossing of the two marginal utilities; if the weighted SNR
    mass already favors the common signal at zero private power, the
    subchannel is common-only.
    """
    if p_i < 0:
        raise ValueError("p_i must be nonnegative")
    if p_i == 0:
        return 0.0, 0.0, MODE_OFF
    mu_vec = np.asarray(mu_vec, dtype=float)
    s = stats.snr[i]
    if float(mu_vec @ s) >= stats.strongest_snr(i):
        return p_i, 0.0, MODE_MULTICAST

    # private power saturates at p_i whenever the crossing lies beyond it
    if _g_split(p_i, i, mu_vec, stats, alpha) <= 0:
        return 0.0, p_i, MODE_UNICAST

    inv = 1.0 / s
    inv1 = 1.0 / stats.strongest_snr(i)
    x = 0.0
    for _ in range(opts.max_newton_iters):
        den = inv + alpha * x
        g = -1.0 + float(np.sum(mu_vec * (inv1 + alpha * x) / den))
        gp = float(np.sum(mu_vec * alpha * (inv - inv1) / den ** 2))
        if abs(g) <= opts.tol_root:
            break
        if gp <= 0:
            break
        x = x - g / gp
    else:
        lo, hi = 0.0, p_i
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _g_split(mid, i, mu_vec, stats, alpha) < 0:
                lo = mid
            else:
                hi = mid
        x = 0.5 * (lo + hi)
    p1 = min(float(x), p_i)
    if p1 >= p_i:
        return 0.0, p_i, MODE_UNICAST
    return p_i - p1, p1, MODE_SUPERPOSITION


# ---------------------------------------------------------------------------
# outer minimization over the weight simplex

def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = total}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class OuterResult:
    mu_vec: np.ndarray
    value: float
    payload: object
    n_evals: int


def outer_minimize(inner, mu_total: float, n_users: int,
                   opts: AllocatorOptions = DEFAULT_OPTIONS,
                   vertices: bool = False) -> OuterResult:
    """Minimize the inner maximum over the scaled weight simplex.

    ``inner(mu_vec)`` must return ``(value, subgradient, payload)``.  Runs
    projected subgradient descent with step c/sqrt(t) from the uniform
    split and returns the best evaluated point, so the result is never
    worse than the uniform initialization.  With ``vertices=True`` the
    single-user corners are also evaluated (the minimizer is known to sit
    at a corner when there is one subchannel).
    """
    if mu_total <= 0:
        raise ValueError("mu_total must be positive")
    evals = 0

    def evaluate(mu):
        nonlocal evals
        evals += 1
        value, grad, payload = inner(mu)
        return value, np.asarray(grad, dtype=float), payload

    mu = np.full(n_users, mu_total / n_users)
    best_val, grad, best_payload = evaluate(mu)
    best_mu = mu.copy()

    if vertices and n_users > 1:
        for k in range(n_users):
            vert = np.zeros(n_users)
            vert[k] = mu_total
            val, _, payload = evaluate(vert)
            if val < best_val:
                best_val, best_mu, best_payload = val, vert, payload

    if n_users == 1:
        return OuterResult(best_mu, best_val, best_payload, evals)

    for t in range(1, opts.max_outer_iters + 1):
        spread = float(np.max(grad) - np.min(grad))
        if spread <= 1e-14 * (1.0 + abs(best_val)):
            break
        step = opts.outer_step_c * mu_total / (spread * np.sqrt(t))
        mu = project_simplex(mu - step * grad, mu_total)
        val, grad, payload = evaluate(mu)
        if val < best_val:
            best_val, best_mu, best_payload = val, mu.copy(), payload
    return OuterResult(best_mu, best_val, best_payload, evals)


# ---------------------------------------------------------------------------
# full allocation schemes

def _splits_for(stats, P, mu_vec, alpha, opts, branch):
    M = stats.n_subchannels
    p1 = np.zeros(M)
    modes = []
    for i in range(M):
        if P[i] <= 0:
            modes.append(MODE_OFF)
        elif branch[i] == BRANCH_UNICAST:
            p1[i] = P[i]
            modes.append(MODE_UNICAST)
        elif branch[i] == BRANCH_MULTICAST:
            modes.append(MODE_MULTICAST)
        else:
            _, p1[i], mode = split_power(i, float(P[i]), mu_vec, stats, alpha, opts)
            modes.append(mode)
    return p1, tuple(modes)


def _lagrangian(stats, P, p1, mu_vec, lam, p_t, est):
    """Exact-rate value of the dual objective at the inner maximizer.

    Returns the value and its per-user weight subgradient (each user's
    common-message rate).
    """
    mc = multicast_rate_matrix(stats, P, p1, est)
    per_user = stats.eta @ mc
    uni = 0.0
    for i in range(stats.n_subchannels):
        if p1[i] > 0:
            k = stats.strongest(i)
            uni += stats.eta[i] * float(
                phi_capacity(stats.snr[i, k] * p1[i], est, stream=(i, k)))
    value = float(mu_vec @ per_user) + uni + lam * (p_t - float(P.sum()))
    return value, per_user


def _build_allocation(stats, P, p1, modes, lam, mu_vec) -> Allocation:
    selected = tuple(stats.strongest(i) if p1[i] > 0 else None
                     for i in range(stats.n_subchannels))
    P = np.asarray(P, dtype=float).copy()
    p1 = np.asarray(p1, dtype=float).copy()
    P.setflags(write=False)
    p1.setflags(write=False)
    return Allocation(p_total=P, p1=p1, selected_user=selected, mode=modes,
                      lam=float(lam), mu_vec=np.asarray(mu_vec, dtype=float))


def _run_outer_scheme(stats, mu_total, p_t, alpha, est, opts, branch,
                      uniform_power: bool = False):
    """Shared outer loop: weight minimization around the inner power solver."""
    n_r = est.shape.n_r
    M = stats.n_subchannels
    state = {"lam_hint": None}

    def inner(mu_vec):
        if uniform_power:
            lam = 0.0
            P = np.full(M, p_t / M)
            mu = float(np.sum(mu_vec))
            best = np.array([stats.strongest_snr(i) for i in range(M)])
            zhat = (np.sum((mu_vec[None, :] / mu) / stats.snr, axis=1)
                    - mu / best) / (alpha * (mu - 1.0))
            p1 = np.clip(np.minimum(zhat, P), 0.0, None)
            modes = tuple(classify_mode(P[i], p1[i]) for i in range(M))
        else:
            lam, P = solve_waterline(stats, mu_vec, alpha, p_t, opts, n_r=n_r,
                                     branch=branch, lam_hint=state["lam_hint"])
            state["lam_hint"] = lam
            p1, modes = _splits_for(stats, P, mu_vec, alpha, opts, branch)
        value, per_user = _lagrangian(stats, P, p1, mu_vec, lam, p_t, est)
        return value, per_user, (lam, P, p1, modes)

    res = outer_minimize(inner, mu_total, stats.n_users, opts,
                         vertices=(M == 1))
    lam, P, p1, modes = res.payload
    alloc = _build_allocation(stats, P, p1, modes, lam, res.mu_vec)
    return alloc, rate_tuple(stats, alloc, mu_total, est)


def algorithm1(stats: ChannelStats, mu_total: float, p_t: float, alpha: float,
               est: RateEstimator, opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Surrogate water-filling with per-subchannel mode selection.

    Water-fills total power over subchannels, splits each subchannel
    between common and private signals at the utility crossing, and
    minimizes the resulting dual value over the weight simplex.  For
    ``mu_total <= 1`` the private-only solution is optimal and returned
    directly.

    Returns ``(Allocation, RateResult)``; the weighted sum rate uses
    ``mu_total``.
    """
    if mu_total < 0:
        raise ValueError("mu_total must be nonnegative")
    if mu_total <= 1.0:
        alloc, _ = baseline_unicast_only(stats, p_t, alpha, est, opts)
        return alloc, rate_tuple(stats, alloc, mu_total, est)
    branch = np.full(stats.n_subchannels, BRANCH_BOTH)
    return _run_outer_scheme(stats, mu_total, p_t, alpha, est, opts, branch)


def algorithm2(stats: ChannelStats, mu_total: float, p_t: float, alpha: float,
               est: RateEstimator, opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Uniform power over subchannels with closed-form power splits.

    Same outer weight minimization as ``algorithm1`` but the per-subchannel
    power is fixed at ``p_t/M`` and the split uses the closed-form bound of
    the utility-crossing root.
    """
    if mu_total <= 1.0:
        alloc, _ = baseline_unicast_only(stats, p_t, alpha, est, opts)
        return alloc, rate_tuple(stats, alloc, mu_total, est)
    branch = np.full(stats.n_subchannels, BRANCH_BOTH)
    return _run_outer_scheme(stats, mu_total, p_t, alpha, est, opts, branch,
                             uniform_power=True)


def baseline_unicast_only(stats: ChannelStats, p_t: float, alpha: float,
                          est: RateEstimator, opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Water-filling with every subchannel private-only (no common signal)."""
    branch = np.full(stats.n_subchannels, BRANCH_UNICAST)
    mu_vec = np.zeros(stats.n_users)
    lam, P = solve_waterline(stats, mu_vec, alpha, p_t, opts, n_r=est.shape.n_r,
                             branch=branch)
    p1, modes = _splits_for(stats, P, mu_vec, alpha, opts, branch)
    alloc = _build_allocation(stats, P, p1, modes, lam, mu_vec)
    return alloc, rate_tuple(stats, alloc, 0.0, est)


def baseline_multicast_only(stats: ChannelStats, mu_total: float, p_t: float,
                            alpha: float, est: RateEstimator,
                            opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Water-filling with every subchannel common-only, weights optimized."""
    branch = np.full(stats.n_subchannels, BRANCH_MULTICAST)
    return _run_outer_scheme(stats, mu_total, p_t, alpha, est, opts, branch)


def _symmetric_subchannels(stats: ChannelStats) -> bool:
    base = stats.snr * stats.eta[:, None]
    return bool(np.allclose(base, base[0], rtol=1e-9, atol=0.0)
                and np.allclose(stats.eta, stats.eta[0], rtol=1e-9))


def baseline_orthogonal(stats: ChannelStats, mu_total: float, p_t: float,
                        alpha: float, split_fraction: float, est: RateEstimator,
                        opts: AllocatorOptions = DEFAULT_OPTIONS):
    """Orthogonal multiplexing: disjoint common-only and private-only subchannels.

    ``ceil(split_fraction * M)`` subchannels carry the common signal.  The
    assignment is chosen by exhaustive enumeration for M <= 12 (single
    canonical assignment when all subchannels are interchangeable) and by
    greedy swaps otherwise; power is water-filled jointly across classes.
    """
    M = stats.n_subchannels
    if not 0.0 < split_fraction <= 1.0:
        raise ValueError("split_fraction must be in (0, 1]")
    n_mc = int(np.ceil(split_fraction * M))
    if n_mc == M:
        return baseline_multicast_only(stats, mu_total, p_t, alpha, est, opts)

    def solve(mc_set):
        branch = np.full(M, BRANCH_UNICAST)
        branch[list(mc_set)] = BRANCH_MULTICAST
        return _run_outer_scheme(stats, mu_total, p_t, alpha, est, opts, branch)

    if _symmetric_subchannels(stats):
        candidates = [tuple(range(n_mc))]
    elif M <= 12:
        candidates = list(itertools.combinations(range(M), n_mc))
    else:
        return _greedy_orthogonal(stats, mu_total, p_t, alpha, n_mc, est, opts, solve)

    best = None
    for mc_set in candidates:
        alloc, rates = solve(mc_set)
        if best is None or rates.wsr > best[1].wsr:
            best = (alloc, rates)
    return best


def _greedy_orthogonal(stats, mu_total, p_t, alpha, n_mc, est, opts, solve):
    mc_set = set(range(n_mc))
    best = solve(tuple(sorted(mc_set)))
    improved = True
    while improved:
        improved = False
        for a in sorted(mc_set):
            for b in sorted(set(range(stats.n_subchannels)) - mc_set):
                trial = (mc_set - {a}) | {b}
                alloc, rates = solve(tuple(sorted(trial)))
                if rates.wsr > best[1].wsr + 1e-12:
                    best = (alloc, rates)
                    mc_set = trial
                    improved = True
                    break
            if improved:
                break
    return best
