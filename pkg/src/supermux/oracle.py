"""Independent verification baselines for the allocator.

``brute_force_wsr`` solves the weighted-sum-rate problem by exhaustive grid
search over per-subchannel powers and private-power splits, with the weight
simplex handled by an outer min over a grid (the max-min order follows the
convex reformulation).  ``direct_covariance_solver`` maximizes the same
objective over *all* nonnegative diagonal input covariances by projected
gradient ascent with numerical gradients, which lets tests confirm the
structural claims (single served user per subchannel, scalar covariances)
without assuming them.  ``dof_slope`` measures high-SNR rate slopes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .allocator import AllocatorOptions, DEFAULT_OPTIONS, classify_mode, project_simplex
from .channel import ChannelStats
from .rates import RateEstimator, phi_capacity, sample_channel_matrices


@dataclass(frozen=True)
class OracleResult:
    """Best objective value found, the maximizing point, and a search trace."""

    best_wsr: float
    best_point: dict
    trace: dict


def _mu_simplex_grid(mu_total: float, n_users: int, resolution: int) -> np.ndarray:
    """All weight vectors mu * a / r with integer compositions a of r."""
    pts = []
    for comp in itertools.product(range(resolution + 1), repeat=n_users - 1):
        rest = resolution - sum(comp)
        if rest >= 0:
            pts.append(comp + (rest,))
    return np.array(pts, dtype=float) * (mu_total / resolution)


def _phi_on_powers(stats: ChannelStats, per_sub_power: np.ndarray,
                   est: RateEstimator) -> np.ndarray:
    """Capacity at snr[i, k] * power[p, i] for every grid point, (P, M, K)."""
    x = stats.snr[None, :, :] * per_sub_power[:, :, None]
    if est.mode == "lookup-table":
        return est.table(x)
    out = np.empty_like(x)
    for i in range(stats.n_subchannels):
        for k in range(stats.n_users):
            out[:, i, k] = phi_capacity(x[:, i, k], est, stream=(i, k))
    return out


def _power_points(stats, p_t, fractions, split_fracs):
    """Cartesian power grid: subchannel split fractions x private fractions."""
    M = stats.n_subchannels
    if M == 1:
        f_grid = np.ones((1, 1))
    elif M == 2:
        f_grid = np.stack([fractions, 1.0 - fractions], axis=1)
    else:
        raise ValueError("brute force supports at most 2 subchannels")
    combos = []
    for f in f_grid:
        for gs in itertools.product(split_fracs, repeat=M):
            combos.append((f * p_t, f * p_t * np.asarray(gs)))
    P = np.array([c[0] for c in combos])
    P1 = np.array([c[1] for c in combos])
    return P, P1


def brute_force_wsr(stats: ChannelStats, mu_total: float, p_t: float,
                    grid_resolution: int, est: RateEstimator,
                    n_refine: int = 2, mu_resolution: int = 20) -> OracleResult:
    """Exhaustive weighted-sum-rate search at scalar covariances.

    Grids the subchannel power split and the per-subchannel private
    fractions, evaluates the weighted objective on a weight-simplex grid,
    and returns the min over weights of the max over powers.  ``n_refine``
    rounds shrink both grids around the incumbent.

    Only desk-scale instances are accepted (M <= 2, K <= 3).
    """
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be >= 8")
    if stats.n_subchannels > 2 or stats.n_users > 3:
        raise ValueError("instance too large for exhaustive search")

    eta = stats.eta
    best_idx = [stats.strongest(i) for i in range(stats.n_subchannels)]

    def evaluate(P, P1, mu_grid):
        phi_p = _phi_on_powers(stats, P, est)
        phi_p1 = _phi_on_powers(stats, P1, est)
        mc = np.tensordot(phi_p - phi_p1, eta, axes=(1, 0))          # (P, K)
        uni = np.sum(eta[None, :] * np.stack(
            [phi_p1[:, i, best_idx[i]] for i in range(stats.n_subchannels)], axis=1),
            axis=1)                                                  # (P,)
        weighted = mc @ mu_grid.T + uni[:, None]                     # (P, n_mu)
        v = weighted.max(axis=0)
        m_star = int(np.argmin(v))
        p_star = int(np.argmax(weighted[:, m_star]))
        primal = mu_total * mc.min(axis=1) + uni
        return float(v[m_star]), p_star, m_star, float(primal.max())

    fr = np.linspace(0.0, 1.0, grid_resolution + 1)
    gs = np.linspace(0.0, 1.0, grid_resolution + 1)
    mu_grid = _mu_simplex_grid(mu_total, stats.n_users, mu_resolution)

    P, P1 = _power_points(stats, p_t, fr, gs)
    value, p_star, m_star, primal = evaluate(P, P1, mu_grid)
    trace = {"rounds": [{"value": value, "primal": primal, "n_power": len(P),
                         "n_mu": len(mu_grid)}]}
    best_P, best_P1, best_mu = P[p_star], P1[p_star], mu_grid[m_star]

    span_f, span_g, span_mu = 1.0, 1.0, 1.0
    for _ in range(n_refine):
        span_f *= 0.25
        span_g *= 0.25
        span_mu *= 0.25
        f_c = best_P[0] / p_t
        fr = np.clip(np.linspace(f_c - span_f, f_c + span_f, grid_resolution + 1), 0, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            g_c = np.where(best_P > 0, best_P1 / best_P, 0.0)
        g_lists = [np.clip(np.linspace(g - span_g, g + span_g, grid_resolution + 1), 0, 1)
                   for g in g_c]
        # rectangular private-fraction grid shared across subchannels
        gs = np.unique(np.concatenate(g_lists))
        P, P1 = _power_points(stats, p_t, fr, gs)
        mu_local = best_mu[None, :] + span_mu * (mu_grid - best_mu[None, :])
        mu_local = np.vstack([project_simplex(m, mu_total) for m in mu_local])
        value, p_star, m_star, primal = evaluate(P, P1, mu_local)
        trace["rounds"].append({"value": value, "primal": primal,
                                "n_power": len(P), "n_mu": len(mu_local)})
        best_P, best_P1, best_mu = P[p_star], P1[p_star], mu_local[m_star]

    return OracleResult(
        best_wsr=value,
        best_point={"p_total": best_P, "p1": best_P1, "mu_vec": best_mu,
                    "mode": tuple(classify_mode(best_P[i], best_P1[i])
                                  for i in range(stats.n_subchannels))},
        trace=trace)


# ---------------------------------------------------------------------------
# direct maximization over diagonal covariances (M = 1)

class _GramForms:
    """Precomputed per-sample quadratic forms of the channel bank.

    For diagonal covariances the Gram entries are linear in the diagonal,
    G_ab = sum_t d_t H_at conj(H_bt), so each batch evaluation reduces to a
    few (rows, n_t) x (n_t, n_samples) matmuls.
    """

    def __init__(self, H: np.ndarray):
        self.n_s, self.n_r, self.n_t = H.shape
        self.sq = [np.ascontiguousarray(np.abs(H[:, a, :]) ** 2).T
                   for a in range(self.n_r)]                       # each (n_t, n_s)
        self.cross = {}
        for a in range(self.n_r):
            for b in range(a + 1, self.n_r):
                self.cross[(a, b)] = np.ascontiguousarray(
                    H[:, a, :] * H[:, b, :].conj()).T              # (n_t, n_s)

    def logdet_mean(self, sigma2: np.ndarray, diags: np.ndarray,
                    block: int = 512) -> np.ndarray:
        out = np.empty(len(diags))
        for j in range(0, len(diags), block):
            D = diags[j:j + block]
            s = sigma2[j:j + block, None]
            if self.n_r == 1:
                det = 1.0 + s * (D @ self.sq[0])
            elif self.n_r == 2:
                g00 = D @ self.sq[0]
                g11 = D @ self.sq[1]
                g01 = D @ self.cross[(0, 1)]
                det = (1.0 + s * g00) * (1.0 + s * g11) - s ** 2 * np.abs(g01) ** 2
            else:
                G = np.empty((len(D), self.n_s, self.n_r, self.n_r), dtype=complex)
                for a in range(self.n_r):
                    G[..., a, a] = D @ self.sq[a]
                    for b in range(a + 1, self.n_r):
                        G[..., a, b] = D @ self.cross[(a, b)]
                        G[..., b, a] = G[..., a, b].conj()
                eye = np.eye(self.n_r)
                _, ld = np.linalg.slogdet(eye + s[..., None] * G)
                out[j:j + len(D)] = (ld / np.log(2.0)).mean(axis=1)
                continue
            out[j:j + len(D)] = np.log2(det).mean(axis=1)
        return out


class _DiagonalObjective:
    """Weighted-sum-rate objective over diagonal covariances, fixed H bank.

    Covariances are laid out as (K+1, n_t): row 0 the common signal, rows
    1..K the users' private signals in decreasing-SNR (cancellation) order.
    """

    def __init__(self, stats: ChannelStats, mu_vec, est: RateEstimator,
                 n_samples: int | None = None):
        if stats.n_subchannels != 1:
            raise ValueError("direct solver handles a single subchannel")
        self.K = stats.n_users
        self.n_t = est.shape.n_t
        order = stats.orderings[0]
        self.sigma_sic = stats.snr[0, order]            # decreasing
        self.mu_sic = np.asarray(mu_vec, dtype=float)[order]
        self.forms = _GramForms(sample_channel_matrices(
            est.shape, n_samples or est.n_samples, est.seed))
        self.order = order

    def value_batch(self, Q: np.ndarray) -> np.ndarray:
        """Objective for a batch of covariance stacks, Q shape (B, K+1, n_t)."""
        B, K = Q.shape[0], self.K
        prefix = np.cumsum(Q[:, 1:], axis=1)            # (B, K, n_t) SIC prefixes
        total = prefix[:, -1]                           # sum of private signals
        rows_d, rows_s, tags = [], [], []
        # common-message terms for every user
        for k in range(K):
            s = float(self.sigma_sic[k])
            rows_d.append(Q[:, 0] + total)
            rows_s.append(np.full(B, s))
            tags.append(("mc_hi", k))
            rows_d.append(total)
            rows_s.append(np.full(B, s))
            tags.append(("mc_lo", k))
        # private terms along the cancellation order
        for k in range(K):
            s = float(self.sigma_sic[k])
            rows_d.append(prefix[:, k])
            rows_s.append(np.full(B, s))
            tags.append(("uni_hi", k))
            if k > 0:
                rows_d.append(prefix[:, k - 1])
                rows_s.append(np.full(B, s))
                tags.append(("uni_lo", k))
        D = np.concatenate(rows_d, axis=0)
        S = np.concatenate(rows_s, axis=0)
        vals = self.forms.logdet_mean(S, D).reshape(len(tags), B)
        out = np.zeros(B)
        for row, (tag, k) in zip(vals, tags):
            if tag == "mc_hi":
                out += self.mu_sic[k] * row
            elif tag == "mc_lo":
                out -= self.mu_sic[k] * row
            elif tag == "uni_hi":
                out += row
            else:
                out -= row
        return out

    def value(self, Q: np.ndarray) -> float:
        return float(self.value_batch(Q[None])[0])

    def gradient(self, Q: np.ndarray, step: float) -> np.ndarray:
        """Central-difference gradient on the shared sample bank."""
        dim = Q.size
        flat = Q.ravel()
        perturbed = np.repeat(flat[None], 2 * dim, axis=0)
        for j in range(dim):
            perturbed[2 * j, j] = max(flat[j] + step, 0.0)
            perturbed[2 * j + 1, j] = max(flat[j] - step, 0.0)
        vals = self.value_batch(perturbed.reshape(2 * dim, *Q.shape))
        idx = np.arange(dim)
        denom = perturbed[2 * idx, idx] - perturbed[2 * idx + 1, idx]
        denom[denom == 0] = step
        return ((vals[0::2] - vals[1::2]) / denom).reshape(Q.shape)


def _pairwise_polish(obj: "_DiagonalObjective", q: np.ndarray, f: float, p_t: float,
                     grad_step: float, rounds: int = 80):
    """Equalize gradients across active coordinates by mass transfers.

    Plain projected gradient crawls along the simplex's flat directions;
    moving mass directly from the lowest-gradient active coordinate to the
    highest-gradient one (batched line search) converges there quickly.
    """
    shape = q.shape
    for _ in range(rounds):
        g = obj.gradient(q, grad_step).ravel()
        flat = q.ravel().copy()
        active = np.nonzero(flat > 1e-12 * p_t)[0]
        hi = int(np.argmax(g))
        lo = active[int(np.argmin(g[active]))]
        if hi == lo or g[hi] - g[lo] <= 1e-10 * (1.0 + abs(f)):
            break
        deltas = flat[lo] * np.linspace(0.0, 1.0, 17)[1:]
        for _refine in range(3):
            cands = np.repeat(flat[None], len(deltas), axis=0)
            cands[:, lo] -= deltas
            cands[:, hi] += deltas
            vals = obj.value_batch(cands.reshape(len(deltas), *shape))
            j = int(np.argmax(vals))
            lo_d = deltas[j - 1] if j > 0 else 0.0
            hi_d = deltas[j + 1] if j + 1 < len(deltas) else deltas[j]
            best_delta, best_val = deltas[j], vals[j]
            deltas = np.linspace(lo_d, hi_d, 17)[1:]
        if best_val <= f + 1e-13 * (1.0 + abs(f)):
            break
        flat[lo] -= best_delta
        flat[hi] += best_delta
        q, f = flat.reshape(shape), float(best_val)
    return q, f


def direct_covariance_solver(stats: ChannelStats, mu_vec, p_t: float,
                             est: RateEstimator, n_starts: int = 5,
                             max_iters: int = 60, seed: int = 0,
                             polish_factor: int = 8, polish_top: int = 2) -> OracleResult:
    """Projected gradient ascent over all diagonal input covariances.

    Runs ``n_starts`` random starts plus a structured start (scalar
    common/strongest-user covariances at the best of a few power splits),
    each followed by a pairwise-exchange polish.  The leading
    ``polish_top`` points are then re-polished on a sample bank enlarged by
    ``polish_factor`` to pin down the flat directions of the optimum.  The
    trace reports how much power the non-strongest users received and how
    far the common/strongest covariances are from scalar matrices.
    """
    obj = _DiagonalObjective(stats, mu_vec, est)
    K, n_t = obj.K, obj.n_t
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xD1AC], dtype=np.uint64)))

    starts = []
    cands = []
    for beta in (0.0, 0.25, 0.5, 0.75, 1.0):
        q = np.zeros((K + 1, n_t))
        q[0] = (1.0 - beta) * p_t / n_t
        q[1] = beta * p_t / n_t
        cands.append(q)
    vals = obj.value_batch(np.stack(cands))
    starts.append(cands[int(np.argmax(vals))])
    for _ in range(n_starts):
        q = rng.exponential(size=(K + 1, n_t))
        starts.append(q * (p_t / q.sum()))

    grad_step = 1e-4 * p_t / n_t
    results = []
    n_fail = 0
    for q0 in starts:
        q = project_simplex(q0.ravel(), p_t).reshape(K + 1, n_t)
        f = obj.value(q)
        f_start = f
        step = 0.25 * p_t
        ok = False
        for _ in range(max_iters):
            g = obj.gradient(q, grad_step)
            moved = False
            while step > 1e-13 * p_t:
                q_new = project_simplex((q + step * g).ravel(), p_t).reshape(q.shape)
                f_new = obj.value(q_new)
                if f_new > f + 1e-12:
                    q, f = q_new, f_new
                    moved = True
                    ok = True
                    step *= 1.8
                    break
                step *= 0.5
            if not moved:
                break
        q, f = _pairwise_polish(obj, q, f, p_t, grad_step)
        if not ok and f <= f_start + 1e-15 * (1.0 + abs(f_start)):
            n_fail += 1
        results.append((f, q))
    if n_fail == len(starts):
        raise RuntimeError("all starts failed to make progress")

    results.sort(key=lambda r: -r[0])
    if polish_factor > 1:
        fine = _DiagonalObjective(stats, mu_vec, est,
                                  n_samples=polish_factor * (est.n_samples or 1))
        polished = []
        for _, q in results[:max(1, polish_top)]:
            f = fine.value(q)
            q, f = _pairwise_polish(fine, q, f, p_t, grad_step, rounds=60)
            polished.append((f, q))
        polished.sort(key=lambda r: -r[0])
        best_f, best_q = polished[0]
    else:
        best_f, best_q = results[0]

    weak_power = float(best_q[2:].sum()) if K >= 2 else 0.0
    spreads = {}
    for name, row in (("common", best_q[0]), ("strongest", best_q[1])):
        m = row.mean()
        spreads[name] = float(np.max(np.abs(row - m)) / m) if m > 1e-9 * p_t / n_t else 0.0

    # map SIC-ordered rows back to user indices
    q_users = np.zeros((K + 1, n_t))
    q_users[0] = best_q[0]
    for rank, user in enumerate(obj.order):
        q_users[1 + user] = best_q[1 + rank]

    return OracleResult(
        best_wsr=best_f,
        best_point={"q_common": best_q[0], "q_private_sic": best_q[1:],
                    "q_private_by_user": q_users[1:]},
        trace={"weak_user_power_fraction": weak_power / p_t,
               "diag_spread": spreads, "n_failed_starts": n_fail})


# ---------------------------------------------------------------------------
# degrees-of-freedom slopes

def dof_slope(scheme: str, stats: ChannelStats, p_grid_db, mu_total: float,
              est: RateEstimator, alpha: float = 1.0,
              opts: AllocatorOptions = DEFAULT_OPTIONS,
              mixed_m_prime: int = 1, mixed_fraction: float = 0.5,
              om_split: float = 0.5) -> float:
    """Least-squares slope of the sum rate versus log2 of the power budget.

    ``scheme`` is one of 'alg1', 'alg2', 'uo', 'mo', 'om', or 'mixed'
    (fixed uniform power, private signal on the first ``mixed_m_prime``
    subchannels at ``mixed_fraction`` of their power).
    """
    from . import allocator as al  # deferred to keep module import light

    p_grid_db = np.asarray(p_grid_db, dtype=float)
    if p_grid_db.max() - p_grid_db.min() < 20.0:
        raise ValueError("power grid must span at least 20 dB")

    sum_rates = []
    for db in p_grid_db:
        p_t = 10.0 ** (db / 10.0)
        if scheme == "alg1":
            _, rates = al.algorithm1(stats, mu_total, p_t, alpha, est, opts)
        elif scheme == "alg2":
            _, rates = al.algorithm2(stats, mu_total, p_t, alpha, est, opts)
        elif scheme == "uo":
            _, rates = al.baseline_unicast_only(stats, p_t, alpha, est, opts)
        elif scheme == "mo":
            _, rates = al.baseline_multicast_only(stats, mu_total, p_t, alpha, est, opts)
        elif scheme == "om":
            _, rates = al.baseline_orthogonal(stats, mu_total, p_t, alpha, om_split,
                                              est, opts)
        elif scheme == "mixed":
            M = stats.n_subchannels
            P = np.full(M, p_t / M)
            p1 = np.zeros(M)
            p1[:mixed_m_prime] = mixed_fraction * p_t / M
            modes = tuple(classify_mode(P[i], p1[i]) for i in range(M))
            selected = tuple(stats.strongest(i) if p1[i] > 0 else None
                             for i in range(M))
            alloc = al.Allocation(p_total=P, p1=p1, selected_user=selected,
                                  mode=modes, lam=0.0,
                                  mu_vec=np.full(stats.n_users, mu_total / stats.n_users))
            from .rates import rate_tuple
            rates = rate_tuple(stats, alloc, mu_total, est)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        sum_rates.append(rates.sum_rate)

    log_p = p_grid_db / 10.0 / np.log10(2.0)
    slope, _ = np.polyfit(log_p, np.array(sum_rates), 1)
    return float(slope)
