"""Ergodic rate functions for i.i.d. Rayleigh MIMO channels.

``phi_capacity`` is the ergodic capacity (bits/s/Hz) of an isotropic
Gaussian input at total SNR ``x`` over a channel with i.i.d. CN(0, 1)
entries; ``phi_aux`` is its scaled derivative, the marginal-utility kernel
used by the power allocators.  Both are estimated by seeded Monte-Carlo
over the eigenvalues of the channel Gram matrix, or by interpolation in a
precomputed lookup table.

Evaluations are deterministic given (seed, stream): the per-(subchannel,
user) sample streams come from a counter-based generator, so differences
of capacities at the same stream share their sample set (common random
numbers) and are nonnegative sample by sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .channel import ChannelStats, MimoShape

if TYPE_CHECKING:  # pragma: no cover
    from .allocator import Allocation

LN2 = float(np.log(2.0))

_X_CHUNK = 64  # grid points evaluated per broadcast block, bounds memory


def _stream_key(seed: int, stream: tuple[int, int]) -> np.ndarray:
    i, k = stream
    if i < 0 or k < 0:
        raise ValueError("stream indices must be nonnegative")
    return np.array([seed & 0xFFFFFFFFFFFFFFFF, ((i + 1) << 32) | (k + 1)], dtype=np.uint64)


def sample_channel_matrices(shape: MimoShape, n_samples: int, seed: int,
                            stream: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Draw ``n_samples`` i.i.d. CN(0, 1) channel matrices, shape (n, n_r, n_t)."""
    rng = np.random.Generator(np.random.Philox(key=_stream_key(seed, stream)))
    re = rng.standard_normal((n_samples, shape.n_r, shape.n_t))
    im = rng.standard_normal((n_samples, shape.n_r, shape.n_t))
    return (re + 1j * im) / np.sqrt(2.0)


def sample_gram_eigenvalues(shape: MimoShape, n_samples: int, seed: int,
                            stream: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Eigenvalues of H H† for sampled channels, shape (n_samples, min(n_t, n_r)).

    Only the nonzero part of the spectrum is returned; the eigensolver runs
    on the smaller Gram matrix.  For rank-one Grams the eigenvalue is the
    squared Frobenius norm and no solver is invoked.
    """
    H = sample_channel_matrices(shape, n_samples, seed, stream)
    if shape.n_min == 1:
        d = np.sum(np.abs(H) ** 2, axis=(1, 2))[:, None]
        return d
    if shape.n_r <= shape.n_t:
        G = H @ H.conj().swapaxes(-1, -2)
    else:
        G = H.conj().swapaxes(-1, -2) @ H
    return np.clip(np.linalg.eigvalsh(G), 0.0, None)


@dataclass(frozen=True)
class PhiTable:
    """Precomputed (x, capacity) grid for one antenna shape.

    Interpolation is linear in log(1+x); the grid is anchored at (0, 0) and
    extrapolated beyond the last point with the final segment's slope, which
    matches the log-linear growth of the capacity at high SNR.
    """

    x: np.ndarray
    values: np.ndarray
    shape: MimoShape
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.x.ndim != 1 or self.x.shape != self.values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.x) <= 0) or self.x[0] <= 0:
            raise ValueError("lookup grid must be positive and strictly increasing")
        if np.any(np.diff(self.values) < 0) or self.values[0] < 0:
            raise ValueError("lookup values must be nonnegative and nondecreasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t = np.log1p(x)
        tg = np.concatenate(([0.0], np.log1p(self.x)))
        vg = np.concatenate(([0.0], self.values))
        out = np.interp(t, tg, vg)
        # linear extrapolation in the log1p domain above the grid
        hi = t > tg[-1]
        if np.any(hi):
            slope = (vg[-1] - vg[-2]) / (tg[-1] - tg[-2])
            out = np.where(hi, vg[-1] + slope * (t - tg[-1]), out)
        return out if out.ndim else float(out)


def build_phi_table(shape: MimoShape, n_samples: int = 100_000, seed: int = 0,
                    x_min: float = 1e-3, x_max: float = 1e5,
                    n_points: int = 256) -> PhiTable:
    """Tabulate the ergodic capacity on a log-spaced grid from one sample set."""
    d = sample_gram_eigenvalues(shape, n_samples, seed)
    xs = np.logspace(np.log10(x_min), np.log10(x_max), n_points)
    vals = np.empty(n_points)
    for j in range(0, n_points, _X_CHUNK):
        blk = xs[j:j + _X_CHUNK, None, None]
        vals[j:j + blk.shape[0]] = np.mean(
            np.sum(np.log2(1.0 + blk * d[None] / shape.n_t), axis=2), axis=1)
    vals = np.maximum.accumulate(vals)  # guard against eps-scale float dips
    xs.setflags(write=False)
    vals.setflags(write=False)
    return PhiTable(x=xs, values=vals, shape=shape, n_samples=n_samples, seed=seed)


def save_phi_table(table: PhiTable, path) -> None:
    """Write a table as '# key value' headers followed by (x, value) pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_t {table.shape.n_t}\n# n_r {table.shape.n_r}\n")
        fh.write(f"# n_samples {table.n_samples}\n# seed {table.seed}\n")
        for x, v in zip(table.x, table.values):
            fh.write(f"{float(x)!r} {float(v)!r}\n")


def load_phi_table(path) -> PhiTable:
    meta = {}
    xs, vs = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, val = line[1:].split()
                meta[key] = int(val)
                continue
            x, v = line.split()
            xs.append(float(x))
            vs.append(float(v))
    return PhiTable(x=np.array(xs), values=np.array(vs),
                    shape=MimoShape(meta["n_t"], meta["n_r"]),
                    n_samples=meta["n_samples"], seed=meta["seed"])


@dataclass(frozen=True)
class RateEstimator:
    """Evaluation backend for the ergodic rate functions.

    ``monte-carlo`` draws a fresh, deterministic sample set per (seed,
    stream); ``lookup-table`` interpolates a table built once from a single
    sample set (streams are then irrelevant).
    """

    shape: MimoShape
    n_samples: int = 10_000
    seed: int = 0
    mode: str = "monte-carlo"
    table: PhiTable | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.mode not in ("monte-carlo", "lookup-table"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "lookup-table":
            if self.table is None:
                raise ValueError("lookup-table mode requires a table")
            if self.table.shape != self.shape:
                raise ValueError("table shape does not match estimator shape")

    def eigenvalues(self, stream: tuple[int, int] = (0, 0)) -> np.ndarray:
        return sample_gram_eigenvalues(self.shape, self.n_samples, self.seed, stream)


def with_lookup_table(shape: MimoShape, n_samples: int = 100_000, seed: int = 0,
                      x_max: float = 1e5, n_points: int = 256) -> RateEstimator:
    """Convenience constructor for a lookup-backed estimator."""
    table = build_phi_table(shape, n_samples=n_samples, seed=seed, x_max=x_max,
                            n_points=n_points)
    return RateEstimator(shape=shape, n_samples=n_samples, seed=seed,
                         mode="lookup-table", table=table)


def _phi_mc(x: np.ndarray, d: np.ndarray, n_t: int) -> np.ndarray:
    out = np.empty(x.shape)
    flat = x.ravel()
    res = out.ravel()
    for j in range(0, flat.size, _X_CHUNK):
        blk = flat[j:j + _X_CHUNK, None, None]
        res[j:j + blk.shape[0]] = np.mean(
            np.sum(np.log2(1.0 + blk * d[None] / n_t), axis=2), axis=1)
    return out


def phi_capacity(x, est: RateEstimator, stream: tuple[int, int] = (0, 0)):
    """Ergodic capacity (bits/s/Hz) at total input SNR ``x``.

    Accepts scalars or arrays.  Monte-Carlo mode averages
    sum_m log2(1 + x d_m / n_t) over sampled Gram eigenvalues ``d``;
    lookup mode interpolates the precomputed table.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("capacity argument must be nonnegative")
    if est.mode == "lookup-table":
        return est.table(x)
    d = est.eigenvalues(stream)
    out = _phi_mc(np.atleast_1d(x), d, est.shape.n_t)
    return out if x.ndim else float(out[0])


def phi_aux(x, est: RateEstimator, stream: tuple[int, int] = (0, 0)):
    """Scaled derivative of ``phi_capacity``: (ln 2 / n_r) dPhi/dx.

    Estimated directly as the mean of (1/n_r) sum_m (x + n_t/d_m)^{-1};
    zero eigenvalues contribute nothing.  Equals 1 at x = 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be nonnegative")
    d = est.eigenvalues(stream)
    flat = np.atleast_1d(x)
    out = np.empty(flat.shape)
    for j in range(0, flat.size, _X_CHUNK):
        blk = flat[j:j + _X_CHUNK, None, None]
        # d/(x d + n_t) == 1/(x + n_t/d), well defined at d == 0
        out[j:j + blk.shape[0]] = np.sum(d[None] / (blk * d[None] + est.shape.n_t),
                                         axis=(1, 2)) / (d.shape[0] * est.shape.n_r)
    return out.reshape(x.shape) if x.ndim else float(out[0])


def phi_capacity_pair(x_hi, x_lo, est: RateEstimator, stream: tuple[int, int] = (0, 0)):
    """Capacity difference Phi(x_hi) - Phi(x_lo) on a shared sample set.

    With common random numbers the difference is nonnegative per sample for
    x_hi >= x_lo; in lookup mode the table's monotonicity gives the same
    guarantee.
    """
    x_hi = np.asarray(x_hi, dtype=float)
    x_lo = np.asarray(x_lo, dtype=float)
    if est.mode == "lookup-table":
        return est.table(x_hi) - est.table(x_lo)
    d = est.eigenvalues(stream)
    hi = _phi_mc(np.atleast_1d(x_hi), d, est.shape.n_t)
    lo = _phi_mc(np.atleast_1d(x_lo), d, est.shape.n_t)
    out = hi - lo
    return out if x_hi.ndim else float(out[0])


def multicast_rate_term(stats: ChannelStats, i: int, k: int, p_total: float,
                        p1: float, est: RateEstimator) -> float:
    """Rate of the common message toward user ``k`` in subchannel ``i``.

    The unicast signal at power ``p1`` is decoded last, so it acts as
    interference: the term is Phi(snr * p_total) - Phi(snr * p1), evaluated
    with a shared sample set.
    """
    if p1 < 0 or p1 > p_total:
        raise ValueError("require 0 <= p1 <= p_total")
    s = float(stats.snr[i, k])
    return float(phi_capacity_pair(s * p_total, s * p1, est, stream=(i, k)))


def unicast_rate_term(stats: ChannelStats, i: int, p1: float, est: RateEstimator) -> float:
    """Rate of the strongest user's private message in subchannel ``i``."""
    if p1 < 0:
        raise ValueError("p1 must be nonnegative")
    k = stats.strongest(i)
    s = float(stats.snr[i, k])
    return float(phi_capacity(s * p1, est, stream=(i, k)))


@dataclass(frozen=True)
class RateResult:
    """Achieved rates of one allocation (all in bits/s/Hz).

    ``r0`` is the common-message rate (minimum over users of the per-user
    decode rate), ``r_k`` the per-user private rates, ``sum_rate`` counts
    the common message once per user, and ``wsr`` weights it by ``mu``.
    """

    r0: float
    r_k: np.ndarray
    sum_rate: float
    wsr: float


def multicast_rate_matrix(stats: ChannelStats, p_total: np.ndarray, p1: np.ndarray,
                          est: RateEstimator) -> np.ndarray:
    """Per-(subchannel, user) common-message rate terms, shape (M, K)."""
    p_total = np.asarray(p_total, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if est.mode == "lookup-table":
        x_hi = stats.snr * p_total[:, None]
        x_lo = stats.snr * p1[:, None]
        return est.table(x_hi) - est.table(x_lo)
    out = np.empty_like(stats.snr)
    for i in range(stats.n_subchannels):
        for k in range(stats.n_users):
            out[i, k] = multicast_rate_term(stats, i, k, p_total[i], p1[i], est)
    return out


def rate_tuple(stats: ChannelStats, alloc: "Allocation", mu_total: float,
               est: RateEstimator) -> RateResult:
    """Evaluate the rates achieved by an allocation.

    The common-message rate takes the minimum over users of the
    subchannel-fraction-weighted decode rates; each subchannel's private
    rate accrues to that subchannel's selected user.
    """
    M, K = stats.n_subchannels, stats.n_users
    p_total = np.asarray(alloc.p_total, dtype=float)
    p1 = np.asarray(alloc.p1, dtype=float)
    if p_total.shape != (M,) or p1.shape != (M,):
        raise ValueError("allocation dimensions do not match the channel stats")

    mc = multicast_rate_matrix(stats, p_total, p1, est)
    r0 = float(np.min(stats.eta @ mc))

    r_k = np.zeros(K)
    for i in range(M):
        sel = alloc.selected_user[i]
        if sel is None or sel < 0 or p1[i] <= 0:
            continue
        r_k[sel] += stats.eta[i] * unicast_rate_term(stats, i, float(p1[i]), est)

    sum_priv = float(np.sum(r_k))
    return RateResult(r0=r0, r_k=r_k,
                      sum_rate=K * r0 + sum_priv,
                      wsr=float(mu_total) * r0 + sum_priv)
