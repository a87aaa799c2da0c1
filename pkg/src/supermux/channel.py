"""Statistical-CSIT view of the network: per-user channel SNRs and orderings.

The transmitter only knows the long-term average channel SNR of each user in
each OFDMA subchannel (linear scale), the subchannel bandwidth fractions, and
the per-subchannel user orderings derived from the SNRs.  No instantaneous
channel realizations are stored here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TIE_EPS = 1e-9


@dataclass(frozen=True)
class MimoShape:
    """Antenna counts of the MIMO link (transmit, receive)."""

    n_t: int
    n_r: int

    def __post_init__(self):
        if self.n_t < 1 or self.n_r < 1:
            raise ValueError(f"antenna counts must be >= 1, got {self.n_t}x{self.n_r}")

    @property
    def n_min(self) -> int:
        return min(self.n_t, self.n_r)


@dataclass(frozen=True)
class ChannelStats:
    """Per-subchannel channel SNRs, bandwidth fractions, and user orderings.

    Attributes
    ----------
    snr : ndarray, shape (M, K)
        Linear channel SNRs, strictly distinct within each row after
        tie-breaking.
    eta : ndarray, shape (M,)
        Positive subchannel fractions summing to 1.
    orderings : ndarray of int, shape (M, K)
        ``orderings[i, r]`` is the 0-based index of the user with the
        (r+1)-th largest SNR in subchannel ``i``.
    """

    snr: np.ndarray
    eta: np.ndarray
    orderings: np.ndarray

    @property
    def n_subchannels(self) -> int:
        return self.snr.shape[0]

    @property
    def n_users(self) -> int:
        return self.snr.shape[1]

    def strongest(self, i: int) -> int:
        """User index with the largest SNR in subchannel ``i``."""
        return int(self.orderings[i, 0])

    def strongest_snr(self, i: int) -> float:
        return float(self.snr[i, self.orderings[i, 0]])


def _break_ties(row: np.ndarray, epsilon: float) -> np.ndarray:
    """Perturb exact duplicates in ``row`` until all values are distinct.

    Within a tied group the user with the lowest index keeps its value and
    each subsequent user loses ``epsilon * value * rank``.
    """
    out = row.astype(float).copy()
    for _ in range(out.size + 2):
        vals, inverse, counts = np.unique(out, return_inverse=True, return_counts=True)
        if np.all(counts == 1):
            return out
        for v_idx in np.nonzero(counts > 1)[0]:
            members = np.nonzero(inverse == v_idx)[0]  # ascending user index
            scale = vals[v_idx] if vals[v_idx] > 0 else 1.0
            out[members] -= epsilon * scale * np.arange(len(members))
    raise RuntimeError("tie-breaking did not converge")


def build_channel_stats(raw_snr, eta, epsilon: float = DEFAULT_TIE_EPS) -> ChannelStats:
    """Validate inputs, break SNR ties, and compute per-subchannel orderings.

    Parameters
    ----------
    raw_snr : array_like, shape (M, K)
        Nonnegative linear channel SNRs, one row per subchannel.
    eta : array_like, shape (M,)
        Positive subchannel fractions; must sum to 1 within 1e-9 (they are
        renormalized exactly afterwards).
    epsilon : float
        Relative tie-breaking perturbation.

    Returns
    -------
    ChannelStats
    """
    snr = np.atleast_2d(np.asarray(raw_snr, dtype=float))
    eta = np.asarray(eta, dtype=float).ravel()
    if snr.ndim != 2:
        raise ValueError("raw_snr must be a 2-D (M, K) array")
    if eta.shape[0] != snr.shape[0]:
        raise ValueError(f"eta has {eta.shape[0]} entries for {snr.shape[0]} subchannels")
    if np.any(snr < 0) or not np.all(np.isfinite(snr)):
        raise ValueError("channel SNRs must be finite and nonnegative")
    if np.any(eta <= 0):
        raise ValueError("subchannel fractions must be positive")
    if abs(eta.sum() - 1.0) > 1e-9:
        raise ValueError(f"subchannel fractions sum to {eta.sum()}, expected 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    eta = eta / eta.sum()
    snr = np.vstack([_break_ties(row, epsilon) for row in snr])
    # stable argsort on negated values: descending SNR, ties impossible now
    orderings = np.argsort(-snr, axis=1, kind="stable")

    snr.setflags(write=False)
    eta.setflags(write=False)
    orderings.setflags(write=False)
    return ChannelStats(snr=snr, eta=eta, orderings=orderings)


def stronger_set(stats: ChannelStats, i: int, k: int) -> set[int]:
    """Users whose SNR in subchannel ``i`` strictly exceeds user ``k``'s."""
    if not 0 <= i < stats.n_subchannels:
        raise IndexError(f"subchannel index {i} out of range")
    if not 0 <= k < stats.n_users:
        raise IndexError(f"user index {k} out of range")
    order = stats.orderings[i]
    pos = int(np.nonzero(order == k)[0][0])
    return set(int(u) for u in order[:pos])


def dump_channel_stats(stats: ChannelStats) -> str:
    """Serialize to the plain-text format (one subchannel per row)."""
    lines = ["eta: " + " ".join(repr(float(e)) for e in stats.eta)]
    for row in stats.snr:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_channel_stats(text: str, epsilon: float = DEFAULT_TIE_EPS) -> ChannelStats:
    """Parse the plain-text SNR matrix format.

    Rows of whitespace-separated linear SNRs, one subchannel per row.  An
    optional ``eta:`` line gives the subchannel fractions; otherwise they
    default to 1/M.  Lines starting with ``#`` are ignored.
    """
    eta = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("eta:"):
            eta = [float(v) for v in line[len("eta:"):].split()]
            continue
        rows.append([float(v) for v in line.split()])
    if not rows:
        raise ValueError("no SNR rows found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError("SNR rows have inconsistent lengths")
    snr = np.array(rows, dtype=float)
    if eta is None:
        eta = np.full(snr.shape[0], 1.0 / snr.shape[0])
    return build_channel_stats(snr, eta, epsilon)


def load_channel_stats(path, epsilon: float = DEFAULT_TIE_EPS) -> ChannelStats:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_channel_stats(fh.read(), epsilon)
