"""Rational surrogate (1 + alpha x)^{-1} for the marginal-utility kernel.

The allocators replace ``phi_aux`` with this surrogate so that every root
they need has either a closed form or a unique, Newton-friendly zero.  The
parameter ``alpha`` depends only on the antenna shape and is obtained by a
least-squares fit of the surrogate against the Monte-Carlo kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import MimoShape
from .rates import RateEstimator, phi_aux

# shapes tabulated by the default fit sweep
TABLE_SHAPES = tuple(
    MimoShape(n_t, n_r) for n_t in (1, 2, 4, 8, 16, 32) for n_r in (1, 2, 4, 8, 16)
)

DEFAULT_FIT_GRID = np.linspace(0.1, 100.0, 1000)


def surrogate_phi(x, alpha: float):
    """Evaluate (1 + alpha x)^{-1}; matches phi_aux at 0 and decays as 1/(alpha x)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = np.asarray(x, dtype=float)
    out = 1.0 / (1.0 + alpha * x)
    return out if x.ndim else float(out)


def _golden_section(f, lo: float, hi: float, tol: float = 1e-9) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = f(c1), f(c2)
    while b - a > tol:
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = f(c2)
    return 0.5 * (a + b)


def fit_alpha(shape: MimoShape, est: RateEstimator, grid=None) -> tuple[float, float]:
    """Fit ``alpha`` by least squares of the surrogate against phi_aux.

    Parameters
    ----------
    shape : MimoShape
        Antenna shape; must match the estimator's.
    est : RateEstimator
        Sample source for the Monte-Carlo kernel values.
    grid : array_like, optional
        Fit abscissae inside (0, 100); defaults to 1000 uniform points on
        (0.1, 100).

    Returns
    -------
    (alpha, mse) : tuple of float
        Minimizing parameter and the achieved mean squared error.
    """
    if est.shape != shape:
        raise ValueError("estimator shape does not match the requested shape")
    xs = DEFAULT_FIT_GRID if grid is None else np.asarray(grid, dtype=float)
    if xs.size == 0 or np.any(xs <= 0) or np.any(xs >= 100.0 + 1e-12):
        raise ValueError("fit grid must be nonempty and inside (0, 100)")

    phis = phi_aux(xs, est)

    def mse(a):
        return float(np.mean((phis - 1.0 / (1.0 + a * xs)) ** 2))

    # bracket covers the large-alpha regime reached when n_r >> n_t
    hi = 2.0 * shape.n_r * max(1.0, shape.n_r / shape.n_t)
    alpha = _golden_section(mse, 0.5, max(hi, 2.0))

    # Newton polish on the smooth scalar objective
    for _ in range(3):
        r = phis - 1.0 / (1.0 + alpha * xs)
        g1 = 1.0 / (1.0 + alpha * xs) ** 2
        grad = float(np.mean(2.0 * r * xs * g1))
        hess = float(np.mean(2.0 * xs ** 2 * g1 ** 2
                             - 4.0 * r * xs ** 2 * g1 / (1.0 + alpha * xs)))
        if hess <= 0:
            break
        step = grad / hess
        if not np.isfinite(step) or abs(step) > 0.1 * alpha:
            break
        alpha -= step

    return float(alpha), mse(alpha)


@dataclass(frozen=True)
class SurrogateTable:
    """Fitted (alpha, mse) per antenna shape, immutable after construction."""

    entries: dict
    fit_grid: str = "uniform(0.1,100,1000)"

    def __post_init__(self):
        for (n_t, n_r), (alpha, mse) in self.entries.items():
            if alpha <= 0 or mse < 0:
                raise ValueError(f"invalid entry for shape {n_t}x{n_r}")

    def get(self, shape: MimoShape):
        return self.entries.get((shape.n_t, shape.n_r))


def alpha_lookup(shape: MimoShape, table: SurrogateTable | None = None,
                 est: RateEstimator | None = None) -> float:
    """Return the fitted ``alpha`` for a shape, fitting on the fly if absent.

    The fallback fit uses the supplied estimator, or a fresh 100k-sample
    Monte-Carlo estimator when none is given.
    """
    if table is not None:
        entry = table.get(shape)
        if entry is not None:
            return float(entry[0])
    if est is None:
        est = RateEstimator(shape=shape, n_samples=100_000, seed=0)
    alpha, _ = fit_alpha(shape, est)
    return alpha


def fit_table(shapes=TABLE_SHAPES, n_samples: int = 100_000, seed: int = 0,
              grid=None) -> SurrogateTable:
    """Fit ``alpha`` for every shape in ``shapes`` (the 30 defaults)."""
    entries = {}
    for shape in shapes:
        est = RateEstimator(shape=shape, n_samples=n_samples, seed=seed)
        alpha, mse = fit_alpha(shape, est, grid=grid)
        entries[(shape.n_t, shape.n_r)] = (alpha, mse)
    desc = "uniform(0.1,100,1000)" if grid is None else f"custom({len(np.asarray(grid))})"
    return SurrogateTable(entries=entries, fit_grid=desc)


def save_surrogate_table(table: SurrogateTable, path, n_samples: int = 100_000,
                         seed: int = 0) -> None:
    """One line per shape: n_t n_r alpha mse grid seed."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# n_t n_r alpha mse fit_grid n_samples seed\n")
        for (n_t, n_r) in sorted(table.entries):
            alpha, mse = table.entries[(n_t, n_r)]
            fh.write(f"{n_t} {n_r} {alpha!r} {mse!r} {table.fit_grid} {n_samples} {seed}\n")


def load_surrogate_table(path) -> SurrogateTable:
    entries = {}
    desc = "unknown"
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            n_t, n_r, alpha, mse, desc = line.split()[:5]
            entries[(int(n_t), int(n_r))] = (float(alpha), float(mse))
    return SurrogateTable(entries=entries, fit_grid=desc)
