"""Independent verification engines.

* Spectral quadrature of the integrals that define ``s_c`` and ``φ_j`` in one
  dimension, with a refinement delta attached to every value.
* Central finite differences assembled into Wirtinger gradients.
* Derivative-free nested-grid minimization for small global-optimality checks.

None of these share code paths with the closed-form kernel sums they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rkbs_svm.kernels import SpectralKernel, spectral_density
from rkbs_svm.lp_semi_inner import WeightedSequenceSpace, pairing, signed_power

MIN_NODES = 16
SQRT_2PI = math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform trapezoidal grid with ``nodes`` points on ``[-half_width, half_width]``.

    Grids with fewer than 16 nodes can be built (they are useful to show
    what a failed refinement looks like) but are not admissible for any
    asserted comparison.
    """

    half_width: float
    nodes_count: int
    dim: int = 1
    rule: str = "trapezoidal"

    def __post_init__(self) -> None:
        if self.dim != 1:
            raise ValueError("quadrature grids are one-dimensional")
        if self.rule != "trapezoidal":
            raise ValueError(f"unsupported quadrature rule {self.rule!r}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.nodes_count < 2:
            raise ValueError("a grid needs at least two nodes")

    @property
    def is_admissible(self) -> bool:
        return self.nodes_count >= MIN_NODES

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / (self.nodes_count - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.nodes_count)

    def weights(self) -> np.ndarray:
        w = np.full(self.nodes_count, self.spacing)
        w[[0, -1]] /= 2
        return w

    def refined(self) -> QuadratureGrid:
        """Twice the nodes on twice the interval (same spacing, longer reach)."""
        return QuadratureGrid(2 * self.half_width, 2 * self.nodes_count, self.dim, self.rule)

    def densified(self) -> QuadratureGrid:
        """Twice the nodes on the same interval (half the spacing)."""
        return QuadratureGrid(self.half_width, 2 * self.nodes_count, self.dim, self.rule)


def default_grid(kernel: SpectralKernel, nodes: int = 2**14, scale: float = 40.0) -> QuadratureGrid:
    """``Ω = 40 θ`` with ``2^14`` nodes."""
    return QuadratureGrid(scale * kernel.theta, nodes)


def tail_bound(kernel: SpectralKernel, p: float, c, half_width: float) -> float:
    """Upper bound on the integrand mass beyond ``±half_width``.

    The integrand is bounded by ``‖c‖₁^(p-1) (θ² + ω²)^(-(p-1)n) ≤ ‖c‖₁^(p-1) ω^(-2(p-1)n)``,
    whose two-sided tail integral is
    ``2 ‖c‖₁^(p-1) Ω^(1 - 2(p-1)n) / (2(p-1)n - 1)``, times ``(2π)^(-1/2)``.
    """
    expo = 2 * (p - 1) * kernel.degree
    c1 = float(np.sum(np.abs(np.asarray(c))))
    return 2 * c1 ** (p - 1) * half_width ** (1 - expo) / (expo - 1) / SQRT_2PI


@dataclass(frozen=True)
class QuadEstimate:
    """A quadrature value with the largest change seen under refinement."""

    value: complex | np.ndarray
    delta: float

    def __complex__(self) -> complex:
        return complex(self.value)

    def converged(self, tol: float) -> bool:
        """True when the refinement delta is below half of ``tol``."""
        return self.delta <= tol / 2


def _centers_1d(centers) -> np.ndarray:
    ctr = np.asarray(centers, dtype=float)
    if ctr.ndim == 2:
        if ctr.shape[1] != 1:
            raise ValueError("quadrature oracle supports d = 1 only")
        ctr = ctr[:, 0]
    return ctr.reshape(-1)


def spectral_transform(kernel: SpectralKernel, p: float, centers, c, omega: np.ndarray) -> np.ndarray:
    """``ŝ_c(ω) = Φ̂(ω)^(p-1) S(ω) |S(ω)|^(p-2)`` with ``S(ω) = Σ c_l e^{-i x_l ω}``."""
    ctr = _centers_1d(centers)
    c = np.asarray(c, dtype=complex).reshape(-1)
    s = np.exp(-1j * np.outer(omega, ctr)) @ c
    return spectral_density(kernel, omega) ** (p - 1) * signed_power(s, p - 2)


def _inverse_at(grid: QuadratureGrid, kernel, p, centers, c, xs: np.ndarray) -> np.ndarray:
    omega = grid.nodes()
    integrand = grid.weights() * spectral_transform(kernel, p, centers, c, omega)
    out = np.empty(xs.size, dtype=complex)
    for start in range(0, xs.size, 64):
        chunk = xs[start:start + 64]
        out[start:start + 64] = np.exp(1j * np.outer(chunk, omega)) @ integrand
    return out / SQRT_2PI


def _require_admissible(grid: QuadratureGrid) -> None:
    if not grid.is_admissible:
        raise ValueError(f"grid with {grid.nodes_count} nodes is below the minimum of {MIN_NODES}")


def quad_evaluate(grid: QuadratureGrid, kernel: SpectralKernel, p: float, centers, c, x) -> QuadEstimate:
    """Quadrature of ``(2π)^(-1/2) ∫ ŝ_c(ω) e^{iωx} dω`` at one or many ``x``.

    ``delta`` is the largest change against the refined (2M, 2Ω) and the
    densified (2M, Ω) grids.
    """
    _require_admissible(grid)
    xs = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    base = _inverse_at(grid, kernel, p, centers, c, xs)
    delta = 0.0
    for other in (grid.refined(), grid.densified()):
        delta = max(delta, float(np.max(np.abs(_inverse_at(other, kernel, p, centers, c, xs) - base))))
    value = base[0] if np.ndim(x) == 0 else base
    return QuadEstimate(value, delta)


def quad_phi(grid: QuadratureGrid, kernel: SpectralKernel, p: float, centers, c, j: int) -> QuadEstimate:
    """Quadrature value of ``φ_j(c) = s_c(x_j)``."""
    return quad_evaluate(grid, kernel, p, centers, c, float(_centers_1d(centers)[j]))


def quad_reproduction(grid: QuadratureGrid, kernel: SpectralKernel, p: float, model, y) -> QuadEstimate:
    """``|⟨s_c, K(·, y)⟩ - s_c(y)|`` with the pairing taken in the spectral surrogate.

    The pairing is ``Σ w_i ŝ(ω_i) conj(k̂_y(ω_i))`` with ``k̂_y = Φ̂ e^{-iωy}``
    and weights ``w = (2π)^(-1/2) dω / Φ̂``. ``model`` supplies the closed-form
    value ``s_c(y)``.
    """
    _require_admissible(grid)
    ys = np.atleast_1d(np.asarray(y, dtype=float)).reshape(-1)
    target = np.atleast_1d(model.evaluate(ys[:, None]))

    def pairings(g: QuadratureGrid) -> np.ndarray:
        space = WeightedSequenceSpace.from_spectral_measure(kernel, g, p / (p - 1))
        omega = g.nodes()
        f_hat = spectral_transform(kernel, p, model.centers, model.c, omega)
        dens = spectral_density(kernel, omega)
        return np.array([pairing(space, f_hat, dens * np.exp(-1j * omega * t)) for t in ys])

    base = pairings(grid)
    delta = 0.0
    for other in (grid.refined(), grid.densified()):
        delta = max(delta, float(np.max(np.abs(pairings(other) - base))))
    residual = np.abs(base - target)
    value = float(residual[0]) if np.ndim(y) == 0 else residual
    return QuadEstimate(value, delta)


def finite_difference_gradient(func, c, h: float = 1e-6, real_mode: bool = False) -> np.ndarray:
    """Central-difference Wirtinger gradient ``∂f/∂c̄ = ½(∂f/∂u + i ∂f/∂v)``.

    In real mode only the real directions are probed and the result is
    ``½ ∂f/∂u``, the real part of the complex gradient at real ``c``.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    c = np.asarray(c, dtype=complex).reshape(-1)
    grad = np.zeros(c.size, dtype=float if real_mode else complex)
    directions = (1.0,) if real_mode else (1.0, 1j)
    for k in range(c.size):
        for unit in directions:
            e = np.zeros_like(c)
            e[k] = unit * h
            diff = (func(c + e) - func(c - e)) / (2 * h)
            grad[k] += 0.5 * diff * (1 if unit == 1.0 else 1j)
    return grad


def complex_objective(func, n: int):
    """Adapt ``func(c ∈ C^n)`` to a function of ``2n`` real coordinates ``(Re c, Im c)``.

    Works for batched functions too: rows of ``x`` map to rows of ``c``.
    """

    def wrapped(x: np.ndarray):
        return func(x[..., :n] + 1j * x[..., n:])

    return wrapped


@dataclass(frozen=True)
class BruteForceResult:
    argmin: np.ndarray
    value: float
    evaluations: int
    budget_exhausted: bool
    multimodal: bool


def _default_points(dim: int) -> int:
    k = int(math.floor(10_000 ** (1.0 / dim)))
    k = min(k, 201)
    return max(k - (k % 2 == 0), 5)


def _grid_local_minima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of grid points no larger than any axis neighbour."""
    mask = np.ones(values.shape, dtype=bool)
    for axis in range(values.ndim):
        pad = [(0, 0)] * values.ndim
        pad[axis] = (1, 1)
        padded = np.pad(values, pad, constant_values=np.inf)
        lo = np.take(padded, range(0, values.shape[axis]), axis=axis)
        hi = np.take(padded, range(2, values.shape[axis] + 2), axis=axis)
        mask &= (values <= lo) & (values <= hi)
    return mask


def _grid_values(func, lo, hi, k, batched, remaining):
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
    take = max(min(grid.shape[0], remaining), 0)
    if batched:
        flat = np.asarray(func(grid[:take]), dtype=float).reshape(-1) if take else np.zeros(0)
    else:
        flat = np.array([float(func(x)) for x in grid[:take]])
    values = np.full(grid.shape[0], np.inf)
    values[:take] = flat
    return grid, values.reshape((k,) * lo.size), take


def brute_force_minimize(
    func,
    lower,
    upper,
    points: int | None = None,
    rounds: int = 5,
    shrink: float = 0.3,
    budget: int = 1_000_000,
    tie_rtol: float = 1e-3,
    batched: bool = False,
    starts: int = 1,
) -> BruteForceResult:
    """Nested grid search over a box of at most six real coordinates.

    Each round evaluates a uniform grid, recentres the box on the best point
    and shrinks its half-widths by ``shrink`` (clipped to the original box).
    With ``starts > 1`` the refinement is repeated from the best few
    grid-local minima of the first round, which guards against narrow
    valleys that the coarse grid straddles.

    The first round also looks for separated grid-local minima whose values
    tie with the best one (relative ``tie_rtol``), in which case
    ``multimodal`` is set. With ``batched`` the function receives an
    ``(K, dim)`` array and returns ``K`` values.
    """
    lo = np.asarray(lower, dtype=float).reshape(-1)
    hi = np.asarray(upper, dtype=float).reshape(-1)
    dim = lo.size
    if not 1 <= dim <= 6 or hi.size != dim:
        raise ValueError("brute-force search supports 1 to 6 real coordinates")
    if np.any(hi <= lo):
        raise ValueError("box must have positive width in every coordinate")
    k = points or _default_points(dim)
    grid, values, evaluations = _grid_values(func, lo, hi, k, batched, budget)
    exhausted = evaluations < grid.shape[0]
    flat = values.reshape(-1)
    order = np.argsort(flat, kind="stable")
    best_v, best_x = float(flat[order[0]]), grid[order[0]]
    local = _grid_local_minima(values).reshape(-1) & np.isfinite(flat)
    step = (hi - lo) / (k - 1)
    ties = [j for j in order if local[j] and flat[j] <= best_v + tie_rtol * abs(best_v)]
    multimodal = any(np.max(np.abs(grid[j] - best_x) / step) > 2 for j in ties) and not exhausted
    seeds = [j for j in order if local[j]][:starts] or [order[0]]
    for j in seeds:
        x0, v0 = grid[j], float(flat[j])
        half = (hi - lo) / 2
        for _ in range(rounds - 1):
            if exhausted:
                break
            half = half * shrink
            cur_lo, cur_hi = np.maximum(x0 - half, lo), np.minimum(x0 + half, hi)
            sub, vals, took = _grid_values(func, cur_lo, cur_hi, k, batched, budget - evaluations)
            evaluations += took
            exhausted = took < sub.shape[0]
            if took:
                i = int(np.argmin(vals.reshape(-1)))
                if vals.reshape(-1)[i] < v0:
                    x0, v0 = sub[i], float(vals.reshape(-1)[i])
        if v0 < best_v:
            best_x, best_v = x0, v0
    return BruteForceResult(best_x, best_v, evaluations, exhausted, multimodal)
