"""Regularized empirical risk over ``B^p_Φ`` and its stationary points.

The objective in the coefficients ``c`` is

    T(c) = Σ_j L(x_j, y_j, φ_j(c)) + R(ρ(c)^(1/q)),   ρ(c) = c* φ(c) = ‖s_c‖^q.

Gradients follow one Wirtinger convention throughout: ``∇T(c) = ∂T/∂c̄``
(so ``dT = 2 Re⟨∇T, dc⟩``), and a loss derivative ``L′ = ∂L/∂t``. In real
mode the gradient is ``Re ∇T = ½ dT/du``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from rkbs_svm.function_space import (
    DEFAULT_CAP,
    CoefficientVector,
    DataError,
    GramTensor,
    RkbsModel,
    TrainingSet,
    as_points,
    build_gram,
    contract,
    contract_batch,
)
from rkbs_svm.kernels import SpectralKernel, check_integrability, gram_matrix

LOSS_KINDS = ("squared", "logistic", "squared_hinge")
REGULARIZER_KINDS = ("lambda_t_squared", "lambda_t_power")
SINGULAR_CONDITION = 1e12
FLOOR_TRIALS = 10
LM_TRIALS = 80


class NonConvergenceError(RuntimeError):
    """The iteration stopped before reaching the gradient tolerance."""

    def __init__(self, message: str, best: np.ndarray, diagnostics: Diagnostics, reason: str = "line_search"):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics
        # "rounding", "line_search" or "max_iters"
        self.reason = reason


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, condition: float):
        super().__init__(f"ridge system is numerically singular (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class LossSpec:
    kind: str = "squared"

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")

    @property
    def is_classification(self) -> bool:
        return self.kind != "squared"


@dataclass(frozen=True)
class RegularizerSpec:
    """``R(t) = λ t²`` or ``R(t) = λ t^r`` with ``r > 1``."""

    kind: str = "lambda_t_squared"
    lam: float = 1.0
    power: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {REGULARIZER_KINDS}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.kind == "lambda_t_power" and not self.power > 1:
            raise ValueError("regularizer power must exceed 1")

    @property
    def exponent(self) -> float:
        return 2.0 if self.kind == "lambda_t_squared" else float(self.power)

    def value(self, t: float) -> float:
        return self.lam * t**self.exponent

    def derivative(self, t: float) -> float:
        r = self.exponent
        return self.lam * r * t ** (r - 1)


@dataclass(frozen=True)
class SolverConfig:
    """Damped relaxation ``c ← c - η P ∇T(c)`` with Armijo backtracking.

    ``method="newton"`` takes ``P`` from a saddle-free Newton model (inverse
    of the absolute-eigenvalue Hessian in real coordinates); ``"gradient"``
    uses ``P = I`` with Barzilai-Borwein step proposals. Both share the
    fixed points of ``F(c) = c + ∇T(c)``.

    ``init`` is ``"ridge"`` (the p = 2 ridge solution scaled to unit norm)
    or ``"zeros"``. For p > 2 the origin is always stationary (``φ`` is of
    degree p - 1 in ``c``), so ``"zeros"`` is only useful for p = 2.

    Once the predicted decrease drops below rounding level a step is
    accepted only if it does not raise the objective and lowers the
    gradient norm.
    """

    step: float = 1.0
    max_iters: int = 20_000
    grad_tol: float = 1e-8
    backtracking: float = 0.5
    min_step: float = 1e-16
    max_step: float = 1e8
    armijo: float = 1e-4
    init: str = "ridge"
    method: str = "newton"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.backtracking < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not (self.step > 0 and self.grad_tol > 0 and self.min_step > 0):
            raise ValueError("step, grad_tol and min_step must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.init not in ("ridge", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")


def _check_labels(y: np.ndarray) -> None:
    if np.iscomplexobj(y) and np.any(np.imag(y)):
        raise ValueError("classification labels must be real")
    if not np.all(np.isin(np.real(y), (-1.0, 1.0))):
        raise ValueError("classification losses need labels in {-1, +1}")


def loss_value_and_derivative(spec: LossSpec, x, y, t):
    """Loss values and Wirtinger derivatives ``∂L/∂t`` (vectorized over ``y``, ``t``).

    ``x`` is accepted for interface symmetry; none of the shipped losses
    depend on it.
    """
    y = np.asarray(y)
    t = np.asarray(t)
    if spec.kind == "squared":
        r = t - y
        return np.abs(r) ** 2, np.conj(r)
    _check_labels(y)
    yr = np.real(y).astype(float)
    u = np.real(t)
    if spec.kind == "logistic":
        z = -yr * u
        return np.logaddexp(0.0, z), -0.5 * yr * expit(z)
    slack = np.maximum(0.0, 1.0 - yr * u)
    return slack**2, -yr * slack


@dataclass
class Problem:
    """Everything the objective needs: data, space, loss, regularizer and centers.

    ``centers`` default to the data points; a different set (for example the
    data plus one extra point) gives the objective over that expansion.
    """

    data: TrainingSet
    kernel: SpectralKernel
    p: int
    loss: LossSpec = field(default_factory=LossSpec)
    reg: RegularizerSpec = field(default_factory=RegularizerSpec)
    centers: np.ndarray | None = None
    real_mode: bool | None = None
    cap: int = DEFAULT_CAP
    workers: int = 1

    def __post_init__(self) -> None:
        if int(self.p) != self.p or self.p < 2 or int(self.p) % 2:
            raise ValueError(f"the solver needs an even integer p >= 2, got {self.p}")
        self.p = int(self.p)
        check_integrability(self.kernel, self.p)
        if self.data.dim != self.kernel.dim:
            raise DataError(f"data has dimension {self.data.dim}, kernel has {self.kernel.dim}")
        if self.loss.is_classification:
            _check_labels(self.data.values)
        if self.real_mode is None:
            self.real_mode = self.data.is_real
        same = self.centers is None
        self.centers = self.data.points if same else as_points(self.centers, self.kernel.dim)
        self.center_gram = build_gram(self.kernel, self.centers, self.p, cap=self.cap, workers=self.workers).values
        if same:
            self.data_gram = self.center_gram
        else:
            self.data_gram = build_gram(
                self.kernel, self.centers, self.p, points=self.data.points, cap=self.cap, workers=self.workers
            ).values

    @property
    def q(self) -> float:
        return self.p / (self.p - 1)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def model(self, c, metadata: dict | None = None, real_mode: bool | None = None) -> RkbsModel:
        real = self.real_mode if real_mode is None else real_mode
        coef = CoefficientVector(np.real(c) if real else c, bool(real))
        m = RkbsModel(self.p, self.kernel, self.centers, coef, self.cap, workers=self.workers,
                      metadata=dict(metadata or {}))
        # share the tabulated tensor instead of rebuilding it
        m.__dict__["gram"] = GramTensor(self.p - 1, self.center_gram)
        return m


def _jacobians(values: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(∂φ/∂c, ∂φ/∂c̄)``: sums over the slots carrying ``c`` and ``conj(c)``."""
    slots = values.ndim - 1
    jac = sum(contract(values, c, free=i) for i in range(0, slots, 2))
    hol = np.zeros_like(jac)
    for i in range(1, slots, 2):
        hol = hol + contract(values, c, free=i)
    return jac, hol


def _norm_power(problem: Problem, c: np.ndarray) -> tuple[float, np.ndarray]:
    phi_c = contract(problem.center_gram, c)
    return max(float(np.real(np.vdot(c, phi_c))), 0.0), phi_c


def objective(problem: Problem, c) -> float:
    """``T(c) = Σ_j L(x_j, y_j, φ_j(c)) + R((c* φ(c))^(1/q))``."""
    c = np.asarray(c, dtype=complex).reshape(-1)
    phi_d = contract(problem.data_gram, c)
    loss, _ = loss_value_and_derivative(problem.loss, problem.data.points, problem.data.values, phi_d)
    rho, _ = _norm_power(problem, c)
    return float(np.sum(loss)) + problem.reg.value(rho ** (1.0 / problem.q))


def objective_batch(problem: Problem, cs) -> np.ndarray:
    """:func:`objective` for each row of ``cs``."""
    cs = np.atleast_2d(np.asarray(cs, dtype=complex))
    phi_d = contract_batch(problem.data_gram, cs)
    loss, _ = loss_value_and_derivative(problem.loss, problem.data.points, problem.data.values[None, :], phi_d)
    phi_c = phi_d if problem.data_gram is problem.center_gram else contract_batch(problem.center_gram, cs)
    rho = np.maximum(np.real(np.sum(np.conj(cs) * phi_c, axis=1)), 0.0)
    return np.sum(loss, axis=1) + problem.reg.value(rho ** (1.0 / problem.q))


def gradient(problem: Problem, c, real_mode: bool | None = None) -> np.ndarray:
    """Wirtinger gradient ``∂T/∂c̄``; its real part in real mode.

    ``∂T/∂c̄_k = Σ_j [L′_j ∂φ_j/∂c̄_k + conj(L′_j) conj(∂φ_j/∂c_k)]
    + R′(ρ^(1/q)) (p / 2q) ρ^(-1/p) φ_k``. The regularizer term is taken
    as 0 at ``c = 0``.
    """
    c = np.asarray(c, dtype=complex).reshape(-1)
    phi_d = contract(problem.data_gram, c)
    _, dl = loss_value_and_derivative(problem.loss, problem.data.points, problem.data.values, phi_d)
    jac, hol = _jacobians(problem.data_gram, c)
    g = dl @ hol + np.conj(dl) @ np.conj(jac)
    rho, phi_c = _norm_power(problem, c)
    if rho > 0:
        p, q = problem.p, problem.q
        g = g + problem.reg.derivative(rho ** (1.0 / q)) * (p / (2 * q)) * rho ** (-1.0 / p) * phi_c
    real = problem.real_mode if real_mode is None else real_mode
    return np.real(g).astype(complex) if real else g


def fixed_point_residual(problem: Problem, c) -> float:
    """``‖F(c) - c‖`` with ``F(c) = c + ∇T(c)``."""
    c = np.asarray(c, dtype=complex)
    return float(np.linalg.norm((c + gradient(problem, c)) - c))


@dataclass
class Diagnostics:
    iterations: int = 0
    grad_norm: float = math.inf
    objective: float = math.inf
    objective_trace: list[float] = field(default_factory=list)
    mode: str = "real"
    converged: bool = False
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
            "mode": self.mode,
            "converged": self.converged,
        }


def solve_p2_closed_form(data: TrainingSet, kernel: SpectralKernel, lam: float) -> np.ndarray:
    """Coefficients of the p = 2 squared-loss solution with ``R(t) = λ t²``.

    Stationarity of ``|Gc - y|² + λ c*Gc`` reads ``G (Gc - y + λc) = 0``, so
    with ``G`` positive definite ``(G + λI) c = y``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    gram = gram_matrix(kernel, data.points)
    system = gram + lam * np.eye(data.size)
    cond = float(np.linalg.cond(system))
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise SingularSystemError(cond)
    return linalg.solve(system, data.values, assume_a="pos")


def _initial_point(problem: Problem, config: SolverConfig) -> np.ndarray:
    n = problem.size
    if config.init == "zeros":
        return np.zeros(n, dtype=complex)
    nd = problem.data.size
    try:
        ridge = np.asarray(solve_p2_closed_form(problem.data, problem.kernel, problem.reg.lam), dtype=complex)
    except SingularSystemError:
        rng = np.random.default_rng(config.seed)
        c = 1e-3 * rng.standard_normal(n)
        return c.astype(complex) if problem.real_mode else c + 1e-3j * rng.standard_normal(n)
    # the ridge solution lives on the data points; extra centers start at 0
    c = np.zeros(n, dtype=complex)
    index = {tuple(x): k for k, x in enumerate(problem.centers)}
    for j in range(nd):
        k = index.get(tuple(problem.data.points[j]))
        if k is not None:
            c[k] = ridge[j]
    if problem.real_mode:
        c = np.real(c).astype(complex)
    if problem.p > 2:
        rho, _ = _norm_power(problem, c)
        if rho > 0:
            norm = rho ** (1.0 / problem.q)
            c = c * norm ** (-1.0 / (problem.p - 1))
    return c


def _to_real(c: np.ndarray, real: bool) -> np.ndarray:
    return c.real.copy() if real else np.concatenate([c.real, c.imag])


def _from_real(z: np.ndarray, real: bool) -> np.ndarray:
    if real:
        return z.astype(complex)
    n = z.size // 2
    return z[:n] + 1j * z[n:]


def _real_hessian(problem: Problem, c: np.ndarray, real: bool) -> np.ndarray:
    """Hessian of ``T`` in real coordinates by central differences of the exact gradient."""
    z = _to_real(c, real)
    h = 1e-6 * max(1.0, float(np.max(np.abs(z))))
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        gp = _to_real(gradient(problem, _from_real(z + e, real), real), real)
        gm = _to_real(gradient(problem, _from_real(z - e, real), real), real)
        cols.append((gp - gm) / h)  # real gradient of T is 2 (Re g, Im g)
    hess = np.array(cols).T
    return (hess + hess.T) / 2


def _damped_newton(hess: np.ndarray):
    """Eigen-factorization used for saddle-free damped Newton steps."""
    w, v = linalg.eigh(hess)
    return np.abs(w), v


def _newton_direction(factor, grad_z: np.ndarray, mu: float) -> np.ndarray:
    w, v = factor
    return -v @ ((v.T @ grad_z) / (w + mu))


def _line_search(problem, config, c, t_cur, direction, eta, slope, real, min_eta):
    """Armijo backtracking along ``direction``; ``None`` if ``eta`` falls below ``min_eta``."""
    while eta >= min_eta:
        c_new = c + eta * _from_real(direction, real)
        t_new = objective(problem, c_new)
        if np.isfinite(t_new) and t_new <= t_cur + config.armijo * eta * slope:
            return c_new, t_new, eta
        eta *= config.backtracking
    return None


def _floor_step(problem, config, c, t_cur, direction, gn, real):
    """Step acceptance once the objective cannot resolve the predicted decrease.

    A trial is taken only if it does not raise the objective and lowers the
    gradient norm.
    """
    eta = 1.0
    for _ in range(FLOOR_TRIALS):
        c_new = c + eta * _from_real(direction, real)
        t_new = objective(problem, c_new)
        if t_new <= t_cur and np.linalg.norm(gradient(problem, c_new, real)) < gn:
            return c_new, t_new, eta
        eta *= config.backtracking
    return None


def _newton_iteration(problem, config, c, t_cur, grad_z, gn, real, mu, eps):
    """One Levenberg-Marquardt step on ``|H| + μI``; returns ``(step, μ, at_floor)``."""
    factor = _damped_newton(_real_hessian(problem, c, real))
    scale = max(float(np.max(factor[0])), np.finfo(float).tiny)
    mu = max(mu, 1e-12 * scale)
    full = _newton_direction(factor, grad_z, 1e-12 * scale)
    if -float(grad_z @ full) <= 8 * eps * abs(t_cur):
        return _floor_step(problem, config, c, t_cur, full, gn, real), mu, True
    for _ in range(LM_TRIALS):
        direction = _newton_direction(factor, grad_z, mu)
        slope = float(grad_z @ direction)
        c_new = c + _from_real(direction, real)
        t_new = objective(problem, c_new)
        if np.isfinite(t_new) and t_new <= t_cur + config.armijo * slope:
            return (c_new, t_new, 1.0), max(mu / 3, 1e-12 * scale), False
        if -slope <= 8 * eps * abs(t_cur):
            return _floor_step(problem, config, c, t_cur, direction, gn, real), mu, True
        mu = max(4 * mu, 1e-8 * scale)
    return None, mu, False


def _descend(problem: Problem, config: SolverConfig, c: np.ndarray, diag: Diagnostics) -> np.ndarray:
    real = diag.mode == "real"
    eps = np.finfo(float).eps
    t_cur = objective(problem, c)
    g = gradient(problem, c, real)
    diag.objective_trace.append(t_cur)
    eta = config.step
    mu = 0.0
    floor_iters = 0
    for it in range(config.max_iters):
        gn = float(np.linalg.norm(g))
        diag.iterations, diag.grad_norm, diag.objective = it, gn, t_cur
        if gn <= config.grad_tol:
            diag.converged = True
            return c
        grad_z = 2 * _to_real(g, real)
        if config.method == "newton":
            step, mu, at_floor = _newton_iteration(problem, config, c, t_cur, grad_z, gn, real, mu, eps)
        else:
            direction = -grad_z / 2
            slope = float(grad_z @ direction)
            at_floor = -eta * slope <= 8 * eps * abs(t_cur)
            if at_floor:
                step = _floor_step(problem, config, c, t_cur, eta * direction, gn, real)
            else:
                step = _line_search(problem, config, c, t_cur, direction, eta, slope, real, config.min_step)
        floor_iters = floor_iters + 1 if at_floor else 0
        if step is None or floor_iters > FLOOR_TRIALS:
            reason = "rounding" if at_floor else "line_search"
            what = "objective at rounding level" if at_floor else "line search failed"
            diag.message = f"{what} at iteration {it} (gradient norm {gn:.3e})"
            raise NonConvergenceError(diag.message, c, diag, reason)
        c_new, t_new, eta_used = step
        g_new = gradient(problem, c_new, real)
        if config.method == "gradient":
            s_, yv = c_new - c, g_new - g
            curv = float(np.real(np.vdot(s_, yv)))
            # Barzilai-Borwein proposal for the next step
            eta = float(np.real(np.vdot(s_, s_))) / curv if curv > 0 else 2 * eta_used
            eta = min(max(eta, config.min_step), config.max_step)
        c, g, t_cur = c_new, g_new, t_new
        diag.objective_trace.append(t_cur)
    diag.iterations = config.max_iters
    diag.grad_norm = float(np.linalg.norm(g))
    diag.objective = t_cur
    if diag.grad_norm <= config.grad_tol:
        diag.converged = True
        return c
    diag.message = f"reached max_iters={config.max_iters} (gradient norm {diag.grad_norm:.3e})"
    raise NonConvergenceError(diag.message, c, diag, "max_iters")


def fixed_point_solve(problem: Problem, config: SolverConfig | None = None, c0=None):
    """Find ``c`` with ``‖F(c) - c‖ = ‖∇T(c)‖ ≤ grad_tol``.

    Iterates ``c ← c - η P ∇T(c)`` (see :class:`SolverConfig`), whose fixed points coincide with those of
    ``F``. The objective trace in the diagnostics is nonincreasing. If real
    mode stalls, the search restarts in complex mode from the best real
    iterate plus a small imaginary perturbation; ``diagnostics.mode``
    reports which mode produced the answer.

    Raises
    ------
    NonConvergenceError
        Carrying the best iterate when the tolerance is not reached.
    """
    config = config or SolverConfig()
    c = _initial_point(problem, config) if c0 is None else np.asarray(c0, dtype=complex).reshape(-1)
    if c.size != problem.size:
        raise ValueError(f"initial point has {c.size} entries for {problem.size} centers")
    if not problem.real_mode:
        diag = Diagnostics(mode="complex")
        return _descend(problem, config, c, diag), diag
    try:
        diag = Diagnostics(mode="real")
        return _descend(problem, config, np.real(c).astype(complex), diag), diag
    except NonConvergenceError as err:
        if err.reason == "rounding":
            raise
        best = err.best
        stalled = err.diagnostics
    rng = np.random.default_rng(config.seed)
    diag = Diagnostics(mode="complex")
    c = _descend(problem, config, best + 1e-6j * rng.standard_normal(best.size), diag)
    diag.message = f"real mode stalled ({stalled.message}); solved in complex mode"
    return c, diag


def train(problem: Problem, config: SolverConfig | None = None, c0=None) -> tuple[RkbsModel, Diagnostics]:
    """Solve and wrap the result as a model (raises like :func:`fixed_point_solve`)."""
    c, diag = fixed_point_solve(problem, config, c0)
    meta = {"converged": diag.converged, "loss": problem.loss.kind, "objective": diag.objective}
    return problem.model(c, meta, real_mode=diag.mode == "real"), diag


def predict(model: RkbsModel, xs) -> np.ndarray:
    """Model values at ``xs``; an empty input gives an empty output."""
    arr = np.asarray(xs, dtype=float)
    if arr.size == 0:
        return np.zeros(0, dtype=complex)
    pts = as_points(arr, model.kernel.dim)
    return np.atleast_1d(model.evaluate(pts))


def classify(model: RkbsModel, xs) -> np.ndarray:
    """Labels in ``{-1, +1}`` from the sign of the real part (ties go to +1)."""
    vals = predict(model, xs)
    return np.where(np.real(vals) >= 0, 1.0, -1.0)
