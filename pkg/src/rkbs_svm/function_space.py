"""SVM solutions in the RKBS ``B^p_Φ(R^d)`` for even ``p``.

For coefficients ``c`` the candidate solution is

    s_c(x) = Σ_{k ∈ [N]^(p-1)} c_{k1} conj(c_{k2}) c_{k3} ... c_{k_{p-1}}
             Φ_{p-1}(x - x_{k1} + x_{k2} - ... - x_{k_{p-1}}),

where ``Φ_{p-1}`` is the inverse transform of ``Φ̂^(p-1)``. Odd slots carry
``c`` and even slots carry ``conj(c)``. For ``p = 2`` this is the usual
kernel expansion ``Σ c_k Φ(x - x_k)``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from rkbs_svm.kernels import MultipointKernelSpec, SpectralKernel, check_integrability

DEFAULT_CAP = 10**7
DISTINCT_TOL = 1e-12


class DataError(ValueError):
    """Malformed or degenerate training data."""


class GramCapacityError(MemoryError):
    """A multipoint Gram tensor would exceed the configured entry cap."""


class InternalConsistencyError(ArithmeticError):
    """A quantity that must be a nonnegative real norm power is not."""


def as_points(points, dim: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if dim in (None, 1) else pts[None, :]
    if pts.ndim != 2 or (dim is not None and pts.shape[1] != dim):
        raise DataError(f"expected an (N, {dim}) array of points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class TrainingSet:
    """Pairwise distinct points ``x_j ∈ R^d`` with values ``y_j``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        vals = np.asarray(self.values).reshape(-1)
        if pts.shape[0] == 0:
            raise DataError("training set is empty")
        if vals.size != pts.shape[0]:
            raise DataError(f"{pts.shape[0]} points but {vals.size} values")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise DataError("training data contains non-finite entries")
        if np.iscomplexobj(vals) and not np.any(vals.imag):
            vals = vals.real
        gap = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=-1)
        np.fill_diagonal(gap, np.inf)
        if np.any(gap <= DISTINCT_TOL):
            j, k = np.argwhere(gap <= DISTINCT_TOL)[0]
            raise DataError(f"data points must be pairwise distinct (rows {j} and {k} coincide)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals.astype(complex if np.iscomplexobj(vals) else float))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)


@dataclass(frozen=True)
class CoefficientVector:
    """Coefficients ``c ∈ C^N``; in real mode the imaginary parts are exactly zero."""

    entries: np.ndarray
    real_mode: bool = False

    def __post_init__(self) -> None:
        c = np.array(self.entries, dtype=complex).reshape(-1)
        if self.real_mode and np.any(c.imag != 0):
            raise ValueError("real-mode coefficients must have zero imaginary parts")
        object.__setattr__(self, "entries", c)

    def __len__(self) -> int:
        return self.entries.size

    def dual(self, norm: float, p: float) -> np.ndarray:
        """Dual-side coefficients ``b = c / ‖s‖^(q-2)``."""
        if norm == 0.0:
            return np.zeros_like(self.entries)
        q = p / (p - 1)
        return self.entries / norm ** (q - 2)


def offset_pattern(centers: np.ndarray, arity: int) -> np.ndarray:
    """``-x_{k1} + x_{k2} - ...`` for every multi-index, shape ``(N^arity, d)`` in C order."""
    n, d = centers.shape
    pattern = np.zeros((n,) * arity + (d,))
    for i in range(arity):
        shape = [1] * arity + [d]
        shape[i] = n
        pattern = pattern + (-1.0) ** (i + 1) * centers.reshape(shape)
    return pattern.reshape(-1, d)


@dataclass(frozen=True)
class GramTensor:
    """Values ``Ker(z_j, x_{k1}, ..., x_{k_{p-1}})`` indexed ``[j, k1, ..., k_{p-1}]``.

    ``z_j`` are the evaluation points (the centers unless stated otherwise).
    For ``p = 2`` this is the ordinary Gram matrix.
    """

    order: int
    values: np.ndarray

    @property
    def p(self) -> int:
        return self.order + 1


def _check_even(p) -> int:
    if int(p) != p or p < 2 or int(p) % 2:
        raise ValueError(f"closed-form evaluation needs an even integer p >= 2, got {p}")
    return int(p)


def _slab(kern: SpectralKernel, point: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    return kern(point[None, :] + pattern)


def build_gram(
    kernel: SpectralKernel,
    centers,
    p: int,
    points=None,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> GramTensor:
    """Tabulate the multipoint kernel over evaluation points and center multi-indices.

    Raises
    ------
    GramCapacityError
        If the tensor would hold more than ``cap`` entries.
    """
    p = _check_even(p)
    ctr = as_points(centers, kernel.dim)
    pts = ctr if points is None else as_points(points, kernel.dim)
    n, m = ctr.shape[0], pts.shape[0]
    entries = m * n ** (p - 1)
    if entries > cap:
        raise GramCapacityError(
            f"Gram tensor for N={n} centers and p={p} needs {entries} entries "
            f"(cap {cap}); raise the cap or use streaming evaluation"
        )
    spec = MultipointKernelSpec(kernel, p - 1)
    kern = spec.kernel
    pattern = offset_pattern(ctr, p - 1)
    if workers > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda z: _slab(kern, z, pattern), pts))
    else:
        rows = [_slab(kern, z, pattern) for z in pts]
    values = np.stack(rows).reshape((m,) + (n,) * (p - 1))
    return GramTensor(p - 1, values)


def contract(values: np.ndarray, c: np.ndarray, free: int | None = None) -> np.ndarray:
    """Contract the center slots of a Gram tensor with ``c, conj(c), c, ...``.

    Slot ``i`` (0-based) takes ``c`` when ``i`` is even and ``conj(c)``
    otherwise. If ``free`` is given that slot is left open, producing an
    ``(M, N)`` array; otherwise the result has shape ``(M,)``.
    """
    m = values.ndim - 1
    cc = np.conj(c)
    out = values
    for i in reversed(range(m)):
        if i == free:
            continue
        vec = c if i % 2 == 0 else cc
        out = np.tensordot(out, vec, axes=([i + 1], [0]))
    return out


def contract_batch(values: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """:func:`contract` for many coefficient vectors at once: ``(K, N) -> (K, M)``."""
    m = values.ndim - 1
    cs = np.asarray(cs, dtype=complex)
    last = cs if (m - 1) % 2 == 0 else np.conj(cs)
    out = np.tensordot(values, last.T, axes=([m], [0]))
    for i in reversed(range(m - 1)):
        vec = cs if i % 2 == 0 else np.conj(cs)
        out = np.einsum("...nk,kn->...k", out, vec)
    return out.T


@dataclass(frozen=True)
class RkbsModel:
    """A candidate or trained SVM solution ``s_c`` in ``B^p_Φ``."""

    exponent: int
    kernel: SpectralKernel
    centers: np.ndarray
    coefficients: CoefficientVector
    cap: int = DEFAULT_CAP
    streaming: bool = False
    workers: int = 1
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        p = _check_even(self.exponent)
        check_integrability(self.kernel, p)
        ctr = as_points(self.centers, self.kernel.dim)
        coef = self.coefficients
        if not isinstance(coef, CoefficientVector):
            coef = CoefficientVector(coef)
        if len(coef) != ctr.shape[0]:
            raise ValueError(f"{len(coef)} coefficients for {ctr.shape[0]} centers")
        object.__setattr__(self, "exponent", p)
        object.__setattr__(self, "centers", ctr)
        object.__setattr__(self, "coefficients", coef)

    @property
    def p(self) -> int:
        return self.exponent

    @property
    def q(self) -> float:
        return self.exponent / (self.exponent - 1)

    @property
    def c(self) -> np.ndarray:
        return self.coefficients.entries

    @property
    def real_mode(self) -> bool:
        return self.coefficients.real_mode

    @property
    def multipoint(self) -> MultipointKernelSpec:
        return MultipointKernelSpec(self.kernel, self.exponent - 1)

    @cached_property
    def pattern(self) -> np.ndarray:
        return offset_pattern(self.centers, self.exponent - 1)

    @cached_property
    def gram(self) -> GramTensor | None:
        """Cached Gram tensor over the centers; ``None`` in streaming mode."""
        n = self.centers.shape[0]
        if self.streaming and n**self.exponent > self.cap:
            return None
        return build_gram(self.kernel, self.centers, self.exponent, cap=self.cap, workers=self.workers)

    def with_coefficients(self, c, real_mode: bool | None = None) -> RkbsModel:
        """Same space and centers, new coefficients; the Gram cache is shared."""
        rm = self.real_mode if real_mode is None else real_mode
        new = RkbsModel(
            self.exponent, self.kernel, self.centers, CoefficientVector(c, rm),
            self.cap, self.streaming, self.workers, dict(self.metadata),
        )
        for name in ("gram", "pattern"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new

    def _slab_values(self, x: np.ndarray) -> np.ndarray:
        n = self.centers.shape[0]
        vals = _slab(self.multipoint.kernel, x, self.pattern)
        return vals.reshape((1,) + (n,) * (self.exponent - 1))

    def phi(self) -> np.ndarray:
        """``φ_j(c) = s_c(x_j)`` at every center."""
        gram = self.gram
        if gram is not None:
            return contract(gram.values, self.c)
        return self.evaluate(self.centers)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate ``s_c`` at one point (``(d,)``) or a batch (``(M, d)``)."""
        d = self.kernel.dim
        arr = np.asarray(x, dtype=float)
        # a scalar (d = 1) or a length-d vector (d > 1) is a single point
        single = arr.ndim == 0 or (arr.ndim == 1 and d > 1)
        pts = as_points(arr.reshape(1, -1) if single else arr, d)
        n = self.centers.shape[0]
        slab = n ** (self.exponent - 1)
        if slab > self.cap:
            raise GramCapacityError(
                f"one evaluation slab needs {slab} entries for N={n}, p={self.exponent} (cap {self.cap})"
            )
        out = np.empty(pts.shape[0], dtype=complex)
        c = self.c
        for j, z in enumerate(pts):
            out[j] = contract(self._slab_values(z), c)[0]
        return out[0] if single else out

    def norm_power(self) -> float:
        """``c* φ(c) = ‖s_c‖^q``, checked to be real and nonnegative."""
        phi = self.phi()
        val = np.vdot(self.c, phi)
        scale = float(np.sum(np.abs(self.c) * np.abs(phi)))
        if abs(val.imag) > 1e-10 * max(scale, np.finfo(float).tiny):
            raise InternalConsistencyError(f"c*φ(c) has imaginary part {val.imag:.3e} (scale {scale:.3e})")
        if val.real < -1e-10 * max(scale, 1.0):
            raise InternalConsistencyError(f"c*φ(c) = {val.real:.3e} is negative")
        return max(float(val.real), 0.0)

    def norm(self) -> float:
        """``‖s_c‖_{B^p_Φ} = (c* φ(c))^(1/q)``."""
        return self.norm_power() ** (1.0 / self.q)

    def dual_view(self) -> DualView:
        b = self.coefficients.dual(self.norm(), self.exponent)
        return DualView(b, self.centers, self.kernel)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "p": self.exponent,
            "theta": float(self.kernel.theta),
            "n": float(self.kernel.degree),
            "d": int(self.kernel.dim),
            "centers": self.centers.tolist(),
            "coefficients_re": self.c.real.tolist(),
            "coefficients_im": self.c.imag.tolist(),
            "real_mode": bool(self.real_mode),
            "norm": self.norm(),
        }
        doc.update(self.metadata)
        return doc

    @classmethod
    def from_dict(cls, doc: dict, **kwargs) -> RkbsModel:
        required = ("p", "theta", "n", "d", "centers", "coefficients_re", "coefficients_im", "real_mode")
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValueError(f"model document is missing fields {missing}")
        kernel = SpectralKernel(float(doc["theta"]), float(doc["n"]), int(doc["d"]))
        c = np.asarray(doc["coefficients_re"], dtype=float) + 1j * np.asarray(doc["coefficients_im"], dtype=float)
        meta = {k: v for k, v in doc.items() if k not in required and k != "norm"}
        centers = np.asarray(doc["centers"], dtype=float).reshape(-1, int(doc["d"]))
        return cls(int(doc["p"]), kernel, centers, CoefficientVector(c, bool(doc["real_mode"])), metadata=meta, **kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path, **kwargs) -> RkbsModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), **kwargs)


@dataclass(frozen=True)
class DualView:
    """Dual element ``s*(x) = Σ b_k Φ(x - x_k)``."""

    b: np.ndarray
    centers: np.ndarray
    kernel: SpectralKernel

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.kernel.dim)
        diff = pts[:, None, :] - self.centers[None, :, :]
        return self.kernel(diff) @ self.b


def phi_map(model: RkbsModel) -> np.ndarray:
    return model.phi()


def rkbs_norm(model: RkbsModel) -> float:
    return model.norm()


def evaluate(model: RkbsModel, x) -> np.ndarray:
    return model.evaluate(x)


def dual_view(model: RkbsModel) -> DualView:
    return model.dual_view()


def dual_norm_identity(model: RkbsModel) -> float:
    """``|⟨s, s*⟩ - ‖s‖²|`` using ``⟨s, s*⟩ = Σ conj(b_k) s(x_k)``."""
    b = model.dual_view().b
    pairing = np.vdot(b, model.phi())
    return float(abs(pairing - model.norm() ** 2))

