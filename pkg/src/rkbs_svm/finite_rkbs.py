"""Finite-dimensional two-sided RKBS built from a Hermitian positive definite matrix.

With ``A = V D V*`` the primal space carries ``‖f‖ = ‖D^(-1/q) V* f‖_q``,
the dual ``‖g‖' = ‖D^(-1/p) V* g‖_p`` and the pairing ``⟨f, g⟩ = g* A^(-1) f``.
The columns ``A e_k`` reproduce point values from both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from rkbs_svm.lp_semi_inner import signed_power

MAX_CONDITION = 1e8


def _qnorm(v: np.ndarray, r: float) -> float:
    return float(np.sum(np.abs(v) ** r) ** (1.0 / r))


def _normalized_dual(v: np.ndarray, r: float) -> np.ndarray:
    nv = _qnorm(v, r)
    if nv == 0.0:
        return np.zeros_like(v, dtype=complex)
    return signed_power(v, r - 2) / nv ** (r - 2)


@dataclass(frozen=True)
class FiniteRkbs:
    """Two-sided RKBS on ``{1, ..., n}`` with kernel ``K(j, k) = A_jk``."""

    matrix: np.ndarray
    exponent: float
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.matrix, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if not np.allclose(a, a.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ValueError("matrix must be Hermitian")
        if not self.exponent > 1:
            raise ValueError(f"exponent must exceed 1, got {self.exponent}")
        a = (a + a.conj().T) / 2
        d, v = linalg.eigh(a)
        if not np.all(d > 0):
            raise ValueError("matrix must be positive definite")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "eigvals", d)
        object.__setattr__(self, "eigvecs", v)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> float:
        return self.exponent

    @property
    def q(self) -> float:
        return self.exponent / (self.exponent - 1)

    @property
    def condition(self) -> float:
        return float(self.eigvals[-1] / self.eigvals[0])

    @property
    def reliable(self) -> bool:
        """False when ``cond(A)`` exceeds :data:`MAX_CONDITION`."""
        return self.condition <= MAX_CONDITION

    def reconstruction_error(self) -> float:
        v, d = self.eigvecs, self.eigvals
        rebuilt = (v * d) @ v.conj().T
        return float(np.linalg.norm(rebuilt - self.matrix) / np.linalg.norm(self.matrix))

    def _coords(self, f, power: float) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        return self.eigvals**power * (self.eigvecs.conj().T @ f)

    def b_norm(self, f) -> float:
        return _qnorm(self._coords(f, -1.0 / self.q), self.q)

    def dual_norm(self, g) -> float:
        return _qnorm(self._coords(g, -1.0 / self.p), self.p)

    def dual_pairing(self, f, g) -> complex:
        """``⟨f, g⟩ = g* A^(-1) f`` via a Hermitian solve."""
        z = linalg.solve(self.matrix, np.asarray(f, dtype=complex), assume_a="her")
        return complex(np.vdot(np.asarray(g, dtype=complex), z))

    def kernel_column(self, k: int) -> np.ndarray:
        """``K(·, k) = A e_k``, an element of the dual space."""
        return self.matrix[:, k].copy()

    def duality_map(self, f) -> np.ndarray:
        """Normalized-duality-mapping element ``f*`` in the dual space."""
        u = self._coords(f, -1.0 / self.q)
        return self.eigvecs @ (self.eigvals ** (1.0 / self.p) * _normalized_dual(u, self.q))

    def inverse_duality_map(self, g) -> np.ndarray:
        """Primal element whose dual element is ``g``."""
        w = self._coords(g, -1.0 / self.p)
        return self.eigvecs @ (self.eigvals ** (1.0 / self.q) * _normalized_dual(w, self.p))

    def reproduction_check(self, rng=None, trials: int = 100) -> float:
        """Largest two-sided reproduction residual over random ``f``, ``g`` and all indices."""
        rng = np.random.default_rng(rng)
        n = self.n
        worst = 0.0
        for _ in range(trials):
            f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for k in range(n):
                col = self.kernel_column(k)
                worst = max(worst, abs(self.dual_pairing(f, col) - f[k]))
                # conj(K(j, ·)) is the j-th column for Hermitian A
                left = np.conj(self.matrix[k, :])
                worst = max(worst, abs(self.dual_pairing(left, g) - np.conj(g[k])))
        return worst

    def min_norm_interpolate(self, indices, values) -> tuple[np.ndarray, np.ndarray]:
        """Minimal-norm ``s`` with ``s_j = y_j`` for ``j`` in ``indices``.

        Returns ``(s, c)`` where the dual element of ``s`` equals
        ``Σ_k c_k A e_k`` over the interpolation indices.

        The coordinates ``u = D^(-1/q) V* s`` minimize ``‖u‖_q`` under
        ``B u = y`` with ``B = (V D^(1/q))_J``. Optimality forces
        ``u = v |v|^(p-2)`` with ``v = B* a``; ``a`` minimizes the convex
        function ``‖B* a‖_p^p / p - Re(y* a)``.
        """
        idx = np.asarray(indices, dtype=int).reshape(-1)
        y = np.asarray(values, dtype=complex).reshape(-1)
        if idx.size == 0 or idx.size != y.size:
            raise ValueError("indices must be nonempty and match values")
        if np.unique(idx).size != idx.size:
            raise ValueError("interpolation indices must be distinct")
        n, p, q = self.n, self.p, self.q
        if idx.size == n:
            s = np.zeros(n, dtype=complex)
            s[idx] = y
        elif not np.any(y):
            s = np.zeros(n, dtype=complex)
        else:
            b = self.eigvecs[idx, :] * self.eigvals ** (1.0 / q)
            a = _solve_dual(b, y, p)
            u = signed_power(b.conj().T @ a, p - 2)
            s = self.eigvecs @ (self.eigvals ** (1.0 / q) * u)
        dual = self.duality_map(s)
        c = linalg.lstsq(self.matrix[:, idx], dual)[0]
        return s, c


def _solve_dual(b: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    m = b.shape[0]
    bh = b.conj().T

    def unpack(x):
        return x[:m] + 1j * x[m:]

    def fun(x):
        v = bh @ unpack(x)
        grad = b @ signed_power(v, p - 2) - y
        val = np.sum(np.abs(v) ** p) / p - np.real(np.vdot(y, unpack(x)))
        return val, np.concatenate([grad.real, grad.imag])

    # p = 2 solution as the starting point
    a0 = linalg.solve(b @ bh, y, assume_a="her")
    res = optimize.minimize(
        fun, np.concatenate([a0.real, a0.imag]), jac=True, method="BFGS",
        options={"gtol": 1e-13, "maxiter": 10_000},
    )
    x = res.x
    # Newton polish on the real form of B u(B* a) = y
    bre = np.block([[bh.real, -bh.imag], [bh.imag, bh.real]])
    for _ in range(50):
        v = bh @ unpack(x)
        r = b @ signed_power(v, p - 2) - y
        rr = np.concatenate([r.real, r.imag])
        if np.linalg.norm(rr) <= 1e-15 * max(1.0, np.linalg.norm(y)):
            break
        a_abs = np.abs(v)
        if np.any(a_abs == 0) and p < 2:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = a_abs ** (p - 2)
            s2 = np.where(a_abs > 0, (p - 2) * a_abs ** (p - 4), 0.0)
        vr, vi = v.real, v.imag
        n = v.size
        jac = np.zeros((2 * n, 2 * n))
        jac[:n, :n] = np.diag(s0 + s2 * vr * vr)
        jac[:n, n:] = np.diag(s2 * vr * vi)
        jac[n:, :n] = np.diag(s2 * vr * vi)
        jac[n:, n:] = np.diag(s0 + s2 * vi * vi)
        hess = bre.T @ jac @ bre
        try:
            step = np.linalg.solve(hess, rr)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        x = x - step
    return unpack(x)


def random_hermitian_pd(n: int, rng=None, cond: float = 100.0, complex_entries: bool = True):
    """Random Hermitian positive definite matrix with condition number ``cond``."""
    if cond > MAX_CONDITION:
        raise ValueError(f"condition number above {MAX_CONDITION:g} is flagged unreliable")
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((n, n))
    if complex_entries:
        z = z + 1j * rng.standard_normal((n, n))
    qm, _ = np.linalg.qr(z)
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    eig[0], eig[-1] = 1.0, cond if n > 1 else 1.0
    return (qm * eig) @ qm.conj().T
