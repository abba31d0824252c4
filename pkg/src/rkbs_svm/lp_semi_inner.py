"""Semi-inner-products and duality maps on weighted sequence spaces.

A :class:`WeightedSequenceSpace` is a finite quadrature surrogate of
``L_p(R^d; μ)``: vectors hold function values at quadrature nodes and the
measure is represented by positive weights. Every operation works on
complex vectors; real input is embedded with zero imaginary part.

The zero vector is handled by continuity: ``[g, 0] = 0`` and ``0* = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rkbs_svm.kernels import SpectralKernel, spectral_density


@dataclass(frozen=True)
class WeightedSequenceSpace:
    """Weighted ``ℓ_p`` space ``{f : Σ w_i |f_i|^p < ∞}``."""

    weights: np.ndarray
    exponent: float
    nodes: np.ndarray | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("a weighted sequence space needs at least one node")
        if not np.all(w > 0):
            raise ValueError("all weights must be strictly positive")
        if not self.exponent > 1:
            raise ValueError(f"exponent must exceed 1, got {self.exponent}")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def conjugate_exponent(self) -> float:
        return self.exponent / (self.exponent - 1)

    def conjugate(self) -> WeightedSequenceSpace:
        """Same nodes and weights with the conjugate exponent ``q``."""
        return WeightedSequenceSpace(self.weights, self.conjugate_exponent, self.nodes)

    @classmethod
    def from_spectral_measure(cls, kernel: SpectralKernel, grid, exponent: float):
        """Discretize ``dμ = (2π)^(-d/2) dω / Φ̂(ω)`` on a 1-D quadrature grid."""
        nodes = grid.nodes()
        w = grid.weights() / spectral_density(kernel, nodes) / math.sqrt(2 * math.pi)
        return cls(w, exponent, nodes)


def _conform(space: WeightedSequenceSpace, f) -> np.ndarray:
    f = np.asarray(f, dtype=complex).reshape(-1)
    if f.size != space.size:
        raise ValueError(f"vector of length {f.size} does not match space of size {space.size}")
    return f


def signed_power(f: np.ndarray, r: float) -> np.ndarray:
    """Return ``f |f|^r`` with the ``f = 0`` entries set to 0 (valid for ``r > -1``)."""
    a = np.abs(f)
    out = np.zeros_like(f, dtype=complex)
    nz = a > 0
    out[nz] = f[nz] * a[nz] ** r
    return out


def lp_norm(space: WeightedSequenceSpace, f) -> float:
    """``(Σ w_i |f_i|^p)^(1/p)``."""
    f = _conform(space, f)
    p = space.exponent
    return float(np.sum(space.weights * np.abs(f) ** p) ** (1.0 / p))


def pairing(space: WeightedSequenceSpace, g, h) -> complex:
    """Antilinear dual pairing ``Σ w_i g_i conj(h_i)`` between ``L_p`` and ``L_q``."""
    g = _conform(space, g)
    h = _conform(space, h)
    return complex(np.sum(space.weights * g * np.conj(h)))


def semi_inner(space: WeightedSequenceSpace, g, f) -> complex:
    """Semi-inner-product ``[g, f] = ‖f‖^(2-p) Σ w_i g_i conj(f_i) |f_i|^(p-2)``.

    Linear in ``g``, conjugate-homogeneous in ``f``, and ``[f, f] = ‖f‖²``.
    """
    g = _conform(space, g)
    f = _conform(space, f)
    nf = lp_norm(space, f)
    if nf == 0.0:
        return 0j
    p = space.exponent
    return complex(nf ** (2 - p) * np.sum(space.weights * g * np.conj(signed_power(f, p - 2))))


def dual_element(space: WeightedSequenceSpace, f) -> np.ndarray:
    """Normalized duality map ``f* = f |f|^(p-2) / ‖f‖^(p-2)``, an element of ``L_q``.

    The result is norm-preserving, ``‖f*‖_q = ‖f‖_p``, and represents the
    semi-inner-product: ``[g, f] = pairing(g, f*)``.
    """
    f = _conform(space, f)
    nf = lp_norm(space, f)
    if nf == 0.0:
        return np.zeros_like(f)
    p = space.exponent
    return signed_power(f, p - 2) / nf ** (p - 2)


def is_orthogonal(space: WeightedSequenceSpace, f, g, tol: float = 1e-12) -> tuple[bool, float]:
    """Decide whether ``f`` is normal to ``g``, i.e. ``[g, f] = 0``.

    Returns the verdict together with the residual ``|[g, f]|``. The
    threshold is relative to ``‖f‖ ‖g‖``.
    """
    residual = abs(semi_inner(space, g, f))
    scale = lp_norm(space, f) * lp_norm(space, g)
    return residual <= tol * max(scale, 1.0), residual
