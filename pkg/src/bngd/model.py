"""OLS problem instances, the plain and batch-normalized losses, their
derivatives and the critical-point taxonomy.

A problem is given through its population moments ``H = E[x x^T]``,
``g = E[x y]`` and ``c = E[y^2]``; the minimizer is ``u = H^{-1} g``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .spectral import (
    ReducedSpectrum,
    SpectralError,
    SpectralSummary,
    SymMatrix,
    build_h_star,
    eigen_sym,
)

SADDLE_TOL = 1e-10


class DomainError(ValueError):
    """An argument outside the domain where a quantity is defined."""


@dataclass(frozen=True)
class SpectrumSpec:
    """How to lay out the eigenvalues of a diagonal ``H``.

    ``kind`` is one of ``logspace``, ``linspace`` (endpoints ``lo``/``hi``
    are eigenvalues, inclusive), ``spiked`` (``d-1`` ones and one ``hi``)
    or ``explicit`` (``values``).
    """

    kind: str
    d: int = 0
    lo: float = 1.0
    hi: float = 1.0
    values: Optional[tuple] = None

    @classmethod
    def logspace(cls, lo, hi, d):
        return cls("logspace", int(d), float(lo), float(hi))

    @classmethod
    def linspace(cls, lo, hi, d):
        return cls("linspace", int(d), float(lo), float(hi))

    @classmethod
    def spiked(cls, d, big):
        return cls("spiked", int(d), 1.0, float(big))

    @classmethod
    def explicit(cls, values):
        vals = tuple(float(v) for v in values)
        return cls("explicit", len(vals), values=vals)

    @classmethod
    def from_dict(cls, cfg: dict) -> "SpectrumSpec":
        kind = cfg["kind"]
        if kind == "explicit":
            return cls.explicit(cfg["values"])
        if kind == "spiked":
            return cls.spiked(cfg["d"], cfg["big"])
        if kind in ("logspace", "linspace"):
            return cls(kind, int(cfg["d"]), float(cfg["lo"]), float(cfg["hi"]))
        raise DomainError(f"unknown spectrum kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": "explicit", "values": list(self.values)}
        if self.kind == "spiked":
            return {"kind": "spiked", "d": self.d, "big": self.hi}
        return {"kind": self.kind, "d": self.d, "lo": self.lo, "hi": self.hi}

    def eigenvalues(self) -> np.ndarray:
        if self.kind == "explicit":
            lam = np.array(self.values, dtype=float)
        elif self.d < 1:
            raise DomainError("dimension must be positive")
        elif self.kind == "linspace":
            lam = np.linspace(self.lo, self.hi, self.d)
        elif self.kind == "logspace":
            if self.lo <= 0 or self.hi <= 0:
                raise DomainError("logspace endpoints must be positive")
            lam = np.logspace(np.log10(self.lo), np.log10(self.hi), self.d)
        elif self.kind == "spiked":
            lam = np.ones(self.d)
            lam[-1] = self.hi
        else:
            raise DomainError(f"unknown spectrum kind {self.kind!r}")
        if lam.size < 1 or np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise DomainError("eigenvalues must be finite and positive")
        return lam


def random_sphere(rng, d) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d."""
    while True:
        x = rng.standard_normal(d)
        nrm = np.linalg.norm(x)
        if nrm > 0:
            return x / nrm


def random_orthogonal(rng, d) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """The OLS triple (H, u, g = Hu, c) with cached spectral data.

    ``c`` defaults to ``u^T H u`` so that the minimum loss is exactly zero.
    ``w0_hint`` optionally carries a companion initial weight vector.
    """

    h: SymMatrix
    u: np.ndarray
    c: Optional[float] = None
    w0_hint: Optional[np.ndarray] = None
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        h = self.h if isinstance(self.h, SymMatrix) else SymMatrix(self.h, is_spd=True)
        if h.eigenvalues[0] <= 0:
            raise DomainError("H must be positive definite")
        u = np.array(self.u, dtype=float)
        if u.shape != (h.dim,):
            raise DomainError(f"u has shape {u.shape}, expected ({h.dim},)")
        u.setflags(write=False)
        g = h @ u
        g.setflags(write=False)
        uhu = float(u @ g)
        c = uhu if self.c is None else float(self.c)
        if c < uhu * (1 - 1e-12) - 1e-300:
            raise DomainError(f"c={c} is below u^T H u={uhu}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "c", c)
        if self.w0_hint is not None:
            w0 = np.array(self.w0_hint, dtype=float)
            w0.setflags(write=False)
            object.__setattr__(self, "w0_hint", w0)

    @property
    def dim(self) -> int:
        return self.h.dim

    @cached_property
    def uhu(self) -> float:
        """``u^T H u``, the squared H-norm of the minimizer."""
        return float(self.u @ self.g)

    @cached_property
    def spectrum(self) -> SpectralSummary:
        return SpectralSummary.of(self.h)

    @cached_property
    def reduced(self) -> ReducedSpectrum:
        return build_h_star(self.h, self.u)

    @cached_property
    def h_diag(self) -> Optional[np.ndarray]:
        """Diagonal of H when H is diagonal, else None (enables O(d) products)."""
        return np.diag(self.h.entries).copy() if self.h.is_diagonal else None

    def matvec(self, x):
        if self.h_diag is not None:
            return self.h_diag * x
        return self.h.entries @ x


def make_instance(
    spec: SpectrumSpec,
    u_mode: str = "random_sphere",
    seed=None,
    u: Optional[Sequence[float]] = None,
    c: Optional[float] = None,
    conjugate: bool = False,
    rng=None,
) -> ProblemInstance:
    """Build a problem instance with a diagonal (optionally rotated) H.

    Parameters
    ----------
    spec : SpectrumSpec
        Eigenvalue layout.
    u_mode : {"random_sphere", "given", "hu_normalized"}
        ``random_sphere`` draws u uniformly from the unit sphere; ``given``
        uses ``u``; ``hu_normalized`` draws u like ``random_sphere`` and sets
        the companion initial weight ``w0_hint = Hu / ||Hu||``.
    seed : int or sequence of int, optional
        Seed for the default substream when ``rng`` is not given.
    conjugate : bool
        Replace H by ``Q diag(lam) Q^T`` for a random orthogonal Q.
    """
    from .rng import substream

    lam = spec.eigenvalues()
    d = lam.size
    if rng is None:
        rng = substream(0 if seed is None else seed)
    if u_mode == "given":
        if u is None:
            raise DomainError("u_mode='given' needs u")
        u_vec = np.asarray(u, dtype=float)
        if u_vec.shape != (d,):
            raise DomainError(f"u has shape {u_vec.shape}, expected ({d},)")
    elif u_mode in ("random_sphere", "hu_normalized"):
        u_vec = random_sphere(rng, d)
    else:
        raise DomainError(f"unknown u_mode {u_mode!r}")
    if conjugate:
        q = random_orthogonal(rng, d)
        h = SymMatrix((q * lam) @ q.T, is_spd=True)
    else:
        h = SymMatrix.diag(lam)
    w0 = None
    if u_mode == "hu_normalized":
        hu = h @ u_vec
        w0 = hu / np.linalg.norm(hu)
    return ProblemInstance(h, u_vec, c=c, w0_hint=w0)


def _sigma(p: ProblemInstance, w, hw=None):
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DomainError("w = 0: the normalization sigma is undefined")
    if hw is None:
        hw = p.matvec(w)
    sigma = float(np.sqrt(w @ hw))
    if not np.isfinite(sigma) or sigma <= 0:
        raise DomainError(f"sigma is not a positive finite number ({sigma})")
    return sigma, hw


def loss_gd(p: ProblemInstance, w) -> float:
    """``J0(w) = c/2 - w^T g + w^T H w / 2``."""
    w = np.asarray(w, dtype=float)
    return float(0.5 * p.c - w @ p.g + 0.5 * (w @ p.matvec(w)))


def loss_bn(p: ProblemInstance, a: float, w) -> float:
    """``J(a, w) = c/2 - (w^T g / sigma) a + a^2 / 2`` with ``sigma = ||w||_H``."""
    sigma, _ = _sigma(p, w)
    return float(0.5 * p.c - (np.dot(w, p.g) / sigma) * a + 0.5 * a * a)


def loss_bn_residual(p: ProblemInstance, a: float, w) -> float:
    """The same loss written as ``||u - (a/sigma) w||_H^2 / 2 + (c - u^T H u)/2``.

    Free of the cancellation in ``loss_bn`` near the minimum.
    """
    sigma, _ = _sigma(p, w)
    r = p.u - (a / sigma) * np.asarray(w, dtype=float)
    return float(0.5 * (r @ p.matvec(r)) + 0.5 * (p.c - p.uhu))


def grad_bn(p: ProblemInstance, a: float, w):
    """Analytic gradient ``(dJ/da, dJ/dw)`` of the batch-normalized loss."""
    sigma, hw = _sigma(p, w)
    y = float(np.dot(w, p.g))
    da = a - y / sigma
    dw = -(a / sigma) * p.g + (a * y / sigma**3) * hw
    return da, dw


def hessian_bn(p: ProblemInstance, a: float, w) -> np.ndarray:
    """Assembled (d+1)x(d+1) Hessian in the variable order (a, w)."""
    w = np.asarray(w, dtype=float)
    sigma, hw = _sigma(p, w)
    g = p.g
    y = float(w @ g)
    a21 = -(g - (y / sigma**2) * hw) / sigma
    # expanded so that nothing divides by w^T g (zero at saddles)
    a22 = (a / sigma**3) * (
        y * p.h.entries
        + np.outer(hw, g)
        + np.outer(g, hw)
        - (3.0 * y / sigma**2) * np.outer(hw, hw)
    )
    d = p.dim
    out = np.empty((d + 1, d + 1))
    out[0, 0] = 1.0
    out[0, 1:] = a21
    out[1:, 0] = a21
    out[1:, 1:] = a22
    return 0.5 * (out + out.T)


def saddle_hessian_eigs(p: ProblemInstance, w_saddle) -> np.ndarray:
    """Closed-form Hessian spectrum at the saddle (0, w_saddle), ascending.

    ``{(1 - s)/2, 0, ..., 0, (1 + s)/2}`` with
    ``s = sqrt(1 + 4 ||g||^2 / (w^T H w))``.  The Hessian is (d+1)x(d+1)
    of rank 2, so d-1 of the returned values are zero.
    """
    w = np.asarray(w_saddle, dtype=float)
    sigma, _ = _sigma(p, w)
    y = float(w @ p.g)
    if abs(y) > SADDLE_TOL * max(1.0, np.linalg.norm(w) * np.linalg.norm(p.g)):
        raise DomainError(f"w^T g = {y:.3e} is not zero: not a saddle point")
    root = np.sqrt(1.0 + 4.0 * float(p.g @ p.g) / sigma**2)
    eigs = np.zeros(p.dim + 1)
    eigs[0] = 0.5 * (1.0 - root)
    eigs[-1] = 0.5 * (1.0 + root)
    return eigs


@dataclass(frozen=True)
class CriticalPointReport:
    kind: str
    a: float
    w: np.ndarray
    hessian_eigenvalues: np.ndarray
    minimizer_scale: Optional[float] = None


def minimizer(p: ProblemInstance, s: float):
    """The global minimizer ``(sign(s) sqrt(u^T H u), s u)``."""
    if s == 0:
        raise DomainError("s must be nonzero")
    return float(np.sign(s) * np.sqrt(p.uhu)), s * p.u


def classify_critical_point(p: ProblemInstance, a: float, w, tol=1e-8) -> CriticalPointReport:
    """Classify a stationary point as a saddle or a global minimizer.

    Raises
    ------
    DomainError
        If (a, w) is not stationary within ``tol`` (scale-invariant gradient).
    """
    w = np.asarray(w, dtype=float)
    da, dw = grad_bn(p, a, w)
    scale = np.sqrt(p.uhu)
    if abs(da) + np.linalg.norm(w) * np.linalg.norm(dw) > tol * max(scale, 1.0):
        raise DomainError("not a stationary point")
    lam = eigen_sym(hessian_bn(p, a, w))[0]
    if abs(a) <= tol * max(scale, 1.0):
        return CriticalPointReport("saddle", a, w, lam)
    s = float(w @ p.u) / float(p.u @ p.u)
    return CriticalPointReport("global_minimizer", a, w, lam, minimizer_scale=s)


__all__ = [
    "CriticalPointReport",
    "DomainError",
    "ProblemInstance",
    "SpectralError",
    "SpectrumSpec",
    "classify_critical_point",
    "grad_bn",
    "hessian_bn",
    "loss_bn",
    "loss_bn_residual",
    "loss_gd",
    "make_instance",
    "minimizer",
    "random_orthogonal",
    "random_sphere",
    "saddle_hessian_eigs",
]
