"""Dense symmetric linear algebra.

Eigendecomposition (cyclic Jacobi, with a LAPACK route for cross-checking),
H-norms, spectral radii of shift matrices ``I - eps*H`` and the reduced
matrix ``H* = H - H u u^T H / (u^T H u)`` together with its spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
NULL_CUTOFF = 1e-9


class SpectralError(ArithmeticError):
    """Eigensolver failure or a spectral precondition that does not hold."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SymMatrix:
    """Real symmetric matrix stored dense.

    The input is symmetrized on construction, so ``entries[i, j] ==
    entries[j, i]`` holds exactly.  With ``is_spd=True`` positive
    definiteness is checked through the eigenvalues.
    """

    entries: np.ndarray
    is_spd: bool = False

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if self.is_spd:
            lam = self.eigenvalues
            if lam[0] <= 0.0:
                raise SpectralError(
                    f"matrix is not positive definite (lambda_min={lam[0]:.3e})"
                )

    @classmethod
    def diag(cls, values, is_spd=True) -> "SymMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)), is_spd=is_spd)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def is_diagonal(self) -> bool:
        a = self.entries
        return not np.any(a - np.diag(np.diag(a)))

    @cached_property
    def _eigh(self):
        if self.is_diagonal:
            d = np.diag(self.entries)
            order = np.argsort(d, kind="stable")
            vecs = np.eye(self.dim)[:, order]
            return d[order].copy(), vecs
        return eigen_sym(self.entries)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigh[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigh[1]

    def __matmul__(self, other):
        return self.entries @ other

    def __rmatmul__(self, other):
        return other @ self.entries

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def _as_array(m) -> np.ndarray:
    if isinstance(m, SymMatrix):
        return m.entries
    return np.asarray(m, dtype=float)


def _round_robin(n):
    """Disjoint index pairings covering every (p, q) once per n-1 rounds."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(m, rel_tol=JACOBI_REL_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, ordered as a round-robin
    tournament so that the n/2 rotations in a round touch disjoint rows and
    columns and can be applied together.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Symmetric input; only the symmetric part is used.
    rel_tol : float
        Stop when the off-diagonal Frobenius norm is below ``rel_tol * ||m||_F``.
    max_sweeps : int
        Sweep cap.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Ascending.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns, ``m @ V[:, i] = eigenvalues[i] * V[:, i]``.

    Raises
    ------
    SpectralError
        If the off-diagonal norm is still above threshold after ``max_sweeps``
        sweeps; the error carries the residual off-diagonal norm.
    """
    a = _as_array(m)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy(), np.ones((1, 1))
    if n % 2:
        # isolated zero row/col so every round is a perfect pairing
        a = np.pad(a, ((0, 1), (0, 1)))
    size = a.shape[0]
    v = np.eye(size)
    threshold = rel_tol * np.linalg.norm(a)
    rounds = _round_robin(size)

    off = _off_norm(a)
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise SpectralError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e})",
                residual=off,
            )
        for p, q in rounds:
            c, s = _rotation(a, p, q)
            # the round's rotations act on disjoint index pairs: one product
            rot = np.zeros((size, size))
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
        a = 0.5 * (a + a.T)
        sweeps += 1
        off = _off_norm(a)
    lam = np.diag(a)[:n].copy()
    vecs = v[:n, :n]
    order = np.argsort(lam, kind="stable")
    return lam[order], vecs[:, order].copy()


def _off_norm(a):
    return np.linalg.norm(a - np.diag(np.diag(a)))


def _rotation(a, p, q):
    """Cosine and sine annihilating ``a[p, q]`` for each pair (p, q)."""
    apq = a[p, q]
    active = apq != 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = (a[q, q] - a[p, p]) / (2.0 * apq)
        t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
        t = np.where(np.isfinite(theta * theta), t, 0.5 / theta)
    t = np.where(theta == 0.0, 1.0, t)
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


def eigen_sym(m, method="jacobi"):
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    ``method="jacobi"`` uses the in-house cyclic Jacobi solver;
    ``method="lapack"`` defers to ``numpy.linalg.eigh``.
    """
    a = _as_array(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if method == "jacobi":
        return jacobi_eigh(a)
    if method == "lapack":
        lam, vecs = np.linalg.eigh(0.5 * (a + a.T))
        return lam, vecs
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class SpectralSummary:
    """Spectrum of an SPD matrix with the GD step-size constants derived from it."""

    eigenvalues: np.ndarray

    @classmethod
    def of(cls, h) -> "SpectralSummary":
        if isinstance(h, SymMatrix):
            lam = h.eigenvalues
        else:
            lam = eigen_sym(h)[0]
        if lam[0] <= 0:
            raise SpectralError("spectral summary needs a positive definite matrix")
        return cls(np.asarray(lam, dtype=float))

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def kappa(self) -> float:
        return self.lambda_max / self.lambda_min

    @property
    def eps_max(self) -> float:
        return 2.0 / self.lambda_max

    @property
    def eps_opt(self) -> float:
        return 2.0 / (self.lambda_max + self.lambda_min)

    @property
    def rho_opt(self) -> float:
        k = self.kappa
        return (k - 1.0) / (k + 1.0)


def _shift_radius(lo, hi, eps):
    # max_i |1 - eps*lam_i| is attained at an extreme eigenvalue
    return max(abs(1.0 - eps * lo), abs(1.0 - eps * hi))


def spectral_radius_shift(s: SpectralSummary, eps: float) -> float:
    """Spectral radius of ``I - eps*H``: ``max_i |1 - eps*lambda_i|``."""
    return _shift_radius(s.lambda_min, s.lambda_max, eps)


@dataclass(frozen=True)
class ReducedSpectrum:
    """The reduced matrix H* and its spectrum.

    ``eigenvalues[0]`` is the null eigenvalue along ``u``; the remaining
    d-1 entries are the nonzero ones used for the pseudo-condition number
    and the pseudo-spectral radius.
    """

    h_star: SymMatrix
    eigenvalues: np.ndarray
    null_direction: np.ndarray

    @property
    def dim(self) -> int:
        return self.h_star.dim

    @property
    def lambda_star_min(self) -> float:
        if self.dim < 2:
            raise SpectralError("H* of a 1x1 matrix has no nonzero eigenvalue")
        return float(self.eigenvalues[1])

    @property
    def lambda_star_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def kappa_star(self) -> float:
        return self.lambda_star_max / self.lambda_star_min

    @property
    def eps_star_max(self) -> float:
        return 2.0 / self.lambda_star_max


def build_h_star(h, u, method="jacobi") -> ReducedSpectrum:
    """Form ``H* = H - H u u^T H / (u^T H u)`` and diagonalize it.

    Raises
    ------
    ValueError
        If ``u`` is zero.
    SpectralError
        If ``h`` is not positive definite, or more than one eigenvalue of H*
        falls below ``1e-9 * lambda_max(H)``.
    """
    if not isinstance(h, SymMatrix):
        h = SymMatrix(h, is_spd=True)
    elif h.eigenvalues[0] <= 0:
        raise SpectralError("H must be positive definite")
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ValueError("u must be nonzero")
    hu = h @ u
    h_star = SymMatrix(h.entries - np.outer(hu, hu) / (u @ hu))
    lam, _ = eigen_sym(h_star, method=method)
    cutoff = NULL_CUTOFF * h.eigenvalues[-1]
    n_null = int(np.sum(lam < cutoff))
    if n_null != 1 and h.dim > 1:
        raise SpectralError(
            f"expected exactly one null eigenvalue of H*, found {n_null} below {cutoff:.3e}"
        )
    lam = lam.copy()
    if h.dim == 1:
        lam[0] = 0.0
    lam.setflags(write=False)
    return ReducedSpectrum(h_star, lam, u / np.linalg.norm(u))


def pseudo_spectral_radius(r: ReducedSpectrum, eps: float) -> float:
    """``max_{i>=2} |1 - eps*lambda_i(H*)|`` over the nonzero eigenvalues."""
    if r.dim < 2:
        raise SpectralError("pseudo-spectral radius needs dim >= 2")
    return _shift_radius(r.lambda_star_min, r.lambda_star_max, eps)


def h_norm(h, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(x @ (h @ x), 0.0)))
