"""Experiment-level analytics for BNGD on OLS.

Scaling equivalence, the (eps_a, eps) four-color sweep, the limiting
effective learning rate as a function of eps, the ODE model of ``||w_k||^2``
and the insensitivity-interval magnitude Omega (Monte-Carlo estimate,
lower bounds and a measured plateau width).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize

from .dynamics import RunConfig, bngd_states, format_number, run_batch
from .model import DomainError, ProblemInstance, SpectrumSpec, make_instance, random_sphere
from .parallel import chunks, parallel_map
from .rng import substream
from .spectral import SpectralSummary, SymMatrix, _shift_radius, pseudo_spectral_radius

NEAR_OPT_FACTOR = 0.8
COLORS = ("near_opt_and_better", "near_opt_only", "better_only", "neither")


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalingTransform:
    """Parameters of the two equivalence transforms.

    ``conjugate`` maps (H, u, a0, w0) to
    ``(mu Q H Q^T, gamma/sqrt(mu) Q u, |gamma| a0, gamma Q w0)``;
    ``rescale_w`` maps (w0, eps, a0) to ``(r w0, r^2 eps, sign(r) a0)``.
    """

    mu: float = 1.0
    gamma: float = 1.0
    r: float = 1.0
    q: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if self.gamma == 0 or self.r == 0:
            raise DomainError("gamma and r must be nonzero")
        if self.q is not None:
            q = np.array(self.q, dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1]:
                raise DomainError("Q must be square")
            if np.linalg.norm(q.T @ q - np.eye(q.shape[0])) > 1e-10:
                raise DomainError("Q is not orthogonal")
            q.setflags(write=False)
            object.__setattr__(self, "q", q)

    def q_for(self, d: int) -> np.ndarray:
        if self.q is None:
            return np.eye(d)
        if self.q.shape != (d, d):
            raise DomainError(f"Q has shape {self.q.shape}, expected ({d}, {d})")
        return self.q


def verify_scaling(p: ProblemInstance, cfg: RunConfig, t: ScalingTransform,
                   variant: str = "conjugate", steps: int = 50) -> float:
    """Run a configuration and its transformed twin; return the worst
    relative deviation from the predicted correspondence over all steps.

    The ``a`` deviation is taken relative to ``max(|a_k|, ||u||_H)`` since
    ``a_k`` may pass through zero.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    cfg.validate(p, "bngd")
    a, w = bngd_states(p, cfg.a0, cfg.w0, cfg.eps, cfg.eps_a, steps)
    if variant == "conjugate":
        q = t.q_for(p.dim)
        h2 = SymMatrix(t.mu * (q @ p.h.entries @ q.T), is_spd=True)
        p2 = ProblemInstance(h2, (t.gamma / math.sqrt(t.mu)) * (q @ p.u))
        a2, w2 = bngd_states(p2, abs(t.gamma) * cfg.a0, t.gamma * (q @ cfg.w0),
                             cfg.eps, cfg.eps_a, steps)
        w_pred = t.gamma * (w @ q.T)
        a_pred, a_scale = abs(t.gamma) * a, abs(t.gamma)
    elif variant == "rescale_w":
        s = math.copysign(1.0, t.r)
        a2, w2 = bngd_states(p, s * cfg.a0, t.r * cfg.w0, t.r**2 * cfg.eps, cfg.eps_a, steps)
        w_pred = t.r * w
        a_pred, a_scale = s * a, 1.0
    else:
        raise DomainError(f"unknown variant {variant!r}")
    dev_w = np.linalg.norm(w2 - w_pred, axis=1) / np.linalg.norm(w_pred, axis=1)
    a_ref = a_scale * np.maximum(np.abs(a), math.sqrt(p.uhu))
    dev_a = np.abs(a2 - a_pred) / a_ref
    return float(max(dev_w.max(), dev_a.max()))


# ---------------------------------------------------------------- sweep

def classify_color(loss_bngd, loss_gd, eps_hat, eps_opt) -> str:
    """Four-color label of one cell; NaNs count as failing a predicate."""
    near = NEAR_OPT_FACTOR * eps_opt < eps_hat < eps_opt / NEAR_OPT_FACTOR
    better = loss_bngd <= loss_gd
    if near and better:
        return "near_opt_and_better"
    if near:
        return "near_opt_only"
    if better:
        return "better_only"
    return "neither"


@dataclass(frozen=True)
class CellResult:
    final_loss_bngd: float
    final_loss_gd_opt: float
    eps_hat_final: float
    color: str
    status: str = "ok"


@dataclass
class SweepGrid:
    """The (eps_a x eps) grid; arrays are indexed ``[i_eps, j_eps_a]``."""

    eps_a_values: np.ndarray
    eps_values: np.ndarray
    final_loss: np.ndarray
    eps_hat: np.ndarray
    baseline_loss: float
    eps_opt: float
    colors: np.ndarray
    status: np.ndarray
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.colors.shape

    def cell(self, i: int, j: int) -> CellResult:
        return CellResult(float(self.final_loss[i, j]), self.baseline_loss,
                          float(self.eps_hat[i, j]), str(self.colors[i, j]), str(self.status[i, j]))

    @property
    def cells(self):
        n, m = self.shape
        return [[self.cell(i, j) for j in range(m)] for i in range(n)]

    def recolor(self) -> np.ndarray:
        out = np.empty(self.shape, dtype=object)
        for idx in np.ndindex(self.shape):
            out[idx] = classify_color(self.final_loss[idx], self.baseline_loss,
                                      self.eps_hat[idx], self.eps_opt)
        return out

    def band_extent(self, color="near_opt_and_better") -> float:
        """Widest contiguous run of ``color`` along eps in any eps_a column,
        in decades of eps (a single cell counts as one grid spacing)."""
        if len(self.eps_values) > 1:
            step = float(np.mean(np.diff(np.log10(self.eps_values))))
        else:
            step = 0.0
        best = 0
        for j in range(self.shape[1]):
            run = 0
            for i in range(self.shape[0]):
                run = run + 1 if self.colors[i, j] == color else 0
                best = max(best, run)
        return best * step

    def components(self, color="near_opt_and_better") -> int:
        """Number of 4-connected components of cells with ``color``."""
        from scipy import ndimage

        _, n = ndimage.label(self.colors == color)
        return int(n)

    def header(self) -> dict:
        return {
            "k": self.k,
            "baseline_loss": self.baseline_loss,
            "eps_opt": self.eps_opt,
            "shape": list(self.shape),
            **self.meta,
        }

    def to_csv(self, fh) -> None:
        fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
        fh.write("eps_a,eps,final_loss,eps_hat,color,status\n")
        for i, eps in enumerate(self.eps_values):
            for j, eps_a in enumerate(self.eps_a_values):
                fh.write(",".join([
                    format_number(eps_a), format_number(eps),
                    format_number(self.final_loss[i, j]), format_number(self.eps_hat[i, j]),
                    str(self.colors[i, j]), str(self.status[i, j]),
                ]) + "\n")


def gd_final_loss(p: ProblemInstance, w0, eps: float, k: int) -> float:
    """Loss of plain GD after ``k`` steps, in residual form."""
    w = np.array(w0, dtype=float)
    with np.errstate(all="ignore"):
        for _ in range(k):
            w = w - eps * p.matvec(w) + eps * p.g
        r = p.u - w
        return float(0.5 * (r @ p.matvec(r)) + 0.5 * (p.c - p.uhu))


def _sweep_chunk(args):
    p, eps, eps_a, a0, w0, k = args
    res = run_batch(p, p.u, w0, eps, eps_a, a0, k, c_offset=0.5 * (p.c - p.uhu))
    return res.loss, res.eps_hat, res.diverged


def sweep(p: ProblemInstance, eps_a_grid, eps_grid, w0, a0: float = 0.0, k: int = 2000,
          workers: int = 1) -> SweepGrid:
    """One BNGD run per (eps, eps_a) cell from a shared (a0, w0), compared
    with GD at eps_opt for the same number of steps."""
    eps_a_grid = np.asarray(eps_a_grid, dtype=float)
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_a_grid.size == 0 or eps_grid.size == 0 or k < 1:
        raise DomainError("grids must be non-empty and k >= 1")
    w0 = np.asarray(w0, dtype=float)
    ee, aa = np.meshgrid(eps_grid, eps_a_grid, indexing="ij")
    flat_e, flat_a = ee.ravel(), aa.ravel()
    parts = chunks(flat_e.size, max(1, workers))
    results = parallel_map(_sweep_chunk, [(p, flat_e[s], flat_a[s], a0, w0, k) for s in parts], workers)
    loss = np.concatenate([r[0] for r in results]).reshape(ee.shape)
    eps_hat = np.concatenate([r[1] for r in results]).reshape(ee.shape)
    diverged = np.concatenate([r[2] for r in results]).reshape(ee.shape)
    s = p.spectrum
    baseline = gd_final_loss(p, w0, s.eps_opt, k)
    grid = SweepGrid(eps_a_grid, eps_grid, loss, eps_hat, baseline, s.eps_opt,
                     np.empty(ee.shape, dtype=object),
                     np.where(diverged, "diverged", "ok").astype(object), k)
    grid.colors = grid.recolor()
    return grid


# ---------------------------------------------------------------- eps_hat(eps)

def fit_loglog_slope(x, y, lo: float, hi: float) -> float:
    """Least-squares slope of log10(y) against log10(x) for x in [lo, hi]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (x >= lo * (1 - 1e-12)) & (x <= hi * (1 + 1e-12))
    if sel.sum() < 2:
        raise DomainError(f"fewer than two points in [{lo}, {hi}]")
    if np.any(~(y[sel] > 0)):
        raise DomainError("slope fit needs positive values")
    return float(np.polyfit(np.log10(x[sel]), np.log10(y[sel]), 1)[0])


@dataclass
class EpsHatCurve:
    eps: np.ndarray
    eps_hat: np.ndarray
    n_runs: int = 1
    n_excluded: int = 0

    def slope(self, lo: float, hi: float) -> float:
        return fit_loglog_slope(self.eps, self.eps_hat, lo, hi)


def geometric_mean_rows(values: np.ndarray):
    """Column-wise geometric mean over rows of positive finite entries.

    Returns the means and the number of entries that were excluded.
    """
    values = np.atleast_2d(values)
    ok = np.isfinite(values) & (values > 0)
    if values.shape[0] == 1:
        # skip the exp(log(.)) round trip
        return np.where(ok[0], values[0], np.nan), int((~ok).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(ok, np.log(np.where(ok, values, 1.0)), 0.0)
        mean = np.exp(logs.sum(axis=0) / ok.sum(axis=0))
    return mean, int((~ok).sum())


def eps_hat_curve(p: ProblemInstance, eps_values, cfg: RunConfig, k: int,
                  w0s=None) -> EpsHatCurve:
    """Final effective learning rate after ``k`` BNGD steps for each eps.

    ``cfg`` supplies eps_a, a0 and w0 (its eps is ignored).  With ``w0s``
    of shape (runs, d) the curve is the geometric mean over those inits.
    """
    eps_values = np.asarray(eps_values, dtype=float)
    if np.any(eps_values <= 0) or np.any(np.diff(eps_values) <= 0):
        raise DomainError("eps_values must be positive and ascending")
    w0s = np.atleast_2d(cfg.w0 if w0s is None else w0s)
    n_runs = w0s.shape[0]
    W = np.repeat(w0s, eps_values.size, axis=0)
    E = np.tile(eps_values, n_runs)
    res = run_batch(p, p.u, W, E, cfg.eps_a, cfg.a0, k)
    mean, bad = geometric_mean_rows(res.eps_hat.reshape(n_runs, eps_values.size))
    return EpsHatCurve(eps_values, mean, n_runs, bad)


class MeasuredOmega(NamedTuple):
    omega: float
    eps_low: float
    eps_high: float
    empty: bool


def _crossing(e0, h0, e1, h1, level):
    """log-linear interpolation of the eps where eps_hat crosses ``level``."""
    x0, x1 = math.log(e0), math.log(e1)
    y0, y1 = math.log(h0), math.log(h1)
    if y1 == y0:
        return math.sqrt(e0 * e1)
    f = (math.log(level) - y0) / (y1 - y0)
    return math.exp(x0 + min(max(f, 0.0), 1.0) * (x1 - x0))


def omega_measured(eps, eps_hat, s) -> MeasuredOmega:
    """Width ``eps_high / eps_low`` of the widest contiguous eps-interval in
    which eps_hat stays within ``[0.8 eps_opt, eps_opt / 0.8]``.

    ``s`` is a SpectralSummary or the value of eps_opt.  Interval ends are
    interpolated log-linearly between the last grid point inside and the
    first outside.  An empty band gives ``omega = 1`` with ``empty=True``.
    """
    eps_opt = s.eps_opt if isinstance(s, SpectralSummary) else float(s)
    eps = np.asarray(eps, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    lo, hi = NEAR_OPT_FACTOR * eps_opt, eps_opt / NEAR_OPT_FACTOR
    inside = (eps_hat >= lo) & (eps_hat <= hi)
    best = None
    i = 0
    n = eps.size
    while i < n:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and inside[j + 1]:
            j += 1
        left, right = eps[i], eps[j]
        if i > 0 and eps_hat[i - 1] > 0 and np.isfinite(eps_hat[i - 1]):
            level = lo if eps_hat[i - 1] < lo else hi
            left = _crossing(eps[i - 1], eps_hat[i - 1], eps[i], eps_hat[i], level)
        if j < n - 1 and eps_hat[j + 1] > 0 and np.isfinite(eps_hat[j + 1]):
            level = lo if eps_hat[j + 1] < lo else hi
            right = _crossing(eps[j], eps_hat[j], eps[j + 1], eps_hat[j + 1], level)
        if best is None or right / left > best[1] / best[0]:
            best = (left, right)
        i = j + 1
    if best is None:
        return MeasuredOmega(1.0, math.nan, math.nan, True)
    return MeasuredOmega(best[1] / best[0], best[0], best[1], False)


def contraction_factor(e_norms, floor: float = 1e-10, min_points: int = 10) -> float:
    """Late per-step contraction factor of a residual-norm sequence.

    The usable segment runs from step 0 to the last step with
    ``e >= floor * e_0`` (below that, roundoff dominates).  The factor is
    the geometric-mean ratio ``(e_j / e_i)^(1 / (j - i))`` over the second
    half of that segment.  NaN when the half holds fewer than
    ``min_points`` steps.
    """
    e = np.asarray(e_norms, dtype=float)
    if e.size == 0 or not (e[0] > 0 and np.isfinite(e[0])):
        return math.nan
    ok = np.isfinite(e) & (e >= floor * e[0])
    bad = np.nonzero(~ok)[0]
    end = int(bad[0]) - 1 if bad.size else e.size - 1
    i, j = (end + 1) // 2, end
    if j - i + 1 < min_points:
        return math.nan
    return float((e[j] / e[i]) ** (1.0 / (j - i)))


@dataclass(frozen=True)
class AccelerationResult:
    """Best-grid BNGD contraction on one instance, next to GD and H* rates."""

    kappa: float
    kappa_star: float
    rho_opt: float
    best_eps: float
    contraction: float
    eps_hat: float
    rho_star: float
    n_rejected: int = 0

    @property
    def beats_gd(self) -> bool:
        return bool(self.contraction < self.rho_opt)

    def within_bound(self, slack: float = 0.05) -> bool:
        return bool(self.contraction <= self.rho_star + slack)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(beats_gd=self.beats_gd, within_bound=self.within_bound())
        return out


def gap_instance(d: int, spike: float, seed, index: int, max_ratio: float = 0.1,
                 max_draws: int = 1000) -> tuple[ProblemInstance, int]:
    """Spiked instance whose reduced condition number is at most ``max_ratio * kappa``.

    ``u`` is redrawn from substream ``(seed, index, draw)`` until H* keeps
    the gap, i.e. until ``u`` carries enough H-weight along the spike for
    the rank-one reduction to remove it.  Returns the instance and the
    number of rejected draws.
    """
    spec = SpectrumSpec.spiked(d, spike)
    for draw in range(max_draws):
        p = make_instance(spec, u_mode="hu_normalized", rng=substream(seed, index, draw))
        if p.reduced.kappa_star <= max_ratio * p.spectrum.kappa:
            return p, draw
    raise DomainError(f"no instance with kappa* <= {max_ratio} kappa in {max_draws} draws")


def acceleration_trial(p: ProblemInstance, eps_grid, steps: int = 5000,
                       w0=None) -> AccelerationResult:
    """Run BNGD (eps_a = 1, a0 = 0) over ``eps_grid`` and keep the fastest late contraction.

    ``w0`` defaults to ``Hu / ||Hu||``.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    w0 = p.w0_hint if w0 is None else np.asarray(w0, dtype=float)
    res = run_batch(p, p.u, w0, eps_grid, 1.0, 0.0, steps, history=True)
    f = np.array([contraction_factor(res.e_h_history[:, b]) for b in range(eps_grid.size)])
    if np.all(np.isnan(f)):
        b, rho_star = 0, math.nan
    else:
        b = int(np.nanargmin(f))
        rho_star = pseudo_spectral_radius(p.reduced, float(res.eps_hat[b]))
    return AccelerationResult(
        kappa=p.spectrum.kappa, kappa_star=p.reduced.kappa_star, rho_opt=p.spectrum.rho_opt,
        best_eps=float(eps_grid[b]), contraction=float(f[b]), eps_hat=float(res.eps_hat[b]),
        rho_star=rho_star,
    )


# ---------------------------------------------------------------- beta0 / Omega

def beta0(p: ProblemInstance, a: float, w) -> float:
    """``(a^2 ||w||^2 / sigma^2) e^T H^2 e`` for the state (a, w)."""
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DomainError("w = 0: beta undefined")
    hw = p.matvec(w)
    s2 = float(w @ hw)
    he = p.g - (float(w @ p.g) / s2) * hw
    return float(a * a * (w @ w) / s2 * (he @ he))


def _beta0_batch(lam, W, U):
    """beta0 with ``a0 = w0^T g / sigma0`` for rows of unit W, U and diag(lam)."""
    G = U * lam
    HW = W * lam
    s2 = np.einsum("ij,ij->i", W, HW)
    t = np.einsum("ij,ij->i", W, G) / s2
    HE = G - t[:, None] * HW
    nw = np.einsum("ij,ij->i", W, W)
    return t * t * nw * np.einsum("ij,ij->i", HE, HE)


def generic_constant(eigenvalues) -> float:
    """The constant C of the generic lower bound ``Omega >= d / C``."""
    lam = np.asarray(eigenvalues, dtype=float)
    d = lam.size
    lmin, lmax = lam.min(), lam.max()
    kappa = lmax / lmin
    tr, tr2 = lam.sum(), float(lam @ lam)
    # ln(kappa)/(kappa - 1) -> 1 as kappa -> 1
    ratio = math.log1p(kappa - 1) / (kappa - 1) if kappa > 1 else 1.0
    return (4.0 * tr2 / (d * lmin**2) * tr / (d * lmax)
            * math.exp(2.0 * ratio * (1.0 - tr / (d * lmin))))


def arithmetic_bound(kappa: float, d: int) -> float:
    """``kappa^2 / (kappa + 1)^3 * d``, valid for equally spaced eigenvalues."""
    return kappa**2 / (kappa + 1) ** 3 * d


def is_arithmetic(eigenvalues, rtol=1e-9) -> bool:
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    if lam.size < 3:
        return True
    gaps = np.diff(lam)
    return bool(np.all(np.abs(gaps - gaps.mean()) <= rtol * lam[-1]))


@dataclass
class OmegaEstimate:
    beta0_samples: np.ndarray
    beta_bar: float
    omega: float
    eps_max: float
    lower_bound_generic: float
    lower_bound_arithmetic: Optional[float]
    n_resampled: int = 0
    omega_measured: Optional[float] = None

    @property
    def arithmetic_mean_beta(self) -> float:
        return float(np.mean(self.beta0_samples))

    def to_dict(self, include_samples=False) -> dict:
        out = {
            "beta_bar": self.beta_bar,
            "beta_arithmetic_mean": self.arithmetic_mean_beta,
            "omega": self.omega,
            "eps_max": self.eps_max,
            "lower_bound_generic": self.lower_bound_generic,
            "lower_bound_arithmetic": self.lower_bound_arithmetic,
            "n_samples": int(self.beta0_samples.size),
            "n_resampled": self.n_resampled,
            "omega_measured": self.omega_measured,
        }
        if include_samples:
            out["beta0_samples"] = self.beta0_samples.tolist()
        return out


def _draw_pair(seed, i, d, lam):
    rng = substream(seed, i)
    resampled = 0
    while True:
        w, u = random_sphere(rng, d), random_sphere(rng, d)
        b = _beta0_batch(lam, w[None], u[None])[0]
        if b > 0 and np.isfinite(b):
            return w, u, resampled
        resampled += 1


def beta_bar_mc(p, n_samples: int = 500, seed=0):
    """Geometric mean of beta0 over independent uniform (w0, u) on the sphere.

    Only the spectrum of ``p`` (a ProblemInstance, SymMatrix or eigenvalue
    vector) matters; the instance's own u is not used.  Sample ``i`` comes
    from substream ``(seed, i)``.  Zero samples are redrawn and counted.

    Returns
    -------
    beta_bar : float
    estimate : OmegaEstimate
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if isinstance(p, ProblemInstance):
        lam = p.spectrum.eigenvalues
    elif isinstance(p, SymMatrix):
        lam = p.eigenvalues
    else:
        lam = np.sort(np.asarray(p, dtype=float))
    d = lam.size
    W = np.empty((n_samples, d))
    U = np.empty((n_samples, d))
    resampled = 0
    for i in range(n_samples):
        W[i], U[i], r = _draw_pair(seed, i, d, lam)
        resampled += r
    # beta0 is invariant under a common rotation, so diag(lam) stands in for H
    samples = _beta0_batch(lam, W, U)
    beta_bar = float(np.exp(np.mean(np.log(samples))))
    eps_max = 2.0 / lam[-1]
    kappa = lam[-1] / lam[0]
    est = OmegaEstimate(
        beta0_samples=samples,
        beta_bar=beta_bar,
        omega=1.0 / (beta_bar * eps_max**2),
        eps_max=eps_max,
        lower_bound_generic=d / generic_constant(lam),
        lower_bound_arithmetic=arithmetic_bound(kappa, d) if is_arithmetic(lam) else None,
        n_resampled=resampled,
    )
    return beta_bar, est


# ---------------------------------------------------------------- ODE model

@dataclass(frozen=True)
class OdeApprox:
    xi0: float
    beta0: float
    rho: float
    xi_inf: float
    eps_hat_pred: float
    degenerate: bool = False


ODE_RHO_TOL = 1e-10
_LOGZ_MIN = math.log(1e-300)
_LOGZ_MAX = math.log1p(-1e-12)


def ode_predict(p, eps: float, xi0: float, beta0: float) -> OdeApprox:
    """Self-consistent limit of the ODE model for ``||w_k||^2``.

    ``xi_inf = sqrt(xi0^2 + eps^2 beta0 / |ln rho|)`` where rho is the
    spectral radius of ``I - (eps / xi_inf) H``.  ``xi0`` is ``||w_1||^2``.
    The fixed point is located by bisection in ``log(1 - rho)`` (which
    resolves rho arbitrarily close to 1); the largest root is kept.

    With ``beta0 = 0`` or no root in (0, 1) the result is the degenerate
    branch ``xi_inf = xi0`` flagged ``degenerate=True``.
    """
    if not eps > 0 or not xi0 > 0 or not beta0 >= 0:
        raise DomainError("need eps > 0, xi0 > 0, beta0 >= 0")
    s = p.spectrum if isinstance(p, ProblemInstance) else SpectralSummary(np.sort(np.asarray(p, float)))
    lmin, lmax = s.lambda_min, s.lambda_max

    def degenerate():
        rho = _shift_radius(lmin, lmax, eps / xi0)
        return OdeApprox(xi0, beta0, rho, xi0, eps / xi0, True)

    if beta0 == 0:
        return degenerate()

    def xi_inf(logz):
        ln_rho = math.log1p(-math.exp(logz))
        return math.hypot(xi0, eps * math.sqrt(beta0 / -ln_rho))

    def f(logz):
        z = math.exp(logz)
        h = eps / xi_inf(logz)
        if h * lmin <= 1 and abs(1 - h * lmax) <= 1 - h * lmin:
            # radius is 1 - h lmin; subtract without forming rho = 1 - z
            return h * lmin - z
        return (1 - z) - _shift_radius(lmin, lmax, h)

    # f > 0 for rho near 1 when a root exists; scan upward in 1 - rho
    grid = np.linspace(_LOGZ_MIN, _LOGZ_MAX, 2001)
    vals = [f(x) for x in grid]
    bracket = None
    for x0, x1, f0, f1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if f0 == 0:
            bracket = (x0, x0)
            break
        if f0 * f1 < 0:
            bracket = (x0, x1)
            break
    if bracket is None:
        return degenerate()
    if bracket[0] == bracket[1]:
        root = bracket[0]
    else:
        # tolerance on log(1 - rho) bounds the error in rho by 1e-10 * (1 - rho)
        root = optimize.bisect(f, *bracket, xtol=ODE_RHO_TOL, rtol=4 * np.finfo(float).eps)
    xi = xi_inf(root)
    return OdeApprox(xi0, beta0, -math.expm1(root), xi, eps / xi, False)


def large_eps_closed_form(eps: float, beta0: float, lambda_min: float) -> float:
    """Large-eps estimate ``(1/beta0) 2 lmin / (sqrt(1 + 4 eps^2 lmin^2) + 1)``."""
    return (2.0 * lambda_min / (math.sqrt(1.0 + 4.0 * eps**2 * lambda_min**2) + 1.0)) / beta0


# ---------------------------------------------------------------- dimension scan

@dataclass
class DimScanRow:
    d: int
    omega_measured: float
    omega_measured_empty: bool
    omega_predicted: float
    beta_bar: float
    lower_bound_generic: float
    lower_bound_arithmetic: Optional[float]
    curve: EpsHatCurve


def _dim_scan_chunk(args):
    lam, U, W, eps, k = args
    return run_batch(lam, U, W, eps, 1.0, 0.0, k).eps_hat


def dim_scan_point(d: int, eps_grid, n_runs: int, k: int, seed, lo=1.0, hi=1e4,
                   n_mc: int = 500, workers: int = 1, d_index: int = 0) -> DimScanRow:
    """Measured and predicted Omega for ``H = diag(linspace(lo, hi, d))``.

    Run ``r`` draws (u, w0) from substream ``(seed, d_index, r)``; BNGD uses
    eps_a = 1 and a0 = 0.  The eps_hat curve is the geometric mean over runs.
    """
    spec = SpectrumSpec.linspace(lo, hi, d)
    lam = spec.eigenvalues()
    eps_grid = np.asarray(eps_grid, dtype=float)
    U = np.empty((n_runs, d))
    W = np.empty((n_runs, d))
    for r in range(n_runs):
        rng = substream(seed, d_index, r)
        U[r] = random_sphere(rng, d)
        W[r] = random_sphere(rng, d)
    n_eps = eps_grid.size
    Ub = np.repeat(U, n_eps, axis=0)
    Wb = np.repeat(W, n_eps, axis=0)
    Eb = np.tile(eps_grid, n_runs)
    parts = chunks(Eb.size, max(1, workers))
    out = parallel_map(_dim_scan_chunk, [(lam, Ub[s], Wb[s], Eb[s], k) for s in parts], workers)
    eps_hat = np.concatenate(out).reshape(n_runs, n_eps)
    mean, bad = geometric_mean_rows(eps_hat)
    curve = EpsHatCurve(eps_grid, mean, n_runs, bad)
    summary = SpectralSummary(lam)
    meas = omega_measured(eps_grid, mean, summary)
    beta_bar, est = beta_bar_mc(lam, n_mc, seed=(int(seed), 1_000_003, d_index))
    return DimScanRow(d, meas.omega, meas.empty, est.omega, beta_bar,
                      est.lower_bound_generic, est.lower_bound_arithmetic, curve)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x) over all points."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


__all__ = [
    "COLORS",
    "CellResult",
    "DimScanRow",
    "EpsHatCurve",
    "MeasuredOmega",
    "OdeApprox",
    "OmegaEstimate",
    "ScalingTransform",
    "SweepGrid",
    "arithmetic_bound",
    "beta0",
    "beta_bar_mc",
    "classify_color",
    "contraction_factor",
    "AccelerationResult",
    "gap_instance",
    "acceleration_trial",
    "dim_scan_point",
    "eps_hat_curve",
    "fit_loglog_slope",
    "generic_constant",
    "gd_final_loss",
    "large_eps_closed_form",
    "loglog_slope",
    "ode_predict",
    "omega_measured",
    "sweep",
    "verify_scaling",
]
