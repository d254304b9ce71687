"""GD and BNGD iterations on an OLS instance.

``run`` drives one trajectory with per-step diagnostics, outcome
classification and (optionally) runtime checks of the per-step identities
and bounds the iteration is known to satisfy.  ``run_batch`` advances many
independent BNGD trajectories at once for sweeps and scans.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import DomainError, ProblemInstance
from .spectral import _shift_radius

OUTCOMES = ("converged_minimizer", "converged_saddle", "max_iters_reached", "diverged")
CSV_COLUMNS = ("k", "a", "w_norm_sq", "sigma", "y", "eps_hat", "e_h_norm", "q", "beta", "delta", "loss")
LOSS_WINDOW = 10
LOSS_STALL = 1e-16
FAULTS = (None, "flip_a_sign")


def monotone_rtol(p: ProblemInstance, pt: "_Point", eps: float) -> float:
    """Rounding bound on the relative drop of ||w||^2 over one BNGD step.

    He is orthogonal to w only in exact arithmetic; its computed value
    carries an error of about ``d * macheps * (||g|| + |t| ||Hw||)``,
    which the step ``eps * a / sigma`` turns into a cross term.  On top
    of that come the two length-d sums of squares.
    """
    d, u = p.dim, np.finfo(float).eps
    he_err = d * u * (float(np.linalg.norm(p.g)) + abs(pt.t) * float(np.linalg.norm(pt.hw)))
    step = abs(eps * pt.a / pt.sigma)
    return (d + 1) * u + 2.0 * step * he_err / math.sqrt(pt.w_norm_sq)


@dataclass(frozen=True)
class RunConfig:
    """Learning rates, initial point and stopping rules for one run.

    ``grad_tol=None`` resolves to ``1e-10 * (1 + ||g||)``.  ``q_tol`` is
    relative to ``u^T H u``.  Every step up to ``full_record`` is recorded,
    then every ``thin``-th, and always the final state.
    """

    eps: float
    w0: np.ndarray
    eps_a: float = 1.0
    a0: float = 0.0
    max_iters: int = 1000
    grad_tol: Optional[float] = None
    div_tol: float = 1e300
    q_tol: float = 1e-8
    thin: int = 10
    full_record: int = 1000
    verify: bool = False
    fault: Optional[str] = None

    def __post_init__(self):
        w0 = np.array(self.w0, dtype=float)
        w0.setflags(write=False)
        object.__setattr__(self, "w0", w0)

    def validate(self, p: ProblemInstance, mode: str = "bngd"):
        if mode not in ("gd", "bngd"):
            raise DomainError(f"unknown mode {mode!r}")
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.w0.shape != (p.dim,):
            raise DomainError(f"w0 has shape {self.w0.shape}, expected ({p.dim},)")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise DomainError("grad_tol must be positive")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.fault not in FAULTS:
            raise DomainError(f"unknown fault {self.fault!r}")
        if mode == "bngd":
            if not np.any(self.w0):
                raise DomainError("w0 must be nonzero for BNGD")
            if not (0 < self.eps_a < 2):
                raise DomainError(f"eps_a must lie in (0, 2), got {self.eps_a}")
            if not np.isfinite(self.a0):
                raise DomainError("a0 must be finite")

    def resolved_grad_tol(self, p: ProblemInstance) -> float:
        if self.grad_tol is not None:
            return self.grad_tol
        return 1e-10 * (1.0 + float(np.linalg.norm(p.g)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["w0"] = self.w0.tolist()
        return d


@dataclass(frozen=True)
class StepDiagnostics:
    k: int
    a: float
    w_norm_sq: float
    sigma: float
    y: float
    eps_hat: float
    e_h_norm: float
    q: float
    beta: float
    delta: float
    loss: float
    grad_a_norm: float
    grad_w_norm: float

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class CheckTally:
    """Pass/fail count and worst residual of one runtime check."""

    name: str
    checks: int = 0
    violations: int = 0
    worst: float = 0.0
    first_violation: Optional[int] = None

    def add(self, k, residual, tol):
        self.checks += 1
        if residual > self.worst or math.isnan(residual):
            self.worst = residual
        if not residual <= tol:
            self.violations += 1
            if self.first_violation is None:
                self.first_violation = k

    def merge(self, other: "CheckTally"):
        self.checks += other.checks
        self.violations += other.violations
        if other.worst > self.worst or math.isnan(other.worst):
            self.worst = other.worst
        if self.first_violation is None:
            self.first_violation = other.first_violation

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self):
        return {
            "checks": self.checks,
            "violations": self.violations,
            "worst": self.worst,
            "passed": self.passed,
        }


@dataclass
class Trajectory:
    config: RunConfig
    instance: ProblemInstance
    mode: str
    steps: list
    outcome: str
    final_state: tuple
    n_iters: int
    final_grad_norm: float
    checks: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def final(self) -> StepDiagnostics:
        return self.steps[-1]

    @property
    def eps_hat_limit(self) -> float:
        """Last recorded effective learning rate."""
        return self.steps[-1].eps_hat

    @property
    def checks_passed(self) -> bool:
        return all(t.passed for t in self.checks.values())

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in self.steps:
            writer.writerow([format_number(v) for v in s.row()])
        return buf.getvalue() if fh is None else ""

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config.to_dict(),
            "outcome": self.outcome,
            "n_iters": self.n_iters,
            "final_grad_norm": self.final_grad_norm,
            "eps_hat_limit": self.eps_hat_limit,
            "final": asdict(self.final),
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "flags": list(self.flags),
        }


def format_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def gd_step(p: ProblemInstance, w, eps: float) -> np.ndarray:
    """``w' = (I - eps H) w + eps g``."""
    w = np.asarray(w, dtype=float)
    return w - eps * p.matvec(w) + eps * p.g


class _Point:
    """Quantities derived from a BNGD state (a, w); one product with H."""

    __slots__ = ("a", "w", "hw", "sigma", "y", "t", "e", "he", "q", "w_norm_sq", "finite")

    def __init__(self, p: ProblemInstance, a, w):
        self.a = float(a)
        self.w = w
        with np.errstate(all="ignore"):
            self.hw = p.matvec(w)
            self.w_norm_sq = float(w @ w)
            s2 = float(w @ self.hw)
            self.sigma = math.sqrt(s2) if s2 > 0 else (0.0 if s2 == 0 else math.nan)
            self.y = float(w @ p.g)
            self.t = self.y / s2 if s2 > 0 else math.nan
            self.e = p.u - self.t * w
            self.he = p.g - self.t * self.hw
            self.q = float(self.e @ self.he)
        self.finite = (
            math.isfinite(self.a)
            and math.isfinite(self.sigma)
            and self.sigma > 0
            and math.isfinite(self.q)
            and math.isfinite(self.w_norm_sq)
        )


def _diagnostics(p, pt: _Point, k, eps) -> StepDiagnostics:
    a, sigma, y = pt.a, pt.sigma, pt.y
    eps_hat = eps * (a / sigma) * (y / sigma**2)
    e_h = math.sqrt(max(pt.q, 0.0))
    he_sq = float(pt.he @ pt.he)
    beta = (a * a * pt.w_norm_sq / sigma**2) * he_sq
    delta = p.spectrum.lambda_max * eps * abs(a) * e_h / sigma**2
    r = p.u - (a / sigma) * pt.w
    loss = 0.5 * float(r @ p.matvec(r)) + 0.5 * (p.c - p.uhu)
    grad_a = abs(a - y / sigma)
    # dJ/dw = -(a/sigma) H e
    grad_w = abs(a) / sigma * math.sqrt(he_sq)
    return StepDiagnostics(k, a, pt.w_norm_sq, sigma, y, eps_hat, e_h, pt.q, beta, delta, loss, grad_a, grad_w)


def effective_lr(p: ProblemInstance, a: float, w, eps: float) -> float:
    """``eps * (a / sigma) * (w^T g / sigma^2)``."""
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DomainError("w = 0: effective learning rate undefined")
    s2 = float(w @ p.matvec(w))
    sigma = math.sqrt(s2)
    return eps * (a / sigma) * (float(w @ p.g) / s2)


def residual_e(p: ProblemInstance, w):
    """Modified residual ``e = u - (w^T g / sigma^2) w`` and ``q = ||e||_H^2``."""
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DomainError("w = 0: residual undefined")
    pt = _Point(p, 0.0, w)
    return pt.e, pt.q


def _bngd_update(p, pt: _Point, eps, eps_a, fault=None):
    a_w = -pt.a if fault == "flip_a_sign" else pt.a
    with np.errstate(all="ignore"):
        w_new = pt.w + (eps * a_w / pt.sigma) * pt.he
        a_new = pt.a + eps_a * (pt.y / pt.sigma - pt.a)
    return a_new, w_new


def bngd_step(p: ProblemInstance, a: float, w, cfg: RunConfig):
    """One simultaneous BNGD update; diagnostics describe the pre-step state.

    Raises
    ------
    DomainError
        If ``w`` is zero or sigma is not finite.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DomainError("w = 0: BNGD step undefined")
    pt = _Point(p, a, w)
    if not pt.finite:
        raise DomainError("state is not finite")
    a_new, w_new = _bngd_update(p, pt, cfg.eps, cfg.eps_a, cfg.fault)
    return a_new, w_new, _diagnostics(p, pt, 0, cfg.eps)


def bngd_states(p: ProblemInstance, a0: float, w0, eps: float, eps_a: float, steps: int):
    """Raw iterates ``a_0..a_steps`` and ``w_0..w_steps`` with no stopping rule."""
    w = np.array(w0, dtype=float)
    a_hist = np.empty(steps + 1)
    w_hist = np.empty((steps + 1, w.size))
    a = float(a0)
    a_hist[0], w_hist[0] = a, w
    for k in range(1, steps + 1):
        pt = _Point(p, a, w)
        if not pt.finite:
            raise DomainError(f"non-finite state at step {k - 1}")
        a, w = _bngd_update(p, pt, eps, eps_a)
        a_hist[k], w_hist[k] = a, w
    return a_hist, w_hist


def _recorded(k, cfg: RunConfig) -> bool:
    return k <= cfg.full_record or k % cfg.thin == 0


def run(p: ProblemInstance, cfg: RunConfig, mode: str = "bngd") -> Trajectory:
    """Iterate GD or BNGD until convergence, divergence or ``max_iters``.

    Convergence: the scale-invariant gradient norm
    ``sqrt(dJ/da^2 + ||w||^2 ||dJ/dw||^2)`` is at most ``grad_tol`` and the
    loss spread is at most 1e-16 over the trailing run of such steps (capped
    at the last 11), so an exact hit stops at once.  The limit is a
    minimizer when ``q <= q_tol * u^T H u`` and a saddle otherwise.
    """
    cfg.validate(p, mode)
    if mode == "gd":
        return _run_gd(p, cfg)
    return _run_bngd(p, cfg)


def _run_bngd(p: ProblemInstance, cfg: RunConfig) -> Trajectory:
    eps, eps_a = cfg.eps, cfg.eps_a
    grad_tol = cfg.resolved_grad_tol(p)
    u_h = math.sqrt(p.uhu)
    flags = []
    if eps_a > 1:
        flags.append("eps_a_outside_proven_regime")
    checks = {}
    if cfg.verify:
        for name in ("residual_recurrence", "contraction_bound", "reduced_contraction_bound", "norm_growth",
                     "loss_identity", "monotone_norm", "a_bounded", "no_divergence"):
            checks[name] = CheckTally(name)
        lam_min, lam_max = p.spectrum.lambda_min, p.spectrum.lambda_max
        reduced = p.reduced if p.dim >= 2 else None
        a_bound = abs(cfg.a0) + 2.0 * u_h / (1.0 - abs(1.0 - eps_a))
        abs_slack = 1e-12 * max(1.0, u_h)

    steps = []
    losses = deque(maxlen=LOSS_WINDOW + 1)
    a, w = float(cfg.a0), cfg.w0.copy()
    pt = _Point(p, a, w)
    if not pt.finite:
        raise DomainError("initial state is not finite")
    outcome = "max_iters_reached"
    k = 0
    grad_norm = math.nan
    prev = None  # (point, diagnostics, w_next) of step k-1
    while True:
        if not pt.finite or pt.w_norm_sq > cfg.div_tol:
            outcome = "diverged"
            if cfg.verify and eps_a <= 1:
                checks["no_divergence"].add(k, 1.0, 0.0)
            break
        diag = _diagnostics(p, pt, k, eps)
        if cfg.verify:
            checks["no_divergence"].add(k, 0.0, 0.0)
            r_loss = abs(2 * (diag.loss - 0.5 * (p.c - p.uhu)) - (pt.q + (pt.a - pt.y / pt.sigma) ** 2))
            checks["loss_identity"].add(k, r_loss / max(2 * diag.loss, p.uhu), 1e-10)
            checks["a_bounded"].add(k, abs(pt.a) - a_bound * (1 + 1e-12), 0.0)
            if prev is not None:
                _check_pair(p, prev, pt, diag, eps, checks, u_h, abs_slack, lam_min, lam_max, reduced)
        grad_norm = math.sqrt(diag.grad_a_norm**2 + pt.w_norm_sq * diag.grad_w_norm**2)
        # the stall window only spans steps that already meet the gradient test
        if grad_norm > grad_tol:
            losses.clear()
        else:
            losses.append(diag.loss)
        converged = bool(losses) and (max(losses) - min(losses)) <= LOSS_STALL
        last = converged or k >= cfg.max_iters
        if last or _recorded(k, cfg):
            steps.append(diag)
        if converged:
            outcome = "converged_minimizer" if pt.q <= cfg.q_tol * p.uhu else "converged_saddle"
            break
        if k >= cfg.max_iters:
            break
        a_new, w_new = _bngd_update(p, pt, eps, eps_a, cfg.fault)
        prev = (pt, diag, w_new)
        pt = _Point(p, a_new, w_new)
        k += 1
    if outcome == "diverged":
        if eps_a <= 1:
            flags.append("divergence_in_stable_regime")
        if not steps or steps[-1].k != k - 1 and prev is not None:
            steps.append(prev[1])
    return Trajectory(cfg, p, "bngd", steps, outcome, (pt.a, pt.w), k, grad_norm,
                      checks, flags)


def _check_pair(p, prev, pt, diag_next, eps, checks, u_h, abs_slack, lam_min, lam_max, reduced):
    old, d_old, w_next = prev
    eps_hat = d_old.eps_hat
    # exact recurrence, both sides computed independently
    lhs = p.u - old.t * w_next
    rhs = old.e - eps_hat * old.he
    diff = lhs - rhs
    r_rec = math.sqrt(max(float(diff @ p.matvec(diff)), 0.0)) / u_h
    checks["residual_recurrence"].add(d_old.k, r_rec, 1e-10)

    e_old, e_new = d_old.e_h_norm, diag_next.e_h_norm
    rho = _shift_radius(lam_min, lam_max, eps_hat)
    checks["contraction_bound"].add(d_old.k, e_new - rho * e_old, abs_slack)

    delta = d_old.delta
    if reduced is not None and delta < 1:
        rho_star = _shift_radius(reduced.lambda_star_min, reduced.lambda_star_max, eps_hat)
        checks["reduced_contraction_bound"].add(d_old.k, (1 - delta) * e_new - (rho_star + delta) * e_old, abs_slack)

    he_sq = float(old.he @ old.he)
    predicted = old.w_norm_sq + eps**2 * (old.a / old.sigma) ** 2 * he_sq
    checks["norm_growth"].add(d_old.k, abs(pt.w_norm_sq - predicted) / pt.w_norm_sq, 1e-10)
    checks["monotone_norm"].add(d_old.k, (old.w_norm_sq - pt.w_norm_sq) / old.w_norm_sq,
                                monotone_rtol(p, old, eps))


def _run_gd(p: ProblemInstance, cfg: RunConfig) -> Trajectory:
    eps = cfg.eps
    grad_tol = cfg.resolved_grad_tol(p)
    checks = {}
    rho = math.nan
    if cfg.verify:
        checks["gd_contraction"] = CheckTally("gd_contraction")
        rho = _shift_radius(p.spectrum.lambda_min, p.spectrum.lambda_max, eps)
    contractive = eps < p.spectrum.eps_max
    steps = []
    losses = deque(maxlen=LOSS_WINDOW + 1)
    w = cfg.w0.copy()
    outcome = "max_iters_reached"
    k = 0
    grad_norm = math.nan
    prev_err = None
    while True:
        with np.errstate(all="ignore"):
            hw = p.matvec(w)
            r = p.u - w
            hr = p.g - hw
            q = float(r @ hr)
            w_norm_sq = float(w @ w)
        if not (math.isfinite(q) and math.isfinite(w_norm_sq)) or w_norm_sq > cfg.div_tol:
            outcome = "diverged"
            break
        err = float(np.linalg.norm(r))
        if cfg.verify and contractive and prev_err is not None:
            checks["gd_contraction"].add(k - 1, err - rho * prev_err, 1e-12 * max(1.0, math.sqrt(p.uhu)))
        prev_err = err
        sigma = math.sqrt(max(float(w @ hw), 0.0))
        loss = 0.5 * q + 0.5 * (p.c - p.uhu)
        grad_norm = float(np.linalg.norm(hr))
        diag = StepDiagnostics(k, math.nan, w_norm_sq, sigma, float(w @ p.g), eps,
                               math.sqrt(max(q, 0.0)), q, math.nan, math.nan, loss,
                               math.nan, grad_norm)
        if grad_norm > grad_tol:
            losses.clear()
        else:
            losses.append(loss)
        converged = bool(losses) and (max(losses) - min(losses)) <= LOSS_STALL
        last = converged or k >= cfg.max_iters
        if last or _recorded(k, cfg):
            steps.append(diag)
        if converged:
            outcome = "converged_minimizer"
            break
        if k >= cfg.max_iters:
            break
        with np.errstate(all="ignore"):
            w = w - eps * hw + eps * p.g
        k += 1
    if not steps:
        # diverged before the first record: keep the initial state row
        steps.append(StepDiagnostics(0, math.nan, float(cfg.w0 @ cfg.w0), math.nan, math.nan, eps,
                                     math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan))
    return Trajectory(cfg, p, "gd", steps, outcome, (math.nan, w), k, grad_norm, checks, [])


@dataclass
class BatchResult:
    """Final states of a batch of BNGD runs (one row per run)."""

    a: np.ndarray
    w: np.ndarray
    eps_hat: np.ndarray
    loss: np.ndarray
    e_h_norm: np.ndarray
    diverged: np.ndarray
    e_h_history: Optional[np.ndarray] = None


def run_batch(h, u, w0, eps, eps_a=1.0, a0=0.0, steps=1000, c_offset=0.0,
              history: bool = False) -> BatchResult:
    """Advance B independent BNGD runs sharing H for a fixed number of steps.

    Parameters
    ----------
    h : ProblemInstance or SymMatrix or ndarray
        Shared H; a 1-D array is read as the diagonal of H (diagonal
        matrices are handled elementwise either way).
    u, w0 : ndarray, shape (d,) or (B, d)
        Minimizers and initial weights, broadcast against each other.
    eps, eps_a, a0 : float or ndarray, shape (B,)
    steps : int
        Number of updates; no early stopping.
    c_offset : float
        ``(c - u^T H u) / 2`` added to the reported loss.
    history : bool
        Also return ``||e_k||_H`` for k = 0..steps, shape (steps + 1, B).

    Returns
    -------
    BatchResult
        Final a, w, effective learning rate, loss and ``||e||_H``.
    """
    if isinstance(h, ProblemInstance):
        hmat = h.h.entries
        hdiag = h.h_diag
    elif np.ndim(h) == 1:
        hmat, hdiag = None, np.asarray(h, dtype=float)
    else:
        hmat = np.asarray(h, dtype=float)
        hdiag = np.diag(hmat).copy() if not np.any(hmat - np.diag(np.diag(hmat))) else None

    def mv(x):
        return x * hdiag if hdiag is not None else x @ hmat

    u = np.atleast_2d(np.asarray(u, dtype=float))
    w = np.atleast_2d(np.asarray(w0, dtype=float))
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    B = max(u.shape[0], w.shape[0], eps.shape[0],
            np.size(eps_a), np.size(a0))
    u = np.broadcast_to(u, (B, u.shape[1]))
    w = np.array(np.broadcast_to(w, (B, w.shape[1])))
    eps = np.broadcast_to(eps, (B,))
    eps_a = np.broadcast_to(np.asarray(eps_a, dtype=float), (B,))
    a = np.array(np.broadcast_to(np.asarray(a0, dtype=float), (B,)))
    g = mv(u)
    hist = np.empty((steps + 1, B)) if history else None
    with np.errstate(all="ignore"):
        for k in range(steps):
            hw = mv(w)
            s2 = np.einsum("ij,ij->i", w, hw)
            sigma = np.sqrt(s2)
            y = np.einsum("ij,ij->i", w, g)
            t = y / s2
            he = g - t[:, None] * hw
            if history:
                hist[k] = np.einsum("ij,ij->i", u - t[:, None] * w, he)
            w = w + (eps * a / sigma)[:, None] * he
            a = a + eps_a * (y / sigma - a)
        hw = mv(w)
        s2 = np.einsum("ij,ij->i", w, hw)
        sigma = np.sqrt(s2)
        y = np.einsum("ij,ij->i", w, g)
        eps_hat = eps * (a / sigma) * (y / s2)
        e = u - (y / s2)[:, None] * w
        q = np.einsum("ij,ij->i", e, mv(e))
        r = u - (a / sigma)[:, None] * w
        loss = 0.5 * np.einsum("ij,ij->i", r, mv(r)) + c_offset
        nrm = np.einsum("ij,ij->i", w, w)
    diverged = ~(np.isfinite(loss) & np.isfinite(eps_hat) & (nrm <= 1e300))
    if history:
        hist[steps] = q
        hist = np.sqrt(np.maximum(hist, 0.0))
    return BatchResult(a, w, eps_hat, loss, np.sqrt(np.maximum(q, 0.0)), diverged, hist)


__all__ = [
    "BatchResult",
    "CheckTally",
    "OUTCOMES",
    "RunConfig",
    "StepDiagnostics",
    "Trajectory",
    "bngd_states",
    "bngd_step",
    "effective_lr",
    "gd_step",
    "residual_e",
    "run",
    "run_batch",
]
