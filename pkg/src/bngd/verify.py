"""Invariant suite: seeded property checks across the whole package.

Every check takes a master seed and size parameters and returns a
``CheckResult``.  ``run_suite`` runs a selection of them and assembles the
JSON-ready report used by the ``verify`` subcommand.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .analysis import (
    ScalingTransform,
    beta_bar_mc,
    classify_color,
    generic_constant,
    sweep,
    verify_scaling,
)
from .dynamics import CheckTally, RunConfig, run
from .model import (
    ProblemInstance,
    SpectrumSpec,
    grad_bn,
    hessian_bn,
    loss_bn,
    loss_bn_residual,
    make_instance,
    minimizer,
    random_orthogonal,
    random_sphere,
    saddle_hessian_eigs,
)
from .rng import substream
from .spectral import (
    SymMatrix,
    build_h_star,
    eigen_sym,
    pseudo_spectral_radius,
    spectral_radius_shift,
    SpectralSummary,
)

TRAJECTORY_CHECKS = ("residual_recurrence", "contraction_bound", "reduced_contraction_bound", "norm_growth",
                     "loss_identity", "monotone_norm", "a_bounded", "no_divergence")


@dataclass
class CheckResult:
    name: str
    checks: int = 0
    violations: int = 0
    worst: float = 0.0
    tol: Optional[float] = None
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.checks > 0 and self.violations == 0

    def add(self, residual: float, tol: float):
        self.checks += 1
        if residual > self.worst or math.isnan(residual):
            self.worst = float(residual)
        if not residual <= tol:
            self.violations += 1

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": self.checks,
            "violations": self.violations,
            "worst": self.worst,
            "tol": self.tol,
            "seconds": round(self.seconds, 3),
            **({"details": self.details} if self.details else {}),
        }


def _random_spd(rng, d, lo=0.1, hi=10.0):
    lam = np.exp(rng.uniform(math.log(lo), math.log(hi), d))
    q = random_orthogonal(rng, d)
    return SymMatrix((q * lam) @ q.T, is_spd=True)


# ---------------------------------------------------------------- spectral

def check_eigen_reconstruction(seed=0, n_cases=20, dims=(1, 2, 3, 8, 25, 60)) -> CheckResult:
    res = CheckResult("eigen_reconstruction", tol=1e-9)
    for i in range(n_cases):
        rng = substream(seed, 10, i)
        d = dims[i % len(dims)]
        m = rng.standard_normal((d, d))
        m = 0.5 * (m + m.T)
        lam, v = eigen_sym(m)
        scale = max(np.linalg.norm(m), 1e-300)
        res.add(np.linalg.norm((v * lam) @ v.T - m) / scale, 1e-9)
        res.add(np.linalg.norm(v.T @ v - np.eye(d)), 1e-10)
        res.add(float(np.any(np.diff(lam) < 0)), 0.0)
    return res


def check_interlacing(seed=0, n_pairs=1000, d_min=2, d_max=50) -> CheckResult:
    """Eigenvalues of H* interlace those of H, and kappa* <= kappa."""
    res = CheckResult("interlacing", tol=1e-9)
    kappa_fail = 0
    for i in range(n_pairs):
        rng = substream(seed, 11, i)
        d = int(rng.integers(d_min, d_max + 1))
        h = _random_spd(rng, d, 1.0, 10.0 ** rng.uniform(0, 4))
        u = rng.standard_normal(d)
        r = build_h_star(h, u)
        lam, lam_s = h.eigenvalues, r.eigenvalues
        tol = 1e-9 * lam[-1]
        # 0 = lam*_1 < lam_1 <= lam*_2 <= lam_2 <= ... <= lam*_d <= lam_d
        worst = max(abs(lam_s[0]), float(np.max(lam_s[1:] - lam[1:])), float(np.max(lam[:-1] - lam_s[1:])))
        res.add(worst / lam[-1], 1e-9)
        if not (lam_s[0] < lam[0] - tol or abs(lam_s[0]) <= tol):
            res.violations += 1
        if r.kappa_star > h.eigenvalues[-1] / h.eigenvalues[0] * (1 + 1e-12):
            kappa_fail += 1
    res.violations += kappa_fail
    res.details["kappa_star_violations"] = kappa_fail
    return res


def check_kappa_star_strict(seed=0, n_cases=200) -> CheckResult:
    """kappa* < kappa whenever u has components along v_1 and v_d."""
    res = CheckResult("kappa_star_strict", tol=-1e-12)
    for i in range(n_cases):
        rng = substream(seed, 12, i)
        d = int(rng.integers(2, 30))
        h = _random_spd(rng, d)
        u = rng.standard_normal(d)
        r = build_h_star(h, u)
        kappa = h.eigenvalues[-1] / h.eigenvalues[0]
        res.add((r.kappa_star - kappa) / kappa, -1e-12)
    return res


def check_pseudo_radius(seed=0, n_cases=200) -> CheckResult:
    res = CheckResult("pseudo_radius_le_radius", tol=1e-12)
    for i in range(n_cases):
        rng = substream(seed, 13, i)
        d = int(rng.integers(2, 30))
        h = _random_spd(rng, d)
        r = build_h_star(h, rng.standard_normal(d))
        s = SpectralSummary.of(h)
        for eps in np.logspace(-3, 1, 9) / s.lambda_max:
            res.add(pseudo_spectral_radius(r, eps) - spectral_radius_shift(s, eps), 1e-12)
    return res


def check_h_star_null(seed=0, n_cases=100) -> CheckResult:
    res = CheckResult("h_star_null_direction", tol=1e-10)
    for i in range(n_cases):
        rng = substream(seed, 14, i)
        d = int(rng.integers(1, 30))
        h = _random_spd(rng, d)
        u = rng.standard_normal(d)
        r = build_h_star(h, u)
        res.add(float(np.linalg.norm(r.h_star @ u)) / (h.eigenvalues[-1] * np.linalg.norm(u)), 1e-10)
    return res


# ---------------------------------------------------------------- model

def _model_point(seed, tag, i, d_max=10):
    rng = substream(seed, tag, i)
    d = int(rng.integers(1, d_max + 1))
    p = ProblemInstance(_random_spd(rng, d), rng.standard_normal(d))
    a = float(rng.standard_normal())
    w = rng.standard_normal(d)
    return p, a, w


def check_gradient_fd(seed=0, n_points=100, step=1e-6) -> CheckResult:
    res = CheckResult("gradient_finite_difference", tol=1e-6)
    for i in range(n_points):
        p, a, w = _model_point(seed, 20, i)
        da, dw = grad_bn(p, a, w)
        fd_a = (loss_bn(p, a + step, w) - loss_bn(p, a - step, w)) / (2 * step)
        res.add(abs(fd_a - da), 1e-6)
        for j in range(p.dim):
            e = np.zeros(p.dim)
            e[j] = step
            fd = (loss_bn(p, a, w + e) - loss_bn(p, a, w - e)) / (2 * step)
            res.add(abs(fd - dw[j]), 1e-6)
    return res


def check_grad_orthogonality(seed=0, n_points=100) -> CheckResult:
    res = CheckResult("gradient_orthogonal_to_w", tol=1e-12)
    for i in range(n_points):
        p, a, w = _model_point(seed, 21, i)
        _, dw = grad_bn(p, a, w)
        hw = p.matvec(w)
        sigma2 = float(w @ hw)
        # dw is a difference of two terms; measure against their size, not |dw|
        terms = abs(a) / math.sqrt(sigma2) * (np.linalg.norm(p.g)
                                              + abs(w @ p.g) / sigma2 * np.linalg.norm(hw))
        res.add(abs(w @ dw) / (np.linalg.norm(w) * terms), 1e-12)
    return res


def check_loss_equivalence(seed=0, n_points=100) -> CheckResult:
    res = CheckResult("loss_forms_agree", tol=1e-12)
    for i in range(n_points):
        p, a, w = _model_point(seed, 22, i)
        l1, l2 = loss_bn(p, a, w), loss_bn_residual(p, a, w)
        # the direct form cancels terms of size ~ c and a^2
        scale = max(abs(l2), p.c, a * a)
        res.add(abs(l1 - l2) / scale, 1e-12)
    return res


def check_minimizer_family(seed=0, n_cases=20) -> CheckResult:
    res = CheckResult("minimizer_family_stationary", tol=1e-10)
    for i in range(n_cases):
        p, _, _ = _model_point(seed, 23, i)
        for s in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
            a, w = minimizer(p, s)
            da, dw = grad_bn(p, a, w)
            res.add(math.hypot(da, float(np.linalg.norm(dw))), 1e-10)
    return res


def check_minimizer_hessian(seed=0, n_cases=30) -> CheckResult:
    """Hessian at (a*, s u) has spectrum {1} U spec(||u||^2/||w*||^2 H*)."""
    res = CheckResult("minimizer_hessian", tol=1e-8)
    for i in range(n_cases):
        p, _, _ = _model_point(seed, 24, i)
        s = (-2.0, -0.5, 0.5, 1.0, 3.0)[i % 5]
        a, w = minimizer(p, s)
        got = eigen_sym(hessian_bn(p, a, w))[0]
        r = build_h_star(p.h, p.u) if p.dim > 1 else None
        star = r.eigenvalues if r is not None else np.zeros(1)
        want = np.sort(np.concatenate([[1.0], (p.u @ p.u) / (w @ w) * star]))
        res.add(float(np.max(np.abs(got - want))) / max(1.0, float(want[-1])), 1e-8)
    return res


def saddle_case(seed, i, d_max=20):
    """A seeded instance with a point w orthogonal to g (a = 0 saddle)."""
    rng = substream(seed, 25, i)
    d = int(rng.integers(2, d_max + 1))
    p = ProblemInstance(_random_spd(rng, d), rng.standard_normal(d))
    w = rng.standard_normal(d)
    w -= (w @ p.g) / (p.g @ p.g) * p.g
    return p, w


def check_saddle_strict(seed=0, n_cases=50) -> CheckResult:
    """Closed-form saddle spectrum matches the assembled Hessian, and has
    exactly one negative eigenvalue."""
    res = CheckResult("saddle_strict", tol=1e-8)
    for i in range(n_cases):
        p, w = saddle_case(seed, i)
        closed = saddle_hessian_eigs(p, w)
        numeric = eigen_sym(hessian_bn(p, 0.0, w))[0]
        res.add(float(np.max(np.abs(closed - numeric))), 1e-8)
        res.add(abs(int(np.sum(numeric < -1e-8)) - 1), 0)
    return res


# ---------------------------------------------------------------- dynamics

def trajectory_case(seed, i, d_max=50, steps=500, fault=None):
    """Instance and config for seeded trajectory ``i`` of the per-step suite.

    Spectra lie in [0.1, 10] (conjugated by a random rotation), eps spans
    logspace(-2, 2) and eps_a lies in (0, 1].
    """
    rng = substream(seed, 30, i)
    d = int(rng.integers(2, d_max + 1))
    p = make_instance(SpectrumSpec.logspace(0.1, 10.0, d), conjugate=True, rng=rng)
    cfg = RunConfig(
        eps=float(10.0 ** rng.uniform(-2, 2)),
        eps_a=float(rng.uniform(0.05, 1.0)),
        a0=float(rng.standard_normal()),
        w0=rng.standard_normal(d),
        max_iters=steps,
        verify=True,
        fault=fault,
    )
    return p, cfg


def check_trajectories(seed=0, n_traj=100, steps=500, d_max=50, fault=None):
    """Per-step identities and bounds along seeded BNGD trajectories.

    Returns one CheckResult per trajectory check.
    """
    tallies = {name: CheckTally(name) for name in TRAJECTORY_CHECKS}
    outcomes = {}
    for i in range(n_traj):
        p, cfg = trajectory_case(seed, i, d_max, steps, fault)
        traj = run(p, cfg)
        outcomes[traj.outcome] = outcomes.get(traj.outcome, 0) + 1
        for name, t in traj.checks.items():
            tallies[name].merge(t)
    tols = {"residual_recurrence": 1e-10, "norm_growth": 1e-10, "loss_identity": 1e-10}
    out = []
    for name, t in tallies.items():
        r = CheckResult(name, t.checks, t.violations, t.worst, tols.get(name))
        r.details["outcomes"] = dict(sorted(outcomes.items()))
        out.append(r)
    return out


def check_gd_contraction(seed=0, n_cases=50, steps=200) -> CheckResult:
    res = CheckResult("gd_contraction")
    for i in range(n_cases):
        rng = substream(seed, 31, i)
        d = int(rng.integers(1, 30))
        p = make_instance(SpectrumSpec.logspace(0.1, 10.0, d), conjugate=True, rng=rng)
        eps = float(rng.uniform(0.01, 0.99)) * p.spectrum.eps_max
        traj = run(p, RunConfig(eps=eps, w0=rng.standard_normal(d), max_iters=steps, verify=True), "gd")
        t = traj.checks["gd_contraction"]
        res.checks += t.checks
        res.violations += t.violations
        res.worst = max(res.worst, t.worst)
    return res


def check_saddle_avoidance(seed=0, n_inits=1000, d=20, max_iters=2000) -> CheckResult:
    """Random inits with eps_a = 1 and eps across 8 decades never settle on
    a saddle."""
    res = CheckResult("saddle_avoidance", tol=0.0)
    outcomes = {}
    for i in range(n_inits):
        rng = substream(seed, 32, i)
        p = make_instance(SpectrumSpec.logspace(1.0, 100.0, d), rng=rng)
        cfg = RunConfig(eps=float(10.0 ** rng.uniform(-3, 5)), eps_a=1.0,
                        a0=float(rng.standard_normal()), w0=rng.standard_normal(d),
                        max_iters=max_iters)
        traj = run(p, cfg)
        outcomes[traj.outcome] = outcomes.get(traj.outcome, 0) + 1
        res.add(float(traj.outcome == "converged_saddle"), 0.0)
    res.details["outcomes"] = dict(sorted(outcomes.items()))
    return res


# ---------------------------------------------------------------- analysis

def scaling_case(seed, variant, i, d_max=12):
    rng = substream(seed, 40 if variant == "conjugate" else 41, i)
    d = int(rng.integers(1, d_max + 1))
    p = make_instance(SpectrumSpec.logspace(0.1, 10.0, d), conjugate=bool(i % 2), rng=rng)
    cfg = RunConfig(eps=float(10.0 ** rng.uniform(-2, 1)), eps_a=float(rng.uniform(0.1, 1.0)),
                    a0=float(rng.standard_normal()), w0=rng.standard_normal(d))
    if variant == "conjugate":
        t = ScalingTransform(mu=float(10.0 ** rng.uniform(-1, 1)),
                             gamma=float(rng.choice([-1, 1]) * 10.0 ** rng.uniform(-1, 1)),
                             q=random_orthogonal(rng, d))
    else:
        t = ScalingTransform(r=float(rng.choice([-1, 1]) * 10.0 ** rng.uniform(-1, 1)))
    return p, cfg, t


def check_scaling(seed=0, variant="conjugate", n_cases=100, steps=50) -> CheckResult:
    res = CheckResult(f"scaling_{variant}", tol=1e-8)
    for i in range(n_cases):
        p, cfg, t = scaling_case(seed, variant, i)
        res.add(verify_scaling(p, cfg, t, variant, steps), 1e-8)
    return res


def check_omega_consistency(seed=0, n_spectra=6, n_samples=200) -> CheckResult:
    """omega equals 1/(beta_bar eps_max^2) and respects its lower bounds."""
    res = CheckResult("omega_consistency", tol=1e-12)
    specs = [SpectrumSpec.linspace(1, 1e4, 50), SpectrumSpec.linspace(1, 2, 100),
             SpectrumSpec.logspace(1, 1e3, 40), SpectrumSpec.spiked(30, 1e4),
             SpectrumSpec.linspace(1, 10, 20), SpectrumSpec.logspace(1, 1e5, 100)]
    for i, spec in enumerate(specs[:n_spectra]):
        lam = spec.eigenvalues()
        bb, est = beta_bar_mc(lam, n_samples, seed=(seed, 42, i))
        res.add(abs(est.omega * bb * est.eps_max**2 - 1.0), 1e-12)
        res.add(abs(est.omega - lam[-1] ** 2 / (4 * bb)) / est.omega, 1e-12)
        res.add((lam.size / generic_constant(lam) - est.omega) / est.omega, 1e-12)
        if est.lower_bound_arithmetic is not None:
            res.add((est.lower_bound_arithmetic - est.omega) / est.omega, 1e-12)
    return res


def check_beta_gm_stability(seed=0, n_samples=500) -> CheckResult:
    """Geometric mean of beta0 is stable under 2x subsampling (<= 10%)."""
    res = CheckResult("beta_geometric_mean_stability", tol=0.1)
    for i, spec in enumerate([SpectrumSpec.linspace(1, 1e4, 100), SpectrumSpec.logspace(1, 1e4, 100)]):
        _, est = beta_bar_mc(spec.eigenvalues(), n_samples, seed=(seed, 43, i))
        s = est.beta0_samples
        full = np.exp(np.mean(np.log(s)))
        for half in (s[::2], s[1::2]):
            res.add(abs(np.exp(np.mean(np.log(half))) / full - 1.0), 0.1)
        am = [abs(np.mean(h) / np.mean(s) - 1.0) for h in (s[::2], s[1::2])]
        res.details[spec.kind] = {"arithmetic_mean_rel_change": max(am)}
    return res


def check_color_recompute(seed=0) -> CheckResult:
    res = CheckResult("sweep_colors_recompute", tol=0.0)
    rng = substream(seed, 44)
    p = make_instance(SpectrumSpec.logspace(1, 100, 20), rng=rng)
    w0 = p.g / np.linalg.norm(p.g)
    grid = sweep(p, 1.99 * np.logspace(-4, 0, 5), np.logspace(-3, 6, 10), w0, 1.0, 200)
    for idx in np.ndindex(grid.shape):
        c = classify_color(grid.final_loss[idx], grid.baseline_loss, grid.eps_hat[idx], grid.eps_opt)
        res.add(float(c != grid.colors[idx]), 0.0)
    return res


# ---------------------------------------------------------------- suite

def _single(fn):
    def go(seed, fault):
        return [fn(seed)]
    return go


SUITE: dict[str, Callable] = {
    "eigen_reconstruction": _single(check_eigen_reconstruction),
    "interlacing": _single(lambda s: check_interlacing(s, n_pairs=300)),
    "kappa_star_strict": _single(check_kappa_star_strict),
    "pseudo_radius_le_radius": _single(check_pseudo_radius),
    "h_star_null_direction": _single(check_h_star_null),
    "gradient_finite_difference": _single(check_gradient_fd),
    "gradient_orthogonal_to_w": _single(check_grad_orthogonality),
    "loss_forms_agree": _single(check_loss_equivalence),
    "minimizer_family_stationary": _single(check_minimizer_family),
    "minimizer_hessian": _single(check_minimizer_hessian),
    "saddle_strict": _single(check_saddle_strict),
    "trajectories": lambda seed, fault: check_trajectories(seed, n_traj=30, steps=300, fault=fault),
    "gd_contraction": _single(check_gd_contraction),
    "saddle_avoidance": _single(lambda s: check_saddle_avoidance(s, n_inits=100)),
    "scaling_conjugate": _single(lambda s: check_scaling(s, "conjugate", 50)),
    "scaling_rescale_w": _single(lambda s: check_scaling(s, "rescale_w", 50)),
    "omega_consistency": _single(check_omega_consistency),
    "beta_geometric_mean_stability": _single(check_beta_gm_stability),
    "sweep_colors_recompute": _single(check_color_recompute),
}


def available_checks():
    """Names accepted by the ``checks`` filter (groups and member checks)."""
    return sorted(set(SUITE) | set(TRAJECTORY_CHECKS))


def run_suite(seed=0, checks=None, fault=None) -> dict:
    """Run the selected checks (all when ``checks`` is None) and return the
    report.  Members of the trajectory group may be selected by name."""
    if checks is None:
        groups = list(SUITE)
        wanted = None
    else:
        unknown = set(checks) - set(available_checks())
        if unknown:
            raise ValueError(f"unknown checks: {sorted(unknown)}")
        wanted = set(checks)
        groups = [g for g in SUITE if g in wanted
                  or (g == "trajectories" and wanted & set(TRAJECTORY_CHECKS))]
    results = {}
    for g in groups:
        t0 = time.perf_counter()
        out = SUITE[g](seed, fault)
        dt = time.perf_counter() - t0
        for r in out:
            if wanted is not None and g == "trajectories" and g not in wanted and r.name not in wanted:
                continue
            r.seconds = dt / len(out)
            results[r.name] = r
    return {
        "seed": seed,
        "fault": fault,
        "passed": all(r.passed for r in results.values()),
        "n_checks": len(results),
        "checks": {k: v.to_dict() for k, v in results.items()},
    }
