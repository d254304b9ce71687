import numpy as np
import pytest

from bngd.model import (
    DomainError,
    ProblemInstance,
    SpectrumSpec,
    classify_critical_point,
    grad_bn,
    hessian_bn,
    loss_bn,
    loss_bn_residual,
    loss_gd,
    make_instance,
    minimizer,
    saddle_hessian_eigs,
)
from bngd.rng import substream
from bngd.spectral import SymMatrix


@pytest.fixture
def p12():
    return ProblemInstance(SymMatrix.diag([1.0, 2.0]), np.array([1.0, 0.0]))


def random_instance(seed, d=5):
    return make_instance(SpectrumSpec.logspace(0.5, 20.0, d), conjugate=True, seed=seed)


def test_instance_invariants():
    p = random_instance(1)
    np.testing.assert_allclose(p.g, p.h.entries @ p.u, rtol=1e-12)
    assert p.c == pytest.approx(p.uhu)
    with pytest.raises(DomainError):
        ProblemInstance(SymMatrix.diag([1.0]), np.array([1.0]), c=0.5)
    with pytest.raises(DomainError):
        ProblemInstance(SymMatrix.diag([1.0, 2.0]), np.ones(3))


def test_spectrum_layouts():
    p = make_instance(SpectrumSpec.linspace(1, 10000, 100), seed=0)
    assert p.spectrum.kappa == pytest.approx(10000)
    assert p.spectrum.lambda_min == 1
    np.testing.assert_array_equal(SpectrumSpec.spiked(4, 1e4).eigenvalues(), [1, 1, 1, 1e4])
    s = make_instance(SpectrumSpec.explicit([1.0]), seed=0).spectrum
    assert s.kappa == 1 and s.eps_opt == 1
    lam = SpectrumSpec.logspace(1, 1e5, 6).eigenvalues()
    np.testing.assert_allclose(lam, 10.0 ** np.arange(6))


def test_spectrum_roundtrip_and_errors():
    for spec in (SpectrumSpec.logspace(1, 10, 3), SpectrumSpec.spiked(3, 5), SpectrumSpec.explicit([2, 3])):
        assert SpectrumSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(DomainError):
        SpectrumSpec.from_dict({"kind": "weird"})
    with pytest.raises(DomainError):
        SpectrumSpec.explicit([1.0, -1.0]).eigenvalues()


def test_hu_normalized_hint():
    p = make_instance(SpectrumSpec.logspace(1, 100, 8), u_mode="hu_normalized", seed=4)
    np.testing.assert_allclose(p.w0_hint, p.g / np.linalg.norm(p.g))
    with pytest.raises(DomainError):
        make_instance(SpectrumSpec.logspace(1, 100, 8), u_mode="given")


def test_make_instance_deterministic():
    a = make_instance(SpectrumSpec.logspace(1, 100, 8), conjugate=True, seed=(3, 1))
    b = make_instance(SpectrumSpec.logspace(1, 100, 8), conjugate=True, seed=(3, 1))
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.h.entries, b.h.entries)


def test_loss_gd(p12):
    assert loss_gd(p12, p12.u) == 0.0
    assert loss_gd(p12, np.zeros(2)) == pytest.approx(p12.c / 2)
    assert loss_gd(p12, np.array([0.0, 1.0])) == pytest.approx(1.5)


def test_loss_bn(p12):
    assert loss_bn(p12, np.sqrt(p12.uhu), p12.u) == pytest.approx(0.0, abs=1e-15)
    assert loss_bn(p12, 0.0, np.array([0.3, -2.0])) == pytest.approx(p12.c / 2)
    assert loss_bn(p12, 1.0, np.array([0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        loss_bn(p12, 1.0, np.zeros(2))


def test_loss_forms_agree():
    p = random_instance(2)
    rng = substream(3)
    for _ in range(20):
        a, w = rng.standard_normal(), rng.standard_normal(5)
        assert loss_bn(p, a, w) == pytest.approx(loss_bn_residual(p, a, w), rel=1e-12, abs=1e-12)


def test_grad_at_critical_points(p12):
    da, dw = grad_bn(p12, np.sqrt(p12.uhu), p12.u)
    assert da == 0.0
    np.testing.assert_allclose(dw, 0, atol=1e-15)
    da, dw = grad_bn(p12, 0.0, np.array([0.0, 1.0]))
    assert da == 0.0
    np.testing.assert_array_equal(dw, 0)


def test_grad_matches_finite_differences():
    p = random_instance(5)
    rng = substream(6)
    a, w = rng.standard_normal(), rng.standard_normal(5)
    da, dw = grad_bn(p, a, w)
    h = 1e-6
    fd_a = (loss_bn(p, a + h, w) - loss_bn(p, a - h, w)) / (2 * h)
    fd_w = [(loss_bn(p, a, w + h * e) - loss_bn(p, a, w - h * e)) / (2 * h) for e in np.eye(5)]
    assert abs(fd_a - da) <= 1e-6
    np.testing.assert_allclose(fd_w, dw, atol=1e-6)


def test_hessian_matches_gradient_differences():
    p = random_instance(7, d=4)
    rng = substream(8)
    a, w = rng.standard_normal(), rng.standard_normal(4)
    hess = hessian_bn(p, a, w)
    h = 1e-6

    def flat(a_, w_):
        da, dw = grad_bn(p, a_, w_)
        return np.concatenate([[da], dw])

    cols = []
    for e in np.eye(5):
        cols.append(flat(a + h * e[0], w + h * e[1:]) - flat(a - h * e[0], w - h * e[1:]))
    np.testing.assert_allclose(np.array(cols).T / (2 * h), hess, atol=1e-6)


def test_saddle_eigs_closed_form():
    p = ProblemInstance(SymMatrix.diag([1.0, 1.0]), np.array([1.0, 0.0]))
    eigs = saddle_hessian_eigs(p, np.array([0.0, 1.0]))
    np.testing.assert_allclose(eigs, [(1 - np.sqrt(5)) / 2, 0.0, (1 + np.sqrt(5)) / 2])
    np.testing.assert_allclose(eigs, np.linalg.eigvalsh(hessian_bn(p, 0.0, np.array([0.0, 1.0]))), atol=1e-14)
    p3 = ProblemInstance(SymMatrix.diag([1.0, 1.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    eigs3 = saddle_hessian_eigs(p3, np.array([0.0, 1.0, 0.0]))
    assert np.count_nonzero(eigs3 == 0) == 2
    with pytest.raises(DomainError):
        saddle_hessian_eigs(p, np.array([1.0, 1.0]))


def test_saddle_eigs_match_assembled():
    p = random_instance(9, d=6)
    w = substream(10).standard_normal(6)
    w -= (w @ p.g) / (p.g @ p.g) * p.g
    closed = saddle_hessian_eigs(p, w)
    assembled = np.linalg.eigvalsh(hessian_bn(p, 0.0, w))
    np.testing.assert_allclose(closed, assembled, atol=1e-8)
    assert np.sum(closed < 0) == 1


def test_classify_critical_points():
    p = random_instance(11, d=4)
    a, w = minimizer(p, -2.0)
    rep = classify_critical_point(p, a, w)
    assert rep.kind == "global_minimizer"
    assert rep.minimizer_scale == pytest.approx(-2.0)
    assert np.all(rep.hessian_eigenvalues >= -1e-10)
    w = substream(12).standard_normal(4)
    w -= (w @ p.g) / (p.g @ p.g) * p.g
    assert classify_critical_point(p, 0.0, w).kind == "saddle"
    with pytest.raises(DomainError):
        classify_critical_point(p, 1.0, w)
    with pytest.raises(DomainError):
        minimizer(p, 0.0)
