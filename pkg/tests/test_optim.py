import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from samrl import basins
from samrl.nn_core import ParamVector
from samrl.optim import (AdamState, ProbeError, SamProtocolError, SamState, adam_step, sam_first_step,
                         sam_second_step, sharpness_probe)


def scalar_adam_oracle(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, theta=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return theta


def quad(p):
    v = p.values if isinstance(p, ParamVector) else p
    return 0.5 * float(v @ v), v.copy()


def test_adam_first_step():
    st_ = AdamState(1, lr=1e-3)
    theta = np.array([0.0])
    adam_step(st_, theta, np.array([1.0]))
    assert theta[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert st_.t == 1


def test_adam_zero_gradient():
    st_ = AdamState(3)
    theta = np.array([1.0, 2.0, 3.0])
    st_.step(theta, np.zeros(3))
    assert theta.tolist() == [1.0, 2.0, 3.0] and st_.t == 1


def test_adam_matches_scalar_oracle():
    st_ = AdamState(1, lr=1e-3)
    theta = np.array([0.5])
    for g in (0.7, 0.7):
        st_.step(theta, np.array([g]))
    assert theta[0] == pytest.approx(scalar_adam_oracle([0.7, 0.7], theta=0.5), abs=1e-15)


def test_adam_rejects_nonfinite_and_leaves_params():
    st_ = AdamState(2)
    theta = np.array([1.0, 1.0])
    with pytest.raises(FloatingPointError):
        st_.step(theta, np.array([np.nan, 1.0]))
    assert theta.tolist() == [1.0, 1.0] and st_.t == 0


def test_sam_first_step_quadratic():
    sam = SamState(AdamState(2), rho=0.1)
    theta = np.array([3.0, 4.0])
    eps = sam_first_step(sam, theta, np.array([3.0, 4.0]))
    np.testing.assert_allclose(eps, [0.06, 0.08], atol=1e-15)
    np.testing.assert_allclose(theta, [3.06, 4.08], atol=1e-15)
    assert sam.phase == "ascended"


def test_sam_rho_zero_no_perturbation():
    sam = SamState(AdamState(2), rho=0.0)
    theta = np.array([3.0, 4.0])
    eps = sam.first_step(theta, np.array([3.0, 4.0]))
    assert not eps.any() and theta.tolist() == [3.0, 4.0]


def test_sam_degenerate_gradient():
    sam = SamState(AdamState(2), rho=0.5)
    theta = np.array([1.0, -1.0])
    eps = sam.first_step(theta, np.array([1e-14, 0.0]))
    assert not eps.any() and theta.tolist() == [1.0, -1.0]


def test_sam_eps_norm_random_gradient():
    g = np.random.default_rng(0).standard_normal(20)
    sam = SamState(AdamState(20), rho=0.5)
    eps = sam.first_step(np.zeros(20), g)
    assert abs(np.linalg.norm(eps) - 0.5) <= 1e-12


def test_sam_full_cycle_uses_perturbed_gradient():
    lr = 0.01
    sam = SamState(AdamState(2, lr=lr), rho=0.1)
    theta = np.array([3.0, 4.0])
    sam.first_step(theta, quad(theta)[1])
    _, g_adv = quad(theta)
    np.testing.assert_allclose(g_adv, [3.06, 4.08], atol=1e-15)
    ref_state = AdamState(2, lr=lr)
    ref = np.array([3.0, 4.0])
    ref_state.step(ref, g_adv)
    sam.second_step(theta, g_adv)
    assert theta.tolist() == ref.tolist()
    np.testing.assert_allclose(sam.base.m, 0.1 * np.array([3.06, 4.08]), rtol=1e-15)


def test_sam_restores_before_base_update():
    # a zero perturbed gradient leaves Adam with nothing to do, exposing the restore
    sam = SamState(AdamState(2), rho=0.3)
    theta = np.array([0.1, 0.2])
    sam.first_step(theta, np.array([1.0, -2.0]))
    sam.second_step(theta, np.zeros(2))
    assert np.max(np.abs(theta - [0.1, 0.2])) <= 1e-15


def test_sam_rho_zero_matches_adam_bitwise():
    rng = np.random.default_rng(4)
    grads = rng.standard_normal((50, 6))
    a_theta, s_theta = np.ones(6), np.ones(6)
    adam, sam = AdamState(6, lr=0.01), SamState(AdamState(6, lr=0.01), rho=0.0)
    for g in grads:
        adam.step(a_theta, g)
        sam.first_step(s_theta, g)
        sam_second_step(sam, s_theta, g)
    assert a_theta.tobytes() == s_theta.tobytes()


def test_sam_protocol_enforced():
    sam = SamState(AdamState(1), rho=0.1)
    theta = np.array([1.0])
    with pytest.raises(SamProtocolError):
        sam.second_step(theta, np.array([1.0]))
    sam.first_step(theta, np.array([1.0]))
    with pytest.raises(SamProtocolError):
        sam.first_step(theta, np.array([1.0]))
    sam.second_step(theta, np.array([1.0]))
    assert sam.phase == "ready"


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), rho=st.floats(1e-3, 10.0), dim=st.integers(1, 50))
def test_perturbation_norm_property(seed, rho, dim):
    g = np.random.default_rng(seed).standard_normal(dim)
    theta = np.zeros(dim)
    SamState(AdamState(dim), rho=rho).first_step(theta, g)
    assert abs(np.linalg.norm(theta) - rho) <= 1e-10


def test_probe_quadratic_gradient_direction():
    p = ParamVector(np.array([3.0, 4.0]))
    val = sharpness_probe(quad, p, 0.1, n_samples=16, seed=0)
    assert val >= 0.1 * 5 + 0.1 ** 2 / 2 - 1e-12
    # origin untouched
    assert p.values.tolist() == [3.0, 4.0]


def test_probe_constant_loss():
    p = ParamVector(np.ones(4))
    assert sharpness_probe(lambda q: (1.0, np.zeros(4)), p, 0.5, 10, 0) == 0.0


def test_probe_monotone_in_samples():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((8, 8)); A = A @ A.T
    f = lambda q: (0.5 * float(q.values @ A @ q.values), np.zeros(8))  # gradient hidden: random dirs only
    p = ParamVector(rng.standard_normal(8))
    vals = [sharpness_probe(f, p, 0.3, n, seed=7) for n in (1, 2, 5, 20, 80)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_probe_reports_bad_direction():
    def f(q):
        return (float("nan") if q.values[0] != 0 else 0.0), np.zeros(2)
    with pytest.raises(ProbeError) as exc:
        sharpness_probe(f, ParamVector(np.zeros(2)), 0.1, 3, 0)
    assert exc.value.index == 1


def basin_membership_oracle():
    """Dense-grid classification: left of the ridge between the two grid minima is the flat basin."""
    xs = np.linspace(-6, 4, 200001)
    L = basins.loss(xs)
    interior = (L[1:-1] < L[:-2]) & (L[1:-1] < L[2:])
    minima = xs[1:-1][interior]
    assert len(minima) == 2
    lo, hi = np.searchsorted(xs, minima)
    ridge = xs[lo + np.argmax(L[lo:hi])]
    return minima, ridge


def test_basin_oracle_geometry():
    (flat_min, sharp_min), ridge = basin_membership_oracle()
    assert abs(flat_min + 3) < 1e-3 and abs(sharp_min - 1) < 1e-3
    assert 0.6 < ridge < 0.8


def test_basin_gradient_matches_finite_differences():
    xs = np.linspace(-5, 3, 41)
    h = 1e-6
    np.testing.assert_allclose(basins.grad(xs), (basins.loss(xs + h) - basins.loss(xs - h)) / (2 * h), atol=1e-6)


def test_sam_rho_sweep_sets_threshold():
    _, ridge = basin_membership_oracle()
    for rho in (0.4, 0.6, 1.0, 1.5):
        assert all(basins.optimize(rho, s) < ridge for s in range(10)), rho
    assert all(basins.optimize(0.05, s) > ridge for s in range(10))


def test_adam_stays_in_sharp_basin():
    _, ridge = basin_membership_oracle()
    finals = [basins.optimize(None, s) for s in range(10)]
    assert all(abs(x - 1.0) < 1e-6 for x in finals) and min(finals) > ridge


def test_sam_settles_at_one_minus_rho():
    assert basins.optimize(basins.FLAT_RHO, 0) == pytest.approx(1.0 - basins.FLAT_RHO, abs=1e-8)
