import numpy as np
import pytest

from risfl import sca
from risfl.aggregation import EmptySelectionError
from risfl.channel import ChannelRealization, InvalidInputError, cn, is_unit_modulus, is_unit_norm, random_phases

from conftest import random_realization


def test_zero_iterations_returns_init(small_instance):
    real, counts, _, f, theta = small_instance
    st = sca.sca_optimize(np.ones(4), real, counts, init=(f, theta), config=sca.ScaConfig(i_max=0))
    np.testing.assert_array_equal(st.f, f)
    np.testing.assert_array_equal(st.theta, theta)
    assert st.iterations == 0
    assert st.obj == pytest.approx(sca.minmax_objective(np.ones(4), f, theta, real, counts), rel=1e-12)


def test_matched_filter_single_device(rng):
    h = cn((3, 1), rng) * 1e-4
    real = ChannelRealization(h, np.zeros((3, 0)), np.zeros((0, 1)))
    st = sca.sca_optimize([1], real, [5])
    assert st.obj == pytest.approx(-np.linalg.norm(h) ** 2 / 25, rel=1e-6)
    assert abs(np.conj(st.f) @ h[:, 0]) == pytest.approx(np.linalg.norm(h), rel=1e-6)


def test_default_init(small_instance):
    real, counts, _, _, _ = small_instance
    f, theta = sca.default_init(np.ones(4), real, counts)
    np.testing.assert_array_equal(theta, np.ones(8))
    h = real.effective_matrix(theta)
    weak = int(np.argmax(counts ** 2 / np.sum(np.abs(h) ** 2, axis=0)))
    np.testing.assert_allclose(f, h[:, weak] / np.linalg.norm(h[:, weak]))


def test_iterates_feasible_and_improving(small_instance):
    real, counts, _, f, theta = small_instance
    st = sca.sca_optimize(np.ones(4), real, counts, init=(f, theta), config=sca.ScaConfig(epsilon=0.0, i_max=40))
    assert is_unit_norm(st.f) and is_unit_modulus(st.theta)
    assert st.obj <= st.initial_obj
    assert st.obj == pytest.approx(np.min(st.trace), rel=1e-15)
    assert st.trace.size == st.iterations + 1


def test_last_iterate_flag(small_instance):
    real, counts, _, f, theta = small_instance
    cfg = sca.ScaConfig(epsilon=0.0, i_max=15, return_last_iterate=True)
    st = sca.sca_optimize(np.ones(4), real, counts, init=(f, theta), config=cfg)
    assert st.obj == pytest.approx(st.trace[-1], rel=1e-15)


def test_early_stop_criterion(small_instance):
    real, counts, _, f, theta = small_instance
    eps = 1e-3
    st = sca.sca_optimize(np.ones(4), real, counts, init=(f, theta), config=sca.ScaConfig(epsilon=eps))
    tr = st.trace
    rel = np.abs(np.diff(tr)) / np.abs(tr[1:])
    if st.stopped_early:
        assert rel[-1] <= eps and np.all(rel[:-1] > eps)
    else:
        assert st.iterations == 100 and np.all(rel > eps)


def test_warm_start_stops_quickly(small_instance):
    real, counts, _, _, _ = small_instance
    cfg = sca.ScaConfig(epsilon=0.01)
    first = sca.sca_optimize(np.ones(4), real, counts, config=cfg)
    again = sca.sca_optimize(np.ones(4), real, counts, init=(first.f, first.theta), config=cfg)
    assert again.iterations <= 2
    assert again.obj <= first.obj


def test_objective_scale_invariance(small_instance):
    real, counts, _, f, theta = small_instance
    st1 = sca.sca_optimize(np.ones(4), real, counts)
    st2 = sca.sca_optimize(np.ones(4), real.scaled(1e-5), counts)
    assert st2.obj == pytest.approx(st1.obj * 1e-10, rel=1e-9)


def test_single_device_dual_weight(small_instance):
    real, counts, _, f, theta = small_instance
    mask = np.array([0, 1, 0, 0])
    coeffs = sca.surrogate_coeffs(f, theta, mask, real, 1.0)
    w = sca.solve_dual(coeffs, [25.0])
    np.testing.assert_allclose(w.zeta, [1 / 25])


def test_dual_weights_feasible(small_instance):
    real, counts, _, f, theta = small_instance
    coeffs = sca.surrogate_coeffs(f, theta, np.ones(4), real, 1.0)
    k2 = counts.astype(float) ** 2
    w = sca.solve_dual(coeffs, k2)
    assert np.all(w.zeta >= 0)
    assert w.zeta @ k2 == pytest.approx(1.0, abs=1e-8)
    assert sca.dual_objective(w.zeta, coeffs) == pytest.approx(w.value, rel=1e-12)
    f1, t1 = sca.primal_update(w.zeta, coeffs, f)
    assert is_unit_norm(f1) and is_unit_modulus(t1)


def test_beats_random_search(rng):
    for _ in range(3):
        real = random_realization(rng, 4, 3, 8)
        counts = rng.integers(1, 10, 4)
        st = sca.sca_optimize(np.ones(4), real, counts, config=sca.ScaConfig(epsilon=1e-4))
        for _ in range(2000):
            f = cn(3, rng)
            f /= np.linalg.norm(f)
            assert st.obj <= sca.minmax_objective(np.ones(4), f, random_phases(8, rng), real, counts) + 1e-12


def test_errors(small_instance):
    real, counts, _, f, theta = small_instance
    with pytest.raises(EmptySelectionError):
        sca.sca_optimize(np.zeros(4), real, counts)
    with pytest.raises(InvalidInputError):
        sca.sca_optimize(np.ones(4), real, counts, init=(f[:2], theta))


def test_channel_scale():
    hd = np.array([[3.0 + 0j], [1.0 + 0j]])
    g = np.zeros((2, 1, 0), complex)
    assert sca.channel_scale(hd, g) == pytest.approx(np.sqrt(1e-3))
    assert sca.channel_scale(np.zeros((1, 1), complex), g[:1]) == 1.0
