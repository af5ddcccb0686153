import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvacdfl.thermal import (
    DenseLayer,
    NeuralThermalModel,
    RcThermalModel,
    ShapeError,
    build_nn_model,
    flatten_params,
    model_from_json,
    model_to_json,
    nn_forward,
    param_index_map,
    rc_step,
    rollout,
    unflatten_params,
)


def identity_nn(zones=3):
    """Passthrough network: first `zones` inputs copied to the output."""
    width = 2 * zones + 1
    w1 = np.zeros((zones, width))
    w1[:, :zones] = np.eye(zones)
    return NeuralThermalModel(
        layers=(DenseLayer(w1, np.zeros(zones), "identity"),),
        input_mean=np.zeros(width),
        input_scale=np.ones(width),
        output_mean=np.zeros(zones),
        output_scale=np.ones(zones),
        zone_count=zones,
    )


class TestNnForward:
    def test_identity_composition(self):
        model = identity_nn()
        out = nn_forward(model, [20.0, 22.0, 19.0], np.zeros(3), np.zeros(3), 0.0)
        np.testing.assert_allclose(out, [20.0, 22.0, 19.0])

    def test_relu_clamps_negative_preactivation(self):
        zones = 2
        width = 2 * zones + 1
        w1 = np.zeros((1, width))
        w1[0, 0] = 1.0
        b1 = np.array([-100.0])  # preactivation far below zero
        w2 = np.zeros((zones, 1))
        b2 = np.full(zones, 21.0)
        model = NeuralThermalModel(
            layers=(DenseLayer(w1, b1, "relu"), DenseLayer(w2, b2, "identity")),
            input_mean=np.zeros(width), input_scale=np.ones(width),
            output_mean=np.zeros(zones), output_scale=np.ones(zones),
            zone_count=zones,
        )
        out = nn_forward(model, [20.0, 20.0], np.zeros(2), np.zeros(2), 0.0)
        np.testing.assert_allclose(out, [21.0, 21.0])

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(42)
        model = build_nn_model(5, [5], rng)
        tau = rng.uniform(15, 25, 5)
        ph = rng.uniform(0, 3, 5)
        pc = rng.uniform(0, 3, 5)
        amb = -3.0

        # plain matrix arithmetic, written independently of the package path
        x = np.concatenate([tau, ph - pc, [amb]])
        x = (x - model.input_mean) / model.input_scale
        h = np.maximum(model.layers[0].weights @ x + model.layers[0].biases, 0.0)
        expected = model.layers[1].weights @ h + model.layers[1].biases
        expected = model.output_scale * expected + model.output_mean

        np.testing.assert_allclose(nn_forward(model, tau, ph, pc, amb), expected, atol=1e-9)

    def test_dimension_mismatch_raises(self):
        model = identity_nn()
        with pytest.raises(ShapeError):
            nn_forward(model, [20.0, 20.0], np.zeros(3), np.zeros(3), 0.0)

    def test_piecewise_linear_within_region(self):
        # collinear inputs inside one activation region map to collinear outputs
        rng = np.random.default_rng(3)
        model = build_nn_model(2, [4], rng)
        a = np.array([20.0, 21.0]); b = np.array([20.5, 21.5])
        f = lambda tau: nn_forward(model, tau, np.zeros(2), np.zeros(2), 5.0)
        mid = f((a + b) / 2)
        np.testing.assert_allclose(mid, (f(a) + f(b)) / 2, atol=1e-9)


class TestRcStep:
    def test_equilibrium(self):
        m = RcThermalModel([2.0], [1.0], [1.0], [1.0], 1.0)
        np.testing.assert_allclose(rc_step(m, [20.0], [0.0], [0.0], 20.0), [20.0])

    def test_hand_evaluated_heating_step(self):
        # tau' = 20 + ((1*1 - 0)/1 + (20-20)/(2*1)) * 1 = 21
        m = RcThermalModel([2.0], [1.0], [1.0], [1.0], 1.0)
        np.testing.assert_allclose(rc_step(m, [20.0], [1.0], [0.0], 20.0), [21.0])

    def test_cooling_reduces_temperature(self):
        m = RcThermalModel([2.0], [1.0], [1.0], [1.0], 1.0)
        out = rc_step(m, [20.0], [0.0], [1.5], 20.0)
        assert out[0] < 20.0

    def test_jacobian_matches_finite_differences(self):
        m = RcThermalModel([3.0, 5.0], [2.0, 4.0], [2.5, 3.0], [3.0, 2.0], 1.0)
        tau = np.array([19.0, 22.0]); ph = np.array([1.0, 0.5]); pc = np.array([0.2, 0.0])
        amb = 4.0
        h = 1e-6
        # affine map: directional finite differences recover exact slopes
        for z in range(2):
            e = np.zeros(2); e[z] = h
            d_tau = (rc_step(m, tau + e, ph, pc, amb) - rc_step(m, tau - e, ph, pc, amb)) / (2 * h)
            expect = np.zeros(2)
            expect[z] = 1.0 - 1.0 / (m.resistance[z] * m.capacitance[z])
            np.testing.assert_allclose(d_tau, expect, atol=1e-8)
            d_ph = (rc_step(m, tau, ph + e, pc, amb) - rc_step(m, tau, ph - e, pc, amb)) / (2 * h)
            expect = np.zeros(2)
            expect[z] = m.eta_heat[z] / m.capacitance[z]
            np.testing.assert_allclose(d_ph, expect, atol=1e-8)

    def test_positivity_enforced(self):
        with pytest.raises(ValueError):
            RcThermalModel([0.0], [1.0], [1.0], [1.0], 1.0)


class TestRollout:
    def test_zero_power_constant_ambient_rc(self):
        m = RcThermalModel([2.0, 2.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0], 1.0)
        traj = rollout(m, [20.0, 20.0], np.full(5, 20.0), np.zeros((5, 2)), np.zeros((5, 2)))
        np.testing.assert_allclose(traj, 20.0)

    def test_equals_repeated_forward_calls(self):
        rng = np.random.default_rng(9)
        model = build_nn_model(3, [4], rng)
        amb = rng.uniform(-5, 15, 4)
        ph = rng.uniform(0, 2, (4, 3)); pc = rng.uniform(0, 2, (4, 3))
        tau0 = rng.uniform(18, 23, 3)
        traj = rollout(model, tau0, amb, ph, pc)
        state = tau0
        for t in range(4):
            state = nn_forward(model, state, ph[t], pc[t], amb[t])
            assert np.array_equal(traj[t + 1], state)

    def test_24_step_rollout_vs_independent_loop(self):
        m = RcThermalModel([3.0], [2.0], [2.0], [2.0], 1.0)
        rng = np.random.default_rng(11)
        amb = rng.uniform(-10, 10, 24)
        ph = rng.uniform(0, 2, (24, 1)); pc = rng.uniform(0, 2, (24, 1))
        traj = rollout(m, [21.0], amb, ph, pc)
        # independent loop with the formula written out
        tau = 21.0
        for t in range(24):
            tau = tau + ((2.0 * ph[t, 0] - 2.0 * pc[t, 0]) / 2.0 + (amb[t] - tau) / (3.0 * 2.0)) * 1.0
            assert abs(traj[t + 1, 0] - tau) < 1e-12

    def test_horizon_mismatch_raises(self):
        m = RcThermalModel([2.0], [1.0], [1.0], [1.0], 1.0)
        with pytest.raises(ShapeError):
            rollout(m, [20.0], np.zeros(5), np.zeros((4, 1)), np.zeros((4, 1)))


class TestParamVector:
    def test_nn_round_trip_identity(self):
        model = build_nn_model(5, [2], np.random.default_rng(1))
        back = unflatten_params(flatten_params(model), model)
        for a, b in zip(model.layers, back.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.biases, b.biases)

    def test_rc_round_trip_identity(self):
        m = RcThermalModel([3.0, 4.0], [2.0, 2.5], [2.0, 2.2], [3.0, 3.3], 1.0)
        back = unflatten_params(flatten_params(m), m)
        assert np.array_equal(back.resistance, m.resistance)
        assert np.array_equal(back.capacitance, m.capacitance)

    def test_single_index_perturbation_is_local(self):
        model = build_nn_model(5, [2], np.random.default_rng(2))
        theta = flatten_params(model)
        k = 17
        theta2 = theta.copy(); theta2[k] += 0.5
        back = flatten_params(unflatten_params(theta2, model))
        diff = np.nonzero(back != theta)[0]
        assert list(diff) == [k]

    def test_flatten_length_one_hidden_layer_of_five(self):
        # (11 inputs x 5) + 5 biases + (5 x 5 outputs) + 5 biases = 90
        model = build_nn_model(5, [5], np.random.default_rng(3))
        assert flatten_params(model).shape == (90,)
        assert len(param_index_map(model)) == 90

    def test_length_mismatch_raises(self):
        model = build_nn_model(5, [2], np.random.default_rng(4))
        with pytest.raises(ShapeError):
            unflatten_params(np.zeros(10), model)

    @given(st.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_rc_flatten_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        z = int(rng.integers(1, 6))
        m = RcThermalModel(
            rng.uniform(0.5, 10, z), rng.uniform(0.5, 10, z),
            rng.uniform(0.5, 5, z), rng.uniform(0.5, 5, z), 1.0,
        )
        back = unflatten_params(flatten_params(m), m)
        assert np.array_equal(flatten_params(back), flatten_params(m))


class TestNormalization:
    def test_round_trip(self):
        model = build_nn_model(
            2, [3], np.random.default_rng(5),
            input_mean=np.array([21, 21, 0, 0, 10.0]),
            input_scale=np.array([8, 8, 4, 4, 15.0]),
        )
        x = np.array([19.0, 23.0, 1.0, -2.0, 4.0])
        np.testing.assert_allclose(model.normalize(x) * model.input_scale + model.input_mean, x, atol=1e-12)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            build_nn_model(2, [2], np.random.default_rng(0), input_scale=np.array([1, 1, 1, 1, 0.0]))


class TestSerialization:
    def test_nn_json_round_trip(self):
        model = build_nn_model(5, [5], np.random.default_rng(6))
        back = model_from_json(model_to_json(model))
        assert np.array_equal(flatten_params(back), flatten_params(model))
        assert np.array_equal(back.input_mean, model.input_mean)

    def test_rc_json_round_trip(self):
        m = RcThermalModel([3.0], [2.0], [2.5], [2.2], 0.5)
        back = model_from_json(model_to_json(m))
        assert np.array_equal(flatten_params(back), flatten_params(m))
        assert back.dt_hours == 0.5

    def test_unknown_convention_rejected(self):
        model = build_nn_model(2, [2], np.random.default_rng(8))
        text = model_to_json(model).replace("signed-power-v1", "other-convention")
        with pytest.raises(ValueError):
            model_from_json(text)
