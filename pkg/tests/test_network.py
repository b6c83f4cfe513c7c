import numpy as np
import numpy.testing as npt
import pytest

from oracles import finite_difference_gradients, random_toy_network, scalar_lstm_step
from polysed.errors import DivergenceError
from polysed.network import (
    INIT_SCALE,
    LstmDirectionParams,
    bptt,
    clone_network,
    forward,
    forward_batch,
    init_network,
    init_rmsprop,
    lstm_step,
    param_dict,
    param_items,
    predict_posteriors,
    rmsprop_update,
)


def random_direction(rng, n_in, n_cells, scale=0.5):
    def mat(*shape):
        return rng.uniform(-scale, scale, size=shape)

    return LstmDirectionParams(
        W_xi=mat(n_in, n_cells), W_xf=mat(n_in, n_cells),
        W_xc=mat(n_in, n_cells), W_xo=mat(n_in, n_cells),
        W_hi=mat(n_cells, n_cells), W_hf=mat(n_cells, n_cells),
        W_hc=mat(n_cells, n_cells), W_ho=mat(n_cells, n_cells),
        w_ci=mat(n_cells), w_cf=mat(n_cells), w_co=mat(n_cells),
        b_i=mat(n_cells), b_f=mat(n_cells), b_c=mat(n_cells), b_o=mat(n_cells),
    )


def zero_direction(n_in, n_cells):
    z = np.zeros
    return LstmDirectionParams(
        W_xi=z((n_in, n_cells)), W_xf=z((n_in, n_cells)),
        W_xc=z((n_in, n_cells)), W_xo=z((n_in, n_cells)),
        W_hi=z((n_cells, n_cells)), W_hf=z((n_cells, n_cells)),
        W_hc=z((n_cells, n_cells)), W_ho=z((n_cells, n_cells)),
        w_ci=z(n_cells), w_cf=z(n_cells), w_co=z(n_cells),
        b_i=z(n_cells), b_f=z(n_cells), b_c=z(n_cells), b_o=z(n_cells),
    )


class TestInitNetwork:
    def test_all_params_within_range(self):
        net = init_network(10, (8, 6), 4, rng_seed=0)
        for _, arr in param_items(net):
            assert arr.min() >= -INIT_SCALE
            assert arr.max() <= INIT_SCALE

    def test_same_seed_bit_identical(self):
        a = init_network(7, (4, 4), 3, rng_seed=42)
        b = init_network(7, (4, 4), 3, rng_seed=42)
        for (_, pa), (_, pb) in zip(param_items(a), param_items(b)):
            npt.assert_array_equal(pa, pb)

    def test_different_seeds_differ(self):
        a = init_network(7, (4, 4), 3, rng_seed=1)
        b = init_network(7, (4, 4), 3, rng_seed=2)
        equal = total = 0
        for (_, pa), (_, pb) in zip(param_items(a), param_items(b)):
            equal += int((pa == pb).sum())
            total += pa.size
        assert equal / total < 0.01

    def test_layer_chaining(self):
        net = init_network(5, (8, 6), 2, rng_seed=0)
        assert net.layers[0].fwd.n_in == 5
        assert net.layers[1].fwd.n_in == 8
        assert net.output.W_hy.shape == (6, 2)

    def test_odd_cells_rejected(self):
        with pytest.raises(ValueError, match="even"):
            init_network(5, (7,), 2, rng_seed=0)


class TestLstmStep:
    def test_zero_params_give_zeros(self):
        p = zero_direction(3, 4)
        h, c, gates = lstm_step(p, np.ones(3), np.zeros(4), np.zeros(4))
        npt.assert_allclose(gates.i, 0.5)
        npt.assert_allclose(gates.f, 0.5)
        npt.assert_allclose(gates.o, 0.5)
        npt.assert_array_equal(c, 0.0)
        npt.assert_array_equal(h, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        p = zero_direction(3, 4)
        p.b_f += 60.0
        c_prev = np.array([0.3, -0.7, 1.5, 0.0])
        _, c, _ = lstm_step(p, np.ones(3), np.zeros(4), c_prev)
        npt.assert_allclose(c, c_prev, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(123)
        worst = 0.0
        for _ in range(200):
            n_in = int(rng.integers(1, 9))
            n_cells = int(rng.integers(1, 9))
            p = random_direction(rng, n_in, n_cells)
            x = rng.normal(size=n_in)
            h_prev = rng.normal(size=n_cells)
            c_prev = rng.normal(size=n_cells)
            h, c, _ = lstm_step(p, x, h_prev, c_prev)
            h_ref, c_ref, _ = scalar_lstm_step(p, x, h_prev, c_prev)
            worst = max(worst, np.abs(h - h_ref).max(), np.abs(c - c_ref).max())
        assert worst < 1e-12

    def test_batched_rows_match_vector_calls(self):
        rng = np.random.default_rng(5)
        p = random_direction(rng, 4, 3)
        x = rng.normal(size=(6, 4))
        h_prev = rng.normal(size=(6, 3))
        c_prev = rng.normal(size=(6, 3))
        h_all, c_all, _ = lstm_step(p, x, h_prev, c_prev)
        for r in range(6):
            h_r, c_r, _ = lstm_step(p, x[r], h_prev[r], c_prev[r])
            npt.assert_allclose(h_all[r], h_r, atol=1e-12)
            npt.assert_allclose(c_all[r], c_r, atol=1e-12)


class TestForward:
    def test_zero_network_outputs_half(self):
        net = init_network(4, (4,), 3, rng_seed=0)
        for _, arr in param_items(net):
            arr[...] = 0.0
        trace = forward(net, np.random.default_rng(0).normal(size=(7, 4)))
        npt.assert_allclose(trace.y, 0.5)

    def test_outputs_in_unit_interval_and_gates_bounded(self):
        net = init_network(6, (8, 4), 5, rng_seed=3)
        trace = forward(net, np.random.default_rng(1).normal(size=(20, 6)))
        assert trace.y.min() > 0.0 and trace.y.max() < 1.0
        for lt in trace.layers:
            for tr in (lt.fwd, lt.bwd):
                for gate in (tr.i, tr.f, tr.o):
                    assert gate.min() > 0.0 and gate.max() < 1.0
                assert np.abs(tr.h).max() <= 1.0

    def test_forward_uses_lstm_step_semantics(self):
        rng = np.random.default_rng(9)
        net = init_network(5, (6,), 2, rng_seed=7)
        x = rng.normal(size=(11, 5))
        trace = forward(net, x)
        p = net.layers[0].fwd
        h_prev = np.zeros(3)
        c_prev = np.zeros(3)
        for t in range(11):
            h_prev, c_prev, _ = lstm_step(p, x[t], h_prev, c_prev)
            npt.assert_allclose(trace.layers[0].fwd.h[0, t], h_prev, atol=1e-12)

    def test_batch_equals_per_sequence(self):
        rng = np.random.default_rng(11)
        net = init_network(5, (6, 4), 3, rng_seed=2)
        batch = rng.normal(size=(4, 9, 5))
        y_batch = forward_batch(net, batch).y
        for n in range(4):
            y_single = forward(net, batch[n]).y[0]
            npt.assert_allclose(y_batch[n], y_single, atol=1e-12)

    def test_zeroed_backward_direction_is_causal(self):
        rng = np.random.default_rng(13)
        net = init_network(4, (6,), 2, rng_seed=5)
        for name, arr in param_items(net):
            if ".bwd." in name:
                arr[...] = 0.0
        x = rng.normal(size=(10, 4))
        y_base = forward(net, x).y[0]
        x_perturbed = x.copy()
        x_perturbed[-1] += 3.0
        y_pert = forward(net, x_perturbed).y[0]
        npt.assert_allclose(y_base[:-1], y_pert[:-1], atol=1e-12)
        assert np.abs(y_base[-1] - y_pert[-1]).max() > 1e-6

    def test_palindrome_with_mirrored_parameters(self):
        # Both directions share parameters; layer-1 input weights and the
        # output weights are tied across the two hidden halves, so swapping
        # the halves cannot change the result. A palindromic input then
        # yields a palindromic output.
        rng = np.random.default_rng(21)
        net = init_network(3, (8, 8), 2, rng_seed=17)
        for layer in net.layers:
            for fname in (
                "W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc", "W_ho",
                "w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o",
            ):
                setattr(layer.bwd, fname, getattr(layer.fwd, fname).copy())
        w1 = net.layers[1]
        for fname in ("W_xi", "W_xf", "W_xc", "W_xo"):
            for direction in (w1.fwd, w1.bwd):
                w = getattr(direction, fname)
                w[4:] = w[:4]
        net.output.W_hy[4:] = net.output.W_hy[:4]

        half_seq = rng.normal(size=(6, 3))
        x = np.concatenate([half_seq, half_seq[::-1]], axis=0)
        y = forward(net, x).y[0]
        npt.assert_allclose(y, y[::-1], atol=1e-12)

    def test_class_sums_can_exceed_one(self):
        net = init_network(3, (4,), 4, rng_seed=0)
        net.output.W_hy[...] = 0.0
        net.output.b_y[...] = 5.0
        trace = forward(net, np.zeros((3, 3)))
        assert trace.y.sum(axis=2).min() > 1.0

    def test_noise_requires_rng_and_changes_input(self):
        net = init_network(4, (4,), 2, rng_seed=1)
        x = np.zeros((5, 4))
        with pytest.raises(ValueError, match="generator"):
            forward(net, x, noise_sigma=0.2)
        t1 = forward(net, x, noise_sigma=0.2, rng=np.random.default_rng(0))
        t2 = forward(net, x, noise_sigma=0.2, rng=np.random.default_rng(0))
        npt.assert_array_equal(t1.y, t2.y)
        t3 = forward(net, x)
        assert np.abs(t1.y - t3.y).max() > 0


class TestBptt:
    def test_perfect_outputs_give_zero_gradients(self):
        net = init_network(3, (4,), 2, rng_seed=0)
        x = np.random.default_rng(0).normal(size=(6, 3))
        trace = forward(net, x)
        targets = trace.y.copy()
        grads, cost = bptt(net, trace, targets)
        assert cost == 0.0
        for g in grads.values():
            npt.assert_array_equal(g, 0.0)

    def test_single_step_single_cell_chain_rule(self):
        # One timestep, one cell per direction, one class: the composition
        # is small enough to differentiate symbolically via its pieces.
        net = init_network(1, (2,), 1, rng_seed=3)
        x = np.array([[0.7]])
        d = np.array([[1.0]])
        trace = forward(net, x)
        grads, _ = bptt(net, trace, d)

        y = trace.y[0, 0, 0]
        residual = y - 1.0
        dy = 2.0 * residual
        da_y = dy * y * (1.0 - y)
        npt.assert_allclose(grads["output.b_y"], [da_y], atol=1e-12)
        top = trace.top[0, 0]
        npt.assert_allclose(grads["output.W_hy"].ravel(), da_y * top, atol=1e-12)

        # Forward-direction output gate bias via the h = o * tanh(c) path.
        p = net.layers[0].fwd
        tr = trace.layers[0].fwd
        dh = da_y * net.output.W_hy[0, 0]
        o = tr.o[0, 0, 0]
        c = tr.c[0, 0, 0]
        da_o = dh * np.tanh(c) * o * (1 - o)
        npt.assert_allclose(grads["layer0.fwd.b_o"], [da_o], atol=1e-12)
        # Input gate bias: dc flows through both tanh'(c) and the o-peephole.
        dc = dh * o * (1 - np.tanh(c) ** 2) + da_o * p.w_co[0]
        i = tr.i[0, 0, 0]
        g = tr.g[0, 0, 0]
        da_i = dc * g * i * (1 - i)
        npt.assert_allclose(grads["layer0.fwd.b_i"], [da_i], atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = random_toy_network(seed, n_bands=4, cells_per_layer=(4, 4), n_classes=3)
        x = rng.normal(size=(2, 7, 4))
        d = (rng.random((2, 7, 3)) < 0.5).astype(float)
        trace = forward_batch(net, x)
        analytic, _ = bptt(net, trace, d)
        numeric = finite_difference_gradients(net, x, d)
        for name in analytic:
            err = np.abs(analytic[name] - numeric[name])
            denom = np.maximum(np.abs(analytic[name]), 1e-8)
            assert (err / denom).max() < 1e-4, name

    def test_cost_is_rmse(self):
        net = init_network(3, (4,), 2, rng_seed=1)
        x = np.random.default_rng(2).normal(size=(5, 3))
        d = np.zeros((5, 2))
        trace = forward(net, x)
        _, cost = bptt(net, trace, d)
        assert cost == pytest.approx(np.sqrt(np.mean(trace.y[0] ** 2)))


class TestRmsProp:
    def test_zero_gradient_leaves_weights(self):
        net = init_network(3, (4,), 2, rng_seed=0)
        before = {k: v.copy() for k, v in param_dict(net).items()}
        state = init_rmsprop(net)
        state.accumulators["output.b_y"][...] = 0.5
        grads = {k: np.zeros_like(v) for k, v in param_dict(net).items()}
        rmsprop_update(net, grads, state)
        for k, v in param_dict(net).items():
            npt.assert_array_equal(v, before[k])
        npt.assert_allclose(state.accumulators["output.b_y"], 0.45)

    def test_first_step_magnitude(self):
        net = init_network(3, (4,), 2, rng_seed=0)
        before = net.output.b_y.copy()
        state = init_rmsprop(net, eta=0.005, rho=0.9, epsilon=1e-8)
        grads = {k: np.zeros_like(v) for k, v in param_dict(net).items()}
        grads["output.b_y"][...] = 1.0
        rmsprop_update(net, grads, state)
        delta = net.output.b_y - before
        npt.assert_allclose(delta, -0.0158114, atol=1e-6)

    def test_constant_gradient_step_approaches_eta(self):
        net = init_network(3, (4,), 2, rng_seed=0)
        state = init_rmsprop(net, eta=0.005)
        grads = {k: np.zeros_like(v) for k, v in param_dict(net).items()}
        grads["output.b_y"][...] = 1.0
        for _ in range(400):
            before = net.output.b_y.copy()
            rmsprop_update(net, grads, state)
        npt.assert_allclose(np.abs(net.output.b_y - before), 0.005, atol=1e-6)

    def test_nonfinite_gradient_aborts_cleanly(self):
        net = init_network(3, (4,), 2, rng_seed=0)
        before = {k: v.copy() for k, v in param_dict(net).items()}
        state = init_rmsprop(net)
        grads = {k: np.zeros_like(v) for k, v in param_dict(net).items()}
        grads["layer0.fwd.W_xi"][0, 0] = np.nan
        with pytest.raises(DivergenceError):
            rmsprop_update(net, grads, state)
        for k, v in param_dict(net).items():
            npt.assert_array_equal(v, before[k])

    def test_elementwise_independence(self):
        # Updating parameters is order-free: permuting the gradient dict
        # changes nothing.
        net_a = init_network(3, (4,), 2, rng_seed=9)
        net_b = clone_network(net_a)
        rng = np.random.default_rng(0)
        grads = {k: rng.normal(size=v.shape) for k, v in param_dict(net_a).items()}
        rmsprop_update(net_a, grads, init_rmsprop(net_a))
        reversed_grads = dict(reversed(list(grads.items())))
        rmsprop_update(net_b, reversed_grads, init_rmsprop(net_b))
        for (_, va), (_, vb) in zip(param_items(net_a), param_items(net_b)):
            npt.assert_array_equal(va, vb)


class TestPredictPosteriors:
    def test_covers_every_frame(self):
        net = init_network(4, (4,), 3, rng_seed=0)
        x = np.random.default_rng(1).normal(size=(57, 4))
        y = predict_posteriors(net, x, chunk_len=25)
        assert y.shape == (57, 3)

    def test_chunks_match_direct_forward(self):
        net = init_network(4, (6,), 2, rng_seed=1)
        x = np.random.default_rng(3).normal(size=(50, 4))
        y = predict_posteriors(net, x, chunk_len=25)
        direct_first = forward(net, x[:25]).y[0]
        npt.assert_allclose(y[:25], direct_first, atol=1e-12)
