"""Bidirectional peephole-LSTM network: forward pass, BPTT, RMSProp.

The recurrence per direction and timestep is

    i_t = sigmoid(W_xi x_t + W_hi h_{t-1} + w_ci * c_{t-1} + b_i)
    f_t = sigmoid(W_xf x_t + W_hf h_{t-1} + w_cf * c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(W_xc x_t + W_hc h_{t-1} + b_c)
    o_t = sigmoid(W_xo x_t + W_ho h_{t-1} + w_co * c_t + b_o)
    h_t = o_t * tanh(c_t)

with diagonal (per-cell) peephole weights w_ci, w_cf, w_co and zero initial
states. Each layer runs one pass left-to-right and one right-to-left over
its input; the two hidden streams are concatenated per timestep and fed to
the next layer. The output layer applies an independent logistic unit per
class (no softmax), so class posteriors need not sum to 1.

Training minimizes the mean squared error of the outputs; the reported
cost is its square root (RMSE). Gradients are exact full-unroll
backpropagation through time, including all peephole paths. All
arithmetic is 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np
from scipy.special import expit

from .errors import DivergenceError
from .features import BandNormalizer

INIT_SCALE = 0.1

# Field order fixes the parameter iteration order everywhere (init, updates,
# serialization, gradient checks).
_DIRECTION_FIELDS = (
    "W_xi", "W_xf", "W_xc", "W_xo",
    "W_hi", "W_hf", "W_hc", "W_ho",
    "w_ci", "w_cf", "w_co",
    "b_i", "b_f", "b_c", "b_o",
)


@dataclass
class LstmDirectionParams:
    """Weights for one scan direction of one layer."""

    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def n_in(self) -> int:
        return self.W_xi.shape[0]

    @property
    def n_cells(self) -> int:
        return self.W_xi.shape[1]


@dataclass
class LstmLayerParams:
    """Forward and backward direction parameters of one layer."""

    fwd: LstmDirectionParams
    bwd: LstmDirectionParams


@dataclass
class OutputLayerParams:
    """Logistic output layer mapping concatenated hidden states to classes."""

    W_hy: np.ndarray
    b_y: np.ndarray


@dataclass
class BlstmNetwork:
    """All trainable tensors plus the fitted feature normalizer."""

    layers: list[LstmLayerParams]
    output: OutputLayerParams
    n_bands: int
    cells_per_layer: tuple
    normalizer: BandNormalizer | None = None
    class_names: list[str] | None = None

    @property
    def n_classes(self) -> int:
        return self.output.b_y.size


@dataclass
class StepTrace:
    """Gate activations of a single cell step."""

    i: np.ndarray
    f: np.ndarray
    o: np.ndarray


@dataclass
class DirectionTrace:
    """Per-timestep activations of one direction, in its own scan order."""

    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass
class LayerTrace:
    fwd: DirectionTrace
    bwd: DirectionTrace


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, plus the outputs y."""

    inputs: list[np.ndarray]
    layers: list[LayerTrace]
    top: np.ndarray
    y: np.ndarray


def init_network(
    n_bands: int,
    cells_per_layer,
    n_classes: int,
    rng_seed: int,
    normalizer: BandNormalizer | None = None,
    class_names: list[str] | None = None,
) -> BlstmNetwork:
    """Create a network with all weights and biases drawn i.i.d. uniform
    on [-INIT_SCALE, INIT_SCALE] from the seeded generator.

    `cells_per_layer` counts total units per layer; each direction gets
    half, so every entry must be even.
    """
    cells_per_layer = tuple(int(c) for c in cells_per_layer)
    if n_bands < 1 or n_classes < 1 or not cells_per_layer:
        raise ValueError("invalid architecture")
    if any(c < 2 or c % 2 for c in cells_per_layer):
        raise ValueError("cells per layer must be even (half per direction)")

    rng = np.random.default_rng(rng_seed)

    def uniform(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    def direction(n_in, n_cells):
        shapes = {
            "W_xi": (n_in, n_cells), "W_xf": (n_in, n_cells),
            "W_xc": (n_in, n_cells), "W_xo": (n_in, n_cells),
            "W_hi": (n_cells, n_cells), "W_hf": (n_cells, n_cells),
            "W_hc": (n_cells, n_cells), "W_ho": (n_cells, n_cells),
            "w_ci": (n_cells,), "w_cf": (n_cells,), "w_co": (n_cells,),
            "b_i": (n_cells,), "b_f": (n_cells,), "b_c": (n_cells,),
            "b_o": (n_cells,),
        }
        return LstmDirectionParams(**{k: uniform(*shapes[k]) for k in _DIRECTION_FIELDS})

    layers = []
    n_in = n_bands
    for total in cells_per_layer:
        half = total // 2
        layers.append(LstmLayerParams(fwd=direction(n_in, half), bwd=direction(n_in, half)))
        n_in = total
    output = OutputLayerParams(W_hy=uniform(n_in, n_classes), b_y=uniform(n_classes))
    return BlstmNetwork(
        layers=layers,
        output=output,
        n_bands=n_bands,
        cells_per_layer=cells_per_layer,
        normalizer=normalizer,
        class_names=list(class_names) if class_names is not None else None,
    )


def param_items(net: BlstmNetwork) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (name, array) views over every parameter tensor, in a fixed order."""
    for li, layer in enumerate(net.layers):
        for dname in ("fwd", "bwd"):
            direction = getattr(layer, dname)
            for fname in _DIRECTION_FIELDS:
                yield f"layer{li}.{dname}.{fname}", getattr(direction, fname)
    yield "output.W_hy", net.output.W_hy
    yield "output.b_y", net.output.b_y


def param_dict(net: BlstmNetwork) -> dict[str, np.ndarray]:
    return dict(param_items(net))


def clone_network(net: BlstmNetwork) -> BlstmNetwork:
    """Deep copy of all parameter tensors (normalizer/class names shared)."""

    def copy_direction(d):
        return LstmDirectionParams(**{f.name: getattr(d, f.name).copy() for f in fields(d)})

    return BlstmNetwork(
        layers=[
            LstmLayerParams(fwd=copy_direction(l.fwd), bwd=copy_direction(l.bwd))
            for l in net.layers
        ],
        output=OutputLayerParams(W_hy=net.output.W_hy.copy(), b_y=net.output.b_y.copy()),
        n_bands=net.n_bands,
        cells_per_layer=net.cells_per_layer,
        normalizer=net.normalizer,
        class_names=net.class_names,
    )


def lstm_step(
    params: LstmDirectionParams,
    x_t: np.ndarray,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, StepTrace]:
    """One cell update. Inputs may be vectors or (batch, dim) matrices."""
    a_i = x_t @ params.W_xi + h_prev @ params.W_hi + c_prev * params.w_ci + params.b_i
    a_f = x_t @ params.W_xf + h_prev @ params.W_hf + c_prev * params.w_cf + params.b_f
    i_t = expit(a_i)
    f_t = expit(a_f)
    g_t = np.tanh(x_t @ params.W_xc + h_prev @ params.W_hc + params.b_c)
    c_t = f_t * c_prev + i_t * g_t
    o_t = expit(x_t @ params.W_xo + h_prev @ params.W_ho + c_t * params.w_co + params.b_o)
    h_t = o_t * np.tanh(c_t)
    return h_t, c_t, StepTrace(i=i_t, f=f_t, o=o_t)


def _run_direction(p: LstmDirectionParams, x: np.ndarray) -> DirectionTrace:
    """Scan one direction over x of shape (batch, time, n_in)."""
    n_seq, n_t, _ = x.shape
    n_c = p.n_cells
    # Input projections for all timesteps in one product per gate.
    flat = x.reshape(n_seq * n_t, -1)
    p_i = (flat @ p.W_xi).reshape(n_seq, n_t, n_c) + p.b_i
    p_f = (flat @ p.W_xf).reshape(n_seq, n_t, n_c) + p.b_f
    p_g = (flat @ p.W_xc).reshape(n_seq, n_t, n_c) + p.b_c
    p_o = (flat @ p.W_xo).reshape(n_seq, n_t, n_c) + p.b_o

    i = np.empty((n_seq, n_t, n_c))
    f = np.empty_like(i)
    g = np.empty_like(i)
    o = np.empty_like(i)
    c = np.empty_like(i)
    h = np.empty_like(i)

    h_prev = np.zeros((n_seq, n_c))
    c_prev = np.zeros((n_seq, n_c))
    for t in range(n_t):
        i_t = expit(p_i[:, t] + h_prev @ p.W_hi + c_prev * p.w_ci)
        f_t = expit(p_f[:, t] + h_prev @ p.W_hf + c_prev * p.w_cf)
        g_t = np.tanh(p_g[:, t] + h_prev @ p.W_hc)
        c_t = f_t * c_prev + i_t * g_t
        o_t = expit(p_o[:, t] + h_prev @ p.W_ho + c_t * p.w_co)
        h_t = o_t * np.tanh(c_t)
        i[:, t], f[:, t], g[:, t], o[:, t] = i_t, f_t, g_t, o_t
        c[:, t], h[:, t] = c_t, h_t
        h_prev, c_prev = h_t, c_t
    return DirectionTrace(i=i, f=f, g=g, o=o, c=c, h=h)


def forward_batch(
    net: BlstmNetwork,
    features: np.ndarray,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> ForwardTrace:
    """Run the network over a batch of sequences, shape (batch, time, bands).

    With noise_sigma > 0 (training only) i.i.d. zero-mean Gaussian noise is
    added to the input features; `rng` is a numpy Generator or an integer
    seed. Pass noise_sigma=0 for evaluation.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, time, bands) input, got shape {x.shape}")
    if x.shape[2] != net.n_bands:
        raise ValueError(f"network expects {net.n_bands} bands, got {x.shape[2]}")
    if x.shape[1] < 1:
        raise ValueError("need at least one timestep")
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise injection needs a random generator or seed")
        rng = np.random.default_rng(rng)
        x = x + rng.normal(0.0, noise_sigma, size=x.shape)

    inputs = []
    layer_traces = []
    current = x
    for layer in net.layers:
        inputs.append(current)
        tr_f = _run_direction(layer.fwd, current)
        tr_b = _run_direction(layer.bwd, current[:, ::-1])
        layer_traces.append(LayerTrace(fwd=tr_f, bwd=tr_b))
        current = np.concatenate([tr_f.h, tr_b.h[:, ::-1]], axis=2)

    n_seq, n_t, n_top = current.shape
    y = expit(
        (current.reshape(n_seq * n_t, n_top) @ net.output.W_hy).reshape(
            n_seq, n_t, -1
        )
        + net.output.b_y
    )
    return ForwardTrace(inputs=inputs, layers=layer_traces, top=current, y=y)


def forward(
    net: BlstmNetwork,
    features: np.ndarray,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> ForwardTrace:
    """Run the network over a single (time, bands) sequence."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (time, bands) input, got shape {x.shape}")
    return forward_batch(net, x[None], noise_sigma=noise_sigma, rng=rng)


def _backward_direction(
    p: LstmDirectionParams,
    tr: DirectionTrace,
    x: np.ndarray,
    d_h: np.ndarray,
    grads: dict[str, np.ndarray],
    prefix: str,
) -> np.ndarray:
    """Backpropagate one direction; x, d_h and tr share the scan order.

    Accumulates parameter gradients into `grads` and returns the gradient
    with respect to x.
    """
    n_seq, n_t, _ = x.shape
    d_x = np.empty_like(x)
    dh_carry = np.zeros((n_seq, p.n_cells))
    dc_carry = np.zeros((n_seq, p.n_cells))

    g_wxi = grads[prefix + "W_xi"]
    g_wxf = grads[prefix + "W_xf"]
    g_wxc = grads[prefix + "W_xc"]
    g_wxo = grads[prefix + "W_xo"]
    g_whi = grads[prefix + "W_hi"]
    g_whf = grads[prefix + "W_hf"]
    g_whc = grads[prefix + "W_hc"]
    g_who = grads[prefix + "W_ho"]

    for t in range(n_t - 1, -1, -1):
        i_t, f_t, g_t, o_t, c_t = tr.i[:, t], tr.f[:, t], tr.g[:, t], tr.o[:, t], tr.c[:, t]
        c_prev = tr.c[:, t - 1] if t > 0 else np.zeros_like(c_t)
        h_prev = tr.h[:, t - 1] if t > 0 else np.zeros_like(c_t)
        tanh_c = np.tanh(c_t)

        dh = d_h[:, t] + dh_carry
        da_o = dh * tanh_c * o_t * (1.0 - o_t)
        dc = dh * o_t * (1.0 - tanh_c * tanh_c) + dc_carry + da_o * p.w_co
        da_i = dc * g_t * i_t * (1.0 - i_t)
        da_f = dc * c_prev * f_t * (1.0 - f_t)
        da_g = dc * i_t * (1.0 - g_t * g_t)

        g_wxi += x[:, t].T @ da_i
        g_wxf += x[:, t].T @ da_f
        g_wxc += x[:, t].T @ da_g
        g_wxo += x[:, t].T @ da_o
        g_whi += h_prev.T @ da_i
        g_whf += h_prev.T @ da_f
        g_whc += h_prev.T @ da_g
        g_who += h_prev.T @ da_o
        grads[prefix + "w_ci"] += (da_i * c_prev).sum(axis=0)
        grads[prefix + "w_cf"] += (da_f * c_prev).sum(axis=0)
        grads[prefix + "w_co"] += (da_o * c_t).sum(axis=0)
        grads[prefix + "b_i"] += da_i.sum(axis=0)
        grads[prefix + "b_f"] += da_f.sum(axis=0)
        grads[prefix + "b_c"] += da_g.sum(axis=0)
        grads[prefix + "b_o"] += da_o.sum(axis=0)

        d_x[:, t] = da_i @ p.W_xi.T + da_f @ p.W_xf.T + da_g @ p.W_xc.T + da_o @ p.W_xo.T
        dh_carry = da_i @ p.W_hi.T + da_f @ p.W_hf.T + da_g @ p.W_hc.T + da_o @ p.W_ho.T
        dc_carry = dc * f_t + da_i * p.w_ci + da_f * p.w_cf
    return d_x


def bptt(
    net: BlstmNetwork, trace: ForwardTrace, targets: np.ndarray
) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradients of the mean squared output error, plus the RMSE.

    Targets must align with the trace outputs, shape (batch, time, classes)
    or (time, classes) for a single-sequence trace. The returned gradients
    differentiate the squared-error mean over all (sequence, frame, class)
    cells; the returned cost is its square root.
    """
    d = np.asarray(targets, dtype=np.float64)
    if d.ndim == 2:
        d = d[None]
    y = trace.y
    if d.shape != y.shape:
        raise ValueError(f"targets shape {d.shape} does not match outputs {y.shape}")

    grads = {name: np.zeros_like(arr) for name, arr in param_items(net)}
    residual = y - d
    mse = float(np.mean(residual * residual))

    d_y = (2.0 / residual.size) * residual
    da_y = d_y * y * (1.0 - y)
    n_seq, n_t, n_top = trace.top.shape
    top_flat = trace.top.reshape(n_seq * n_t, n_top)
    da_flat = da_y.reshape(n_seq * n_t, -1)
    grads["output.W_hy"] += top_flat.T @ da_flat
    grads["output.b_y"] += da_flat.sum(axis=0)
    d_top = (da_flat @ net.output.W_hy.T).reshape(n_seq, n_t, n_top)

    d_current = d_top
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        tr = trace.layers[li]
        x = trace.inputs[li]
        half = layer.fwd.n_cells
        d_hf = d_current[:, :, :half]
        d_hb = d_current[:, :, half:]
        d_x_f = _backward_direction(
            layer.fwd, tr.fwd, x, d_hf, grads, f"layer{li}.fwd."
        )
        d_x_b = _backward_direction(
            layer.bwd, tr.bwd, x[:, ::-1], d_hb[:, ::-1], grads, f"layer{li}.bwd."
        )
        d_current = d_x_f + d_x_b[:, ::-1]

    return grads, float(np.sqrt(mse))


def cost_terms(net: BlstmNetwork, features: np.ndarray, targets: np.ndarray) -> tuple[float, int]:
    """Noise-free squared-error sum and element count for one batch."""
    trace = forward_batch(net, features)
    d = np.asarray(targets, dtype=np.float64)
    residual = trace.y - d
    return float(np.sum(residual * residual)), residual.size


def predict_posteriors(net: BlstmNetwork, features: np.ndarray, chunk_len: int = 100) -> np.ndarray:
    """Noise-free class posteriors for a full recording, frame by frame.

    The feature matrix is split into `chunk_len`-frame sequences (a shorter
    final remainder is kept) so every frame receives a prediction.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (time, bands) features, got shape {x.shape}")
    n = x.shape[0]
    full = n // chunk_len
    parts = []
    if full:
        stacked = x[: full * chunk_len].reshape(full, chunk_len, x.shape[1])
        parts.append(forward_batch(net, stacked).y.reshape(full * chunk_len, -1))
    if n % chunk_len:
        parts.append(forward_batch(net, x[None, full * chunk_len :]).y[0])
    return np.concatenate(parts, axis=0)


@dataclass
class RmsPropState:
    """Running mean-square gradient caches plus the step hyperparameters."""

    accumulators: dict[str, np.ndarray]
    eta: float = 0.005
    rho: float = 0.9
    epsilon: float = 1e-8


def init_rmsprop(
    net: BlstmNetwork, eta: float = 0.005, rho: float = 0.9, epsilon: float = 1e-8
) -> RmsPropState:
    if eta <= 0 or not 0.0 < rho < 1.0 or epsilon <= 0:
        raise ValueError("invalid RMSProp hyperparameters")
    return RmsPropState(
        accumulators={name: np.zeros_like(arr) for name, arr in param_items(net)},
        eta=eta,
        rho=rho,
        epsilon=epsilon,
    )


def rmsprop_update(
    net: BlstmNetwork, grads: dict[str, np.ndarray], state: RmsPropState
) -> tuple[BlstmNetwork, RmsPropState]:
    """Apply one RMSProp step in place:

        r <- rho * r + (1 - rho) * g^2
        w <- w - eta * g / sqrt(r + epsilon)

    A non-finite gradient entry aborts before touching any weight or cache.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}")
    for name, arr in param_items(net):
        grad = grads[name]
        cache = state.accumulators[name]
        cache *= state.rho
        cache += (1.0 - state.rho) * grad * grad
        arr -= state.eta * grad / np.sqrt(cache + state.epsilon)
    return net, state
