"""A small recurrent network with exact backpropagation through time.

Stacked tanh-RNN or LSTM layers (optionally bidirectional, outputs of
the two directions concatenated), followed by a per-frame affine map
and softmax over ``num_labels + 1`` classes with the blank last. All
parameters live in a flat dict of named float64 tensors so they can be
serialized, audited against the architecture, and updated uniformly by
the optimizers.

Only frames ``[0, input_len)`` enter the recurrences in either
direction; later rows are padding, produce softmax(output bias), and
never influence gradients. Forward and backward use fixed summation
orders, so results are bit-reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

RNN_TENSORS = ("Wx", "Wh", "b")
LSTM_GATES = ("i", "f", "g", "o")
LSTM_TENSORS = tuple(
    name for gate in LSTM_GATES for name in ("Wx_" + gate, "Wh_" + gate, "b_" + gate)
)


class NonFiniteGradient(Exception):
    """A gradient tensor contains NaN or infinity; the step was aborted."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str                  # "rnn" | "lstm"
    units: int                 # per direction
    bidirectional: bool = True

    @property
    def width(self):
        return self.units * (2 if self.bidirectional else 1)


@dataclass(frozen=True)
class NetworkSpec:
    feature_dim: int
    num_labels: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def num_classes(self):
        return self.num_labels + 1


def validate_spec(spec):
    if spec.feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    if spec.num_labels < 1:
        raise ValueError("num_labels must be >= 1")
    if not spec.layers:
        raise ValueError("at least one recurrent layer is required")
    for layer in spec.layers:
        if layer.kind not in ("rnn", "lstm"):
            raise ValueError("unknown layer kind %r" % (layer.kind,))
        if layer.units < 1:
            raise ValueError("layer units must be >= 1")


def spec_to_dict(spec):
    return {
        "feature_dim": spec.feature_dim,
        "num_labels": spec.num_labels,
        "layers": [
            {
                "kind": layer.kind,
                "units": layer.units,
                "bidirectional": layer.bidirectional,
            }
            for layer in spec.layers
        ],
    }


def spec_from_dict(d):
    try:
        spec = NetworkSpec(
            feature_dim=int(d["feature_dim"]),
            num_labels=int(d["num_labels"]),
            layers=tuple(
                LayerSpec(
                    kind=str(ld["kind"]),
                    units=int(ld["units"]),
                    bidirectional=bool(ld["bidirectional"]),
                )
                for ld in d["layers"]
            ),
        )
    except (KeyError, TypeError) as err:
        raise ValueError("malformed network description: %s" % err) from err
    validate_spec(spec)
    return spec


def _directions(layer):
    return ("fwd", "bwd") if layer.bidirectional else ("fwd",)


def param_shapes(spec):
    """Expected tensor names and shapes, in construction order."""
    validate_spec(spec)
    shapes = {}
    in_dim = spec.feature_dim
    for li, layer in enumerate(spec.layers):
        tensors = RNN_TENSORS if layer.kind == "rnn" else LSTM_TENSORS
        for d in _directions(layer):
            for name in tensors:
                key = "layer%d.%s.%s" % (li, d, name)
                if name.startswith("Wx"):
                    shapes[key] = (in_dim, layer.units)
                elif name.startswith("Wh"):
                    shapes[key] = (layer.units, layer.units)
                else:
                    shapes[key] = (layer.units,)
        in_dim = layer.width
    shapes["output.W"] = (in_dim, spec.num_classes)
    shapes["output.b"] = (spec.num_classes,)
    return shapes


def audit_params(spec, params):
    """Check that ``params`` carries exactly the tensors the spec implies."""
    expected = param_shapes(spec)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(
            "parameter set mismatch: missing %r, unexpected %r" % (missing, extra)
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(
                "tensor %s has shape %r, expected %r"
                % (name, params[name].shape, shape)
            )


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases, LSTM forget bias 1.0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(spec).items():
        tensor = name.rsplit(".", 1)[-1]
        if tensor.startswith("b"):
            value = np.zeros(shape)
            if tensor == "b_f":
                value += 1.0
        else:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value
    return params


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _rnn_forward(xs, Wx, Wh, b):
    steps = xs.shape[0]
    hs = np.zeros((steps, Wh.shape[0]))
    h = np.zeros(Wh.shape[0])
    for t in range(steps):
        h = np.tanh(xs[t] @ Wx + h @ Wh + b)
        hs[t] = h
    return hs, (xs, hs)


def _rnn_backward(d_hs, cache, Wx, Wh):
    xs, hs = cache
    steps, units = hs.shape
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(units)
    dxs = np.zeros(xs.shape)
    dh_next = np.zeros(units)
    for t in range(steps - 1, -1, -1):
        dh = d_hs[t] + dh_next
        da = dh * (1.0 - hs[t] ** 2)
        h_prev = hs[t - 1] if t > 0 else np.zeros(units)
        dWx += np.outer(xs[t], da)
        dWh += np.outer(h_prev, da)
        db += da
        dxs[t] = da @ Wx.T
        dh_next = da @ Wh.T
    return dxs, {"Wx": dWx, "Wh": dWh, "b": db}


def _lstm_forward(xs, w):
    steps = xs.shape[0]
    units = w["b_i"].size
    gates = {g: np.zeros((steps, units)) for g in LSTM_GATES}
    cs = np.zeros((steps, units))
    tcs = np.zeros((steps, units))
    hs = np.zeros((steps, units))
    h = np.zeros(units)
    c = np.zeros(units)
    for t in range(steps):
        x = xs[t]
        i = _sigmoid(x @ w["Wx_i"] + h @ w["Wh_i"] + w["b_i"])
        f = _sigmoid(x @ w["Wx_f"] + h @ w["Wh_f"] + w["b_f"])
        g = np.tanh(x @ w["Wx_g"] + h @ w["Wh_g"] + w["b_g"])
        o = _sigmoid(x @ w["Wx_o"] + h @ w["Wh_o"] + w["b_o"])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates["i"][t], gates["f"][t], gates["g"][t], gates["o"][t] = i, f, g, o
        cs[t], tcs[t], hs[t] = c, tc, h
    return hs, (xs, gates, cs, tcs, hs)


def _lstm_backward(d_hs, cache, w):
    xs, gates, cs, tcs, hs = cache
    steps, units = hs.shape
    grads = {name: np.zeros_like(w[name]) for name in LSTM_TENSORS}
    dxs = np.zeros(xs.shape)
    dh_next = np.zeros(units)
    dc_next = np.zeros(units)
    for t in range(steps - 1, -1, -1):
        i, f, g, o = (gates[name][t] for name in LSTM_GATES)
        c_prev = cs[t - 1] if t > 0 else np.zeros(units)
        h_prev = hs[t - 1] if t > 0 else np.zeros(units)
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tcs[t] ** 2)
        da = {
            "i": dc * g * i * (1.0 - i),
            "f": dc * c_prev * f * (1.0 - f),
            "g": dc * i * (1.0 - g ** 2),
            "o": dh * tcs[t] * o * (1.0 - o),
        }
        dx = np.zeros(xs.shape[1])
        dh_next = np.zeros(units)
        for gate in LSTM_GATES:
            grads["Wx_" + gate] += np.outer(xs[t], da[gate])
            grads["Wh_" + gate] += np.outer(h_prev, da[gate])
            grads["b_" + gate] += da[gate]
            dx += da[gate] @ w["Wx_" + gate].T
            dh_next = dh_next + da[gate] @ w["Wh_" + gate].T
        dxs[t] = dx
        dc_next = dc * f
    return dxs, grads


@dataclass
class NetCache:
    """Activations recorded by forward for use in backward."""

    input_len: int
    num_frames: int
    layer_caches: list = field(repr=False)
    hidden: np.ndarray = field(repr=False)
    logits: np.ndarray = field(repr=False)


def _layer_weights(params, li, d, kind):
    tensors = RNN_TENSORS if kind == "rnn" else LSTM_TENSORS
    return {name: params["layer%d.%s.%s" % (li, d, name)] for name in tensors}


def forward(spec, params, features, input_len=None):
    """Run the network over one sequence.

    Returns (probs, cache): probs has one row per input frame, each row
    a distribution over the num_labels + 1 classes; rows at
    t >= input_len are masked padding (they carry softmax(output bias))
    and must not be consumed downstream.
    """
    audit_params(spec, params)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.feature_dim:
        raise ValueError(
            "features must be (T, %d), got %r" % (spec.feature_dim, features.shape)
        )
    T = features.shape[0]
    if input_len is None:
        input_len = T
    if not 1 <= input_len <= T:
        raise ValueError("input_len %d outside [1, %d]" % (input_len, T))

    x = np.ascontiguousarray(features[:input_len])
    layer_caches = []
    for li, layer in enumerate(spec.layers):
        outs = []
        dir_caches = []
        for d in _directions(layer):
            seq = x if d == "fwd" else x[::-1]
            w = _layer_weights(params, li, d, layer.kind)
            if layer.kind == "rnn":
                hs, cache = _rnn_forward(seq, w["Wx"], w["Wh"], w["b"])
            else:
                hs, cache = _lstm_forward(seq, w)
            outs.append(hs if d == "fwd" else hs[::-1])
            dir_caches.append(cache)
        x = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)
        layer_caches.append(dir_caches)

    hidden = x
    logits = hidden @ params["output.W"] + params["output.b"]
    probs = np.empty((T, spec.num_classes))
    probs[:input_len] = _softmax_rows(logits)
    if input_len < T:
        probs[input_len:] = _softmax_rows(params["output.b"][None, :])
    cache = NetCache(
        input_len=input_len,
        num_frames=T,
        layer_caches=layer_caches,
        hidden=hidden,
        logits=logits,
    )
    return probs, cache


def backward(spec, params, cache, grad_logits):
    """Exact parameter gradients for the loss behind ``grad_logits``.

    ``grad_logits`` is (T, num_classes) with rows at t >= input_len
    exactly zero (they are padding and carry no loss).
    """
    audit_params(spec, params)
    if len(cache.layer_caches) != len(spec.layers):
        raise ValueError("cache does not match the network spec")
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != (cache.num_frames, spec.num_classes):
        raise ValueError(
            "grad_logits must be (%d, %d), got %r"
            % (cache.num_frames, spec.num_classes, grad_logits.shape)
        )
    if np.any(grad_logits[cache.input_len:]):
        raise ValueError("grad_logits rows beyond input_len must be zero")

    g = grad_logits[: cache.input_len]
    grads = {
        "output.W": cache.hidden.T @ g,
        "output.b": g.sum(axis=0),
    }
    dh = g @ params["output.W"].T
    for li in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[li]
        dirs = _directions(layer)
        if len(cache.layer_caches[li]) != len(dirs):
            raise ValueError("cache does not match the network spec")
        dx_total = None
        for di, d in enumerate(dirs):
            dh_dir = dh[:, di * layer.units:(di + 1) * layer.units]
            if d == "bwd":
                dh_dir = dh_dir[::-1]
            w = _layer_weights(params, li, d, layer.kind)
            if layer.kind == "rnn":
                dxs, tgrads = _rnn_backward(
                    dh_dir, cache.layer_caches[li][di], w["Wx"], w["Wh"]
                )
            else:
                dxs, tgrads = _lstm_backward(dh_dir, cache.layer_caches[li][di], w)
            for name, value in tgrads.items():
                grads["layer%d.%s.%s" % (li, d, name)] = value
            if d == "bwd":
                dxs = dxs[::-1]
            dx_total = dxs if dx_total is None else dx_total + dxs
        dh = dx_total
    return grads


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict | None = None
    v: dict | None = None


def init_optimizer(kind, learning_rate, params):
    if kind not in ("sgd", "adam"):
        raise ValueError("unknown optimizer %r (expected 'sgd' or 'adam')" % (kind,))
    state = OptimizerState(kind=kind, learning_rate=float(learning_rate))
    if kind == "adam":
        state.m = {name: np.zeros_like(p) for name, p in params.items()}
        state.v = {name: np.zeros_like(p) for name, p in params.items()}
    return state


def global_grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients down when their joint norm exceeds max_norm."""
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def optimizer_step(state, params, grads):
    """Apply one update in place; no tensor is touched on error.

    SGD: p <- p - lr * g. Adam: bias-corrected first/second moments with
    epsilon added outside the square root, so the first step moves each
    parameter by about lr regardless of gradient scale.
    """
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")
    for name in params:
        if grads[name].shape != params[name].shape:
            raise ValueError(
                "gradient %s has shape %r, expected %r"
                % (name, grads[name].shape, params[name].shape)
            )
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient("non-finite gradient in tensor %s" % name)

    lr = state.learning_rate
    if state.kind == "sgd":
        for name in params:
            params[name] -= lr * grads[name]
    else:
        state.step += 1
        c1 = 1.0 - state.beta1 ** state.step
        c2 = 1.0 - state.beta2 ** state.step
        for name in params:
            g = grads[name]
            m = state.m[name]
            v = state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
