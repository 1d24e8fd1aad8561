"""Instance scorers with hand-written forward and backward passes.

Three architectures are supported, each mapping one instance to a scalar
score through a final single linear neuron:

``linear``  one linear neuron on a ``d``-vector
``mlp``     ``d`` tanh hidden units, then a linear output neuron
``cnn``     conv(20@5x5)-relu-pool, conv(50@5x5)-relu-pool, fc(500)-relu,
            linear output; input is a ``1x28x28`` image

All parameters live in one flat float64 vector.  Blocks are laid out in
forward order, weights before bias within each layer; see
:func:`param_layout`.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError

VARIANTS = ("linear", "mlp", "cnn")
IMAGE_SHAPE = (1, 28, 28)


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    d: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "cnn" and self.d != 28 * 28:
            raise ValueError("cnn variant takes 1x28x28 images (d = 784)")
        if self.d < 1:
            raise ValueError("input dimension must be positive")

    @classmethod
    def single_linear(cls, d):
        return cls("linear", int(d))

    @classmethod
    def one_hidden_tanh(cls, d):
        return cls("mlp", int(d))

    @classmethod
    def mnist_cnn(cls):
        return cls("cnn", 28 * 28)

    @property
    def input_shape(self):
        return IMAGE_SHAPE if self.variant == "cnn" else (self.d,)

    @property
    def is_image(self):
        return self.variant == "cnn"

    def to_dict(self):
        return {"variant": self.variant, "d": self.d}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["variant"], int(obj["d"]))


def param_layout(spec):
    """Ordered ``(name, shape, fan_in, fan_out)`` for every parameter block.

    Fans are ``None`` for biases.
    """
    d = spec.d
    if spec.variant == "linear":
        return [("w_out", (1, d), d, 1), ("b_out", (1,), None, None)]
    if spec.variant == "mlp":
        return [
            ("w_hidden", (d, d), d, d),
            ("b_hidden", (d,), None, None),
            ("w_out", (1, d), d, 1),
            ("b_out", (1,), None, None),
        ]
    return [
        ("w_conv1", (20, 1, 5, 5), 1 * 25, 20 * 25),
        ("b_conv1", (20,), None, None),
        ("w_conv2", (50, 20, 5, 5), 20 * 25, 50 * 25),
        ("b_conv2", (50,), None, None),
        ("w_fc", (500, 800), 800, 500),
        ("b_fc", (500,), None, None),
        ("w_out", (1, 500), 500, 1),
        ("b_out", (1,), None, None),
    ]


def num_params(spec):
    return sum(int(np.prod(shape)) for _, shape, _, _ in param_layout(spec))


def block_slices(spec):
    """Map block name to its ``slice`` inside the flat parameter vector."""
    out, start = {}, 0
    for name, shape, _, _ in param_layout(spec):
        size = int(np.prod(shape))
        out[name] = slice(start, start + size)
        start += size
    return out


def unpack(spec, theta):
    """Reshaped views of ``theta`` keyed by block name (no copies)."""
    theta = np.asarray(theta)
    if theta.shape != (num_params(spec),):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({num_params(spec)},)")
    slices = block_slices(spec)
    return {name: theta[slices[name]].reshape(shape) for name, shape, _, _ in param_layout(spec)}


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(num_params(spec))
    slices = block_slices(spec)
    for name, shape, fan_in, fan_out in param_layout(spec):
        if fan_in is None:
            continue
        a = np.sqrt(6.0 / (fan_in + fan_out))
        theta[slices[name]] = rng.uniform(-a, a, size=int(np.prod(shape)))
    return theta


@dataclass
class ForwardCache:
    """Intermediate values from one forward pass over a batch of instances."""

    spec: ModelSpec
    n_params: int
    inputs: np.ndarray
    values: dict


def _check_inputs(spec, X):
    X = T.as_tensor(X)
    shape = spec.input_shape
    if X.shape[1:] != shape:
        raise DimensionError(f"instances of shape {X.shape[1:]} do not match model input {shape}")
    return X


def forward(spec, theta, X):
    """Score a batch of instances ``X`` of shape ``(n,) + spec.input_shape``.

    Returns ``(scores, cache)`` with ``scores`` of shape ``(n,)``.
    """
    X = _check_inputs(spec, X)
    p = unpack(spec, theta)
    v = {}
    if spec.variant == "linear":
        scores = X @ p["w_out"][0] + p["b_out"][0]
    elif spec.variant == "mlp":
        z = X @ p["w_hidden"].T + p["b_hidden"]
        v["h"] = h = np.tanh(z)
        scores = h @ p["w_out"][0] + p["b_out"][0]
    else:
        v["z1"] = z1 = T.conv2d_valid(X, p["w_conv1"], p["b_conv1"])
        v["p1"], v["am1"] = T.maxpool2d(T.activate(z1, "relu"))
        v["z2"] = z2 = T.conv2d_valid(v["p1"], p["w_conv2"], p["b_conv2"])
        p2, v["am2"] = T.maxpool2d(T.activate(z2, "relu"))
        v["flat"] = flat = p2.reshape(len(X), -1)
        v["z3"] = z3 = flat @ p["w_fc"].T + p["b_fc"]
        v["a3"] = a3 = T.activate(z3, "relu")
        scores = a3 @ p["w_out"][0] + p["b_out"][0]
    return scores, ForwardCache(spec, num_params(spec), X, v)


def predict(spec, theta, X):
    """Scores only; same arithmetic as :func:`forward`."""
    return forward(spec, theta, X)[0]


def forward_instance(spec, theta, x):
    x = T.as_tensor(x)
    if x.shape != spec.input_shape:
        raise DimensionError(f"instance of shape {x.shape} does not match model input {spec.input_shape}")
    scores, cache = forward(spec, theta, x[None])
    return float(scores[0]), cache


def backward(spec, theta, cache, dscore):
    """Gradient of ``sum_i dscore[i] * score_i`` w.r.t. the flat parameters.

    ``dscore`` is a scalar (applied to every cached instance) or a vector
    with one entry per cached instance.
    """
    if cache.spec != spec or cache.n_params != num_params(spec):
        raise UsageError(f"forward cache was built for {cache.spec}, not {spec}")
    p = unpack(spec, theta)
    X, v = cache.inputs, cache.values
    ds = np.broadcast_to(np.asarray(dscore, dtype=np.float64), (len(X),))
    grad = np.zeros(num_params(spec))
    g = unpack(spec, grad)

    g["b_out"][0] = ds.sum()
    if spec.variant == "linear":
        g["w_out"][0] = ds @ X
        return grad
    if spec.variant == "mlp":
        h = v["h"]
        g["w_out"][0] = ds @ h
        dz = np.outer(ds, p["w_out"][0]) * (1.0 - h * h)
        g["w_hidden"][:] = dz.T @ X
        g["b_hidden"][:] = dz.sum(axis=0)
        return grad

    g["w_out"][0] = ds @ v["a3"]
    dz3 = np.outer(ds, p["w_out"][0]) * T.activation_derivative(v["z3"], "relu")
    g["w_fc"][:] = dz3.T @ v["flat"]
    g["b_fc"][:] = dz3.sum(axis=0)
    dp2 = (dz3 @ p["w_fc"]).reshape(len(X), 50, 4, 4)
    dz2 = T.maxpool2d_backward(dp2, v["am2"], v["z2"].shape) * T.activation_derivative(v["z2"], "relu")
    dp1, g["w_conv2"][:], g["b_conv2"][:] = T.conv2d_valid_backward(v["p1"], p["w_conv2"], dz2)
    dz1 = T.maxpool2d_backward(dp1, v["am1"], v["z1"].shape) * T.activation_derivative(v["z1"], "relu")
    _, g["w_conv1"][:], g["b_conv1"][:] = T.conv2d_valid_backward(X, p["w_conv1"], dz1, input_grad=False)
    return grad


def backward_instance(spec, theta, cache, dscore):
    if len(cache.inputs) != 1:
        raise UsageError("backward_instance needs a cache from forward_instance")
    return backward(spec, theta, cache, float(dscore))


def params_to_dict(spec, theta):
    return {"spec": spec.to_dict(), "theta": [float(t) for t in theta]}


def params_from_dict(obj):
    spec = ModelSpec.from_dict(obj["spec"])
    theta = np.array(obj["theta"], dtype=np.float64)
    if theta.shape != (num_params(spec),):
        raise DimensionError(f"theta has {theta.size} entries, expected {num_params(spec)}")
    return spec, theta


def save_params(path, spec, theta):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(spec, theta), fh)


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
