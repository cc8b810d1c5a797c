"""Minimal dense networks with hand-rolled backpropagation.

Everything is float64 numpy. Weights use the (out, in) convention, so a layer
computes ``y = x @ W.T + b``. Hidden layers apply the configured nonlinearity,
the output layer is always linear (these nets parameterize Gaussian means).

All functions here are pure with respect to their inputs except the explicit
in-place optimizer update; concurrent read-only evaluation of the same
parameters is safe.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError

_LN_2PI = float(np.log(2.0 * np.pi))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ConfigurationError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "identity":
        return np.ones_like(z)
    raise ConfigurationError(f"unknown activation {name!r}")


@dataclass
class MlpParams:
    """Weights and biases of one dense network.

    weights[i] has shape (out_i, in_i); consecutive layers chain
    (out_i == in_{i+1}). ``activation`` names the hidden nonlinearity.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def validate(self) -> None:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: input dim {w.shape[1]} does not chain with "
                    f"previous output dim {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ShapeError(f"layer {i}: non-finite parameters")


@dataclass
class MlpGrads:
    """Parameter gradients, shaped exactly like the MlpParams they belong to."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_mlp(arch: list[int], rng: np.random.Generator, activation: str = "tanh") -> MlpParams:
    """Scaled uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if len(arch) < 2:
        raise ConfigurationError("arch needs at least an input and an output size")
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, activation=activation)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts (d,) or (B, d) input and matches the rank."""
    xb, squeeze = _as_batch(x)
    if xb.shape[-1] != params.in_dim:
        raise ShapeError(f"input dim {xb.shape[-1]} != first layer dim {params.in_dim}")
    h = xb
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if i == last else _act(params.activation, z)
    return h[0] if squeeze else h


def _forward_cached(params: MlpParams, xb: np.ndarray):
    """Returns (output, layer_inputs, pre_activations) for the backward pass."""
    inputs, zs = [], []
    h = xb
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        zs.append(z)
        h = z if i == last else _act(params.activation, z)
    return h, inputs, zs


def backward(
    params: MlpParams, x: np.ndarray, output_grad: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Backpropagate ``output_grad`` (dLoss/dOutput) through the network.

    For batched input, parameter gradients are summed over the batch.
    Returns (parameter gradients, gradient w.r.t. the input).
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(output_grad)
    if xb.shape[-1] != params.in_dim:
        raise ShapeError(f"input dim {xb.shape[-1]} != first layer dim {params.in_dim}")
    if gb.shape != (xb.shape[0], params.out_dim):
        raise ShapeError(f"output_grad shape {gb.shape} != ({xb.shape[0]}, {params.out_dim})")

    _, inputs, zs = _forward_cached(params, xb)
    dW = [np.empty_like(w) for w in params.weights]
    db = [np.empty_like(b) for b in params.biases]
    delta = gb
    last = params.n_layers - 1
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * _act_grad(params.activation, zs[i])
        dW[i] = delta.T @ inputs[i]
        db[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    input_grad = delta[0] if squeeze else delta
    return MlpGrads(weights=dW, biases=db), input_grad


def gaussian_nll(
    mean: np.ndarray, target: np.ndarray, sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Negative log density of an isotropic Gaussian, plus its mean-gradient.

    value = 0.5 * ||mean - target||^2 / sigma^2 + (d/2) * ln(2*pi*sigma^2)
    grad  = (mean - target) / sigma^2

    Accepts (d,) vectors (scalar value) or (B, d) batches ((B,) values).
    """
    if sigma <= 0.0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    mean = np.asarray(mean, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mean.shape != target.shape:
        raise ShapeError(f"mean shape {mean.shape} != target shape {target.shape}")
    d = mean.shape[-1]
    resid = mean - target
    value = 0.5 * np.sum(resid * resid, axis=-1) / sigma**2 + 0.5 * d * (
        _LN_2PI + 2.0 * np.log(sigma)
    )
    grad = resid / sigma**2
    return value, grad


# ---------------------------------------------------------------------------
# RMSProp
# ---------------------------------------------------------------------------


@dataclass
class RmsProp:
    """RMSProp accumulator for one network (mean-square per parameter tensor)."""

    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    ms_weights: list[np.ndarray] = field(default_factory=list)
    ms_biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, rho: float = 0.9,
                   eps: float = 1e-8) -> "RmsProp":
        return cls(
            lr=lr,
            rho=rho,
            eps=eps,
            ms_weights=[np.zeros_like(w) for w in params.weights],
            ms_biases=[np.zeros_like(b) for b in params.biases],
        )

    def update(self, params: MlpParams, grads: MlpGrads) -> None:
        """Apply one adaptive step in place."""
        for w, g, ms in zip(params.weights, grads.weights, self.ms_weights):
            ms *= self.rho
            ms += (1.0 - self.rho) * g * g
            w -= self.lr * g / (np.sqrt(ms) + self.eps)
        for b, g, ms in zip(params.biases, grads.biases, self.ms_biases):
            ms *= self.rho
            ms += (1.0 - self.rho) * g * g
            b -= self.lr * g / (np.sqrt(ms) + self.eps)


# ---------------------------------------------------------------------------
# Stacked evaluation across an ensemble (vectorized hot path)
# ---------------------------------------------------------------------------


@dataclass
class StackedMlp:
    """Weights of n same-architecture networks stacked on a leading axis."""

    weights: list[np.ndarray]  # (n, out, in)
    biases: list[np.ndarray]   # (n, 1, out)
    activation: str


def stack_mlps(nets: list[MlpParams]) -> StackedMlp:
    shapes = nets[0].layer_shapes()
    for p in nets[1:]:
        if p.layer_shapes() != shapes:
            raise ShapeError("stacked networks must share an architecture")
    return StackedMlp(
        weights=[np.stack([p.weights[i] for p in nets]) for i in range(len(shapes))],
        biases=[np.stack([p.biases[i][None, :] for p in nets]) for i in range(len(shapes))],
        activation=nets[0].activation,
    )


def forward_stacked(stacked: StackedMlp, x: np.ndarray) -> np.ndarray:
    """Batched forward over all stacked networks.

    x has shape (n, B, d_in) or (1, B, d_in) to broadcast one input batch
    across all n networks; returns (n, B, d_out).
    """
    h = x
    last = len(stacked.weights) - 1
    for i, (w, b) in enumerate(zip(stacked.weights, stacked.biases)):
        z = np.matmul(h, np.swapaxes(w, 1, 2)) + b
        h = z if i == last else _act(stacked.activation, z)
    return h
