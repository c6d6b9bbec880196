"""Dense networks with hand-written reverse-mode gradients.

Only what the DDPG learner needs: stacked affine layers with relu, tanh,
softmax or identity activations, a tape that caches the forward pass, an
Adam optimizer and Polyak averaging for target networks.  Inputs may be a
single vector ``(in,)`` or a batch ``(B, in)``; batch gradients are summed
over rows, so callers scale the seed by ``1/B`` for mean losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "softmax", "identity")


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


class DenseNet:
    """A chain of :class:`Dense` layers.

    Parameters
    ----------
    layers : list of Dense
        Consecutive layers; ``layers[l].n_out`` must equal
        ``layers[l + 1].n_in``.  Softmax is allowed only on the last layer.
    """

    def __init__(self, layers: list[Dense]):
        if not layers:
            raise ValueError("a DenseNet needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and k != len(layers) - 1:
                raise ValueError("softmax is only allowed as the terminal activation")
            if layer.bias.shape != (layer.n_out,):
                raise ValueError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.n_out},)")
            if k and layers[k - 1].n_out != layer.n_in:
                raise ValueError(
                    f"layer {k}: input dim {layer.n_in} does not chain with "
                    f"previous output dim {layers[k - 1].n_out}"
                )
        self.layers = layers

    @classmethod
    def build(cls, sizes, activations, rng: np.random.Generator) -> "DenseNet":
        """Create a net with uniform ``±1/sqrt(fan_in)`` initialisation.

        ``sizes`` lists the widths including input and output, so
        ``len(activations) == len(sizes) - 1``.
        """
        sizes = list(sizes)
        activations = list(activations)
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
            layers.append(Dense(w, b, act))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def __call__(self, x):
        return forward(self, x)


def pack(nets) -> np.ndarray:
    """Move the parameters of ``nets`` into one contiguous buffer.

    Layer weights and biases become views into the returned array, so a
    single vector op updates every layer at once.
    """
    layers = [layer for net in nets for layer in net.layers]
    total = sum(l.weight.size + l.bias.size for l in layers)
    flat = np.empty(total)
    k = 0
    for layer in layers:
        for name in ("weight", "bias"):
            arr = getattr(layer, name)
            view = flat[k:k + arr.size].reshape(arr.shape)
            view[...] = arr
            setattr(layer, name, view)
            k += arr.size
    return flat


def flatten(grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


@dataclass
class GradientTape:
    """Cached forward values of one evaluation of a :class:`DenseNet`."""

    net: DenseNet
    inputs: list = field(default_factory=list)  # input to each layer
    outputs: list = field(default_factory=list)  # activation output of each layer
    batched: bool = False

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "softmax":
        shifted = pre - pre.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    return pre


def _activation_vjp(kind: str, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Expressed through the cached activation output only.
    if kind == "relu":
        return g * (out > 0.0)
    if kind == "tanh":
        return g * (1.0 - out * out)
    if kind == "softmax":
        return out * (g - np.sum(g * out, axis=-1, keepdims=True))
    return g


def forward(net: DenseNet, x, tape: GradientTape | None = None) -> np.ndarray:
    """Evaluate ``net`` on ``x``; optionally record into ``tape``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.n_in:
        raise ValueError(f"input of shape {x.shape} does not match net input dim {net.n_in}")
    if tape is not None:
        tape.net = net
        tape.inputs.clear()
        tape.outputs.clear()
        tape.batched = x.ndim == 2
    h = x
    for layer in net.layers:
        if tape is not None:
            tape.inputs.append(h)
        h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
        if tape is not None:
            tape.outputs.append(h)
    return h


def record(net: DenseNet, x) -> GradientTape:
    """Run ``net`` on ``x`` and return the filled tape."""
    tape = GradientTape(net)
    forward(net, x, tape)
    return tape


def backward(tape: GradientTape, loss_seed: float = 1.0, grad_output=None):
    """Reverse sweep over a recorded evaluation.

    With ``grad_output=None`` the recorded output must be a scalar (one
    unit, one row) and seeds the sweep with ``loss_seed``.  Otherwise
    ``grad_output`` is the upstream gradient, shaped like the output.

    Returns
    -------
    grads : list of ndarray
        Gradients aligned with ``tape.net.params``.
    grad_input : ndarray
        Gradient with respect to the net input.
    """
    out = tape.output
    if grad_output is None:
        if out.size != 1:
            raise ValueError(
                f"backward without grad_output needs a scalar output, got shape {out.shape}"
            )
        g = np.full_like(out, float(loss_seed))
    else:
        g = np.asarray(grad_output, dtype=np.float64)
        if g.shape != out.shape:
            raise ValueError(f"grad_output shape {g.shape} != output shape {out.shape}")
    grads: list[np.ndarray] = [None] * (2 * len(tape.net.layers))  # type: ignore[list-item]
    for k in range(len(tape.net.layers) - 1, -1, -1):
        layer = tape.net.layers[k]
        g = _activation_vjp(layer.activation, tape.outputs[k], g)
        x_in = tape.inputs[k]
        if tape.batched:
            grads[2 * k] = g.T @ x_in
            grads[2 * k + 1] = g.sum(axis=0)
        else:
            grads[2 * k] = np.outer(g, x_in)
            grads[2 * k + 1] = g.copy()
        g = g @ layer.weight
    return grads, g


@dataclass
class OptimizerState:
    params: list  # references to the arrays being optimised
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]


def adam(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(list(params), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: OptimizerState):
    """One Adam update applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(
                f"non-finite gradient at optimizer step {state.step + 1} "
                f"(parameter shape {p.shape})"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


def soft_update(target_params, source_params, tau: float):
    """Polyak blend ``target <- tau*source + (1-tau)*target`` in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"blend factor must lie in (0, 1], got {tau}")
    if len(target_params) != len(source_params):
        raise ValueError("parameter lists differ in length")
    for t, s in zip(target_params, source_params):
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {s.shape}")
        t *= 1.0 - tau
        t += tau * s
    return target_params
