"""Minimal dense-MLP engine: forward pass, reverse-mode gradients, Adam, Polyak updates.

Everything is float64 and purely numpy: small networks, exact and cheap to
verify against finite differences. Only the layer types this project needs
(dense + rectifier hidden units, identity output) are supported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class NumericError(RuntimeError):
    """A loss, gradient, or parameter became non-finite."""


CHECKPOINT_FORMAT_VERSION = 1


class Mlp:
    """Fully-connected net. weights[i] has shape (layer_sizes[i+1], layer_sizes[i])."""

    def __init__(self, layer_sizes, weights, biases):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ValueError(f"need >= 2 positive layer sizes, got {layer_sizes}")
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(layer_sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer required")
        for i, (w, b) in enumerate(zip(weights, biases)):
            want = (layer_sizes[i + 1], layer_sizes[i])
            if w.shape != want:
                raise ValueError(f"layer {i}: weight shape {w.shape}, expected {want}")
            if b.shape != (layer_sizes[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape}, expected ({layer_sizes[i + 1]},)")
        self.layer_sizes = layer_sizes
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self._check_finite()

    def _check_finite(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"non-finite parameter in layer {i}")

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_mlp(layer_sizes, rng: np.random.Generator) -> Mlp:
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(layer_sizes, weights, biases)


@dataclass
class GradientTape:
    """Activations of a single forward pass; consumed by exactly one backward."""

    net: Mlp
    inputs: list            # input to each layer (the previous activation)
    pre_activations: list   # z = x W^T + b per layer, pre-rectifier
    batched: bool
    consumed: bool = False


@dataclass
class Gradients:
    """Per-layer parameter gradients plus the gradient w.r.t. the net input."""

    d_weights: list
    d_biases: list
    d_input: np.ndarray

    def all_finite(self) -> bool:
        return (
            all(np.isfinite(g).all() for g in self.d_weights)
            and all(np.isfinite(g).all() for g in self.d_biases)
            and bool(np.isfinite(self.d_input).all())
        )


def forward(net: Mlp, x) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the net on a single input vector or a (batch, in_dim) matrix.

    Returns the output and a tape for one backward pass. Pure in
    (parameters, input): identical calls produce identical bits.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    # a single reduction: any nan/inf in x makes the sum non-finite
    if not np.isfinite(x.sum()):
        raise NumericError("non-finite input to forward")
    n_layers = len(net.weights)
    inputs, pres = [], []
    a = x
    # overflow to inf is legal here; every caller validates finiteness of the
    # quantity it consumes (policy heads, q values, TD targets, losses)
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            inputs.append(a)
            z = a @ w.T + b
            pres.append(z)
            a = np.maximum(z, 0.0) if i < n_layers - 1 else z
    return a, GradientTape(net=net, inputs=inputs, pre_activations=pres, batched=batched)


def backward(tape: GradientTape, output_grad) -> Gradients:
    """Exact reverse-mode gradients of output_grad . output w.r.t. parameters and input.

    For batched tapes the parameter gradients are summed over the batch
    (i.e. the gradient of sum_b output_grad[b] . output[b]).
    """
    if tape.consumed:
        raise ValueError("gradient tape already consumed; rerun forward")
    tape.consumed = True
    net = tape.net
    gy = np.asarray(output_grad, dtype=np.float64)
    out_shape = tape.pre_activations[-1].shape
    if gy.shape != out_shape:
        raise ValueError(f"output_grad shape {gy.shape}, expected {out_shape}")
    n_layers = len(net.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    delta = gy
    for i in reversed(range(n_layers)):
        dz = delta if i == n_layers - 1 else delta * (tape.pre_activations[i] > 0.0)
        a_in = tape.inputs[i]
        if tape.batched:
            d_weights[i] = dz.T @ a_in
            d_biases[i] = dz.sum(axis=0)
        else:
            d_weights[i] = np.outer(dz, a_in)
            d_biases[i] = dz.copy()
        delta = dz @ net.weights[i]
    return Gradients(d_weights=d_weights, d_biases=d_biases, d_input=delta)


def gradient_check(net: Mlp, loss_fn, probe_count: int, rng: np.random.Generator,
                   fd_step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences.

    loss_fn(net) must return (scalar loss, Gradients for net) and be
    deterministic given the parameters. probe_count parameters are sampled
    uniformly across all layers. A probe whose +-step interval straddles a
    rectifier kink (or any other slope discontinuity) carries no valid
    finite-difference estimate; such probes are detected by halving the step
    and comparing the two estimates, skipped, and replaced by further draws.
    """
    loss0, grads = loss_fn(net)
    if not np.isfinite(loss0):
        raise NumericError("loss non-finite at evaluation point")
    slots = []
    for i in range(len(net.weights)):
        slots.extend(("w", i, j) for j in range(net.weights[i].size))
        slots.extend(("b", i, j) for j in range(net.biases[i].size))
    order = rng.permutation(len(slots))
    max_rel = 0.0
    checked = 0
    for p in order:
        if checked >= probe_count:
            break
        kind, layer, flat = slots[p]
        arr = net.weights[layer] if kind == "w" else net.biases[layer]
        garr = grads.d_weights[layer] if kind == "w" else grads.d_biases[layer]
        idx = np.unravel_index(flat, arr.shape)
        saved = arr[idx]

        def loss_at(offset):
            arr[idx] = saved + offset
            value = loss_fn(net)[0]
            arr[idx] = saved
            return value

        lp, lm = loss_at(fd_step), loss_at(-fd_step)
        lp2, lm2 = loss_at(fd_step / 2), loss_at(-fd_step / 2)
        fd_full = (lp - lm) / (2.0 * fd_step)
        fd_half = (lp2 - lm2) / fd_step
        # a slope jump of size D anywhere in the +-step window biases the
        # central estimate by at most D/2 while the one-sided slopes differ
        # by at least that D, so bounding their disagreement at 2e-4 keeps
        # accepted probes trustworthy to 1e-4 (a kink can sit exactly at the
        # probe point: zero-initialized bias behind a fully dead layer)
        d_plus = (lp - loss0) / fd_step
        d_minus = (loss0 - lm) / fd_step
        if (abs(fd_full - fd_half) > 1e-4 * max(abs(fd_full), abs(fd_half), 1e-3)
                or abs(d_plus - d_minus) > 2e-4 * max(abs(d_plus), abs(d_minus), 1e-3)):
            continue  # non-smooth interval; central differences are undefined here
        ad = garr[idx]
        rel = abs(ad - fd_full) / max(abs(ad), abs(fd_full), 1e-3)
        max_rel = max(max_rel, rel)
        checked += 1
    if checked == 0:
        raise NumericError("no smooth probes found for finite differencing")
    return max_rel


@dataclass
class AdamState:
    """Adam accumulators shaped like the Mlp they track."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_weights: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)


def adam_init(net: Mlp, lr: float) -> AdamState:
    return AdamState(
        lr=float(lr),
        m_weights=[np.zeros_like(w) for w in net.weights],
        v_weights=[np.zeros_like(w) for w in net.weights],
        m_biases=[np.zeros_like(b) for b in net.biases],
        v_biases=[np.zeros_like(b) for b in net.biases],
    )


def optimizer_step(state: AdamState, net: Mlp, grads: Gradients) -> None:
    """One bias-corrected Adam step, in place. Rejects non-finite gradients."""
    for g, w in zip(grads.d_weights, net.weights):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {w.shape}")
    if not grads.all_finite():
        raise NumericError("non-finite gradient; update rejected")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    # overflow of extreme-but-finite gradients is caught by the parameter
    # finiteness check below, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for params, gs, ms, vs in (
            (net.weights, grads.d_weights, state.m_weights, state.v_weights),
            (net.biases, grads.d_biases, state.m_biases, state.v_biases),
        ):
            for p, g, m, v in zip(params, gs, ms, vs):
                m *= state.beta1
                m += (1.0 - state.beta1) * g
                v *= state.beta2
                v += (1.0 - state.beta2) * np.square(g)
                p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net._check_finite()


def polyak_update(target: Mlp, online: Mlp, rho: float) -> None:
    """target <- rho * online + (1 - rho) * target, elementwise."""
    if target.layer_sizes != online.layer_sizes:
        raise ValueError("architecture mismatch between target and online nets")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - rho
        tw += rho * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - rho
        tb += rho * ob


# --- checkpoint payloads (JSON-shaped text, value-exact round trip) ---

def mlp_to_payload(net: Mlp) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.ravel(order="C").tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_payload(payload: dict) -> Mlp:
    sizes = [int(n) for n in payload["layer_sizes"]]
    weights = [
        np.asarray(flat, dtype=np.float64).reshape(sizes[i + 1], sizes[i])
        for i, flat in enumerate(payload["weights"])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
    return Mlp(sizes, weights, biases)


def adam_to_payload(state: AdamState) -> dict:
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "m_weights": [a.ravel(order="C").tolist() for a in state.m_weights],
        "v_weights": [a.ravel(order="C").tolist() for a in state.v_weights],
        "m_biases": [a.tolist() for a in state.m_biases],
        "v_biases": [a.tolist() for a in state.v_biases],
    }


def adam_from_payload(payload: dict, net: Mlp) -> AdamState:
    state = AdamState(lr=float(payload["lr"]), beta1=float(payload["beta1"]),
                      beta2=float(payload["beta2"]), eps=float(payload["eps"]),
                      step=int(payload["step"]))
    state.m_weights = [np.asarray(a, dtype=np.float64).reshape(w.shape)
                       for a, w in zip(payload["m_weights"], net.weights)]
    state.v_weights = [np.asarray(a, dtype=np.float64).reshape(w.shape)
                       for a, w in zip(payload["v_weights"], net.weights)]
    state.m_biases = [np.asarray(a, dtype=np.float64) for a in payload["m_biases"]]
    state.v_biases = [np.asarray(a, dtype=np.float64) for a in payload["v_biases"]]
    return state


def write_checkpoint(path, payload: dict) -> None:
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    return doc
