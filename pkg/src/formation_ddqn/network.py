"""From-scratch dense Q-network: forward, backprop, Adam, gradient check, weight files.

The production architecture is 8-64-64-8 (ReLU hidden, linear output) and its
hot paths route through :mod:`formation_ddqn.kernels`. Other depths (used by
reduced-shape tests) fall back to a generic numpy path. All parameters are
float64 and C-contiguous; every operation is deterministic under its RNG.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .kernels import ACTIVE_KERNELS, LOSS_HUBER, LOSS_MSE

DEFAULT_ARCH = (8, 64, 64, 8)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

WEIGHT_FILE_VERSION = 1

_LOSS_KINDS = {"mse": LOSS_MSE, "huber": LOSS_HUBER}


class WeightFormatError(ValueError):
    """Weight file cannot be parsed (malformed JSON, missing/bad fields)."""


class ArchitectureError(ValueError):
    """Weight file holds a different architecture/version than expected."""


@dataclass
class Network:
    """Dense ReLU network; weights[i] has shape (sizes[i+1], sizes[i])."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Network":
        return Network(self.sizes,
                       [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]


@dataclass
class GradientBundle:
    """Per-parameter gradients, shaped like the network they came from."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_network(rng_seed, sizes: tuple[int, ...] = DEFAULT_ARCH) -> Network:
    """Seed-deterministic init: weights uniform in +/-sqrt(6/(fan_in+fan_out)), biases zero."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes: {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(sizes, weights, biases)


def init_adam(net: Network) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in net.weights],
        v_weights=[np.zeros_like(w) for w in net.weights],
        m_biases=[np.zeros_like(b) for b in net.biases],
        v_biases=[np.zeros_like(b) for b in net.biases],
    )


def _is_kernel_shape(net: Network) -> bool:
    return len(net.weights) == 3


def _as_batch(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return np.ascontiguousarray(x)


def forward_batch(net: Network, features) -> np.ndarray:
    """Q-values for a batch of feature vectors, shape (batch, n_outputs)."""
    x = _as_batch(features)
    if x.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite features")
    if _is_kernel_shape(net):
        w1, w2, w3 = net.weights
        b1, b2, b3 = net.biases
        return ACTIVE_KERNELS.q_values(x, w1, b1, w2, b2, w3, b3)
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    return a @ net.weights[-1].T + net.biases[-1]


def forward(net: Network, features) -> np.ndarray:
    """Q-values for a single feature vector, shape (n_outputs,)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single feature vector, got shape {x.shape}")
    return forward_batch(net, x)[0]


def loss_and_gradients(net: Network, batch_features, batch_actions, batch_targets,
                       loss: str = "mse", huber_delta: float = 1.0):
    """Mean TD loss over the selected actions and its parameter gradients.

    Only each sample's chosen action carries gradient; the other outputs of
    the final layer receive exactly zero.
    """
    x = _as_batch(batch_features)
    actions = np.ascontiguousarray(batch_actions, dtype=np.int64)
    targets = np.ascontiguousarray(batch_targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != actions.shape[0] or x.shape[0] != targets.shape[0]:
        raise ValueError("batch arrays disagree in length")
    if actions.min() < 0 or actions.max() >= net.n_outputs:
        raise ValueError("action index out of range")
    kind = _LOSS_KINDS[loss]

    if _is_kernel_shape(net):
        w1, w2, w3 = net.weights
        b1, b2, b3 = net.biases
        out = ACTIVE_KERNELS.loss_and_grads(
            x, actions, targets, w1, b1, w2, b2, w3, b3, kind, huber_delta)
        loss_value, gw1, gb1, gw2, gb2, gw3, gb3 = out
        return loss_value, GradientBundle([gw1, gw2, gw3], [gb1, gb2, gb3])

    # generic depth: forward with cached activations, then backprop
    acts = [x]
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
        acts.append(a)
    q = a @ net.weights[-1].T + net.biases[-1]

    n = x.shape[0]
    rows = np.arange(n)
    resid = q[rows, actions] - targets
    if kind == LOSS_HUBER:
        loss_value = float(np.mean(np.where(
            np.abs(resid) <= huber_delta,
            0.5 * resid * resid,
            huber_delta * (np.abs(resid) - 0.5 * huber_delta))))
        dsel = np.clip(resid, -huber_delta, huber_delta) / n
    else:
        loss_value = float(np.mean(resid * resid))
        dsel = 2.0 * resid / n
    delta = np.zeros_like(q)
    delta[rows, actions] = dsel

    g_w = [np.empty(0)] * len(net.weights)
    g_b = [np.empty(0)] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        g_w[layer] = delta.T @ acts[layer]
        g_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer]) * (acts[layer] > 0.0)
    return loss_value, GradientBundle(g_w, g_b)


def adam_step(net: Network, state: AdamState, grads: GradientBundle,
              lr: float = 0.0003):
    """One bias-corrected Adam update; mutates net/state in place and returns them."""
    for g, p in zip(grads.weights, net.weights):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    for g, p in zip(grads.biases, net.biases):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    state.step += 1
    upd = ACTIVE_KERNELS.adam_update
    for p, m, v, g in zip(net.weights, state.m_weights, state.v_weights, grads.weights):
        upd(p, m, v, g, state.step, lr, state.beta1, state.beta2, state.eps)
    for p, m, v, g in zip(net.biases, state.m_biases, state.v_biases, grads.biases):
        upd(p, m, v, g, state.step, lr, state.beta1, state.beta2, state.eps)
    return net, state


def _hidden_masks(net: Network, x: np.ndarray) -> list[np.ndarray]:
    """Sign pattern of every hidden pre-activation (True where active)."""
    masks = []
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w.T + b
        masks.append(z > 0.0)
        a = np.maximum(z, 0.0)
    return masks


def gradient_check(net: Network, rng: np.random.Generator,
                   n_checks: int = 100, h: float = 1e-6,
                   batch_size: int = 8) -> float:
    """Worst relative error of analytic gradients vs central finite differences.

    Inputs get a +/-1e-3 jitter so no sample sits exactly on a rectifier
    kink; in addition, any probe whose +/-h evaluations land on different
    sides of a kink (the activation sign pattern changes) is discarded and
    redrawn, since the loss is not differentiable across the kink.
    """
    x = rng.uniform(-1.0, 1.0, size=(batch_size, net.n_inputs))
    x += rng.uniform(-1e-3, 1e-3, size=x.shape)
    actions = rng.integers(0, net.n_outputs, size=batch_size)
    targets = rng.normal(0.0, 1.0, size=batch_size)

    _, grads = loss_and_gradients(net, x, actions, targets)
    params = list(net.weights) + list(net.biases)
    analytic = list(grads.weights) + list(grads.biases)
    sizes = [p.size for p in params]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)

    def locate(flat_index):
        arr_idx = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        return arr_idx, flat_index - offsets[arr_idx]

    def probe(flat_index):
        arr_idx, inner = locate(flat_index)
        p = params[arr_idx]
        flat = p.reshape(-1)
        orig = flat[inner]
        results = []
        masks = []
        for delta in (h, -h):
            flat[inner] = orig + delta
            lv, _ = loss_and_gradients(net, x, actions, targets)
            results.append(lv)
            masks.append(_hidden_masks(net, x))
        flat[inner] = orig
        crossed = any(not np.array_equal(ma, mb) for ma, mb in zip(*masks))
        numeric = (results[0] - results[1]) / (2.0 * h)
        return numeric, crossed, analytic[arr_idx].reshape(-1)[inner]

    n_checks = min(n_checks, total)
    order = rng.permutation(total)
    worst = 0.0
    checked = 0
    for flat_index in order:
        if checked >= n_checks:
            break
        numeric, crossed, exact = probe(int(flat_index))
        if crossed:
            continue
        rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-5)
        worst = max(worst, rel)
        checked += 1
    return worst


def clone_target(net: Network) -> Network:
    """Fresh copy used as the slow-moving target estimator."""
    return net.copy()


# ---------------------------------------------------------------------------
# weight file serialization (JSON; exact float roundtrip via repr)
# ---------------------------------------------------------------------------

def save_weights(net: Network, meta: dict, path: str) -> None:
    """Write the network to a JSON weight file.

    ``meta`` must supply d_max (observation normalization scale) plus the
    model_kind/seed/episodes provenance fields.
    """
    meta = dict(meta)
    try:
        d_max = float(meta.pop("d_max"))
    except KeyError:
        raise ValueError("meta must include d_max") from None
    doc = {
        "version": WEIGHT_FILE_VERSION,
        "arch": list(net.sizes),
        "activation": "relu",
        "layers": [
            {"w": w.tolist(), "b": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
        "input_norm": {"d_max": d_max},
        "meta": meta,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise WeightFormatError(f"{path}: missing field {key!r}")
    return doc[key]


def load_weights(path: str, expected_arch: tuple[int, ...] | None = None):
    """Load a weight file; returns (Network, info dict with d_max and meta).

    Raises WeightFormatError for malformed files and ArchitectureError when
    the stored version/arch does not match expectations. No partial network
    is ever returned.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise WeightFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise WeightFormatError(f"{path}: top level must be an object")

    version = _require(doc, "version", path)
    if version != WEIGHT_FILE_VERSION:
        raise ArchitectureError(f"{path}: unsupported version {version!r}")
    arch = tuple(_require(doc, "arch", path))
    if expected_arch is not None and arch != tuple(expected_arch):
        raise ArchitectureError(
            f"{path}: architecture {list(arch)} does not match expected {list(expected_arch)}")
    activation = _require(doc, "activation", path)
    if activation != "relu":
        raise WeightFormatError(f"{path}: unsupported activation {activation!r}")

    layers = _require(doc, "layers", path)
    if not isinstance(layers, list) or len(layers) != len(arch) - 1:
        raise WeightFormatError(
            f"{path}: expected {len(arch) - 1} layers, found "
            f"{len(layers) if isinstance(layers, list) else type(layers).__name__}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        if not isinstance(layer, dict) or "w" not in layer or "b" not in layer:
            raise WeightFormatError(f"{path}: layer {i} must have fields 'w' and 'b'")
        try:
            w = np.ascontiguousarray(layer["w"], dtype=np.float64)
            b = np.ascontiguousarray(layer["b"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise WeightFormatError(f"{path}: layer {i}: {exc}") from exc
        if w.shape != (arch[i + 1], arch[i]) or b.shape != (arch[i + 1],):
            raise WeightFormatError(
                f"{path}: layer {i} shape {w.shape}/{b.shape} does not match arch {list(arch)}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise WeightFormatError(f"{path}: layer {i} has non-finite parameters")
        weights.append(w)
        biases.append(b)

    input_norm = _require(doc, "input_norm", path)
    if not isinstance(input_norm, dict) or "d_max" not in input_norm:
        raise WeightFormatError(f"{path}: input_norm must carry d_max")
    info = {"d_max": float(input_norm["d_max"]), "meta": doc.get("meta", {})}
    return Network(arch, weights, biases), info
