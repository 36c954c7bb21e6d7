"""Hot numeric kernels for the 2-hidden-layer Q-network, in two backends.

The numba backend JIT-compiles explicit loops for the batched forward pass,
the TD backward pass, the Adam update, and a fused double-DQN training step.
A pure-numpy twin of every kernel exists as a fallback and as the benchmark
baseline (see benchmarks/bench_kernels.py).

Backend selection happens once at import time via the environment variable
``FORMATION_DDQN_BACKEND``:

    auto   (default) use numba when importable, else numpy
    numba  require numba, fail if missing
    numpy  force the pure-numpy path

Both backends are deterministic run-to-run; they are *not* bit-identical to
each other because summation order differs. All arrays are float64 and
C-contiguous; weight matrices are (out, in), biases (out,).

Loss kinds are passed as integers to stay nopython-friendly:
LOSS_MSE = 0, LOSS_HUBER = 1 (huber_delta is the transition point).
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

LOSS_MSE = 0
LOSS_HUBER = 1


# ---------------------------------------------------------------------------
# pure-numpy backend
# ---------------------------------------------------------------------------

def _forward_np(x, w1, b1, w2, b2, w3, b3):
    """Batched forward pass; returns hidden activations and Q-values."""
    a1 = np.maximum(x @ w1.T + b1, 0.0)
    a2 = np.maximum(a1 @ w2.T + b2, 0.0)
    q = a2 @ w3.T + b3
    return a1, a2, q


def _q_values_np(x, w1, b1, w2, b2, w3, b3):
    """Q-values only (inference path)."""
    return _forward_np(x, w1, b1, w2, b2, w3, b3)[2]


def _loss_and_grads_np(x, actions, targets, w1, b1, w2, b2, w3, b3,
                       loss_kind, huber_delta):
    """TD loss on the selected actions plus gradients for every parameter.

    Gradients flow only through each sample's chosen action; the other
    outputs contribute exactly zero.
    """
    n = x.shape[0]
    a1, a2, q = _forward_np(x, w1, b1, w2, b2, w3, b3)
    rows = np.arange(n)
    resid = q[rows, actions] - targets
    if loss_kind == LOSS_HUBER:
        clipped = np.clip(resid, -huber_delta, huber_delta)
        loss = float(np.mean(np.where(
            np.abs(resid) <= huber_delta,
            0.5 * resid * resid,
            huber_delta * (np.abs(resid) - 0.5 * huber_delta))))
        dsel = clipped / n
    else:
        loss = float(np.mean(resid * resid))
        dsel = 2.0 * resid / n

    dq = np.zeros_like(q)
    dq[rows, actions] = dsel

    gw3 = dq.T @ a2
    gb3 = dq.sum(axis=0)
    dz2 = (dq @ w3) * (a2 > 0.0)
    gw2 = dz2.T @ a1
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2) * (a1 > 0.0)
    gw1 = dz1.T @ x
    gb1 = dz1.sum(axis=0)
    return loss, gw1, gb1, gw2, gb2, gw3, gb3


def _adam_update_np(param, m, v, grad, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place. ``step`` is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _ddqn_targets_np(rewards, terminals, q_next_online, q_next_target, gamma):
    """Double-DQN targets: online net picks, target net evaluates.

    Terminal rows never read next-state values (NaN next states are safe).
    """
    astar = np.argmax(q_next_online, axis=1)
    boot = q_next_target[np.arange(rewards.shape[0]), astar]
    return np.where(terminals, rewards, rewards + gamma * boot)


def _train_step_np(w1, b1, w2, b2, w3, b3,
                   tw1, tb1, tw2, tb2, tw3, tb3,
                   mw1, mb1, mw2, mb2, mw3, mb3,
                   vw1, vb1, vw2, vb2, vw3, vb3,
                   states, actions, rewards, next_states, terminals,
                   gamma, lr, beta1, beta2, eps, step,
                   loss_kind, huber_delta):
    """Fused double-DQN step: targets, gradients and Adam in one call."""
    qno = _q_values_np(next_states, w1, b1, w2, b2, w3, b3)
    qnt = _q_values_np(next_states, tw1, tb1, tw2, tb2, tw3, tb3)
    y = _ddqn_targets_np(rewards, terminals, qno, qnt, gamma)
    loss, gw1, gb1, gw2, gb2, gw3, gb3 = _loss_and_grads_np(
        states, actions, y, w1, b1, w2, b2, w3, b3, loss_kind, huber_delta)
    _adam_update_np(w1, mw1, vw1, gw1, step, lr, beta1, beta2, eps)
    _adam_update_np(b1, mb1, vb1, gb1, step, lr, beta1, beta2, eps)
    _adam_update_np(w2, mw2, vw2, gw2, step, lr, beta1, beta2, eps)
    _adam_update_np(b2, mb2, vb2, gb2, step, lr, beta1, beta2, eps)
    _adam_update_np(w3, mw3, vw3, gw3, step, lr, beta1, beta2, eps)
    _adam_update_np(b3, mb3, vb3, gb3, step, lr, beta1, beta2, eps)
    return loss


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    forward=_forward_np,
    q_values=_q_values_np,
    loss_and_grads=_loss_and_grads_np,
    adam_update=_adam_update_np,
    ddqn_targets=_ddqn_targets_np,
    train_step=_train_step_np,
)


# ---------------------------------------------------------------------------
# numba backend (explicit loops; no fastmath, no parallel: keeps every run
# bit-reproducible on a given machine)
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def forward(x, w1, b1, w2, b2, w3, b3):
        n = x.shape[0]
        h1 = w1.shape[0]
        h2 = w2.shape[0]
        no = w3.shape[0]
        a1 = np.empty((n, h1))
        a2 = np.empty((n, h2))
        q = np.empty((n, no))
        for i in range(n):
            for o in range(h1):
                s = b1[o]
                for k in range(x.shape[1]):
                    s += x[i, k] * w1[o, k]
                a1[i, o] = s if s > 0.0 else 0.0
            for o in range(h2):
                s = b2[o]
                for k in range(h1):
                    s += a1[i, k] * w2[o, k]
                a2[i, o] = s if s > 0.0 else 0.0
            for o in range(no):
                s = b3[o]
                for k in range(h2):
                    s += a2[i, k] * w3[o, k]
                q[i, o] = s
        return a1, a2, q

    @njit(cache=True)
    def q_values(x, w1, b1, w2, b2, w3, b3):
        return forward(x, w1, b1, w2, b2, w3, b3)[2]

    @njit(cache=True)
    def loss_and_grads(x, actions, targets, w1, b1, w2, b2, w3, b3,
                       loss_kind, huber_delta):
        n = x.shape[0]
        nin = x.shape[1]
        h1 = w1.shape[0]
        h2 = w2.shape[0]
        no = w3.shape[0]
        a1, a2, q = forward(x, w1, b1, w2, b2, w3, b3)

        gw1 = np.zeros((h1, nin))
        gb1 = np.zeros(h1)
        gw2 = np.zeros((h2, h1))
        gb2 = np.zeros(h2)
        gw3 = np.zeros((no, h2))
        gb3 = np.zeros(no)

        loss = 0.0
        dz1 = np.empty(h1)
        dz2 = np.empty(h2)
        for i in range(n):
            a = actions[i]
            resid = q[i, a] - targets[i]
            if loss_kind == LOSS_HUBER:
                if abs(resid) <= huber_delta:
                    loss += 0.5 * resid * resid
                    dsel = resid / n
                else:
                    loss += huber_delta * (abs(resid) - 0.5 * huber_delta)
                    dsel = (huber_delta if resid > 0.0 else -huber_delta) / n
            else:
                loss += resid * resid
                dsel = 2.0 * resid / n

            # output layer: dq is nonzero only at the selected action
            gb3[a] += dsel
            for k in range(h2):
                gw3[a, k] += dsel * a2[i, k]
                dz2[k] = dsel * w3[a, k] if a2[i, k] > 0.0 else 0.0
            for k in range(h2):
                if dz2[k] != 0.0:
                    gb2[k] += dz2[k]
                    for j in range(h1):
                        gw2[k, j] += dz2[k] * a1[i, j]
            for j in range(h1):
                s = 0.0
                for k in range(h2):
                    s += dz2[k] * w2[k, j]
                dz1[j] = s if a1[i, j] > 0.0 else 0.0
            for j in range(h1):
                if dz1[j] != 0.0:
                    gb1[j] += dz1[j]
                    for k in range(nin):
                        gw1[j, k] += dz1[j] * x[i, k]
        loss /= n
        return loss, gw1, gb1, gw2, gb2, gw3, gb3

    @njit(cache=True)
    def adam_update(param, m, v, grad, step, lr, beta1, beta2, eps):
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        p = param.ravel()
        mm = m.ravel()
        vv = v.ravel()
        g = grad.ravel()
        for i in range(p.shape[0]):
            mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i]
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = mm[i] / c1
            vhat = vv[i] / c2
            p[i] -= lr * mhat / (np.sqrt(vhat) + eps)

    @njit(cache=True)
    def ddqn_targets(rewards, terminals, q_next_online, q_next_target, gamma):
        n = rewards.shape[0]
        y = np.empty(n)
        for i in range(n):
            if terminals[i]:
                y[i] = rewards[i]
            else:
                best = 0
                for a in range(1, q_next_online.shape[1]):
                    if q_next_online[i, a] > q_next_online[i, best]:
                        best = a
                y[i] = rewards[i] + gamma * q_next_target[i, best]
        return y

    @njit(cache=True)
    def train_step(w1, b1, w2, b2, w3, b3,
                   tw1, tb1, tw2, tb2, tw3, tb3,
                   mw1, mb1, mw2, mb2, mw3, mb3,
                   vw1, vb1, vw2, vb2, vw3, vb3,
                   states, actions, rewards, next_states, terminals,
                   gamma, lr, beta1, beta2, eps, step,
                   loss_kind, huber_delta):
        qno = q_values(next_states, w1, b1, w2, b2, w3, b3)
        qnt = q_values(next_states, tw1, tb1, tw2, tb2, tw3, tb3)
        y = ddqn_targets(rewards, terminals, qno, qnt, gamma)
        loss, gw1, gb1, gw2, gb2, gw3, gb3 = loss_and_grads(
            states, actions, y, w1, b1, w2, b2, w3, b3, loss_kind, huber_delta)
        adam_update(w1, mw1, vw1, gw1, step, lr, beta1, beta2, eps)
        adam_update(b1, mb1, vb1, gb1, step, lr, beta1, beta2, eps)
        adam_update(w2, mw2, vw2, gw2, step, lr, beta1, beta2, eps)
        adam_update(b2, mb2, vb2, gb2, step, lr, beta1, beta2, eps)
        adam_update(w3, mw3, vw3, gw3, step, lr, beta1, beta2, eps)
        adam_update(b3, mb3, vb3, gb3, step, lr, beta1, beta2, eps)
        return loss

    return SimpleNamespace(
        name="numba",
        forward=forward,
        q_values=q_values,
        loss_and_grads=loss_and_grads,
        adam_update=adam_update,
        ddqn_targets=ddqn_targets,
        train_step=train_step,
    )


def _select_backend():
    choice = os.environ.get("FORMATION_DDQN_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"FORMATION_DDQN_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return None, NUMPY_KERNELS
    try:
        nb = _build_numba_kernels()
    except ImportError:
        if choice == "numba":
            raise
        return None, NUMPY_KERNELS
    return nb, nb


NUMBA_KERNELS, ACTIVE_KERNELS = _select_backend()


def active_backend() -> str:
    return ACTIVE_KERNELS.name
