"""Timing comparison of the numba and numpy math backends.

Runs each kernel (batch forward pass, loss+gradients, double-DQN targets,
and the fused train step) on a batch of 64 transitions with the default
8-64-64-8 architecture, and reports per-call time for both backends plus
the speedup.  Also reports the max absolute disagreement between backends
so numerical drift is visible (the two backends sum in different orders,
so tiny differences are expected; per-backend runs stay bit-reproducible).

Usage:
    python3 benchmarks/bench_kernels.py [--batch N] [--repeat K]
"""

import argparse
import time

import numpy as np

from formation_ddqn import kernels
from formation_ddqn.network import DEFAULT_ARCH, init_network

BATCH = 64
GAMMA = 0.99
LR = 3e-4


def flat_params(seed):
    """Weights and biases of a fresh net, in kernel argument order."""
    net = init_network(seed)
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(np.ascontiguousarray(w))
        out.append(np.ascontiguousarray(b))
    return out


def make_batch(rng, batch):
    states = rng.uniform(0.0, 1.0, size=(batch, DEFAULT_ARCH[0]))
    next_states = rng.uniform(0.0, 1.0, size=(batch, DEFAULT_ARCH[0]))
    actions = rng.integers(0, DEFAULT_ARCH[-1], size=batch)
    rewards = rng.uniform(-1.0, 1.0, size=batch)
    terminals = rng.uniform(size=batch) < 0.05
    return states, actions, rewards, next_states, terminals


def bench(fn, repeat, inner):
    """Best-of-`repeat` mean per-call time over `inner` calls."""
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        dt = (time.perf_counter() - t0) / inner
        best = min(best, dt)
    return best


def build_cases(ks, batch, rng_seed):
    rng = np.random.default_rng(rng_seed)
    online = flat_params(0)
    target = flat_params(1)
    states, actions, rewards, next_states, terminals = make_batch(rng, batch)
    qno = ks.q_values(next_states, *online)
    qnt = ks.q_values(next_states, *target)
    targets = ks.ddqn_targets(rewards, terminals, qno, qnt, GAMMA)

    # train_step mutates params and adam state in place; letting the state
    # accumulate across timed calls matches how the training loop drives it
    p = [a.copy() for a in online]
    t = [a.copy() for a in target]
    m = [np.zeros_like(a) for a in p]
    v = [np.zeros_like(a) for a in p]

    def fused():
        return ks.train_step(*p, *t, *m, *v,
                             states, actions, rewards, next_states, terminals,
                             GAMMA, LR, 0.9, 0.999, 1e-8, 1,
                             kernels.LOSS_MSE, 1.0)

    return {
        "q_values": lambda: ks.q_values(states, *online),
        "loss_and_grads": lambda: ks.loss_and_grads(
            states, actions, targets, *online, kernels.LOSS_MSE, 1.0),
        "ddqn_targets": lambda: ks.ddqn_targets(
            rewards, terminals, qno, qnt, GAMMA),
        "train_step": fused,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=BATCH)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--inner", type=int, default=200)
    args = ap.parse_args()

    backends = {"numpy": kernels.NUMPY_KERNELS}
    if kernels.NUMBA_KERNELS is not None:
        backends["numba"] = kernels.NUMBA_KERNELS
    else:
        print("numba backend unavailable; timing numpy only")

    cases = {name: build_cases(ks, args.batch, rng_seed=7)
             for name, ks in backends.items()}

    # agreement check before timing
    if len(backends) == 2:
        for op in ("q_values", "loss_and_grads", "ddqn_targets"):
            a, b = cases["numpy"][op](), cases["numba"][op]()
            if op == "loss_and_grads":
                diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y))))
                           for x, y in zip(a, b))
            else:
                diff = float(np.max(np.abs(a - b)))
            print(f"max |numpy - numba| for {op:15s}: {diff:.3e}")
        print()

    # warm-up triggers jit compilation so it is not timed
    for ops in cases.values():
        for fn in ops.values():
            fn()

    results = {}
    for name, ops in cases.items():
        for op, fn in ops.items():
            results[(op, name)] = bench(fn, args.repeat, args.inner)

    ops = ["q_values", "loss_and_grads", "ddqn_targets", "train_step"]
    print(f"batch={args.batch}  arch={'-'.join(map(str, DEFAULT_ARCH))}  "
          f"best of {args.repeat} x {args.inner} calls")
    header = f"{'kernel':17s}" + "".join(f"{n:>12s}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for op in ops:
        row = f"{op:17s}"
        for name in backends:
            row += f"{results[(op, name)] * 1e6:10.1f}us"
        if len(backends) == 2:
            row += f"{results[(op, 'numpy')] / results[(op, 'numba')]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
