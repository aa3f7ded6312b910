"""Adam with per-partition learning rates and Polyak parameter averaging.

Adam keeps an independent step counter per parameter: a parameter that
receives no gradient in a step keeps its first/second moments and its bias
correction untouched, bit for bit. That is what makes the frozen-encoder
branch verifiable by snapshot comparison.
"""

import numpy as np

from . import kernels


class Adam:
    def __init__(self, store, lr_by_partition, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.store = store
        self.lr_by_partition = dict(lr_by_partition)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}
        for name in store.names():
            p = store[name]
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)
            self.t[name] = 0

    def step(self, names=None):
        """Apply updates to `names` (default: all) that carry a gradient."""
        if names is None:
            names = self.store.names()
        for name in names:
            p = self.store[name]
            if p.grad is None:
                continue
            lr = self.lr_by_partition[self.store.partition_of(name)]
            self.t[name] += 1
            kernels.adam_step(p.data, p.grad, self.m[name], self.v[name],
                              lr, self.beta1, self.beta2, self.eps,
                              self.t[name])

    def state_snapshot(self):
        """Copies of (m, v, t) for bitwise comparisons in tests."""
        return ({n: a.copy() for n, a in self.m.items()},
                {n: a.copy() for n, a in self.v.items()},
                dict(self.t))


def polyak_update(shadow, current, momentum):
    """shadow' = m * shadow + (1 - m) * current, elementwise in place."""
    if shadow.shape != current.shape:
        raise ValueError("shape mismatch between shadow and current")
    shadow *= momentum
    shadow += (1.0 - momentum) * current
    return shadow


class Polyak:
    """Shadow copy of every parameter; evaluation runs on the shadow."""

    def __init__(self, store, momentum):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must be in (0, 1)")
        self.momentum = momentum
        self.shadow = {n: store[n].data.copy() for n in store.names()}

    def update(self, store):
        for name, s in self.shadow.items():
            polyak_update(s, store[name].data, self.momentum)

    def snapshot(self):
        return {n: s.copy() for n, s in self.shadow.items()}


class swapped_params:
    """Temporarily load `values` into the store (used for shadow evals)."""

    def __init__(self, store, values):
        self.store = store
        self.values = values

    def __enter__(self):
        self.saved = self.store.snapshot()
        self.store.load_values(self.values)
        return self.store

    def __exit__(self, *exc):
        self.store.load_values(self.saved)
        return False
