"""Timing and agreement comparison between kernel backends.

Run as: python benchmarks/bench_kernels.py [--repeats N]

Shapes mirror one training step of the default model (batch 32, 4 heads,
sequence 24, d_model 128) so relative numbers are representative.
"""

import argparse
import time

import numpy as np

from taeparse.kernels import available_backends, load_backend


def _timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(rng):
    b, h, t, d, v = 32, 4, 24, 128, 140
    scores = rng.normal(size=(b, h, t, t)).astype(np.float32)
    mask = (rng.random((b, h, t, t)) < 0.1).astype(np.uint8)
    probs = np.abs(scores) + 0.01
    probs /= probs.sum(-1, keepdims=True)
    grad = rng.normal(size=scores.shape).astype(np.float32)
    x = rng.normal(size=(b, t, d)).astype(np.float32)
    gx = rng.normal(size=x.shape).astype(np.float32)
    gen = rng.dirichlet(np.ones(v), size=(b, t)).astype(np.float32)
    copy_w = rng.dirichlet(np.ones(t), size=(b, t)).astype(np.float32)
    p_gen = rng.random((b, t)).astype(np.float32)
    src = rng.integers(5, v, size=(b, t)).astype(np.int64)
    g_mix = rng.normal(size=gen.shape).astype(np.float32)
    table = np.zeros((v, d), dtype=np.float32)
    rows = rng.integers(0, v, size=b * t).astype(np.int64)
    updates = rng.normal(size=(b * t, d)).astype(np.float32)
    p = rng.normal(size=(v, d)).astype(np.float32)
    g = rng.normal(size=(v, d)).astype(np.float32)

    def norm_bwd_case(k):
        yk, invk = k.norm_fwd(x)
        return k.norm_bwd(yk, invk, gx)

    def scatter_case(k):
        t2 = table.copy()
        k.scatter_add_rows(t2, rows, updates)
        return t2

    def adam_case(k):
        p2 = p.copy()
        k.adam_step(p2, g, np.zeros_like(p), np.zeros_like(p),
                    1e-3, 0.9, 0.999, 1e-8, 10)
        return p2

    return {
        "softmax_fwd": lambda k: k.softmax_fwd(scores, mask),
        "softmax_bwd": lambda k: k.softmax_bwd(probs, grad),
        "norm_fwd": lambda k: k.norm_fwd(x)[0],
        "norm_bwd": norm_bwd_case,
        "copy_mix_fwd": lambda k: k.copy_mix_fwd(gen, copy_w, src, p_gen),
        "copy_mix_bwd": lambda k: k.copy_mix_bwd(gen, copy_w, src, p_gen,
                                                 g_mix)[0],
        "scatter_add_rows": scatter_case,
        "adam_step": adam_case,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = make_cases(rng)
    backends = available_backends()
    mods = {n: load_backend(n) for n in backends}
    print(f"backends: {', '.join(backends)}")
    header = f"{'kernel':<18}" + "".join(f"{n:>12}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}{'max |diff|':>12}"
    print(header)
    for name, call in cases.items():
        times, outs = {}, {}
        for bk in backends:
            times[bk] = _timeit(lambda: call(mods[bk]), args.repeats)
            outs[bk] = call(mods[bk])
        row = f"{name:<18}" + "".join(f"{times[bk] * 1e3:>10.2f}ms"
                                      for bk in backends)
        if len(backends) == 2:
            a, b = (np.asarray(outs[backends[0]], dtype=np.float64),
                    np.asarray(outs[backends[1]], dtype=np.float64))
            row += (f"{times[backends[0]] / times[backends[1]]:>10.1f}x"
                    f"{np.abs(a - b).max():>12.2e}")
        print(row)


if __name__ == "__main__":
    main()
