"""Time every kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--rows 2048] [--json out.json]

Numba compilation happens before timing. Each row reports the best
per-call time of both paths, their ratio and the largest absolute
difference between their outputs. A final row times one full training
step of the desk dual-source model on random data.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from dualsource import kernels
from dualsource import tensor as T
from dualsource.batching import Batch
from dualsource.transformer import PRESETS, DualSourceModel


def kernel_cases(rows: int, rng: np.random.Generator) -> dict:
    vocab, width, hid = 800, 64, 256
    logits = rng.normal(size=(rows, vocab))
    probs = kernels.softmax_rows(logits)
    x = rng.normal(size=(rows, width))
    gamma, beta = rng.normal(size=width), rng.normal(size=width)
    _, xhat, rstd = kernels.layer_norm_rows(x, gamma, beta, 1e-9)
    targets = rng.integers(0, vocab, size=rows)
    weights = np.ones(rows)
    gates = rng.normal(size=(rows // 8, 4 * hid))
    c, h = rng.normal(size=(rows // 8, hid)), rng.normal(size=(rows // 8, hid))
    mask = np.ones(rows // 8)
    _, _, acts = kernels.lstm_pointwise(gates, c, h, mask)
    ids = rng.integers(0, vocab, size=rows)
    return {
        "softmax_rows": (logits,),
        "softmax_backward_rows": (probs, rng.normal(size=probs.shape)),
        "layer_norm_rows": (x, gamma, beta, 1e-9),
        "layer_norm_backward_rows": (rng.normal(size=x.shape), xhat, rstd, gamma),
        "cross_entropy_rows": (logits, targets, weights, 0.1),
        "embedding_backward": (x, ids, vocab),
        "lstm_pointwise": (gates, c, h, mask),
        "lstm_pointwise_backward": (rng.normal(size=h.shape), rng.normal(size=c.shape), acts, c, mask),
    }


def max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def best_time(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step_time(repeat: int) -> float:
    cfg = PRESETS["desk"]
    model = DualSourceModel(cfg, seed=0)
    rng = np.random.default_rng(0)
    b, n = 16, 64
    ids = rng.integers(5, cfg.vocab_size, size=(b, n))
    ones = np.ones((b, n), dtype=bool)
    batch = Batch(ids, ones, ids[:, :8], ones[:, :8], ids[:, :24], ids[:, 1:25], ones[:, :24], [()] * b)
    opt = T.Adam(model.parameters(), lr=1e-4)

    def step():
        with T.Tape() as tape:
            loss = model.loss(batch)
        tape.backward(loss)
        opt.step()

    return best_time(step, max(3, repeat // 4))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = kernel_cases(args.rows, np.random.default_rng(0))
    results = []
    for name, call_args in cases.items():
        row = {"kernel": name}
        outs = {}
        for backend in ("numpy", "numba"):
            kernels.set_backend(backend)
            fn = getattr(kernels, name)
            outs[backend] = fn(*call_args)
            row[backend] = best_time(lambda: fn(*call_args), args.repeat)
        row["speedup"] = row["numpy"] / row["numba"]
        row["max_abs_diff"] = max_diff(outs["numpy"], outs["numba"])
        results.append(row)
    step = {"kernel": "dual train step (desk, 16x64)"}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        step[backend] = train_step_time(args.repeat)
    step["speedup"] = step["numpy"] / step["numba"]
    step["max_abs_diff"] = float("nan")
    results.append(step)

    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for r in results:
        print(f"{r['kernel']:34s} {1e3 * r['numpy']:10.3f} {1e3 * r['numba']:10.3f} "
              f"{r['speedup']:8.2f} {r['max_abs_diff']:11.2e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
