"""Time the conv kernels of every available backend on training-sized layers.

    python benchmarks/bench_conv.py [--repeat 50] [--json out.json]

Also times one full training step (forward, backward, Adam) of the default
two-layer network per backend, and checks that the backends agree.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from roadcotrain import numgrad as ng
from roadcotrain.losses import LabelMask, cross_entropy
from roadcotrain.models import ModelConfig, init_model, predict
from roadcotrain.numgrad import _backend
from roadcotrain.optim import AdamState, adam_step

# (name, C_in, C_out, H, W, kernel)
LAYERS = [
    ("input 3->8", 3, 8, 24, 32, 3),
    ("hidden 8->8", 8, 8, 24, 32, 3),
    ("hidden 16->16", 16, 16, 24, 32, 3),
    ("head 8->2 1x1", 8, 2, 24, 32, 1),
    ("wide 16->16 96x128", 16, 16, 96, 128, 3),
]


def _best_ms(fn, repeat: int) -> float:
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_layers(repeat: int) -> list[dict]:
    gen = np.random.default_rng(0)
    rows = []
    for name, c, k, h, w, ks in LAYERS:
        x = gen.normal(size=(c, h, w))
        kern = gen.normal(size=(k, c, ks, ks))
        g = gen.normal(size=(k, h, w))
        pad = ks // 2
        ref = None
        for backend, mod in sorted(_backend.AVAILABLE.items()):
            out = (mod.conv_forward(x, kern, 1, pad), mod.conv_backward_kernel(g, x, ks, ks, 1, pad),
                   mod.conv_backward_input(g, kern, h, w, 1, pad))
            if ref is None:
                ref = out
            err = max(float(np.abs(a - b).max()) for a, b in zip(out, ref))
            rows.append({
                "layer": name, "backend": backend,
                "forward_ms": _best_ms(lambda: mod.conv_forward(x, kern, 1, pad), repeat),
                "grad_kernel_ms": _best_ms(lambda: mod.conv_backward_kernel(g, x, ks, ks, 1, pad), repeat),
                "grad_input_ms": _best_ms(lambda: mod.conv_backward_input(g, kern, h, w, 1, pad), repeat),
                "max_abs_diff": err,
            })
    return rows


def bench_step(repeat: int) -> list[dict]:
    gen = np.random.default_rng(1)
    view = gen.normal(size=(3, 24, 32))
    label = LabelMask.all_valid(gen.integers(0, 2, size=(24, 32)))
    rows = []
    for backend in sorted(_backend.AVAILABLE):
        _backend.use(backend)
        model = init_model(ModelConfig(channel_widths=(8, 8)))
        state = AdamState.for_params(model.params)

        def step():
            ng.zero_grad(model.params.values())
            ng.backward(cross_entropy(predict(model, view, track=True), label))
            adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state, 1e-3)

        rows.append({"backend": backend, "train_step_ms": _best_ms(step, repeat)})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    original = _backend.name()
    try:
        layers = bench_layers(args.repeat)
        steps = bench_step(args.repeat)
    finally:
        _backend.use(original)
    print(f"backends: {sorted(_backend.AVAILABLE)} (default: {original})")
    print(f"{'layer':<20} {'backend':<8} {'fwd ms':>8} {'dK ms':>8} {'dX ms':>8} {'max diff':>10}")
    for r in layers:
        print(f"{r['layer']:<20} {r['backend']:<8} {r['forward_ms']:8.3f} {r['grad_kernel_ms']:8.3f} "
              f"{r['grad_input_ms']:8.3f} {r['max_abs_diff']:10.2e}")
    print()
    for r in steps:
        print(f"training step, default network, {r['backend']:<8} {r['train_step_ms']:8.3f} ms")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"layers": layers, "train_step": steps}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
