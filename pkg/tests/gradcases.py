"""Random instances for finite-difference checks of every differentiable primitive.

Each case is ``(name, build, inputs)``. ``build`` maps a list of tracked
Tensors to a scalar Tensor; ``inputs`` are the float64 arrays to perturb.
The scalar is a random projection of the primitive output, so every output
element contributes to the check.
"""
from __future__ import annotations

import numpy as np

from roadcotrain import numgrad as ng
from roadcotrain.losses import LabelMask, cross_entropy, kl_divergence

from oracles import central_difference, max_rel_error

INSTANCES = 20
FD_STEP = 1e-5


def _project(out: ng.Tensor, weights: np.ndarray) -> ng.Tensor:
    return ng.sum(ng.mul(out, ng.Tensor(weights)))


def _away_from_zero(gen, shape, margin=1e-2):
    x = gen.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 3, x)


def _affine_case(gen):
    n, cin, cout = gen.integers(1, 4), gen.integers(1, 5), gen.integers(1, 4)
    r = gen.normal(size=(n, cout))
    return (lambda t: _project(ng.affine(*t), r),
            [gen.normal(size=(n, cin)), gen.normal(size=(cin, cout)), gen.normal(size=cout)])


def _conv_case(gen):
    c, k = int(gen.integers(1, 4)), int(gen.integers(1, 4))
    ks = int(gen.choice([1, 3]))
    stride = int(gen.choice([1, 2]))
    pad = int(gen.integers(0, 2))
    # pick sizes that divide evenly for the chosen stride
    h = stride * int(gen.integers(1, 4)) + ks - 2 * pad
    w = stride * int(gen.integers(1, 4)) + ks - 2 * pad
    h, w = max(h, ks), max(w, ks)
    while (h + 2 * pad - ks) % stride:
        h += 1
    while (w + 2 * pad - ks) % stride:
        w += 1
    ho = ng.conv_output_size(h, ks, stride, pad)
    wo = ng.conv_output_size(w, ks, stride, pad)
    r = gen.normal(size=(k, ho, wo))
    return (lambda t: _project(ng.conv2d(t[0], t[1], t[2], stride=stride, padding=pad), r),
            [gen.normal(size=(c, h, w)), gen.normal(size=(k, c, ks, ks)), gen.normal(size=k)])


def _relu_case(gen):
    shape = tuple(int(s) for s in gen.integers(1, 5, size=2))
    r = gen.normal(size=shape)
    return lambda t: _project(ng.relu(t[0]), r), [_away_from_zero(gen, shape)]


def _softmax_case(gen):
    shape = (int(gen.integers(2, 4)), int(gen.integers(1, 4)), int(gen.integers(1, 4)))
    r = gen.normal(size=shape)
    return lambda t: _project(ng.softmax(t[0], axis=0), r), [gen.normal(size=shape)]


def _add_case(gen):
    shape = tuple(int(s) for s in gen.integers(1, 4, size=3))
    r = gen.normal(size=shape)
    return lambda t: _project(ng.add(t[0], t[1]), r), [gen.normal(size=shape), gen.normal(size=shape)]


def _mul_case(gen):
    shape = tuple(int(s) for s in gen.integers(1, 4, size=2))
    r = gen.normal(size=shape)
    return lambda t: _project(ng.mul(t[0], t[1]), r), [gen.normal(size=shape), gen.normal(size=shape)]


def _scale_case(gen):
    shape = tuple(int(s) for s in gen.integers(1, 4, size=2))
    factor = float(gen.normal())
    r = gen.normal(size=shape)
    return lambda t: _project(ng.scale(t[0], factor), r), [gen.normal(size=shape)]


def _sum_case(gen):
    shape = tuple(int(s) for s in gen.integers(1, 4, size=3))
    return lambda t: ng.sum(t[0]), [gen.normal(size=shape)]


def _cross_entropy_case(gen):
    h, w = int(gen.integers(1, 4)), int(gen.integers(1, 4))
    classes = gen.integers(0, 2, size=(h, w))
    valid = gen.random((h, w)) < 0.8
    valid.flat[0] = True
    label = LabelMask(classes, valid)
    return lambda t: cross_entropy(ng.softmax(t[0], axis=0), label), [gen.normal(size=(2, h, w))]


def _kl_case(gen):
    h, w = int(gen.integers(1, 4)), int(gen.integers(1, 4))
    teacher = ng.softmax(ng.Tensor(gen.normal(size=(2, h, w))), axis=0)
    valid = gen.random((h, w)) < 0.8
    valid.flat[0] = True
    return lambda t: kl_divergence(teacher, ng.softmax(t[0], axis=0), valid), [gen.normal(size=(2, h, w))]


BUILDERS = {
    "affine": _affine_case,
    "conv2d": _conv_case,
    "relu": _relu_case,
    "softmax": _softmax_case,
    "add": _add_case,
    "mul": _mul_case,
    "scale": _scale_case,
    "sum": _sum_case,
    "cross_entropy": _cross_entropy_case,
    "kl_divergence": _kl_case,
}


def cases(name: str, seed: int = 0, count: int = INSTANCES):
    gen = np.random.default_rng([seed, sorted(BUILDERS).index(name)])
    return [BUILDERS[name](gen) for _ in range(count)]


def check(build, inputs) -> float:
    """Largest elementwise relative error between backward and central differences."""
    tensors = [ng.Tensor(x, requires_grad=True) for x in inputs]
    ng.backward(build(tensors))
    worst = 0.0
    for i, (t, x) in enumerate(zip(tensors, inputs)):
        def f(xi, i=i):
            args = [ng.Tensor(xi if j == i else inputs[j]) for j in range(len(inputs))]
            return build(args).item()
        analytic = t.grad if t.grad is not None else np.zeros_like(x)
        worst = max(worst, max_rel_error(analytic, central_difference(f, x, FD_STEP)))
    return worst
