import numpy as np
import pytest

from roadcotrain import numgrad as ng
from roadcotrain.numgrad import _backend, serialize

import gradcases
from oracles import conv2d_loops


@pytest.mark.parametrize("name", sorted(gradcases.BUILDERS))
def test_gradients_match_finite_differences(name):
    errs = [gradcases.check(build, inputs) for build, inputs in gradcases.cases(name)]
    assert len(errs) >= 20
    assert max(errs) < 1e-4


def test_affine_examples():
    x = ng.Tensor([[1.0, 2.0]])
    assert ng.affine(x, ng.Tensor(np.eye(2)), ng.Tensor([0.0, 0.0])).data.tolist() == [[1, 2]]
    assert ng.affine(x, ng.Tensor(np.zeros((2, 2))), ng.Tensor([3.0, 4.0])).data.tolist() == [[3, 4]]
    assert ng.affine(x, ng.Tensor(np.ones((2, 2))), ng.Tensor([0.0, 1.0])).data.tolist() == [[3, 4]]


def test_affine_shape_mismatch():
    with pytest.raises(ng.DimensionError):
        ng.affine(ng.Tensor(np.ones((1, 3))), ng.Tensor(np.ones((2, 2))), ng.Tensor(np.zeros(2)))


def test_conv_unit_kernel_sums_channels(gen):
    x = gen.normal(size=(3, 5, 4))
    out = ng.conv2d(ng.Tensor(x), ng.Tensor(np.ones((1, 3, 1, 1))))
    np.testing.assert_allclose(out.data[0], x.sum(axis=0), rtol=0, atol=1e-12)


def test_conv_mean_kernel_preserves_constant():
    out = ng.conv2d(ng.Tensor(np.full((1, 6, 6), 2.5)), ng.Tensor(np.full((1, 1, 3, 3), 1 / 9)))
    np.testing.assert_allclose(out.data, 2.5, atol=1e-12)


def test_conv_hand_sum():
    x = np.arange(1.0, 10.0).reshape(1, 3, 3)
    out = ng.conv2d(ng.Tensor(x), ng.Tensor(np.ones((1, 1, 3, 3))))
    assert out.data.tolist() == [[[45.0]]]


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (1, 2)])
def test_conv_matches_loops(backend, gen, stride, padding):
    x = gen.normal(size=(2, 7, 7))
    k = gen.normal(size=(3, 2, 3, 3))
    b = gen.normal(size=3)
    out = ng.conv2d(ng.Tensor(x), ng.Tensor(k), ng.Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, conv2d_loops(x, k, b, stride, padding), atol=1e-12)


def test_conv_rejects_non_integral_output():
    with pytest.raises(ng.DimensionError):
        ng.conv2d(ng.Tensor(np.ones((1, 4, 4))), ng.Tensor(np.ones((1, 1, 3, 3))), stride=2)


def test_conv_rejects_even_kernel():
    with pytest.raises(ng.DimensionError):
        ng.conv2d(ng.Tensor(np.ones((1, 4, 4))), ng.Tensor(np.ones((1, 1, 2, 2))))


def test_backends_agree(gen):
    if len(_backend.AVAILABLE) < 2:
        pytest.skip("compiled extension not built")
    x = gen.normal(size=(4, 9, 11))
    k = gen.normal(size=(5, 4, 3, 3))
    g = gen.normal(size=(5, 9, 11))
    mods = list(_backend.AVAILABLE.values())
    ref = mods[0]
    for mod in mods[1:]:
        np.testing.assert_allclose(mod.conv_forward(x, k, 1, 1), ref.conv_forward(x, k, 1, 1), atol=1e-10)
        np.testing.assert_allclose(mod.conv_backward_kernel(g, x, 3, 3, 1, 1),
                                   ref.conv_backward_kernel(g, x, 3, 3, 1, 1), atol=1e-10)
        np.testing.assert_allclose(mod.conv_backward_input(g, k, 9, 11, 1, 1),
                                   ref.conv_backward_input(g, k, 9, 11, 1, 1), atol=1e-10)


def test_backend_selection():
    assert _backend.name() in _backend.AVAILABLE
    with pytest.raises(ValueError):
        _backend.use("no-such-backend")


def test_relu_examples():
    assert ng.relu(ng.Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    x = ng.Tensor([-1.0, 2.0], requires_grad=True)
    ng.backward(ng.sum(ng.relu(x)))
    assert x.grad.tolist() == [0, 1]
    z = ng.Tensor([0.0], requires_grad=True)
    ng.backward(ng.sum(ng.relu(z)))
    assert z.grad.tolist() == [0]


def test_softmax_examples():
    np.testing.assert_allclose(ng.softmax(ng.Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(ng.softmax(ng.Tensor([np.log(2), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_is_distribution_and_shift_invariant(gen):
    z = gen.normal(size=(2, 4, 5)) * 30
    s = ng.softmax(ng.Tensor(z), axis=0).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(ng.softmax(ng.Tensor(z + 123.4), axis=0).data, s, atol=1e-12)


def test_softmax_large_logits_stay_finite():
    s = ng.softmax(ng.Tensor([1000.0, -1000.0])).data
    assert np.isfinite(s).all()


def test_backward_examples():
    x = ng.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ng.backward(ng.sum(x))
    assert x.grad.tolist() == [1, 1, 1]
    y = ng.Tensor([1.0, 2.0], requires_grad=True)
    ng.backward(ng.sum(ng.mul(y, y)))
    assert y.grad.tolist() == [2, 4]


def test_backward_twice_doubles(gen):
    x = ng.Tensor(gen.normal(size=(2, 3)), requires_grad=True)
    w = ng.Tensor(gen.normal(size=(3, 2)), requires_grad=True)
    loss = ng.sum(ng.relu(ng.affine(x, w, ng.Tensor(np.zeros(2)))))
    graph = ng.ComputationGraph(loss)
    ng.backward(loss, graph)
    once = w.grad.copy()
    ng.backward(loss, graph)
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_requires_scalar():
    x = ng.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ng.ContractError):
        ng.backward(ng.scale(x, 2.0))


def test_graph_is_topological():
    x = ng.Tensor([1.0, -2.0], requires_grad=True)
    loss = ng.sum(ng.relu(ng.scale(x, 3.0)))
    graph = ng.ComputationGraph(loss)
    pos = {id(t): i for i, t in enumerate(graph.nodes)}
    for t in graph.nodes:
        if t._node is not None:
            assert all(pos[id(p)] < pos[id(t)] for p in t._node.inputs if p.requires_grad)
    assert graph.ops() == ["scale", "relu", "sum"]
    assert graph.leaves() == [x]


def test_no_graph_without_tracking():
    out = ng.relu(ng.Tensor([1.0]))
    assert out.is_leaf and not out.requires_grad


def test_nonfinite_rejected():
    with pytest.raises(ng.NonFiniteError):
        ng.Tensor([1.0, np.nan])
    with pytest.raises(ng.NonFiniteError), np.errstate(over="ignore"):
        ng.scale(ng.Tensor([1e308]), 10.0)


def test_data_is_read_only():
    t = ng.Tensor([1.0])
    with pytest.raises(ValueError):
        t.data[0] = 2.0


def test_shape_mismatch_is_an_error():
    with pytest.raises(ng.DimensionError):
        ng.add(ng.Tensor(np.ones(2)), ng.Tensor(np.ones(3)))


def test_forward_is_deterministic(gen):
    x = gen.normal(size=(3, 8, 8))
    k = gen.normal(size=(4, 3, 3, 3))
    a = ng.conv2d(ng.Tensor(x), ng.Tensor(k), padding=1).data
    b = ng.conv2d(ng.Tensor(x), ng.Tensor(k), padding=1).data
    assert a.tobytes() == b.tobytes()


def test_serialize_round_trip(tmp_path, gen):
    arr = gen.normal(size=(2, 3, 4))
    path = tmp_path / "t.f64"
    serialize.save(path, arr)
    raw = path.read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b'{"shape":[2,3,4],"dtype":"f64"}'
    assert payload == arr.astype("<f8").tobytes()
    np.testing.assert_array_equal(serialize.load(path), arr)


@pytest.mark.parametrize("blob", [b"", b"not json\n", b'{"shape":[2],"dtype":"f32"}\n' + bytes(8),
                                  b'{"shape":[2],"dtype":"f64"}\n' + bytes(12)])
def test_serialize_rejects_malformed(blob):
    with pytest.raises(ng.FormatError):
        serialize.from_bytes(blob)
