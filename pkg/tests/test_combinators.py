from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.combinators import (  # noqa: E402
    concatenate,
    depth_align,
    factor_poly_net,
    full_parallelize,
    identity_net,
    linear_output,
    max2_net,
    min2_net,
    parallelize,
    product2,
    product8,
    product_d,
    relu_identity_net,
    sparse_concat,
)
from fem2nn.errors import NetworkError  # noqa: E402
from fem2nn.network import Activation, Network, realize, size_depth  # noqa: E402


def test_product2_counts_and_values(rng: np.random.Generator) -> None:
    net = product2()
    report = size_depth(net)
    assert report.M == 12
    assert report.L == 2
    assert report.widths[0] == 4
    x = rng.uniform(-3.0, 3.0, size=(200, 2))
    assert np.allclose(realize(net, x)[:, 0], x[:, 0] * x[:, 1], rtol=0, atol=1e-12)


@pytest.mark.parametrize("d", [3, 4, 5, 8, 9, 16])
def test_product_d_is_exact(d: int, rng: np.random.Generator) -> None:
    x = rng.uniform(-1.0, 1.0, size=(100, d))
    assert np.allclose(realize(product_d(d), x)[:, 0], x.prod(axis=1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("d", [8, 64])
def test_product_depth_for_powers_of_eight(d: int) -> None:
    assert product_d(d).depth == 2 * math.ceil(math.log2(d))
    assert product8().depth == 6


def test_product_d_rejects_single_factor() -> None:
    with pytest.raises(NetworkError):
        product_d(1)


@pytest.mark.parametrize("L", [1, 2, 3, 5])
def test_identity_nets(L: int, rng: np.random.Generator) -> None:
    x = rng.normal(scale=4.0, size=(200, 3))
    relu2 = identity_net(3, L)
    relu = relu_identity_net(3, L)
    assert relu2.depth == L
    assert relu.depth == L
    assert np.allclose(realize(relu2, x), x, atol=1e-12)
    assert np.allclose(realize(relu, x), x, atol=1e-12)
    if L > 1:
        assert set(relu2.layer_kinds()[:-1]) == {"relu2"}
        assert set(relu.layer_kinds()[:-1]) == {"relu"}


def test_max_and_min_gadgets(rng: np.random.Generator) -> None:
    x = rng.normal(size=(100, 2))
    assert np.allclose(realize(max2_net(), x)[:, 0], x.max(axis=1))
    assert np.allclose(realize(min2_net(), x)[:, 0], x.min(axis=1))


def test_concatenate_depths(rng: np.random.Generator) -> None:
    inner = product2()
    outer = Network.affine(np.array([[2.0]]), np.array([1.0]))
    x = rng.normal(size=(100, 2))
    plain = concatenate(outer, inner)
    assert plain.depth == inner.depth + outer.depth - 1
    assert np.allclose(realize(plain, x)[:, 0], 2.0 * x[:, 0] * x[:, 1] + 1.0)

    outer2 = product2()
    inner2 = full_parallelize([product2(), product2()])
    sparse = sparse_concat(outer2, inner2)
    assert sparse.depth == outer2.depth + inner2.depth
    x4 = rng.normal(size=(100, 4))
    assert np.allclose(realize(sparse, x4)[:, 0], x4.prod(axis=1))
    with pytest.raises(NetworkError):
        concatenate(product2(), product2())


def test_parallelize_shares_input(rng: np.random.Generator) -> None:
    a = Network.affine(np.array([[1.0, 0.0]]))
    b = Network.affine(np.array([[0.0, 3.0]]), np.array([1.0]))
    net = parallelize([a, b])
    assert net.input_dim == 2
    assert net.output_dim == 2
    x = rng.normal(size=(100, 2))
    assert np.allclose(realize(net, x), np.column_stack([x[:, 0], 3.0 * x[:, 1] + 1.0]))
    with pytest.raises(NetworkError):
        parallelize([a, product_d(3)])
    with pytest.raises(NetworkError):
        parallelize([])


def test_full_parallelize_splits_inputs(rng: np.random.Generator) -> None:
    net = full_parallelize([product2()] * 3)
    assert net.input_dim == 6
    assert net.size == 3 * 12
    x = rng.normal(size=(100, 6))
    assert np.allclose(realize(net, x), x[:, 0::2] * x[:, 1::2])

    mixed = full_parallelize([product2(), max2_net()])
    assert np.allclose(realize(mixed, x[:, :4]), np.column_stack([x[:, 0] * x[:, 1], x[:, 2:4].max(axis=1)]))


def test_factor_poly_net(rng: np.random.Generator) -> None:
    factors = [(2.0, 0.0), (1.5, -0.5), (1.0, -1.0)]
    t = rng.uniform(-1.0, 2.0, size=(100, 1))
    expected = np.prod([s * t[:, 0] + c for s, c in factors], axis=0)
    assert np.allclose(realize(factor_poly_net(factors), t)[:, 0], expected, atol=1e-12)
    single = factor_poly_net([(3.0, 1.0)])
    assert single.depth == 1
    with pytest.raises(NetworkError):
        factor_poly_net([])


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.RELU2])
def test_depth_align_pads_to_common_depth(activation: Activation, rng: np.random.Generator) -> None:
    nets = [Network.affine(np.eye(2)), product2(), product_d(3)]
    aligned = depth_align(nets, activation)
    assert {net.depth for net in aligned} == {product_d(3).depth}
    x = rng.normal(size=(100, 2))
    assert np.allclose(realize(aligned[0], x), x, atol=1e-12)
    assert np.allclose(realize(aligned[1], x), realize(product2(), x), atol=1e-12)
    assert depth_align([]) == []


def test_linear_output(rng: np.random.Generator) -> None:
    net = linear_output(full_parallelize([product2()] * 2), [1.0, -2.0])
    x = rng.normal(size=(100, 4))
    assert np.allclose(realize(net, x)[:, 0], x[:, 0] * x[:, 1] - 2.0 * x[:, 2] * x[:, 3])
    with pytest.raises(NetworkError):
        linear_output(product2(), [1.0, 2.0])


def test_parallelize_sizes_add_up() -> None:
    nets = [product2(), max2_net(), min2_net()]
    assert parallelize(nets).size == sum(net.size for net in nets)
    assert full_parallelize(nets).size == sum(net.size for net in nets)


@pytest.mark.parametrize(
    "outer, inner",
    [
        (product2(), full_parallelize([product2(), product2()])),
        (product_d(3), full_parallelize([max2_net(), product2(), min2_net()])),
        (product8(), full_parallelize([product2()] * 8)),
    ],
)
def test_sparse_concat_size_bound(outer: Network, inner: Network, rng: np.random.Generator) -> None:
    net = sparse_concat(outer, inner)
    assert net.size <= 5 * outer.size + 8 * inner.size
    x = rng.normal(size=(100, inner.input_dim))
    assert np.allclose(realize(net, x), realize(outer, realize(inner, x)), atol=1e-9)


@pytest.mark.parametrize("d", range(1, 9))
def test_identity_net_size_per_coordinate_and_layer(d: int) -> None:
    for L in range(1, 9):
        net = identity_net(d, L)
        # 20 per coordinate for each chained hidden layer, 12 at the two ends
        expected = d if L == 1 else d * (20 * L - 28)
        assert net.size == expected
        assert net.size / (d * L) <= 20.0
