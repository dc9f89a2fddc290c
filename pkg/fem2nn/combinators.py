from __future__ import annotations

import math
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import NetworkError
from .network import Activation, Layer, Network


def _check_depths(nets: Sequence[Network]) -> None:
    if not nets:
        raise NetworkError("nothing to parallelize")
    depths = {net.depth for net in nets}
    if len(depths) > 1:
        raise NetworkError(f"networks have depths {sorted(depths)}; call depth_align first")


def parallelize(nets: Sequence[Network]) -> Network:
    """Shared input, outputs concatenated in operand order."""
    _check_depths(nets)
    if len({net.input_dim for net in nets}) > 1:
        raise NetworkError("parallelize needs a common input dimension")
    if len(nets) == 1:
        return nets[0]
    layers = []
    for k in range(nets[0].depth):
        parts = [net.layers[k] for net in nets]
        if k == 0:
            weights = sparse.vstack([p.weights for p in parts], format="csr")
        else:
            weights = sparse.block_diag([p.weights for p in parts], format="csr")
        layers.append(_stack_layer(weights, parts))
    return Network(nets[0].input_dim, tuple(layers))


def full_parallelize(nets: Sequence[Network]) -> Network:
    """Inputs and outputs concatenated in operand order; block-diagonal in every layer."""
    _check_depths(nets)
    if len(nets) == 1:
        return nets[0]
    layers = []
    for k in range(nets[0].depth):
        parts = [net.layers[k] for net in nets]
        if all(net is nets[0] for net in nets):
            weights = sparse.kron(sparse.identity(len(nets), format="csr"), parts[0].weights, format="csr")
        else:
            weights = sparse.block_diag([p.weights for p in parts], format="csr")
        layers.append(_stack_layer(weights, parts))
    return Network(sum(net.input_dim for net in nets), tuple(layers))


def _stack_layer(weights: sparse.csr_matrix, parts: Sequence[Layer]) -> Layer:
    return Layer(
        weights,
        np.concatenate([p.bias for p in parts]),
        np.concatenate([p.acts for p in parts]),
    )


def concatenate(outer: Network, inner: Network) -> Network:
    """
    Composition outer after inner; the first layer of `outer` is merged into the
    last layer of `inner`, so the depth is L1 + L2 - 1.
    """
    if inner.output_dim != outer.input_dim:
        raise NetworkError(f"cannot feed {inner.output_dim} outputs into {outer.input_dim} inputs")
    first, last = outer.layers[0], inner.layers[-1]
    merged = Layer(
        first.weights @ last.weights,
        first.weights @ last.bias + first.bias,
        first.acts,
    )
    return Network(inner.input_dim, inner.layers[:-1] + (merged,) + outer.layers[1:])


def sparse_concat(outer: Network, inner: Network) -> Network:
    """Composition through a ReLU^2 identity layer; depth L1 + L2, size additive up to constants."""
    if inner.output_dim != outer.input_dim:
        raise NetworkError(f"cannot feed {inner.output_dim} outputs into {outer.input_dim} inputs")
    return concatenate(outer, concatenate(identity_net(inner.output_dim, 2), inner))


# x = [rho^2(x+1) + rho^2(-x-1) - rho^2(x-1) - rho^2(-x+1)] / 4
_ID_IN = np.array([1.0, -1.0, 1.0, -1.0])
_ID_BIAS = np.array([1.0, -1.0, -1.0, 1.0])
_QUARTER = np.array([0.25, 0.25, -0.25, -0.25])


@lru_cache(maxsize=None)
def identity_net(d: int, L: int) -> Network:
    """Exact identity on R^d with L layers, hidden layers ReLU^2."""
    if d < 1 or L < 1:
        raise NetworkError("identity_net needs d >= 1 and L >= 1")
    if L == 1:
        return Network.affine(sparse.identity(d, format="csr"))
    if L > 2:
        return concatenate(identity_net(d, 2), identity_net(d, L - 1))
    eye = sparse.identity(d, format="csr")
    hidden = Layer(
        sparse.kron(eye, _ID_IN[:, None], format="csr"),
        np.tile(_ID_BIAS, d),
        np.full(4 * d, Activation.RELU2, dtype=np.int8),
    )
    out = Layer(sparse.kron(eye, _QUARTER[None, :], format="csr"), np.zeros(d), np.zeros(d, dtype=np.int8))
    return Network(d, (hidden, out))


@lru_cache(maxsize=None)
def relu_identity_net(d: int, L: int) -> Network:
    """Exact identity on R^d with L layers, hidden layers ReLU: x = rho(x) - rho(-x)."""
    if d < 1 or L < 1:
        raise NetworkError("relu_identity_net needs d >= 1 and L >= 1")
    if L == 1:
        return Network.affine(sparse.identity(d, format="csr"))
    if L > 2:
        return concatenate(relu_identity_net(d, 2), relu_identity_net(d, L - 1))
    eye = sparse.identity(d, format="csr")
    hidden = Layer(
        sparse.kron(eye, np.array([[1.0], [-1.0]]), format="csr"),
        np.zeros(2 * d),
        np.full(2 * d, Activation.RELU, dtype=np.int8),
    )
    out = Layer(sparse.kron(eye, np.array([[1.0, -1.0]]), format="csr"), np.zeros(d), np.zeros(d, dtype=np.int8))
    return Network(d, (hidden, out))


def _gadget(hidden_weights: List[List[float]], acts: int, out_row: List[float]) -> Network:
    rows = len(hidden_weights)
    hidden = Layer(np.array(hidden_weights), np.zeros(rows), np.full(rows, acts, dtype=np.int8))
    out = Layer(np.array([out_row]), np.zeros(1), np.zeros(1, dtype=np.int8))
    return Network(len(hidden_weights[0]), (hidden, out))


_POLAR = [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]


@lru_cache(maxsize=None)
def product2() -> Network:
    """xy = [rho^2(x+y) + rho^2(-x-y) - rho^2(x-y) - rho^2(-x+y)] / 4."""
    return _gadget(_POLAR, Activation.RELU2, [0.25, 0.25, -0.25, -0.25])


@lru_cache(maxsize=None)
def max2_net() -> Network:
    """max(a, b) = [rho(a+b) - rho(-a-b) + rho(a-b) + rho(b-a)] / 2."""
    return _gadget(_POLAR, Activation.RELU, [0.5, -0.5, 0.5, 0.5])


@lru_cache(maxsize=None)
def min2_net() -> Network:
    return _gadget(_POLAR, Activation.RELU, [0.5, -0.5, -0.5, -0.5])


@lru_cache(maxsize=None)
def product8() -> Network:
    pairs4 = full_parallelize([product2()] * 4)
    pairs2 = full_parallelize([product2()] * 2)
    return sparse_concat(product2(), sparse_concat(pairs2, pairs4))


@lru_cache(maxsize=None)
def _product_pow8(d: int) -> Network:
    if d == 8:
        return product8()
    return sparse_concat(_product_pow8(d // 8), full_parallelize([product8()] * (d // 8)))


@lru_cache(maxsize=None)
def product_d(d: int) -> Network:
    """
    Exact product of d inputs. Fan-in 8^k uses an octree of 8-products; other fan-ins
    use the next power of 8 with the surplus inputs fixed to 1 through the first bias.
    """
    if d < 2:
        raise NetworkError(f"product_d needs d >= 2, got {d}")
    if d == 2:
        return product2()
    padded = 8 ** math.ceil(math.log(d, 8) - 1e-12)
    net = _product_pow8(padded)
    if padded == d:
        return net
    first = net.layers[0]
    bias = first.bias + np.asarray(first.weights[:, d:].sum(axis=1)).ravel()
    layer = Layer(first.weights[:, :d], bias, first.acts)
    return Network(d, (layer,) + net.layers[1:])


def factor_poly_net(factors: Sequence[Tuple[float, float]]) -> Network:
    """t -> prod_j (slope_j * t + intercept_j)."""
    if not factors:
        raise NetworkError("factor_poly_net needs at least one factor")
    slopes = np.array([[s] for s, _ in factors], dtype=float)
    intercepts = np.array([c for _, c in factors], dtype=float)
    affine = Network.affine(slopes, intercepts)
    if len(factors) == 1:
        return affine
    return concatenate(product_d(len(factors)), affine)


def depth_align(nets: Sequence[Network], activation: Activation = Activation.RELU2) -> List[Network]:
    """
    Pad every network on its output side with an identity chain so that all reach the
    largest depth. ReLU^2 padding uses sparse concatenation, ReLU padding plain
    concatenation with the rho(x) - rho(-x) chain.
    """
    if not nets:
        return []
    target = max(net.depth for net in nets)
    aligned = []
    for net in nets:
        gap = target - net.depth
        if gap == 0:
            aligned.append(net)
        elif activation == Activation.RELU:
            aligned.append(concatenate(relu_identity_net(net.output_dim, gap + 1), net))
        elif activation == Activation.RELU2:
            aligned.append(sparse_concat(identity_net(net.output_dim, gap), net))
        else:
            raise NetworkError("padding needs a ReLU or ReLU^2 identity chain")
    return aligned


def linear_output(net: Network, row) -> Network:
    """Inner product of `row` with the outputs of `net`."""
    row = sparse.csr_matrix(np.asarray(row, dtype=float).reshape(1, -1)) if not sparse.issparse(row) else row
    if row.shape[1] != net.output_dim:
        raise NetworkError(f"row has length {row.shape[1]}, network has {net.output_dim} outputs")
    return concatenate(Network.affine(row), net)
