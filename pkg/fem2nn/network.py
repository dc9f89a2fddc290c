from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy import sparse

from .errors import NetworkError
from .fileio import atomic_write_text


class Activation(IntEnum):
    IDENTITY = 0
    RELU = 1
    RELU2 = 2


@dataclass(frozen=True, eq=False)
class Layer:
    """
    One affine map followed by a per-neuron activation. Weights are stored as CSR
    without explicit zeros; only stored entries count toward the network size.
    """

    weights: sparse.csr_matrix
    bias: np.ndarray
    acts: np.ndarray

    def __post_init__(self) -> None:
        weights = sparse.csr_matrix(self.weights, dtype=float, copy=True)
        weights.eliminate_zeros()
        weights.sort_indices()
        bias = np.array(self.bias, dtype=float).reshape(-1)
        acts = np.array(self.acts, dtype=np.int8).reshape(-1)
        rows = weights.shape[0]
        if bias.shape[0] != rows or acts.shape[0] != rows:
            raise NetworkError(
                f"layer shape mismatch: weights {weights.shape}, bias {bias.shape[0]}, acts {acts.shape[0]}"
            )
        if acts.size and (acts.min() < 0 or acts.max() > 2):
            raise NetworkError("activation codes must be 0, 1 or 2")
        if not np.all(np.isfinite(weights.data)) or not np.all(np.isfinite(bias)):
            raise NetworkError("non-finite layer parameters")
        bias.flags.writeable = False
        acts.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "acts", acts)

    @property
    def rows(self) -> int:
        return int(self.weights.shape[0])

    @property
    def cols(self) -> int:
        return int(self.weights.shape[1])

    @property
    def size(self) -> int:
        return int(self.weights.nnz + np.count_nonzero(self.bias))

    def kind(self) -> str:
        present = set(np.unique(self.acts).tolist())
        if not present or present == {Activation.IDENTITY}:
            return "identity"
        if present == {Activation.RELU}:
            return "relu"
        if present == {Activation.RELU2}:
            return "relu2"
        return "mixed"

    def forward(self, z: np.ndarray) -> np.ndarray:
        out = np.asarray(self.weights @ z.T).T + self.bias
        relu = self.acts == Activation.RELU
        if relu.any():
            out[:, relu] = np.maximum(out[:, relu], 0.0)
        relu2 = self.acts == Activation.RELU2
        if relu2.any():
            out[:, relu2] = np.maximum(out[:, relu2], 0.0) ** 2
        return out


def activate(acts: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    out[acts == Activation.RELU] = np.maximum(out[acts == Activation.RELU], 0.0)
    out[acts == Activation.RELU2] = np.maximum(out[acts == Activation.RELU2], 0.0) ** 2
    return out


@dataclass(frozen=True, eq=False)
class Network:
    input_dim: int
    layers: Tuple[Layer, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise NetworkError("a network needs at least one layer")
        width = self.input_dim
        for k, layer in enumerate(layers):
            if layer.cols != width:
                raise NetworkError(f"layer {k} expects {layer.cols} inputs, previous width is {width}")
            width = layer.rows
        if np.any(layers[-1].acts != Activation.IDENTITY):
            raise NetworkError("the output layer must be affine")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def affine(cls, weights, bias=None) -> "Network":
        weights = sparse.csr_matrix(weights, dtype=float)
        rows, cols = weights.shape
        bias = np.zeros(rows) if bias is None else bias
        return cls(cols, (Layer(weights, bias, np.zeros(rows, dtype=np.int8)),))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def size(self) -> int:
        return sum(layer.size for layer in self.layers)

    def layer_kinds(self) -> List[str]:
        return [layer.kind() for layer in self.layers]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return realize(self, x)


@dataclass(frozen=True)
class SizeReport:
    L: int
    M: int
    layer_sizes: List[int]
    widths: List[int]
    neurons: int
    relu_layers: int
    relu2_layers: int


def realize(net: Network, x: np.ndarray) -> np.ndarray:
    """
    Evaluate the network on one point (shape (d,)) or a batch (shape (n, d)).
    """
    z = np.asarray(x, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != net.input_dim:
        raise NetworkError(f"input has dimension {z.shape[1]}, network expects {net.input_dim}")
    for layer in net.layers:
        z = layer.forward(z)
    return z[0] if single else z


def size_depth(net: Network) -> SizeReport:
    kinds = net.layer_kinds()
    layer_sizes = [layer.size for layer in net.layers]
    widths = [layer.rows for layer in net.layers]
    return SizeReport(
        L=net.depth,
        M=sum(layer_sizes),
        layer_sizes=layer_sizes,
        widths=widths,
        neurons=sum(widths),
        relu_layers=kinds.count("relu"),
        relu2_layers=kinds.count("relu2"),
    )


def prune(net: Network) -> Network:
    """
    Drop hidden neurons without a nonzero incoming weight or without a nonzero outgoing
    weight, repeating until nothing changes. A neuron with no incoming weight is a
    constant; its value is folded into the next layer's bias. Inputs and outputs stay.
    """
    weights = [layer.weights.copy() for layer in net.layers]
    biases = [layer.bias.copy() for layer in net.layers]
    acts = [layer.acts.copy() for layer in net.layers]
    changed = True
    while changed:
        changed = False
        for k in range(len(weights) - 1):
            W, W_next = weights[k], weights[k + 1]
            no_in = np.diff(W.indptr) == 0
            no_out = np.asarray(W_next.getnnz(axis=0)) == 0
            drop = no_in | no_out
            if not drop.any():
                continue
            constants = no_in & ~no_out
            if constants.any():
                values = activate(acts[k][constants], biases[k][constants])
                biases[k + 1] = biases[k + 1] + np.asarray(W_next[:, np.flatnonzero(constants)] @ values).ravel()
            keep = np.flatnonzero(~drop)
            weights[k] = W[keep]
            biases[k] = biases[k][keep]
            acts[k] = acts[k][keep]
            weights[k + 1] = W_next[:, keep].tocsr()
            changed = True
    layers = tuple(Layer(W, b, a) for W, b, a in zip(weights, biases, acts))
    return Network(net.input_dim, layers)


def network_to_json(net: Network) -> str:
    layers = []
    for layer in net.layers:
        coo = layer.weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        layers.append(
            {
                "rows": layer.rows,
                "cols": layer.cols,
                "coo": [[int(coo.row[i]), int(coo.col[i]), float(coo.data[i])] for i in order],
                "bias": [[int(i), float(layer.bias[i])] for i in np.flatnonzero(layer.bias)],
                "acts": [int(a) for a in layer.acts],
            }
        )
    return json.dumps({"input_dim": net.input_dim, "layers": layers}) + "\n"


def network_from_json(text: str) -> Network:
    try:
        data = json.loads(text)
        input_dim = int(data["input_dim"])
        layers = []
        for spec in data["layers"]:
            rows, cols = int(spec["rows"]), int(spec["cols"])
            coo = np.array(spec["coo"], dtype=float).reshape(-1, 3)
            if np.any(coo[:, 2] == 0.0):
                raise NetworkError("stored zero weight in network file")
            weights = sparse.csr_matrix(
                (coo[:, 2], (coo[:, 0].astype(np.int64), coo[:, 1].astype(np.int64))), shape=(rows, cols)
            )
            bias = np.zeros(rows)
            for i, value in spec["bias"]:
                if value == 0.0:
                    raise NetworkError("stored zero bias in network file")
                bias[int(i)] = float(value)
            layers.append(Layer(weights, bias, np.array(spec["acts"], dtype=np.int8)))
    except NetworkError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise NetworkError(f"malformed network JSON: {exc}") from exc
    return Network(input_dim, tuple(layers))


def save_network(net: Network, path: Path | str) -> Path:
    return atomic_write_text(path, network_to_json(net))


def load_network(path: Path | str) -> Network:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkError(f"cannot read network file {path}: {exc}") from exc
    return network_from_json(text)

