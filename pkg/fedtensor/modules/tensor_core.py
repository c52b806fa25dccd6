"""
Tensor Core Module
Dense tensor values, federations, federated values, virtual-global concatenation
and the broadcast algebra used by the language semantics.

Axis indices and permutations are 1-based in the public API. Permutations are
written as image tuples: tau = (tau(1), ..., tau(k)).
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from fedtensor.modules.errors import ShapeError

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]
Permutation = Tuple[int, ...]

DTYPE = np.float64


def make_shape(dims: Iterable[int], allow_zero: bool = False) -> Shape:
    """Validate and normalize a shape tuple"""
    shape = tuple(int(d) for d in dims)
    lower = 0 if allow_zero else 1
    for axis, extent in enumerate(shape, start=1):
        if extent < lower:
            raise ShapeError(f"Axis {axis} has extent {extent}; extents must be >= {lower}", axis=axis)
    return shape


def shape_size(shape: Sequence[int]) -> int:
    return int(np.prod(shape, dtype=np.int64)) if len(shape) else 1


def _frozen_array(values, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    array = np.array(values, dtype=DTYPE, copy=True)
    if shape is not None:
        array = array.reshape(tuple(shape))
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TensorValue:
    """Dense real tensor; scalars are rank-0 tensors with one element"""
    array: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "array", _frozen_array(self.array))

    @classmethod
    def from_flat(cls, shape: Sequence[int], data: Sequence[float]) -> "TensorValue":
        shape = make_shape(shape, allow_zero=True)
        data = np.asarray(data, dtype=DTYPE).ravel()
        if data.size != shape_size(shape):
            raise ShapeError(
                f"Flat data has {data.size} entries but shape {shape} needs {shape_size(shape)}")
        return cls(data.reshape(shape))

    @classmethod
    def scalar(cls, value: float) -> "TensorValue":
        return cls(np.asarray(value, dtype=DTYPE))

    @property
    def shape(self) -> Shape:
        return tuple(self.array.shape)

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view"""
        return self.array.reshape(-1)

    def to_flat(self) -> List[float]:
        return [float(v) for v in self.data]

    def bit_equal(self, other: "TensorValue") -> bool:
        return (self.shape == other.shape
                and self.array.tobytes() == other.array.tobytes())

    def __repr__(self):
        return f"TensorValue(shape={self.shape}, data={self.to_flat()})"


@dataclass(frozen=True)
class Federation:
    """Nonempty, totally ordered list of distinct client identifiers"""
    clients: Tuple[str, ...]

    def __post_init__(self):
        clients = tuple(str(c) for c in self.clients)
        if not clients:
            raise ShapeError("A federation needs at least one client")
        if len(set(clients)) != len(clients):
            raise ShapeError(f"Duplicate client identifiers in federation: {clients}")
        object.__setattr__(self, "clients", clients)

    def __len__(self):
        return len(self.clients)

    def __iter__(self):
        return iter(self.clients)

    def index(self, client: str) -> int:
        return self.clients.index(client)


def insert_record_axis(nonrecord_shape: Shape, record_axis: int, count: int) -> Shape:
    position = record_axis - 1
    return tuple(nonrecord_shape[:position]) + (count,) + tuple(nonrecord_shape[position:])


def remove_axis(shape: Sequence[int], axis: int) -> Shape:
    """shape with 1-based axis deleted (s minus j)"""
    if not 1 <= axis <= len(shape):
        raise ShapeError(f"Axis {axis} out of range for rank {len(shape)}", axis=axis)
    return tuple(shape[:axis - 1]) + tuple(shape[axis:])


@dataclass(frozen=True, eq=False)
class FederatedValue:
    """Client-indexed family of local tensors sharing every dimension except the record axis"""
    federation: Federation
    record_axis: int
    nonrecord_shape: Shape
    locals: Tuple[TensorValue, ...]

    def __post_init__(self):
        nonrecord = make_shape(self.nonrecord_shape)
        object.__setattr__(self, "nonrecord_shape", nonrecord)
        rank = len(nonrecord) + 1
        if not 1 <= self.record_axis <= rank:
            raise ShapeError(
                f"Record axis {self.record_axis} outside [1, {rank}]", axis=self.record_axis)
        local_values = tuple(v if isinstance(v, TensorValue) else TensorValue(v) for v in self.locals)
        if len(local_values) != len(self.federation):
            raise ShapeError(
                f"Got {len(local_values)} local tensors for {len(self.federation)} clients")
        for client, value in zip(self.federation, local_values):
            if value.rank != rank:
                raise ShapeError(
                    f"Client {client}: local rank {value.rank} differs from federated rank {rank}")
            if remove_axis(value.shape, self.record_axis) != nonrecord:
                raise ShapeError(
                    f"Client {client}: local shape {value.shape} does not match non-record "
                    f"shape {nonrecord} with record axis {self.record_axis}")
        object.__setattr__(self, "locals", local_values)

    @classmethod
    def from_arrays(cls, federation: Federation, record_axis: int, arrays: Sequence,
                    nonrecord_shape: Optional[Sequence[int]] = None) -> "FederatedValue":
        """Build from per-client arrays in federation order, inferring the non-record shape"""
        values = [TensorValue(a) for a in arrays]
        if nonrecord_shape is None:
            if not values:
                raise ShapeError("Cannot infer the non-record shape without local tensors")
            nonrecord_shape = remove_axis(values[0].shape, record_axis)
        return cls(federation, record_axis, tuple(nonrecord_shape), tuple(values))

    @property
    def rank(self) -> int:
        return len(self.nonrecord_shape) + 1

    @property
    def record_counts(self) -> Dict[str, int]:
        return {c: v.shape[self.record_axis - 1] for c, v in zip(self.federation, self.locals)}

    def local(self, client: str) -> TensorValue:
        return self.locals[self.federation.index(client)]

    def items(self):
        return zip(self.federation.clients, self.locals)

    def replace_local(self, client: str, value) -> "FederatedValue":
        values = list(self.locals)
        values[self.federation.index(client)] = value if isinstance(value, TensorValue) else TensorValue(value)
        return FederatedValue(self.federation, self.record_axis, self.nonrecord_shape, tuple(values))

    def __repr__(self):
        counts = ", ".join(f"{c}:{n}" for c, n in self.record_counts.items())
        return (f"FederatedValue(record_axis={self.record_axis}, "
                f"nonrecord_shape={self.nonrecord_shape}, counts=[{counts}])")


def virtual_global(x: FederatedValue) -> TensorValue:
    """Concatenation of local tensors along the record axis in federation order"""
    arrays = [v.array for v in x.locals]
    return TensorValue(np.concatenate(arrays, axis=x.record_axis - 1))


def broadcast_shape(s: Sequence[int], t: Sequence[int]) -> Shape:
    """s v t: left-pad with 1s and take the elementwise max of compatible extents"""
    length = max(len(s), len(t))
    padded_s = (1,) * (length - len(s)) + tuple(s)
    padded_t = (1,) * (length - len(t)) + tuple(t)
    result = []
    for axis, (a, b) in enumerate(zip(padded_s, padded_t), start=1):
        if a != b and a != 1 and b != 1:
            raise ShapeError(
                f"Shapes {tuple(s)} and {tuple(t)} are incompatible at axis {axis} ({a} vs {b})",
                axis=axis)
        result.append(max(a, b))
    return tuple(result)


def broadcast_array(array: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Br from shape(array) to target; requires shape(array) v target == target"""
    target = tuple(target)
    if broadcast_shape(array.shape, target) != target or array.ndim > len(target):
        raise ShapeError(f"Cannot broadcast shape {tuple(array.shape)} to {target}")
    return np.broadcast_to(array, target)


def broadcast_to(tensor: TensorValue, target: Sequence[int]) -> TensorValue:
    return TensorValue(broadcast_array(tensor.array, target))


def validate_permutation(tau: Sequence[int], rank: Optional[int] = None) -> Permutation:
    tau = tuple(int(i) for i in tau)
    if rank is not None and len(tau) != rank:
        raise ShapeError(f"Permutation {tau} has length {len(tau)}, expected rank {rank}")
    if sorted(tau) != list(range(1, len(tau) + 1)):
        raise ShapeError(f"{tau} is not a permutation of 1..{len(tau)}")
    return tau


def invert_permutation(tau: Sequence[int]) -> Permutation:
    tau = validate_permutation(tau)
    inverse = [0] * len(tau)
    for source, image in enumerate(tau, start=1):
        inverse[image - 1] = source
    return tuple(inverse)


def permute_shape(shape: Sequence, tau: Sequence[int]) -> tuple:
    """tau . s = (s_{tau^-1(1)}, ..., s_{tau^-1(k)}); works for symbolic shapes too"""
    tau = validate_permutation(tau, len(shape))
    inverse = invert_permutation(tau)
    return tuple(shape[i - 1] for i in inverse)


def permute_array(array: np.ndarray, tau: Sequence[int]) -> np.ndarray:
    """tau(T)[i_1..i_k] = T[i_tau(1)..i_tau(k)]: source axis a lands on output axis tau(a)"""
    tau = validate_permutation(tau, array.ndim)
    axes = tuple(i - 1 for i in invert_permutation(tau))
    return np.transpose(array, axes)


def permute(tensor: TensorValue, tau: Sequence[int]) -> TensorValue:
    return TensorValue(permute_array(tensor.array, tau))
