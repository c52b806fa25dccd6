"""
Federation Simulator Module
Executes plans as explicit serialized client-to-server messages and keeps a
byte ledger of every message.
"""
import logging
import struct
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from fedtensor.modules.errors import FedTensorError, SerializationError, TransportError
from fedtensor.modules.factorizer import IterativeProgram, SharedStatePlan, extract_plan
from fedtensor.modules.tensor_core import FederatedValue, TensorValue, shape_size

logger = logging.getLogger(__name__)

MAGIC = b"FTS1"
_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sI")
U32_MAX = 2 ** 32 - 1
VALUE_DTYPE = np.dtype("<f8")


def encoded_state_size(shapes: Iterable[Sequence[int]]) -> int:
    """Byte length of an encoded state with the given component shapes"""
    return _HEADER.size + sum(4 + 4 * len(s) + VALUE_DTYPE.itemsize * shape_size(s) for s in shapes)


def serialize_state(components: Sequence[Union[np.ndarray, TensorValue]]) -> bytes:
    """magic, u32 q, then per component u32 rank, rank x u32 dims and little-endian f8 values"""
    arrays = [c.array if isinstance(c, TensorValue) else np.asarray(c, dtype=np.float64) for c in components]
    if len(arrays) > U32_MAX:
        raise SerializationError("Too many components")
    parts = [_HEADER.pack(MAGIC, len(arrays))]
    for array in arrays:
        if any(d > U32_MAX for d in array.shape):
            raise SerializationError(f"dim overflow: shape {array.shape} does not fit u32")
        parts.append(_U32.pack(array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=VALUE_DTYPE).tobytes())
    return b"".join(parts)


def deserialize_state(data: bytes) -> List[np.ndarray]:
    if len(data) < _HEADER.size:
        raise SerializationError("malformed header: fewer than 8 bytes")
    magic, q = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SerializationError(f"malformed header: bad magic {magic!r}")
    offset = _HEADER.size
    components = []
    for index in range(q):
        if offset + 4 > len(data):
            raise SerializationError(f"truncated payload in component {index + 1} rank")
        (rank,) = _U32.unpack_from(data, offset)
        offset += 4
        if offset + 4 * rank > len(data):
            raise SerializationError(f"truncated payload in component {index + 1} dims")
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        count = 1
        for d in dims:
            count *= d
        nbytes = count * VALUE_DTYPE.itemsize
        if nbytes > len(data) - offset:
            if count > len(data):
                raise SerializationError(f"dim overflow: component {index + 1} declares {dims}")
            raise SerializationError(f"truncated payload in component {index + 1} values")
        values = np.frombuffer(data, dtype=VALUE_DTYPE, count=count, offset=offset)
        components.append(values.astype(np.float64).reshape(dims))
        offset += nbytes
    if offset != len(data):
        raise SerializationError(f"{len(data) - offset} trailing bytes after {q} components")
    return components


class Transport(ABC):
    """In-process channel carrying one serialized client message to the server"""

    @abstractmethod
    def send(self, client: str, payload: bytes) -> bytes:
        pass


class LoopbackTransport(Transport):
    def send(self, client, payload):
        return payload


@dataclass
class LedgerEntry:
    round: int
    client: str
    bytes: int
    components: int
    elements: int


@dataclass
class MessageLedger:
    """Per-client message sizes and the server's merged-state size per round"""
    messages: List[LedgerEntry] = field(default_factory=list)
    merged_bytes: dict = field(default_factory=dict)

    def record(self, entry: LedgerEntry) -> None:
        self.messages.append(entry)

    def extend(self, other: "MessageLedger") -> None:
        self.messages.extend(other.messages)
        self.merged_bytes.update(other.merged_bytes)

    def message_sizes(self) -> List[int]:
        return [m.bytes for m in self.messages]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(m) for m in self.messages],
                             columns=["round", "client", "bytes", "components", "elements"])
        frame["merged_bytes"] = frame["round"].map(self.merged_bytes)
        return frame

    def write(self, path: Union[str, Path]) -> None:
        """Line-delimited JSON records"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_json(path, orient="records", lines=True)
        logger.info(f"Ledger with {len(self.messages)} message(s) saved to {path}")


def check_message(plan: SharedStatePlan, client: str, components: Sequence[np.ndarray]) -> None:
    """A delivered message must carry one component per plan component, each of its state shape"""
    if len(components) != len(plan.components):
        raise TransportError(
            f"Message has {len(components)} component(s), plan expects {len(plan.components)}", client=client)
    for expected, component in zip(plan.components, components):
        if component.shape != tuple(expected.state_shape):
            raise TransportError(
                f"Component '{expected.name}' has shape {component.shape}, expected {tuple(expected.state_shape)}",
                client=client)


def simulate_round(plan: SharedStatePlan, X: FederatedValue, transport: Optional[Transport] = None,
                   shared: Optional[Mapping[str, TensorValue]] = None,
                   round_index: int = 0) -> Tuple[TensorValue, MessageLedger]:
    """Encode, serialize, transport, deserialize, merge in federation order, decode"""
    transport = transport or LoopbackTransport()
    ledger = MessageLedger()
    messages = plan.client_messages(X, shared)
    received = []
    for client, message in zip(X.federation, messages):
        payload = serialize_state(message)
        try:
            delivered = transport.send(client, payload)
        except FedTensorError:
            raise
        except Exception as exc:
            raise TransportError(f"Transport failed: {exc}", client=client) from exc
        try:
            decoded = deserialize_state(delivered)
        except SerializationError as exc:
            raise TransportError(f"Undecodable message: {exc}", client=client) from exc
        check_message(plan, client, decoded)
        ledger.record(LedgerEntry(round_index, client, len(payload), len(decoded),
                                  sum(int(d.size) for d in decoded)))
        received.append(decoded)
    state = plan.merge_accumulators(received)
    ledger.merged_bytes[round_index] = len(serialize_state(state))
    output = plan.extract_output(state, shared)
    logger.debug(f"Round {round_index}: {len(received)} message(s) merged")
    return output, ledger


def simulate_iterative(program: IterativeProgram, X: FederatedValue, transport: Optional[Transport] = None,
                       shared: Optional[Mapping[str, TensorValue]] = None,
                       registry=None) -> Tuple[TensorValue, MessageLedger]:
    """All rounds through the simulator; theta_t is the only value carried between rounds"""
    ledger = MessageLedger()
    theta = program.theta0
    plans = {}
    for t, r in enumerate(program.rounds):
        key = (id(r), theta.shape)
        if key not in plans:
            plans[key] = extract_plan(program.round_program(t, theta.shape), registry)
        bindings = dict(shared or {})
        bindings[program.theta_name] = theta
        theta, round_ledger = simulate_round(plans[key], X, transport, bindings, round_index=t)
        ledger.extend(round_ledger)
    return theta, ledger
