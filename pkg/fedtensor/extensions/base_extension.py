"""
Base class for conservative extension primitives
"""
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np

from fedtensor.modules.lang_ast import Fed, Sh, TensorType

CLIENT_LOCAL = "client-local"
SHARED_ONLY = "shared-only"
EXTENSION_KINDS = (CLIENT_LOCAL, SHARED_ONLY)


class ExtPrimitive(ABC):
    """
    Abstract base every registered extension primitive derives from.

    A client-local primitive maps each client's local tensors (plus shared
    arguments) to a new local tensor and never turns federated input into
    shared output. A shared-only primitive accepts shared arguments only.
    """

    name: str = ""
    kind: str = CLIENT_LOCAL
    arity: int = 1

    @abstractmethod
    def infer_type(self, arg_types: Tuple[TensorType, ...]) -> TensorType:
        """
        Typing rule.

        Parameters:
        -----------
        arg_types : tuple of Sh / Fed
            Types of the arguments, in order

        Returns:
        --------
        Sh or Fed : result type; raise ValueError when the rule does not apply
        """

    @abstractmethod
    def ordinary(self, arrays: Sequence[np.ndarray], arg_types: Tuple[TensorType, ...]) -> np.ndarray:
        """
        Ordinary interpretation on plain tensors (virtual global tensors for
        federated arguments).
        """

    def local_map(self, arrays: Sequence[np.ndarray], arg_types: Tuple[TensorType, ...]) -> np.ndarray:
        """
        Per-client map for client-local primitives; defaults to the ordinary
        interpretation applied to one client's block.
        """
        return self.ordinary(arrays, arg_types)

    def apply_local(self, client: str, arrays: Sequence[np.ndarray],
                    arg_types: Tuple[TensorType, ...]) -> np.ndarray:
        """
        Entry point used by the distributed evaluator. The client identifier
        is passed so that the audit can detect maps that depend on it.
        """
        return self.local_map(arrays, arg_types)

    @abstractmethod
    def probe_types(self) -> List[Tuple[TensorType, ...]]:
        """
        Representative argument type tuples, used at registration and by
        the audit.
        """

    def sample_arguments(self, rng: np.random.Generator, shapes: Sequence[Tuple[int, ...]]) -> List[np.ndarray]:
        """Random arguments of the given concrete shapes; override for restricted domains"""
        return [rng.uniform(-1.0, 1.0, size=shape) for shape in shapes]

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, "arity": self.arity}


def require_fed(t: TensorType, record_axis: int, rank: int, what: str) -> Fed:
    if not (isinstance(t, Fed) and t.record_axis == record_axis and t.rank == rank):
        raise ValueError(f"{what} must be Fed_{record_axis} of rank {rank}, got {t}")
    return t


def require_sh(t: TensorType, rank: int, what: str) -> Sh:
    if not (isinstance(t, Sh) and t.rank == rank):
        raise ValueError(f"{what} must be Sh of rank {rank}, got {t}")
    return t
