"""
Extension registry: conservative client-local and shared-only primitives
"""
import logging
from typing import Dict, Iterable, List

from .base_extension import CLIENT_LOCAL, EXTENSION_KINDS, SHARED_ONLY, ExtPrimitive
from .linalg import SharedMatMulPrimitive, SolvePrimitive
from .per_record import (
    PerRecordOuterPrimitive,
    PerRecordScalePrimitive,
    ProjectFeaturesPrimitive,
    ProjectResponsePrimitive,
    RecordOnesPrimitive,
)
from fedtensor.modules.errors import ExtensionError
from fedtensor.modules.lang_ast import Fed, Sh

logger = logging.getLogger(__name__)

# Built-in extensions loaded by default
BUILTIN_EXTENSIONS = (
    ProjectFeaturesPrimitive,
    ProjectResponsePrimitive,
    PerRecordScalePrimitive,
    PerRecordOuterPrimitive,
    RecordOnesPrimitive,
    SolvePrimitive,
    SharedMatMulPrimitive,
)


class ExtensionRegistry:
    """Write-once-then-read-many map from extension name to primitive"""

    def __init__(self, primitives: Iterable[ExtPrimitive] = ()):
        self._primitives: Dict[str, ExtPrimitive] = {}
        for primitive in primitives:
            self.register(primitive)

    @classmethod
    def with_builtins(cls) -> "ExtensionRegistry":
        return cls(primitive_class() for primitive_class in BUILTIN_EXTENSIONS)

    def register(self, primitive: ExtPrimitive) -> str:
        """
        Make a primitive available to the typechecker and both evaluators.

        Returns the registration handle (the primitive name). Raises
        ExtensionError on duplicate names and on kind violations, including
        a client-local typing rule that maps federated input to shared output.
        """
        if not isinstance(primitive, ExtPrimitive):
            raise ExtensionError(f"{primitive!r} is not an ExtPrimitive")
        name = primitive.name
        if not name:
            raise ExtensionError("Extension primitives need a non-empty name")
        if name in self._primitives:
            raise ExtensionError(f"Extension '{name}' is already registered")
        if primitive.kind not in EXTENSION_KINDS:
            raise ExtensionError(f"Extension '{name}' has unknown kind '{primitive.kind}'")
        self._check_kind(primitive)
        self._primitives[name] = primitive
        logger.info(f"Registered extension: {name} ({primitive.kind})")
        return name

    @staticmethod
    def _check_kind(primitive: ExtPrimitive) -> None:
        probes = primitive.probe_types()
        if not probes:
            raise ExtensionError(f"Extension '{primitive.name}' declares no probe types")
        saw_federated = False
        for probe in probes:
            if len(probe) != primitive.arity:
                raise ExtensionError(
                    f"Extension '{primitive.name}': probe {probe} does not match arity {primitive.arity}")
            has_fed = any(isinstance(t, Fed) for t in probe)
            saw_federated = saw_federated or has_fed
            if primitive.kind == SHARED_ONLY and has_fed:
                raise ExtensionError(
                    f"Shared-only extension '{primitive.name}' declares a federated probe {probe}")
            try:
                result = primitive.infer_type(tuple(probe))
            except ValueError as exc:
                raise ExtensionError(
                    f"Extension '{primitive.name}' rejects its own probe {probe}: {exc}") from None
            if has_fed and not isinstance(result, Fed):
                raise ExtensionError(
                    f"Client-local extension '{primitive.name}' maps federated input {probe} "
                    f"to shared output {result}")
            if not has_fed and not isinstance(result, (Sh, Fed)):
                raise ExtensionError(f"Extension '{primitive.name}' returned a non-type {result!r}")
        if primitive.kind == CLIENT_LOCAL and not saw_federated:
            raise ExtensionError(
                f"Client-local extension '{primitive.name}' declares no federated probe")

    def get(self, name: str) -> ExtPrimitive:
        try:
            return self._primitives[name]
        except KeyError:
            raise ExtensionError(f"Unknown extension: {name}") from None

    def __contains__(self, name) -> bool:
        return name in self._primitives

    def names(self) -> List[str]:
        return list(self._primitives.keys())


_DEFAULT_REGISTRY = ExtensionRegistry.with_builtins()


def get_registry() -> ExtensionRegistry:
    """Registry holding the built-in extensions"""
    return _DEFAULT_REGISTRY


def list_available_extensions() -> List[str]:
    return _DEFAULT_REGISTRY.names()
