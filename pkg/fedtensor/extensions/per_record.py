"""
Client-local per-record primitives: covariate/response projections, row
scaling, row outer products and record indicators. Each acts on records
independently, so it commutes with concatenation along the record axis.
"""
from typing import Tuple

import numpy as np

from fedtensor.extensions.base_extension import CLIENT_LOCAL, ExtPrimitive, require_fed
from fedtensor.modules.lang_ast import Fed, TensorType


class ProjectFeaturesPrimitive(ExtPrimitive):
    """Fed_1((p+1,)) -> Fed_1((p,)): drop the trailing response column"""

    name = "project-features"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types: Tuple[TensorType, ...]) -> TensorType:
        x = require_fed(arg_types[0], 1, 2, "project-features argument")
        if x.nonrecord_shape[0] < 2:
            raise ValueError(f"project-features needs at least 2 columns, got {x}")
        return Fed(1, (x.nonrecord_shape[0] - 1,))

    def ordinary(self, arrays, arg_types):
        return arrays[0][:, :-1]

    def probe_types(self):
        return [(Fed(1, (2,)),), (Fed(1, (4,)),)]


class ProjectResponsePrimitive(ExtPrimitive):
    """Fed_1((p+1,)) -> Fed_1(()): keep the trailing response column"""

    name = "project-response"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types):
        x = require_fed(arg_types[0], 1, 2, "project-response argument")
        if x.nonrecord_shape[0] < 2:
            raise ValueError(f"project-response needs at least 2 columns, got {x}")
        return Fed(1, ())

    def ordinary(self, arrays, arg_types):
        return arrays[0][:, -1]

    def probe_types(self):
        return [(Fed(1, (2,)),), (Fed(1, (4,)),)]


class PerRecordScalePrimitive(ExtPrimitive):
    """Fed_1(()) x Fed_1((p,)) -> Fed_1((p,)): row i of the matrix times scalar i"""

    name = "per-record-scale"
    kind = CLIENT_LOCAL
    arity = 2

    def infer_type(self, arg_types):
        require_fed(arg_types[0], 1, 1, "per-record-scale weights")
        rows = require_fed(arg_types[1], 1, 2, "per-record-scale rows")
        return rows

    def ordinary(self, arrays, arg_types):
        weights, rows = arrays
        if weights.shape[0] != rows.shape[0]:
            raise ValueError(f"record counts differ: {weights.shape[0]} vs {rows.shape[0]}")
        return weights[:, np.newaxis] * rows

    def probe_types(self):
        return [(Fed(1, ()), Fed(1, (1,))), (Fed(1, ()), Fed(1, (3,)))]


class PerRecordOuterPrimitive(ExtPrimitive):
    """Fed_1((p,)) -> Fed_1((p,p)): x_i x_i^T for every record"""

    name = "per-record-outer"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types):
        x = require_fed(arg_types[0], 1, 2, "per-record-outer argument")
        p = x.nonrecord_shape[0]
        return Fed(1, (p, p))

    def ordinary(self, arrays, arg_types):
        x = arrays[0]
        return np.einsum("ni,nj->nij", x, x)

    def probe_types(self):
        return [(Fed(1, (1,)),), (Fed(1, (3,)),)]


class RecordOnesPrimitive(ExtPrimitive):
    """Fed_j(s) -> Fed_1(()): a 1 for every record, whatever the record holds"""

    name = "record-ones"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types):
        if not isinstance(arg_types[0], Fed):
            raise ValueError(f"record-ones argument must be federated, got {arg_types[0]}")
        return Fed(1, ())

    def ordinary(self, arrays, arg_types):
        return np.ones(arrays[0].shape[arg_types[0].record_axis - 1])

    def sample_arguments(self, rng, shapes):
        arrays = super().sample_arguments(rng, shapes)
        # non-finite records still count
        for a in arrays:
            if a.size:
                a.flat[0] = np.nan
        return arrays

    def probe_types(self):
        return [(Fed(1, ()),), (Fed(2, (3,)),)]
