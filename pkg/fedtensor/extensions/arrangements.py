"""
Expression helpers that arrange operands into the forms the matrix-product
primitives expect, and the identity-matrix literal used by damped solves.
"""
import numpy as np

from fedtensor.modules.lang_ast import Expr, lit, matmul_fed_fed, perm


def identity_literal(p: int, scale: float = 1.0):
    """Shared literal scale * I_p"""
    return lit(scale * np.eye(p))


def arrange_fed2(e: Expr):
    """Fed_1((a,)) -> Fed_2((a,)) by swapping the two axes"""
    return perm((2, 1), e)


def gram(x: Expr, z: Expr = None):
    """x^T z over the record axis for two Fed_1 operands (x^T x when z is omitted)"""
    return matmul_fed_fed(arrange_fed2(x), x if z is None else z)
