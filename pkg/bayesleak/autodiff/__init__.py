from .tensor import (
    PRIMITIVES,
    NonFiniteError,
    Op,
    Tensor,
    UnsupportedPrimitiveError,
    as_tensor,
    concat,
    constant,
    debug_checks,
    sum_to,
)
from .trace import (
    LeafNotInTraceError,
    NonScalarOutputError,
    Trace,
    grad,
    hvp_capable_grad,
    value_and_grad,
)

__all__ = [
    "PRIMITIVES",
    "LeafNotInTraceError",
    "NonFiniteError",
    "NonScalarOutputError",
    "Op",
    "Tensor",
    "Trace",
    "UnsupportedPrimitiveError",
    "as_tensor",
    "concat",
    "constant",
    "debug_checks",
    "grad",
    "hvp_capable_grad",
    "sum_to",
    "value_and_grad",
]
