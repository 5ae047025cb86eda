from .gradcheck import gradcheck
from .optim import Adam
from .tensor import (
    DetachedGraphError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
)

__all__ = [
    "Adam",
    "DetachedGraphError",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "gradcheck",
]
