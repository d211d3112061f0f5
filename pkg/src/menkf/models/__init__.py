"""Discretised forward models, inlet forcing and the spatial filter."""

from .base import ForwardModel, NumericalBlowupError, PositivityError
from .burgers import BurgersModel, burgers_step_explicit, burgers_step_implicit_single
from .euler import EulerModel, euler_step_explicit, euler_step_implicit_single
from .filters import sixth_order_filter
from .forcing import ForcingKind, InletForcing, inlet_value, inlet_values
from .operator import ModelOperator

__all__ = [
    "BurgersModel",
    "EulerModel",
    "ForcingKind",
    "ForwardModel",
    "InletForcing",
    "ModelOperator",
    "NumericalBlowupError",
    "PositivityError",
    "burgers_step_explicit",
    "burgers_step_implicit_single",
    "euler_step_explicit",
    "euler_step_implicit_single",
    "inlet_value",
    "inlet_values",
    "sixth_order_filter",
]
