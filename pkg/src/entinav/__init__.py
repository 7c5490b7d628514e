"""Socially aware navigation for robot groups: entitativity mapping, crowd simulation and planning."""

from .core import (AgentKind, AgentState, CrowdState, Group, GroupParams, MotionParams, WorldGeometry,
                   integrate, neighbors)
from .edm import (EntitativityMapping, InvisibilityMode, InvisibilitySetting, constrain_invisibility,
                  entitativity, fit_mapping, invisibility, params_for_entitativity, target_entitativity)
from .errors import EntinavError, InputError, ValidationError

__all__ = [
    "AgentKind", "AgentState", "CrowdState", "Group", "GroupParams", "MotionParams", "WorldGeometry",
    "integrate", "neighbors", "EntitativityMapping", "InvisibilityMode", "InvisibilitySetting",
    "constrain_invisibility", "entitativity", "fit_mapping", "invisibility", "params_for_entitativity",
    "target_entitativity", "EntinavError", "InputError", "ValidationError",
]
