"""Reward estimators: personas, the simulator-backed rubric oracle and a remote client."""

from .base import EstimatorError, EstimatorHub
from .personas import K, KIND_SETS, PERSONA_KINDS, REWARD_VALUES, PersonaSpec, clamp_reward, default_personas
from .rubric import Rubric
from .scripted import ScriptedEstimator, corrupt_reward, perturb_answer

__all__ = [
    "EstimatorError", "EstimatorHub", "K", "KIND_SETS", "PERSONA_KINDS", "REWARD_VALUES", "PersonaSpec",
    "Rubric", "ScriptedEstimator", "clamp_reward", "corrupt_reward", "default_personas", "perturb_answer",
]
