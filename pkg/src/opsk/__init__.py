"""Odor-based perceptual shift keying: a molecular-communication link simulator."""

from .adaptive import AdaptiveReceiver, AdaptiveTransmitter, UpdatePolicy
from .channel import NOISE_FREE, DiffusionModel, FlowModel, ReleaseEvent, concentration
from .perceptual import BitAllocation, ClassCode, OdorBank, PerceptualVector, classify, generate_odor_bank
from .receiver import ReceiverGeometry, absorbed_mass, optimize_absorption_time
from .simulation import ScenarioConfig, run_scenario, sweep

__version__ = "0.1.0"

__all__ = [
    "AdaptiveReceiver",
    "AdaptiveTransmitter",
    "BitAllocation",
    "ClassCode",
    "DiffusionModel",
    "FlowModel",
    "NOISE_FREE",
    "OdorBank",
    "PerceptualVector",
    "ReceiverGeometry",
    "ReleaseEvent",
    "ScenarioConfig",
    "UpdatePolicy",
    "absorbed_mass",
    "classify",
    "concentration",
    "generate_odor_bank",
    "optimize_absorption_time",
    "run_scenario",
    "sweep",
]
