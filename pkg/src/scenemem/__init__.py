"""Navigation agents with an episodic memory of the scenes they have visited."""

from .agent import AgentConfig, init_params, load_checkpoint, save_checkpoint
from .harness import Protocol, run_eval, stability_report
from .memory import EpisodicMemory, ZeroMemory
from .metrics import MetricVector, evaluate
from .training import TrainConfig, train
from .world import Dataset, generate_scene, make_dataset, observe

__all__ = [
    "AgentConfig", "Dataset", "EpisodicMemory", "MetricVector", "Protocol", "TrainConfig", "ZeroMemory",
    "evaluate", "generate_scene", "init_params", "load_checkpoint", "make_dataset", "observe",
    "run_eval", "save_checkpoint", "stability_report", "train",
]

__version__ = "0.1.0"
