"""Desk-scale simulator and agent library for multi-agent rendezvous in a
city watched by sentinels."""

from .geometry import Pose2D, Rect
from .harness import EpisodeConfig, EpisodeMetrics, run_episode, run_suite
from .scene import SceneSpec, generate_scene, load_scene
from .world import World

__version__ = "0.1.0"

__all__ = ["Pose2D", "Rect", "EpisodeConfig", "EpisodeMetrics", "run_episode", "run_suite",
           "SceneSpec", "generate_scene", "load_scene", "World", "__version__"]
