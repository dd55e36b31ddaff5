"""Campaign plumbing: building components from config, checkpoints, remote models, CLI."""

from sciloop.harness.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from sciloop.harness.factory import ConfigError, build_environment, build_generator, load_config
from sciloop.harness.remote import RemoteGenerator, RemoteModelSpec

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "RemoteGenerator",
    "RemoteModelSpec",
    "build_environment",
    "build_generator",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
]
