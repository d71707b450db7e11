"""End-to-end orchestration: render, train, customize, keyframes, interpolate, evaluate."""
from .cli import COMMANDS, main, run_command
from .config import RunConfig
from .models import ModelConfig, default_cache_dir, ensure_models, load_models
from .stages import ORDER, STAGES, Run, RunLock, dir_hash, evaluate_run, read_video
