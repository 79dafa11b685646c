"""Experiment harness: configuration, checkpoints, synthetic corpus, CLI."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .corpus import SyntheticCorpus, generate_corpus, load_corpus, write_corpus
from .experiment import ExperimentResult, StageError, run_experiment
