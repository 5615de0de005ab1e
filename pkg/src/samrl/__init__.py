"""Sharpness-aware value learning for offline RL under data corruption, in plain numpy."""
from .nn_core import MlpSpec, ParamVector, backward, forward, init_params
from .optim import AdamState, SamProtocolError, SamState, sharpness_probe
from .rl_iql import IqlConfig, RiqlConfig, train, train_step
from .corruption import CorruptionConfig, corrupt
from .envs_data import PENDULUM, POINT_MASS, Dataset, evaluate_policy, generate_dataset, make_env, normalized_score
from .landscape import evaluate_surface, filter_normalized_directions, flatness_summary

__version__ = "0.1.0"
