from .a2c import Rollout, a2c_losses, a2c_update
from .dqn import double_q_targets, dqn_update, target_sync
from .hyper import Hyperparams, preset
from .loop import TrainConfig, TrainResult, TrainingDiverged, make_train_config, train
from .replay import NStepAccumulator, ReplayBuffer
from .targets import Transition, epsilon, gae_advantages, gae_batch, nstep_target

__all__ = [
    "Hyperparams", "NStepAccumulator", "ReplayBuffer", "Rollout", "TrainConfig", "TrainResult",
    "TrainingDiverged", "Transition", "a2c_losses", "a2c_update", "double_q_targets", "dqn_update",
    "epsilon", "gae_advantages", "gae_batch", "make_train_config", "nstep_target", "preset",
    "target_sync", "train",
]
