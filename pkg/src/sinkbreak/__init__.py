"""Toolkit for training dummy-class defended classifiers and measuring their
true adversarial robustness with a dual-label adaptively weighted attack."""

from .attacks import (
    AttackConfig,
    AttackResult,
    alpha_smooth,
    attack_run,
    cosine_step,
    cw_margin_loss,
    dawa_loss,
    dawa_targeted_loss,
    margin_value,
    mifpe_loss,
    multi_target_run,
)
from .defense import TrainConfig, craft_training_adversary, ducat_loss, train
from .mlp import MlpModel, forward, init_model, input_grad, load_model, param_grad, predict_dummy, save_model
from .numkit import ProjectionSpec, StopGrad, cross_entropy, log_softmax, project, top2

__all__ = [
    "AttackConfig",
    "AttackResult",
    "MlpModel",
    "ProjectionSpec",
    "StopGrad",
    "TrainConfig",
    "alpha_smooth",
    "attack_run",
    "cosine_step",
    "craft_training_adversary",
    "cross_entropy",
    "cw_margin_loss",
    "dawa_loss",
    "dawa_targeted_loss",
    "ducat_loss",
    "forward",
    "init_model",
    "input_grad",
    "load_model",
    "log_softmax",
    "margin_value",
    "mifpe_loss",
    "multi_target_run",
    "param_grad",
    "predict_dummy",
    "project",
    "save_model",
    "top2",
    "train",
]
