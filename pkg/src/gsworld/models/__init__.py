"""Learnable components: encoder, Gaussian regressor, leader/follower
deformation models, and the action-decoding policy head."""

from .deform import follower_deform, leader_deform
from .encoder import VolumetricFeature, pool_observation, represent
from .params import ModelConfig, ModelParams
from .policy import ArmHeadLogits, PolicyLogits, decode_actions, language_embedding
from .regressor import occupied_cells, regress_gaussians
