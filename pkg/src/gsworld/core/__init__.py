"""Domain types shared by every other module: particles, cameras, actions,
observations, and the on-disk formats."""

from .actions import (
    ArmAction,
    BimanualAction,
    DEFAULT_WORKSPACE,
    LEFT_STABILIZES,
    NUM_ROT_BINS,
    NUM_TRANS_BINS,
    RIGHT_STABILIZES,
    action_feature_vector,
    discretize_action,
    undiscretize_action,
    wrap_angle_deg,
)
from .cameras import Camera, look_at_camera, project_point, project_points, ring_cameras, unproject_depth
from .gaussians import Gaussian, GaussianSet, NUM_INSTANCE_CLASSES
from .observations import DemoStep, DemoTrajectory, IGNORE_LABEL, Observation, View
from .quat import (
    euler_zyx_deg_to_quat,
    euler_zyx_deg_to_rot,
    normalize_quat,
    quat_mul,
    quat_to_rot,
    random_unit_quat,
    rot_to_quat,
)
