"""Sim-to-real domain adaptation for toy RGB-D planar grasp detection."""
from .dataset import Dataset, DatasetConfig, build_dataset, read_dataset, write_dataset
from .detector import GraspNet, NetConfig
from .geometry import GraspRect, bin_of
from .metrics import toy_ap
from .scenes import DEFAULT_SHIFT, Domain, Scene, ShiftKnobs, generate_scene
from .trainer import TrainConfig, VARIANTS, ablate, evaluate, total_loss, train

__version__ = "0.1.0"
