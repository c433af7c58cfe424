"""Jigsaw network for hyperspectral image classification, in plain numpy."""
from .decompose import Decomposer, fit, reduce_cube, transform
from .errors import FormatError, JigsawError, ValidationError
from .graph import Model, NetworkSpec, build, load_checkpoint, save_checkpoint
from .hsi_io import ClassMap, HSICube, LabelRaster, generate_synthetic_scene, read_cube, read_labels
from .metrics import ConfusionMatrix, average_accuracy, cohen_kappa, overall_accuracy
from .tiler import TileSet, build_dataset, stratified_split
from .trainer import TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"
