from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import FULL_SCALE_TRAINING, ModelConfig, TrainConfig
from .data import EncodedSet, encode
from .network import MultiScaleNet, conv_block
from .training import Prediction, build_model, evaluate, predict, run_inference, train
