"""Neural dependency parser with a tree-CRF objective over non-projective trees."""
from .data import Sentence, Token, Vocab, build_vocab, evaluate, read_conllx, write_conllx
from .decoder import decode, decode_mst
from .encoder import EncoderConfig
from .estimator import DependencyParser
from .model import ParserModel
from .structures import DependencyTree, EdgeScores
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .tree_crf import log_partition, nll_loss_and_grad

__version__ = "0.1.0"

__all__ = [
    "DependencyParser", "DependencyTree", "EdgeScores", "EncoderConfig", "ParserModel",
    "Sentence", "Token", "TrainConfig", "Vocab", "build_vocab", "decode", "decode_mst",
    "evaluate", "load_checkpoint", "log_partition", "nll_loss_and_grad", "read_conllx",
    "save_checkpoint", "train", "write_conllx",
]
