"""Initialization, Adam with step-annealed learning rate, clipping and the epoch loop."""
import copy
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import UNK_ID, Sentence, Vocab, evaluate
from .encoder import EncoderConfig, encode_ids, parameter_shapes
from .model import OBJECTIVES, ParserModel, gold_tree
from .scorer import ConfigurationError
from .tree_crf import InvalidTreeError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ABLATIONS = {
    "Basic": (False, False),
    "+Char": (True, False),
    "+POS": (False, True),
    "Full": (True, True),
}


class TrainingDivergenceError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


def ablation_flags(name: str) -> tuple:
    """``(use_char, use_pos)`` for an ablation name."""
    try:
        return ABLATIONS[name]
    except KeyError:
        raise ValueError(f"ablation must be one of {list(ABLATIONS)}, got {name!r}") from None


@dataclass
class TrainConfig:
    objective: str = "global_likelihood"
    ablation: str = "Full"
    epochs: int = 120
    batch_size: int = 32
    seed: int = 0
    dev_every: int = 1
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    schedule: tuple = (10, 30, 50, 70, 100)
    decay: float = 0.5
    clip: float = 5.0
    unk_replace: float = 0.5
    max_length: Optional[int] = None
    on_invalid_tree: str = "skip"
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        ablation_flags(self.ablation)
        if self.on_invalid_tree not in ("skip", "abort"):
            raise ValueError("on_invalid_tree must be 'skip' or 'abort'")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        self.schedule = tuple(int(e) for e in self.schedule)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["schedule"] = list(self.schedule)
        return d


def learning_rate(epoch: int, base: float = 0.002, schedule: Sequence[int] = (10, 30, 50, 70, 100),
                  decay: float = 0.5) -> float:
    """Rate for the epoch with 0-based index ``epoch`` (i.e. after ``epoch`` completed epochs)."""
    return base * decay ** sum(1 for e in schedule if e <= epoch)


def learning_rate_sequence(config: TrainConfig) -> list:
    return [learning_rate(e, config.learning_rate, config.schedule, config.decay)
            for e in range(config.epochs)]


# initialization ---------------------------------------------------------

def glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def embedding_init(rng, rows: int, dim: int) -> np.ndarray:
    bound = math.sqrt(3.0 / dim)
    return rng.uniform(-bound, bound, (rows, dim))


def init_params(config: EncoderConfig, vocab: Vocab, rng, pretrained: Optional[dict] = None) -> dict:
    """Fresh encoder and scorer parameters.

    Matrices are Glorot-uniform over their own ``(rows, cols)``; for stacked
    LSTM weights that is each gate block. Embeddings are uniform in
    ``+-sqrt(3/dim)``. Biases are zero except the forget-gate block (1.0).
    Peephole vectors are drawn like ``1 x H`` matrices.
    """
    shapes = parameter_shapes(config, len(vocab.words), len(vocab.chars), len(vocab.tags))
    H = config.lstm_state
    params = {}
    for name, shape in shapes.items():
        if name.endswith("_emb"):
            params[name] = embedding_init(rng, *shape)
        elif name.endswith(".b"):
            b = np.zeros(shape)
            if name.startswith("lstm."):
                b[H:2 * H] = 1.0
            params[name] = b
        elif name.endswith(".peep"):
            params[name] = np.concatenate([glorot(rng, 1, H) for _ in range(3)])
        elif name.startswith("lstm."):
            params[name] = np.concatenate([glorot(rng, H, shape[1]) for _ in range(shape[0] // H)])
        else:
            params[name] = glorot(rng, *shape)

    if pretrained:
        dims = {len(v) for v in pretrained.values()}
        if dims != {config.word_dim}:
            raise ConfigurationError(f"pretrained dimension {sorted(dims)} != word_dim {config.word_dim}")
        table = params["word_emb"]
        for word, vec in pretrained.items():
            idx = vocab.word_id(word)
            if idx != UNK_ID:
                table[idx] = vec

    L, d = vocab.n_labels, config.mlp_dim
    if L < 1:
        raise ConfigurationError("training data has no dependency labels")
    params["scorer.W"] = np.stack([glorot(rng, d, d) for _ in range(L)])
    params["scorer.U"] = glorot(rng, L, d)
    params["scorer.V"] = glorot(rng, L, d)
    params["scorer.b"] = np.zeros(L)
    return params


# optimization ------------------------------------------------------------

def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict, threshold: float = 5.0) -> dict:
    """Rescale all gradients jointly so their global L2 norm is at most ``threshold``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name!r}")
    norm = global_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return grads


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0
    base_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    schedule: tuple = (10, 30, 50, 70, 100)
    decay: float = 0.5
    clip: float = 5.0
    epochs: int = 120

    @classmethod
    def for_params(cls, params: dict, config: Optional[TrainConfig] = None) -> "OptimizerState":
        state = cls({k: np.zeros_like(p) for k, p in params.items()},
                    {k: np.zeros_like(p) for k, p in params.items()})
        if config is not None:
            state.base_rate, state.beta1, state.beta2 = config.learning_rate, config.beta1, config.beta2
            state.eps, state.schedule, state.decay = config.eps, config.schedule, config.decay
            state.clip, state.epochs = config.clip, config.epochs
        return state

    def rate(self, epoch: int) -> float:
        return learning_rate(epoch, self.base_rate, self.schedule, self.decay)


def adam_step(params: dict, grads: dict, state: OptimizerState, epoch: int = 0) -> float:
    """One bias-corrected Adam update in place; returns the rate used."""
    state.t += 1
    lr = state.rate(epoch)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {k!r}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr


# training loop -----------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_uas: float
    dev_las: float
    lr: float

    def line(self) -> str:
        return (f"epoch={self.epoch} loss={self.loss:.6f} dev_uas={self.dev_uas:.4f} "
                f"dev_las={self.dev_las:.4f} lr={self.lr:.6g}")

    @classmethod
    def parse(cls, line: str) -> "EpochRecord":
        kv = dict(item.split("=", 1) for item in line.split())
        return cls(int(kv["epoch"]), float(kv["loss"]), float(kv["dev_uas"]),
                   float(kv["dev_las"]), float(kv["lr"]))


@dataclass
class TrainResult:
    model: ParserModel
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_uas: float = float("nan")
    best_las: float = float("nan")


def _gold_pairs(model: ParserModel, sentences, config: TrainConfig):
    pairs = []
    for i, sent in enumerate(sentences):
        if config.max_length is not None and len(sent) > config.max_length:
            continue
        try:
            gold = gold_tree(sent, model.vocab)
            if config.objective == "global_likelihood":
                gold.validate(model.vocab.n_labels)
        except (InvalidTreeError, KeyError) as exc:
            if config.on_invalid_tree == "abort":
                raise InvalidTreeError(f"training sentence {i}: {exc}") from exc
            logger.warning("skipping training sentence %d: %s", i, exc)
            continue
        pairs.append((encode_ids(sent, model.vocab), gold, sent))
    if not pairs:
        raise ValueError("no usable training sentences")
    return pairs


def _unk_replace(encoded, sent: Sentence, vocab: Vocab, rate: float, rng):
    if rate <= 0.0:
        return encoded
    words = encoded.words.copy()
    for i, tok in enumerate(sent.tokens[1:], start=1):
        if vocab.is_singleton(tok.form) and rng.random() < rate:
            words[i] = UNK_ID
    return type(encoded)(words, encoded.tags, encoded.chars)


def parse_all(model: ParserModel, sentences, single_root: bool = False, batch_size: int = 32) -> list:
    out = []
    for start in range(0, len(sentences), batch_size):
        out.extend(model.parse_batch(sentences[start:start + batch_size], single_root))
    return out


def train(model: ParserModel, train_set: Sequence[Sentence], dev_set: Optional[Sequence[Sentence]],
          config: TrainConfig, rng=None, punctuation_policy: str = "include_all",
          single_root: bool = False) -> TrainResult:
    """Mini-batch training with per-epoch dev evaluation and best-LAS checkpoint retention.

    Batch gradients are averaged over sentences. Without a dev set the final
    epoch is kept.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    pairs = _gold_pairs(model, train_set, config)
    state = OptimizerState.for_params(model.params, config)
    result = TrainResult(model)
    best_params, best_key = None, None
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        total_loss = 0.0
        lr = state.rate(epoch)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = {k: np.zeros_like(v) for k, v in model.params.items()}
            scale = 1.0 / len(batch)
            encoded = [_unk_replace(pairs[i][0], pairs[i][2], model.vocab, config.unk_replace, rng)
                       for i in batch]
            losses, _ = model.batch_loss_and_grads(encoded, [pairs[i][1] for i in batch],
                                                   config.objective, True, rng, grads, scale=scale)
            if not all(math.isfinite(x) for x in losses):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch + 1}")
            total_loss += sum(losses)
            clip_gradients(grads, config.clip)
            adam_step(model.params, grads, state, epoch)

        uas = las = float("nan")
        improved = False
        if dev_set is not None and ((epoch + 1) % config.dev_every == 0 or epoch + 1 == config.epochs):
            ev = evaluate(dev_set, parse_all(model, dev_set, single_root), punctuation_policy)
            uas, las = ev.uas, ev.las
            key = (las, uas)
            if best_key is None or key > best_key:
                improved = True
                best_key, best_params = key, copy.deepcopy(model.params)
                result.best_epoch, result.best_uas, result.best_las = epoch + 1, uas, las
        record = EpochRecord(epoch + 1, total_loss / len(pairs), uas, las, lr)
        result.log.append(record)
        logger.info(record.line())
        if improved and config.checkpoint_path:
            save_checkpoint(config.checkpoint_path, model, config, result.log)

    if best_params is not None:
        model.params = best_params
    else:
        result.best_epoch = config.epochs
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, model, config, result.log)
    return result


# checkpoints -------------------------------------------------------------

def save_checkpoint(path, model: ParserModel, train_config: Optional[TrainConfig] = None,
                    log: Sequence[EpochRecord] = ()) -> None:
    """Write an ``.npz`` archive: every tensor by name plus a JSON ``__meta__`` entry."""
    meta = {
        "format": "treecrf-parser-checkpoint",
        "version": CHECKPOINT_VERSION,
        "encoder": model.config.to_dict(),
        "train": train_config.to_dict() if train_config else None,
        "vocab": model.vocab.to_dict(),
        "log": [r.line() for r in log],
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(model, meta)``; any unreadable or mismatched archive raises :class:`CheckpointError`."""
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            meta = json.loads(archive["__meta__"].tobytes().decode("utf-8"))
            params = {k[len("param/"):]: archive[k].astype(np.float64)
                      for k in archive.files if k.startswith("param/")}
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != "treecrf-parser-checkpoint":
        raise CheckpointError(f"{path} is not a parser checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
    config = EncoderConfig(**meta["encoder"])
    vocab = Vocab.from_dict(meta["vocab"])
    expected = parameter_shapes(config, len(vocab.words), len(vocab.chars), len(vocab.tags))
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"checkpoint parameter {name!r} missing or misshapen")
    return ParserModel(config, vocab, params), meta
