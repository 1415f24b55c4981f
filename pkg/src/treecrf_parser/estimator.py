"""scikit-learn style front end: ``DependencyParser().fit(train).predict(test)``."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import PUNCT_POLICIES, Sentence, build_vocab, evaluate
from .decoder import decode
from .encoder import EncoderConfig, load_pretrained
from .model import ParserModel
from .trainer import (ABLATIONS, TrainConfig, ablation_flags, init_params, load_checkpoint, parse_all,
                      save_checkpoint, train)


def check_sentences(X, require_gold: bool = False) -> list:
    """Validate a corpus argument: a non-empty sequence of :class:`Sentence` with >= 1 token each."""
    if isinstance(X, Sentence):
        raise TypeError("expected a sequence of Sentence objects, got a single Sentence")
    try:
        sentences = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of Sentence objects, got {type(X).__name__}") from None
    if not sentences:
        raise ValueError("empty corpus")
    for i, s in enumerate(sentences):
        if not isinstance(s, Sentence):
            raise TypeError(f"item {i} is {type(s).__name__}, not Sentence")
        if len(s) == 0:
            raise ValueError(f"sentence {i} has no tokens")
        if require_gold and any(h is None for h in s.heads):
            raise ValueError(f"sentence {i} lacks gold heads")
    return sentences


class DependencyParser(BaseEstimator):
    """Graph-based parser trained by tree-CRF likelihood over a BLSTM-CNN encoder.

    Hyper-parameter defaults follow the published configuration. ``ablation``
    selects the input blocks (``Basic``, ``+Char``, ``+POS``, ``Full``) and
    ``objective`` switches between the global tree likelihood and per-token
    head selection. ``pretrained`` is a path to a text embedding file or a
    ``{word: vector}`` dict; when given, its dimension overrides ``word_dim``.

    Fitted attributes: ``model_``, ``vocab_``, ``log_``, ``best_epoch_``.
    """

    def __init__(self, word_dim=100, char_dim=50, pos_dim=50, cnn_window=3, cnn_filters=50,
                 lstm_layers=2, lstm_state=256, mlp_dim=100, dropout_embed=0.15,
                 dropout_hidden=0.25, dropout_layer=0.33, ablation="Full",
                 objective="global_likelihood", epochs=120, batch_size=32, learning_rate=0.002,
                 beta1=0.9, beta2=0.9, eps=1e-8, schedule=(10, 30, 50, 70, 100), decay=0.5,
                 clip=5.0, unk_replace=0.5, min_freq=1, lowercase=True, normalize_digits=True,
                 max_length=None, on_invalid_tree="skip", single_root=False,
                 punctuation_policy="include_all", dev_every=1, seed=0, checkpoint_path=None,
                 pretrained=None):
        self.word_dim = word_dim
        self.char_dim = char_dim
        self.pos_dim = pos_dim
        self.cnn_window = cnn_window
        self.cnn_filters = cnn_filters
        self.lstm_layers = lstm_layers
        self.lstm_state = lstm_state
        self.mlp_dim = mlp_dim
        self.dropout_embed = dropout_embed
        self.dropout_hidden = dropout_hidden
        self.dropout_layer = dropout_layer
        self.ablation = ablation
        self.objective = objective
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.schedule = schedule
        self.decay = decay
        self.clip = clip
        self.unk_replace = unk_replace
        self.min_freq = min_freq
        self.lowercase = lowercase
        self.normalize_digits = normalize_digits
        self.max_length = max_length
        self.on_invalid_tree = on_invalid_tree
        self.single_root = single_root
        self.punctuation_policy = punctuation_policy
        self.dev_every = dev_every
        self.seed = seed
        self.checkpoint_path = checkpoint_path
        self.pretrained = pretrained

    def encoder_config(self, word_dim=None) -> EncoderConfig:
        use_char, use_pos = ablation_flags(self.ablation)
        return EncoderConfig(word_dim or self.word_dim, self.char_dim, self.pos_dim,
                             self.cnn_window, self.cnn_filters, self.lstm_layers,
                             self.lstm_state, self.mlp_dim, self.dropout_embed,
                             self.dropout_hidden, self.dropout_layer, use_char, use_pos)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.objective, self.ablation, self.epochs, self.batch_size, self.seed,
                           self.dev_every, self.learning_rate, self.beta1, self.beta2, self.eps,
                           tuple(self.schedule), self.decay, self.clip, self.unk_replace,
                           self.max_length, self.on_invalid_tree, self.checkpoint_path)

    def _pretrained_vectors(self):
        if self.pretrained is None:
            return None
        if isinstance(self.pretrained, dict):
            return {w: np.asarray(v, dtype=np.float64) for w, v in self.pretrained.items()}
        return load_pretrained(self.pretrained)

    def fit(self, X, y=None, X_dev=None):
        """Train on gold-annotated sentences; ``X_dev`` drives best-epoch selection."""
        sentences = check_sentences(X, require_gold=True)
        dev = check_sentences(X_dev, require_gold=True) if X_dev is not None else None
        if self.punctuation_policy not in PUNCT_POLICIES:
            raise ValueError(f"punctuation_policy must be one of {PUNCT_POLICIES}")
        vectors = self._pretrained_vectors()
        word_dim = len(next(iter(vectors.values()))) if vectors else None
        config = self.encoder_config(word_dim)
        tconfig = self.train_config()
        self.vocab_ = build_vocab(sentences, vectors or (), self.min_freq, self.lowercase,
                                  self.normalize_digits)
        rng = np.random.default_rng(self.seed)
        model = ParserModel(config, self.vocab_, init_params(config, self.vocab_, rng, vectors))
        result = train(model, sentences, dev, tconfig, rng, self.punctuation_policy,
                       self.single_root)
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.best_dev_uas_ = result.best_uas
        self.best_dev_las_ = result.best_las
        return self

    def predict(self, X) -> list:
        """Copies of the input sentences with predicted heads and labels filled in."""
        check_is_fitted(self, "model_")
        return parse_all(self.model_, check_sentences(X), self.single_root)

    def predict_trees(self, X) -> list:
        check_is_fitted(self, "model_")
        return [decode(self.model_.edge_scores(self.model_.encode(s)), self.single_root)
                for s in check_sentences(X)]

    def predict_marginals(self, X) -> list:
        """Labeled edge marginals ``mu[h, m, l]`` per sentence."""
        check_is_fitted(self, "model_")
        return [self.model_.marginals(s) for s in check_sentences(X)]

    def evaluate(self, X):
        check_is_fitted(self, "model_")
        gold = check_sentences(X, require_gold=True)
        return evaluate(gold, self.predict(gold), self.punctuation_policy)

    def score(self, X, y=None) -> float:
        """Labeled attachment score (percent) on gold-annotated sentences."""
        return self.evaluate(X).las

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.train_config(), getattr(self, "log_", ()))

    @classmethod
    def load(cls, path, **overrides) -> "DependencyParser":
        model, meta = load_checkpoint(path)
        enc = meta["encoder"]
        ablation = {v: k for k, v in ABLATIONS.items()}[(enc["use_char"], enc["use_pos"])]
        kwargs = {k: v for k, v in enc.items() if k not in ("use_char", "use_pos")}
        kwargs["ablation"] = ablation
        train_meta = meta.get("train") or {}
        for k in ("objective", "epochs", "batch_size", "seed"):
            if k in train_meta:
                kwargs[k] = train_meta[k]
        kwargs.update(overrides)
        est = cls(**kwargs)
        est.model_ = model
        est.vocab_ = model.vocab
        return est
