"""Command-line entry point: ``treecrf-parser {train,parse,eval,inspect}``.

Settings come from an optional ``key=value`` config file, then from
``--set key=value`` and the dedicated flags (later wins). Exit codes:
0 success, 1 usage, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .data import ConllError, EvaluationError, read_conllx, write_conllx, evaluate
from .encoder import EmbeddingLoadError, VocabularyError
from .estimator import DependencyParser
from .structures import InvalidTreeError
from .trainer import CheckpointError, TrainingDivergenceError, load_checkpoint
from .tree_crf import InferenceError

logger = logging.getLogger("treecrf_parser")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    embeddings: Optional[str] = None
    checkpoint: Optional[str] = None
    output: Optional[str] = None
    log: Optional[str] = None
    word_dim: int = 100
    char_dim: int = 50
    pos_dim: int = 50
    cnn_window: int = 3
    cnn_filters: int = 50
    lstm_layers: int = 2
    lstm_state: int = 256
    mlp_dim: int = 100
    dropout_embed: float = 0.15
    dropout_hidden: float = 0.25
    dropout_layer: float = 0.33
    ablation: str = "Full"
    objective: str = "global_likelihood"
    epochs: int = 120
    batch_size: int = 32
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    schedule: str = "10,30,50,70,100"
    decay: float = 0.5
    clip: float = 5.0
    unk_replace: float = 0.5
    min_freq: int = 1
    max_length: Optional[int] = None
    on_invalid_tree: str = "skip"
    dev_every: int = 1
    single_root: bool = False
    punctuation_policy: str = "include_all"
    seed: int = 0

    def set(self, key: str, raw: str) -> None:
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise UsageError(f"unknown config key {key!r}")
        setattr(self, key, _convert(key, types[key], raw))

    def header_lines(self) -> list:
        return [f"# {f.name}={_render(getattr(self, f.name))}" for f in fields(self)]

    @classmethod
    def from_header(cls, lines) -> "RunConfig":
        cfg = cls()
        for line in lines:
            if line.startswith("# ") and "=" in line:
                key, raw = line[2:].split("=", 1)
                cfg.set(key.strip(), raw)
        return cfg

    def estimator(self) -> DependencyParser:
        return DependencyParser(
            word_dim=self.word_dim, char_dim=self.char_dim, pos_dim=self.pos_dim,
            cnn_window=self.cnn_window, cnn_filters=self.cnn_filters,
            lstm_layers=self.lstm_layers, lstm_state=self.lstm_state, mlp_dim=self.mlp_dim,
            dropout_embed=self.dropout_embed, dropout_hidden=self.dropout_hidden,
            dropout_layer=self.dropout_layer, ablation=self.ablation, objective=self.objective,
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            schedule=tuple(int(x) for x in self.schedule.split(",") if x.strip()),
            decay=self.decay, clip=self.clip, unk_replace=self.unk_replace,
            min_freq=self.min_freq, max_length=self.max_length,
            on_invalid_tree=self.on_invalid_tree, single_root=self.single_root,
            punctuation_policy=self.punctuation_policy, dev_every=self.dev_every,
            seed=self.seed, checkpoint_path=self.checkpoint, pretrained=self.embeddings)


def _render(value) -> str:
    return "" if value is None else str(value)


def _convert(key, typ, raw: str):
    raw = raw.strip()
    optional = "Optional" in str(typ)
    if optional and raw in ("", "None", "none"):
        return None
    base = str(typ)
    try:
        if typ is bool or base == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int or "int" in base:
            return int(raw)
        if typ is float or base == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path, cfg: RunConfig) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        cfg.set(key.strip(), raw)
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="treecrf-parser", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--log")
    p.add_argument("--ablation", choices=["Basic", "+Char", "+POS", "Full"])
    p.add_argument("--objective", choices=["global_likelihood", "cross_entropy"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("parse", help="parse a CoNLL-X file with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="defaults to standard output")
    p.add_argument("--single-root", action="store_true", dest="single_root")

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--punct", choices=["include_all", "exclude_unicode_punct"],
                   default="include_all")

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


def _read_treebank(path):
    if path is None:
        raise UsageError("missing treebank path")
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return read_conllx(path)


def train_config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        read_config_file(args.config, cfg)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(*item.split("=", 1))
    for key in ("train", "dev", "embeddings", "checkpoint", "log", "ablation", "objective",
                "epochs", "batch_size", "seed"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def cmd_train(args) -> int:
    cfg = train_config_from_args(args)
    if cfg.train is None:
        raise UsageError("train needs a training file (--train or train= in the config)")
    if cfg.checkpoint is None:
        raise UsageError("train needs a checkpoint path (--checkpoint)")
    if cfg.embeddings is not None and not Path(cfg.embeddings).is_file():
        raise UsageError(f"no such file: {cfg.embeddings}")
    estimator = cfg.estimator()
    try:
        estimator.get_params()
        estimator.encoder_config()
        estimator.train_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_set = _read_treebank(cfg.train)
    dev_set = _read_treebank(cfg.dev) if cfg.dev else None
    log_path = Path(cfg.log or (cfg.checkpoint + ".log"))
    header = cfg.header_lines()
    for line in header:
        logger.info(line)
    estimator.fit(train_set, X_dev=dev_set)
    log_path.write_text("\n".join(header + [r.line() for r in estimator.log_]) + "\n",
                        encoding="utf-8")
    print(f"best_epoch={estimator.best_epoch_} dev_uas={estimator.best_dev_uas_:.2f} "
          f"dev_las={estimator.best_dev_las_:.2f}")
    return EXIT_OK


def cmd_parse(args) -> int:
    estimator = DependencyParser.load(args.checkpoint, single_root=args.single_root)
    sentences = _read_treebank(args.input)
    predicted = estimator.predict(sentences) if sentences else []
    if args.output:
        write_conllx(predicted, args.output)
    else:
        write_conllx(predicted, sys.stdout)
    return EXIT_OK


def cmd_eval(args) -> int:
    result = evaluate(_read_treebank(args.gold), _read_treebank(args.pred), args.punct)
    print(f"UAS={result.uas:.2f} LAS={result.las:.2f} tokens={result.total}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    vocab = model.vocab
    print(f"checkpoint: {args.checkpoint} (format version {meta['version']})")
    print("encoder:")
    for key, value in model.config.to_dict().items():
        print(f"  {key}={value}")
    if meta.get("train"):
        print("training:")
        for key, value in meta["train"].items():
            print(f"  {key}={value}")
    print(f"vocabulary: words={len(vocab.words)} chars={len(vocab.chars)} tags={len(vocab.tags)} "
          f"labels={vocab.n_labels}")
    print("labels: " + " ".join(vocab.labels))
    n_params = sum(v.size for v in model.params.values())
    print(f"parameters: {n_params} in {len(model.params)} blocks")
    log = meta.get("log") or []
    print(f"epochs logged: {len(log)}")
    if log:
        print(f"last: {log[-1]}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConllError, EvaluationError, CheckpointError, VocabularyError, EmbeddingLoadError,
            InvalidTreeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InferenceError, TrainingDivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
