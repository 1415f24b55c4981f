"""CoNLL-X treebank I/O, vocabularies and attachment-score evaluation."""
import io
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence, Union

ROOT_FORM = "<ROOT>"
PAD, UNK, ROOT = "<PAD>", "<UNK>", "<ROOT>"
RESERVED = (PAD, UNK, ROOT)
PAD_ID, UNK_ID, ROOT_ID = 0, 1, 2

PUNCT_POLICIES = ("include_all", "exclude_unicode_punct")


class ConllError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass
class Token:
    id: int
    form: str
    lemma: Optional[str] = None
    cpos: Optional[str] = None
    pos: Optional[str] = None
    feats: Optional[str] = None
    head: Optional[int] = None
    deprel: Optional[str] = None
    phead: Optional[str] = None
    pdeprel: Optional[str] = None

    @property
    def tag(self) -> str:
        """Fine POS, falling back to the coarse column."""
        if self.pos is not None:
            return self.pos
        return self.cpos if self.cpos is not None else UNK


def root_token() -> Token:
    return Token(0, ROOT_FORM, ROOT_FORM, ROOT, ROOT, None, None, None)


@dataclass
class Sentence:
    """Tokens with the artificial root at index 0."""

    tokens: list = field(default_factory=list)

    @classmethod
    def from_tokens(cls, tokens: Iterable[Token]) -> "Sentence":
        return cls([root_token(), *tokens])

    @classmethod
    def from_forms(cls, forms: Sequence[str], tags: Optional[Sequence[str]] = None,
                   heads: Optional[Sequence[int]] = None,
                   deprels: Optional[Sequence[str]] = None) -> "Sentence":
        toks = []
        for i, form in enumerate(forms):
            tag = tags[i] if tags is not None else None
            toks.append(Token(i + 1, form, None, tag, tag,
                              head=heads[i] if heads is not None else None,
                              deprel=deprels[i] if deprels is not None else None))
        return cls.from_tokens(toks)

    def __len__(self) -> int:
        return len(self.tokens) - 1

    @property
    def words(self) -> list:
        return self.tokens[1:]

    @property
    def forms(self) -> list:
        return [t.form for t in self.words]

    @property
    def heads(self) -> list:
        return [t.head for t in self.words]

    @property
    def deprels(self) -> list:
        return [t.deprel for t in self.words]

    def with_predictions(self, heads: Sequence[int], deprels: Sequence[str]) -> "Sentence":
        toks = [replace(t, head=int(h), deprel=r) for t, h, r in zip(self.words, heads, deprels)]
        return Sentence.from_tokens(toks)


def _field(value: str) -> Optional[str]:
    return None if value == "_" else value


def _open_text(source) -> tuple:
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8"), True
    return source, False


def read_conllx(source: Union[str, Path, IO[str]]) -> list:
    """Parse CoNLL-X blocks into :class:`Sentence` objects.

    Comment lines starting with ``#`` are skipped. Malformed ids or heads
    raise :class:`ConllError` with the offending line number.
    """
    stream, owned = _open_text(source)
    sentences, tokens, block_start = [], [], None
    lines_of_block = []

    def flush():
        if not tokens:
            return
        n = len(tokens)
        for tok, lineno in zip(tokens, lines_of_block):
            if tok.head is not None and not 0 <= tok.head <= n:
                raise ConllError(f"line {lineno}: HEAD {tok.head} out of range 0..{n}")
        sentences.append(Sentence.from_tokens(list(tokens)))
        tokens.clear()
        lines_of_block.clear()

    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ConllError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
            try:
                tid = int(cols[0])
            except ValueError:
                raise ConllError(f"line {lineno}: non-numeric ID {cols[0]!r}") from None
            if tid != len(tokens) + 1:
                raise ConllError(f"line {lineno}: expected ID {len(tokens) + 1}, got {tid}")
            head = None
            if cols[6] != "_":
                try:
                    head = int(cols[6])
                except ValueError:
                    raise ConllError(f"line {lineno}: non-numeric HEAD {cols[6]!r}") from None
            tokens.append(Token(tid, cols[1], _field(cols[2]), _field(cols[3]), _field(cols[4]),
                                _field(cols[5]), head, _field(cols[7]), _field(cols[8]),
                                _field(cols[9])))
            lines_of_block.append(lineno)
        flush()
    finally:
        if owned:
            stream.close()
    return sentences


def _fmt(value) -> str:
    return "_" if value is None or value == "" else str(value)


def format_conllx(sentences: Iterable[Sentence]) -> str:
    out = io.StringIO()
    for si, sent in enumerate(sentences):
        for tok in sent.words:
            if tok.head is None or tok.deprel is None:
                raise ConllError(f"sentence {si}, token {tok.id}: missing head or deprel")
            cols = [tok.id, tok.form, tok.lemma, tok.cpos, tok.pos, tok.feats, tok.head,
                    tok.deprel, tok.phead, tok.pdeprel]
            out.write("\t".join(_fmt(c) for c in cols) + "\n")
        out.write("\n")
    return out.getvalue()


def write_conllx(sentences: Iterable[Sentence], dest: Union[str, Path, IO[str]]) -> None:
    text = format_conllx(sentences)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


_DIGITS = re.compile(r"\d+")


def normalize_word(form: str, lowercase: bool = True, digits: bool = True) -> str:
    if form in RESERVED:
        return form
    if lowercase:
        form = form.lower()
    if digits:
        form = _DIGITS.sub("0", form)
    return form


def _ranked(counts: Counter) -> list:
    return [k for k, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass
class Vocab:
    """Id maps for words, characters, POS tags and labels.

    Words, characters and tags reserve ids 0-2 for PAD/UNK/ROOT. Labels have
    no reserved entries, so ``len(labels)`` is the label count of the model.
    """

    words: list
    chars: list
    tags: list
    labels: list
    word_freq: dict = field(default_factory=dict)
    lowercase: bool = True
    digits: bool = True

    def __post_init__(self):
        self._word_ids = {w: i for i, w in enumerate(self.words)}
        self._char_ids = {c: i for i, c in enumerate(self.chars)}
        self._tag_ids = {t: i for i, t in enumerate(self.tags)}
        self._label_ids = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def normalize(self, form: str) -> str:
        return normalize_word(form, self.lowercase, self.digits)

    def word_id(self, form: str) -> int:
        return self._word_ids.get(self.normalize(form), UNK_ID)

    def char_ids(self, form: str) -> list:
        if form == ROOT_FORM:
            return [ROOT_ID]
        return [self._char_ids.get(c, UNK_ID) for c in form] or [UNK_ID]

    def tag_id(self, tag: Optional[str]) -> int:
        if tag == ROOT:
            return ROOT_ID
        return self._tag_ids.get(tag, UNK_ID)

    def label_id(self, label: str) -> int:
        try:
            return self._label_ids[label]
        except KeyError:
            raise KeyError(f"unknown dependency label {label!r}") from None

    def label(self, idx: int) -> str:
        return self.labels[idx]

    def is_singleton(self, form: str) -> bool:
        return self.word_freq.get(self.normalize(form), 0) == 1

    def to_dict(self) -> dict:
        return {"words": self.words, "chars": self.chars, "tags": self.tags,
                "labels": self.labels, "word_freq": self.word_freq,
                "lowercase": self.lowercase, "digits": self.digits}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(**d)


def build_vocab(sentences: Sequence[Sentence], pretrained_words: Iterable[str] = (),
                min_freq: int = 1, lowercase: bool = True, digits: bool = True) -> Vocab:
    """Deterministic vocabulary: ids ordered by frequency (descending) then lexicographically."""
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty training set")
    words, chars, tags, labels = Counter(), Counter(), Counter(), Counter()
    for sent in sentences:
        for tok in sent.words:
            words[normalize_word(tok.form, lowercase, digits)] += 1
            chars.update(tok.form)
            tags[tok.tag] += 1
            if tok.deprel is not None:
                labels[tok.deprel] += 1
    kept = Counter({w: c for w, c in words.items() if c >= min_freq})
    pretrained = {normalize_word(w, lowercase, digits) for w in pretrained_words} - set(kept)
    pretrained -= set(RESERVED)
    word_list = list(RESERVED) + _ranked(kept) + sorted(pretrained)
    for r in RESERVED:
        chars.pop(r, None)
        tags.pop(r, None)
    return Vocab(word_list, list(RESERVED) + _ranked(chars), list(RESERVED) + _ranked(tags),
                 _ranked(labels), dict(words), lowercase, digits)


def is_punctuation(form: str) -> bool:
    return bool(form) and all(unicodedata.category(c).startswith("P") for c in form)


@dataclass
class EvalResult:
    uas: float
    las: float
    total: int
    correct_heads: int
    correct_labels: int
    per_sentence: list  # (scored tokens, correct heads, correct head+label) per sentence


def _percent(num: int, den: int) -> float:
    return 100.0 if den == 0 else 100.0 * num / den


def evaluate(gold: Sequence[Sentence], predicted: Sequence[Sentence],
             punctuation_policy: str = "include_all") -> EvalResult:
    """Corpus-level UAS/LAS in percent.

    ``exclude_unicode_punct`` skips gold tokens whose form is made only of
    Unicode punctuation, approximating the CoNLL-2006 scorer convention.
    A corpus with no scored tokens scores 100.
    """
    if punctuation_policy not in PUNCT_POLICIES:
        raise ValueError(f"punctuation_policy must be one of {PUNCT_POLICIES}")
    if len(gold) != len(predicted):
        raise EvaluationError(f"{len(gold)} gold sentences but {len(predicted)} predicted")
    total = heads_ok = both_ok = 0
    per_sentence = []
    for i, (g, p) in enumerate(zip(gold, predicted)):
        if len(g) != len(p):
            raise EvaluationError(f"sentence {i}: {len(g)} gold tokens but {len(p)} predicted")
        t = h = b = 0
        for gt, pt in zip(g.words, p.words):
            if punctuation_policy == "exclude_unicode_punct" and is_punctuation(gt.form):
                continue
            t += 1
            if gt.head == pt.head:
                h += 1
                b += gt.deprel == pt.deprel
        per_sentence.append((t, h, b))
        total, heads_ok, both_ok = total + t, heads_ok + h, both_ok + b
    return EvalResult(_percent(heads_ok, total), _percent(both_ok, total), total, heads_ok,
                      both_ok, per_sentence)
