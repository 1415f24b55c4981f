"""BLSTM-CNN token encoder with a hand-written reverse pass.

Pipeline per token: word embedding, character CNN (max over time) and POS
embedding are concatenated, passed through a stacked bidirectional
peephole LSTM and a one-layer elu perceptron. Dropout is inverted (scaled
at training time) so inference is a plain forward pass.

Parameters live in a flat ``dict[str, np.ndarray]``; gradients use the
same keys.
"""
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import PAD_ID, UNK_ID, Sentence, Vocab

GATES = 4  # input, forget, candidate, output
DIRECTIONS = ("fw", "bw")


class VocabularyError(IndexError):
    pass


class EmbeddingLoadError(ValueError):
    pass


@dataclass
class EncoderConfig:
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
    use_char: bool = True
    use_pos: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("dropout"):
                if not 0.0 <= v < 1.0:
                    raise ValueError(f"{f.name} must be in [0, 1), got {v}")
            elif f.type is int or f.type == "int":
                if int(v) < 1:
                    raise ValueError(f"{f.name} must be >= 1, got {v}")
        if self.cnn_window % 2 == 0:
            raise ValueError("cnn_window must be odd so padding is symmetric")

    @property
    def input_dim(self) -> int:
        return (self.word_dim + (self.cnn_filters if self.use_char else 0)
                + (self.pos_dim if self.use_pos else 0))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EncodedSentence:
    """Vocabulary ids for the root plus ``n`` tokens."""

    words: np.ndarray
    tags: np.ndarray
    chars: list

    def __len__(self):
        return len(self.words)


def encode_ids(sentence: Sentence, vocab: Vocab) -> EncodedSentence:
    toks = sentence.tokens
    return EncodedSentence(
        np.array([vocab.word_id(t.form) for t in toks], dtype=np.int64),
        np.array([vocab.tag_id(t.tag) for t in toks], dtype=np.int64),
        [np.array(vocab.char_ids(t.form), dtype=np.int64) for t in toks],
    )


def load_pretrained(path) -> dict:
    """Read a text embedding file: a token then its whitespace-separated values per line."""
    vectors, dim = {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if dim is None and len(parts) == 2 and lineno == 1 and all(p.isdigit() for p in parts):
                continue  # word2vec-style "count dim" header
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise EmbeddingLoadError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise EmbeddingLoadError(f"{path}:{lineno}: empty vector")
            elif len(vec) != dim:
                raise EmbeddingLoadError(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            vectors[parts[0]] = vec
    return vectors


# activations -------------------------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def dropout_mask(rng, shape, rate: float) -> Optional[np.ndarray]:
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _apply(x, mask):
    return x if mask is None else x * mask


# character CNN -----------------------------------------------------------

def char_cnn_forward(char_ids, params: dict, config: EncoderConfig, mask=None):
    """Max-over-time convolution over one word's characters.

    The word is padded with ``cnn_window // 2`` PAD characters on each side,
    so a one-character word yields the single window ``[PAD, c, PAD]``.
    ``mask`` multiplies the padded character embeddings (dropout).
    """
    ids = np.asarray(char_ids, dtype=np.int64)
    table = params["char_emb"]
    ids = np.where((ids >= 0) & (ids < len(table)), ids, UNK_ID)
    pad = config.cnn_window // 2
    padded = np.concatenate([np.full(pad, PAD_ID), ids, np.full(pad, PAD_ID)])
    emb = _apply(table[padded], mask)
    k = config.cnn_window
    positions = len(padded) - k + 1
    windows = np.stack([emb[p:p + k].reshape(-1) for p in range(positions)])
    conv = windows @ params["cnn.W"].T + params["cnn.b"]
    arg = np.argmax(conv, axis=0)
    out = conv[arg, np.arange(conv.shape[1])]
    return out, (padded, mask, windows, arg)


def char_cnn_backward(grad_out, cache, params: dict, config: EncoderConfig, grads: dict):
    padded, mask, windows, arg = cache
    n_filters = len(grad_out)
    d_conv = np.zeros((len(windows), n_filters))
    d_conv[arg, np.arange(n_filters)] = grad_out
    grads["cnn.W"] += d_conv.T @ windows
    grads["cnn.b"] += grad_out
    d_windows = d_conv @ params["cnn.W"]
    k, dim = config.cnn_window, params["char_emb"].shape[1]
    d_emb = np.zeros((len(padded), dim))
    for p in range(len(windows)):
        d_emb[p:p + k] += d_windows[p].reshape(k, dim)
    d_emb = _apply(d_emb, mask)
    np.add.at(grads["char_emb"], padded, d_emb)


# LSTM --------------------------------------------------------------------

def lstm_cell_step(x, h_prev, c_prev, weights: dict):
    """One peephole LSTM step.

    Input and forget gates see ``c_prev`` through Hadamard peepholes, as
    does the output gate; ``weights`` holds ``Wx (4H, in)``, ``Wh (4H, H)``,
    ``peep (3, H)`` and ``b (4H,)`` with gate blocks ordered i, f, c, o.
    """
    H = weights["Wh"].shape[1]
    z = weights["Wx"] @ x + weights["Wh"] @ h_prev + weights["b"]
    v = weights["peep"]
    i = sigmoid(z[:H] + v[0] * c_prev)
    f = sigmoid(z[H:2 * H] + v[1] * c_prev)
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:] + v[2] * c_prev)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


@dataclass
class _LSTMCache:
    x: np.ndarray  # (B, T, in)
    h_mask: Optional[np.ndarray]  # (B, H)
    gates: np.ndarray  # (B, T, 4H) post-activation i, f, g, o
    c: np.ndarray  # (B, T+1, H), [:, 0] is the initial state
    tc: np.ndarray  # (B, T, H) tanh(c_t)
    h_in: np.ndarray  # (B, T, H) masked previous hidden state fed to Wh


def lstm_forward(x: np.ndarray, w: dict, h_mask=None):
    """Run one direction over a padded batch ``x (B, T, in)`` from zero initial state.

    ``h_mask (B, H)`` is the recurrent dropout mask, applied to the hidden
    state fed back at every step. Padding must sit at the end of each
    sequence; outputs there are meaningless but never leak backwards.
    """
    B, T, _ = x.shape
    H = w["Wh"].shape[1]
    zx = x @ w["Wx"].T + w["b"]
    wh_t = np.ascontiguousarray(w["Wh"].T)
    v_i, v_f, v_o = w["peep"]
    gates = np.empty((B, T, GATES * H))
    c_all = np.zeros((B, T + 1, H))
    tc = np.empty((B, T, H))
    h_in = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        c_prev = c_all[:, t]
        hm = h if h_mask is None else h * h_mask
        h_in[:, t] = hm
        z = zx[:, t] + hm @ wh_t
        g = gates[:, t]
        g[:, :H] = sigmoid(z[:, :H] + v_i * c_prev)
        g[:, H:2 * H] = sigmoid(z[:, H:2 * H] + v_f * c_prev)
        g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        g[:, 3 * H:] = sigmoid(z[:, 3 * H:] + v_o * c_prev)
        c = g[:, H:2 * H] * c_prev + g[:, :H] * g[:, 2 * H:3 * H]
        c_all[:, t + 1] = c
        tc[:, t] = np.tanh(c)
        h = g[:, 3 * H:] * tc[:, t]
        hs[:, t] = h
    return hs, _LSTMCache(x, h_mask, gates, c_all, tc, h_in)


def lstm_backward(d_hs: np.ndarray, cache: _LSTMCache, w: dict, grads: dict, prefix: str):
    """Reverse pass of :func:`lstm_forward`; returns the gradient w.r.t. ``x``."""
    B, T, H = d_hs.shape
    v_i, v_f, v_o = w["peep"]
    wh = w["Wh"]
    dz = np.empty((B, T, GATES * H))
    d_peep = np.zeros((3, H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = cache.gates[:, t]
        gi, gf, gg, go = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c_prev, tc = cache.c[:, t], cache.tc[:, t]
        dh = d_hs[:, t] + dh_next
        d = dz[:, t]
        d[:, 3 * H:] = dh * tc * go * (1.0 - go)
        dc = dc_next + dh * go * (1.0 - tc * tc)
        d[:, :H] = dc * gg * gi * (1.0 - gi)
        d[:, H:2 * H] = dc * c_prev * gf * (1.0 - gf)
        d[:, 2 * H:3 * H] = dc * gi * (1.0 - gg * gg)
        d_peep[0] += np.sum(d[:, :H] * c_prev, axis=0)
        d_peep[1] += np.sum(d[:, H:2 * H] * c_prev, axis=0)
        d_peep[2] += np.sum(d[:, 3 * H:] * c_prev, axis=0)
        dc_next = dc * gf + d[:, :H] * v_i + d[:, H:2 * H] * v_f + d[:, 3 * H:] * v_o
        dh_in = d @ wh
        dh_next = dh_in if cache.h_mask is None else dh_in * cache.h_mask
    dz2 = dz.reshape(B * T, -1)
    grads[prefix + "Wx"] += dz2.T @ cache.x.reshape(B * T, -1)
    grads[prefix + "Wh"] += dz2.T @ cache.h_in.reshape(B * T, -1)
    grads[prefix + "b"] += dz2.sum(axis=0)
    grads[prefix + "peep"] += d_peep
    return dz @ w["Wx"]


def _lstm_weights(params: dict, prefix: str) -> dict:
    return {k: params[prefix + k] for k in ("Wx", "Wh", "peep", "b")}


def lstm_prefix(layer: int, direction: str) -> str:
    return f"lstm.{layer}.{direction}."


@dataclass
class DropoutMasks:
    """Masks for one sentence; ``None`` entries mean no dropout."""

    chars: list = field(default_factory=list)
    embed: Optional[np.ndarray] = None
    hidden: dict = field(default_factory=dict)  # (layer, direction) -> (H,) mask reused at every step
    layer: dict = field(default_factory=dict)  # layer -> (2H,) mask on that layer's input (layer >= 1)
    output: Optional[np.ndarray] = None  # (2H,) mask on the final BLSTM output


def sample_masks(sent: EncodedSentence, config: EncoderConfig, rng) -> DropoutMasks:
    H = config.lstm_state
    masks = DropoutMasks()
    if config.use_char:
        pad = 2 * (config.cnn_window // 2)
        masks.chars = [dropout_mask(rng, (len(c) + pad, config.char_dim), config.dropout_embed)
                       for c in sent.chars]
    masks.embed = dropout_mask(rng, (len(sent), config.input_dim), config.dropout_embed)
    for layer in range(config.lstm_layers):
        for d in DIRECTIONS:
            masks.hidden[(layer, d)] = dropout_mask(rng, (H,), config.dropout_hidden)
        if layer > 0:
            masks.layer[layer] = dropout_mask(rng, (2 * H,), config.dropout_layer)
    masks.output = dropout_mask(rng, (2 * H,), config.dropout_layer)
    return masks


def _stack_masks(masks: Sequence[DropoutMasks], get) -> Optional[np.ndarray]:
    vals = [get(m) for m in masks]
    if all(v is None for v in vals):
        return None
    return np.stack(vals)


def _reverse_index(lengths: Sequence[int], T: int) -> np.ndarray:
    """Per-row gather index that reverses each valid prefix and leaves padding in place."""
    idx = np.tile(np.arange(T), (len(lengths), 1))
    for b, n in enumerate(lengths):
        idx[b, :n] = np.arange(n - 1, -1, -1)
    return idx


def _gather_time(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(x, idx[:, :, None], axis=1)


def blstm_forward(x: np.ndarray, params: dict, config: EncoderConfig,
                  masks: Optional[Sequence[DropoutMasks]] = None, lengths=None):
    """Stacked bidirectional LSTM over ``x (T, input_dim)`` or a padded batch ``(B, T, input_dim)``.

    Returns the per-layer outputs (forward state first in the last axis) and
    a cache for :func:`blstm_backward`. Layer and hidden masks are
    variational: one vector per sentence, reused at every time step.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
        masks = [masks] if isinstance(masks, DropoutMasks) else masks
    B, T, _ = x.shape
    lengths = [T] * B if lengths is None else list(lengths)
    masks = masks or [DropoutMasks() for _ in range(B)]
    rev = _reverse_index(lengths, T)
    layers, caches = [], []
    inp = x
    for layer in range(config.lstm_layers):
        layer_mask = None
        if layer > 0:
            layer_mask = _stack_masks(masks, lambda m: m.layer.get(layer))
            if layer_mask is not None:
                inp = inp * layer_mask[:, None, :]
        layer_cache = {"layer_mask": layer_mask}
        outs = []
        for d in DIRECTIONS:
            w = _lstm_weights(params, lstm_prefix(layer, d))
            h_mask = _stack_masks(masks, lambda m: m.hidden.get((layer, d)))
            seq = inp if d == "fw" else _gather_time(inp, rev)
            hs, cache = lstm_forward(seq, w, h_mask)
            outs.append(hs if d == "fw" else _gather_time(hs, rev))
            layer_cache[d] = cache
        inp = np.concatenate(outs, axis=2)
        layers.append(inp[0] if single else inp)
        caches.append(layer_cache)
    return layers, (caches, rev, single)


def blstm_backward(d_out: np.ndarray, cache, params: dict, config: EncoderConfig,
                   grads: dict) -> np.ndarray:
    """Gradient w.r.t. the BLSTM input; ``d_out`` must be zero at padded positions."""
    caches, rev, single = cache
    d = d_out[None] if single else d_out
    H = config.lstm_state
    for layer in range(config.lstm_layers - 1, -1, -1):
        lc = caches[layer]
        p_fw, p_bw = lstm_prefix(layer, "fw"), lstm_prefix(layer, "bw")
        d_in = lstm_backward(d[:, :, :H], lc["fw"], _lstm_weights(params, p_fw), grads, p_fw)
        d_bw = lstm_backward(_gather_time(d[:, :, H:], rev), lc["bw"],
                             _lstm_weights(params, p_bw), grads, p_bw)
        d = d_in + _gather_time(d_bw, rev)
        if lc["layer_mask"] is not None:
            d = d * lc["layer_mask"][:, None, :]
    return d[0] if single else d


# full encoder ------------------------------------------------------------

@dataclass
class EncoderCache:
    sents: list
    masks: list
    lengths: list
    char_caches: list  # per sentence, per token
    blstm_cache: tuple
    embed_masks: Optional[np.ndarray]  # (B, T, input_dim)
    output_mask: Optional[np.ndarray]  # (B, 2H)
    blstm_out: np.ndarray  # (B, T, 2H) after output dropout
    pre_act: np.ndarray
    out: np.ndarray


def _check_ids(ids: np.ndarray, table: np.ndarray, what: str):
    if len(ids) and (ids.min() < 0 or ids.max() >= len(table)):
        raise VocabularyError(f"{what} id out of range 0..{len(table) - 1}")


def _token_inputs(sent: EncodedSentence, params: dict, config: EncoderConfig, masks: DropoutMasks):
    parts = [params["word_emb"][sent.words]]
    char_caches = []
    if config.use_char:
        outs = []
        for i, chars in enumerate(sent.chars):
            m = masks.chars[i] if masks.chars else None
            out, cache = char_cnn_forward(chars, params, config, m)
            outs.append(out)
            char_caches.append(cache)
        parts.append(np.stack(outs))
    if config.use_pos:
        parts.append(params["pos_emb"][sent.tags])
    return np.concatenate(parts, axis=1), char_caches


def encode_batch(sents: Sequence[EncodedSentence], params: dict, config: EncoderConfig,
                 training: bool = False, rng=None,
                 masks: Optional[Sequence[DropoutMasks]] = None):
    """Encode several sentences in one padded pass; returns a list of ``(n+1, mlp_dim)`` arrays and a cache."""
    for sent in sents:
        _check_ids(sent.words, params["word_emb"], "word")
        if config.use_pos:
            _check_ids(sent.tags, params["pos_emb"], "POS")
    if training:
        if masks is None:
            if rng is None:
                raise ValueError("training mode needs an rng or explicit masks")
            masks = [sample_masks(s, config, rng) for s in sents]
    else:
        masks = [DropoutMasks() for _ in sents]

    lengths = [len(s) for s in sents]
    B, T = len(sents), max(lengths)
    x = np.zeros((B, T, config.input_dim))
    char_caches = []
    for b, sent in enumerate(sents):
        x[b, :lengths[b]], cc = _token_inputs(sent, params, config, masks[b])
        char_caches.append(cc)
    embed_masks = None
    if any(m.embed is not None for m in masks):
        embed_masks = np.zeros_like(x)
        for b, m in enumerate(masks):
            embed_masks[b, :lengths[b]] = 1.0 if m.embed is None else m.embed
        x = x * embed_masks

    layers, blstm_cache = blstm_forward(x, params, config, masks, lengths)
    h = layers[-1]
    output_mask = _stack_masks(masks, lambda m: m.output)
    if output_mask is not None:
        h = h * output_mask[:, None, :]
    pre = h @ params["mlp.W"].T + params["mlp.b"]
    out = elu(pre)
    reprs = [out[b, :lengths[b]] for b in range(B)]
    cache = EncoderCache(list(sents), list(masks), lengths, char_caches, blstm_cache,
                         embed_masks, output_mask, h, pre, out)
    return reprs, cache


def encode_sentence(sent: EncodedSentence, params: dict, config: EncoderConfig,
                    training: bool = False, rng=None, masks: Optional[DropoutMasks] = None):
    """Representations ``(n+1, mlp_dim)`` for the root and every token, plus a backward cache.

    Dropout is active only when ``training`` is set; masks are drawn from
    ``rng`` unless passed explicitly.
    """
    reprs, cache = encode_batch([sent], params, config, training, rng,
                                None if masks is None else [masks])
    return reprs[0], cache


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def encoder_backward(cache: Optional[EncoderCache], grad_repr, params: dict,
                     config: EncoderConfig, grads: Optional[dict] = None) -> dict:
    """Accumulate gradients of all encoder parameters into ``grads`` (created if absent).

    ``grad_repr`` is one array for a single sentence or a list matching the
    batch passed to :func:`encode_batch`.
    """
    if cache is None:
        raise ValueError("encoder_backward needs the cache returned by encode_sentence")
    if grads is None:
        grads = zero_grads(params)
    if isinstance(grad_repr, np.ndarray):
        grad_repr = [grad_repr]
    B, T = len(cache.lengths), max(cache.lengths)
    d_out = np.zeros((B, T, params["mlp.W"].shape[0]))
    for b, g in enumerate(grad_repr):
        d_out[b, :cache.lengths[b]] = g
    d_pre = d_out * np.where(cache.pre_act > 0, 1.0, cache.out + 1.0)
    flat = d_pre.reshape(B * T, -1)
    grads["mlp.W"] += flat.T @ cache.blstm_out.reshape(B * T, -1)
    grads["mlp.b"] += flat.sum(axis=0)
    d_h = d_pre @ params["mlp.W"]
    if cache.output_mask is not None:
        d_h = d_h * cache.output_mask[:, None, :]

    d_x = blstm_backward(d_h, cache.blstm_cache, params, config, grads)
    if cache.embed_masks is not None:
        d_x = d_x * cache.embed_masks

    wd = config.word_dim
    for b, sent in enumerate(cache.sents):
        dx = d_x[b, :cache.lengths[b]]
        np.add.at(grads["word_emb"], sent.words, dx[:, :wd])
        col = wd
        if config.use_char:
            nf = config.cnn_filters
            for i, cc in enumerate(cache.char_caches[b]):
                char_cnn_backward(dx[i, col:col + nf], cc, params, config, grads)
            col += nf
        if config.use_pos:
            np.add.at(grads["pos_emb"], sent.tags, dx[:, col:col + config.pos_dim])
    return grads


def parameter_shapes(config: EncoderConfig, n_words: int, n_chars: int, n_tags: int) -> dict:
    """Encoder parameter census: name -> shape, reflecting which inputs are enabled."""
    H = config.lstm_state
    shapes = {"word_emb": (n_words, config.word_dim)}
    if config.use_char:
        shapes["char_emb"] = (n_chars, config.char_dim)
        shapes["cnn.W"] = (config.cnn_filters, config.cnn_window * config.char_dim)
        shapes["cnn.b"] = (config.cnn_filters,)
    if config.use_pos:
        shapes["pos_emb"] = (n_tags, config.pos_dim)
    in_dim = config.input_dim
    for layer in range(config.lstm_layers):
        for d in DIRECTIONS:
            p = lstm_prefix(layer, d)
            shapes[p + "Wx"] = (GATES * H, in_dim)
            shapes[p + "Wh"] = (GATES * H, H)
            shapes[p + "peep"] = (3, H)
            shapes[p + "b"] = (GATES * H,)
        in_dim = 2 * H
    shapes["mlp.W"] = (config.mlp_dim, 2 * H)
    shapes["mlp.b"] = (config.mlp_dim,)
    return shapes


def save_pretrained_text(vectors: dict, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")
