"""The parser as one object: vocabulary, encoder config and a flat parameter store."""
from dataclasses import dataclass

import numpy as np

from . import tree_crf
from .data import Sentence, Vocab
from .decoder import decode
from .encoder import (EncodedSentence, EncoderConfig, encode_batch, encode_ids, encode_sentence,
                      encoder_backward)
from .scorer import ScorerParams, score_all_edges, score_backward
from .structures import DependencyTree, EdgeScores

OBJECTIVES = ("global_likelihood", "cross_entropy")
SCORER_KEYS = ("scorer.W", "scorer.U", "scorer.V", "scorer.b")


def scorer_view(params: dict) -> ScorerParams:
    return ScorerParams(*(params[k] for k in SCORER_KEYS))


def gold_tree(sentence: Sentence, vocab: Vocab) -> DependencyTree:
    heads = sentence.heads
    if any(h is None for h in heads):
        raise tree_crf.InvalidTreeError("sentence has tokens without a gold head")
    labels = [vocab.label_id(r) for r in sentence.deprels]
    return DependencyTree.from_heads(heads, labels)


@dataclass
class ParserModel:
    config: EncoderConfig
    vocab: Vocab
    params: dict

    def encode(self, sentence: Sentence) -> EncodedSentence:
        return encode_ids(sentence, self.vocab)

    def edge_scores(self, encoded: EncodedSentence) -> EdgeScores:
        repr_, _ = encode_sentence(encoded, self.params, self.config, training=False)
        return score_all_edges(repr_, scorer_view(self.params))

    def parse(self, sentence: Sentence, single_root: bool = False) -> Sentence:
        return self.parse_batch([sentence], single_root)[0]

    def parse_batch(self, sentences, single_root: bool = False) -> list:
        reprs, _ = encode_batch([self.encode(s) for s in sentences], self.params, self.config)
        sp = scorer_view(self.params)
        out = []
        for sentence, r in zip(sentences, reprs):
            tree = decode(score_all_edges(r, sp), single_root)
            labels = [self.vocab.label(int(lab)) for lab in tree.labels[1:]]
            out.append(sentence.with_predictions(tree.heads[1:], labels))
        return out

    def marginals(self, sentence: Sentence) -> np.ndarray:
        return tree_crf.log_partition(self.edge_scores(self.encode(sentence))).marginals.mu

    def loss_and_grads(self, encoded: EncodedSentence, gold: DependencyTree,
                       objective: str = "global_likelihood", training: bool = True, rng=None,
                       grads=None, masks=None, scale: float = 1.0):
        """Sentence loss; gradients times ``scale`` are accumulated into ``grads``."""
        losses, grads = self.batch_loss_and_grads([encoded], [gold], objective, training, rng,
                                                  grads, None if masks is None else [masks], scale)
        return losses[0], grads

    def batch_loss_and_grads(self, encoded, golds, objective: str = "global_likelihood",
                             training: bool = True, rng=None, grads=None, masks=None,
                             scale: float = 1.0):
        """Per-sentence losses for a batch; summed gradients times ``scale`` go into ``grads``."""
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        loss_fn = (tree_crf.nll_loss_and_grad if objective == "global_likelihood"
                   else tree_crf.head_selection_loss)
        reprs, cache = encode_batch(encoded, self.params, self.config, training, rng, masks)
        sp = scorer_view(self.params)
        if grads is None:
            grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        losses, g_reprs = [], []
        for r, gold in zip(reprs, golds):
            loss, g_scores = loss_fn(score_all_edges(r, sp), gold)
            g_repr, g_sp = score_backward(r, sp, g_scores * scale)
            for key, g in zip(SCORER_KEYS, (g_sp.W, g_sp.U, g_sp.V, g_sp.b)):
                grads[key] += g
            losses.append(loss)
            g_reprs.append(g_repr)
        encoder_backward(cache, g_reprs, self.params, self.config, grads)
        return losses, grads
