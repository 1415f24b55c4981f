import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, tiny_config, tiny_model
from treecrf_parser.data import Sentence, build_vocab, read_conllx
from treecrf_parser.encoder import encode_ids
from treecrf_parser.model import gold_tree
from treecrf_parser.scorer import ConfigurationError
from treecrf_parser.structures import InvalidTreeError
from treecrf_parser.trainer import (ABLATIONS, CheckpointError, EpochRecord, OptimizerState,
                                    TrainConfig, TrainingDivergenceError, ablation_flags,
                                    adam_step, clip_gradients, global_norm, init_params,
                                    learning_rate, learning_rate_sequence, load_checkpoint,
                                    save_checkpoint, train)

EXPECTED_RATES = ([0.002] * 10 + [0.001] * 20 + [5e-4] * 20 + [2.5e-4] * 20 + [1.25e-4] * 30
                  + [6.25e-5] * 20)


def quick_config(**overrides):
    base = dict(epochs=2, batch_size=4, unk_replace=0.5)
    base.update(overrides)
    return TrainConfig(**base)


def test_rate_sequence():
    rates = learning_rate_sequence(TrainConfig())
    assert len(rates) == 120 and rates == EXPECTED_RATES


def test_rate_boundaries():
    assert learning_rate(9) == 0.002 and learning_rate(10) == 0.001
    assert learning_rate(99) == 1.25e-4 and learning_rate(100) == 0.002 * 0.5 ** 5 == 6.25e-5


@pytest.mark.parametrize("name,flags", [("Basic", (False, False)), ("+Char", (True, False)),
                                        ("+POS", (False, True)), ("Full", (True, True))])
def test_ablation_flags(name, flags):
    assert ablation_flags(name) == flags == ABLATIONS[name]


def test_unknown_ablation_and_objective():
    with pytest.raises(ValueError):
        ablation_flags("Tiny")
    with pytest.raises(ValueError):
        TrainConfig(objective="hinge")
    with pytest.raises(ValueError):
        TrainConfig(on_invalid_tree="ignore")


def test_initialization_ranges(tiny10):
    vocab = build_vocab(tiny10)
    config = tiny_config(char_dim=50, lstm_state=256, word_dim=10, mlp_dim=10)
    params = init_params(config, vocab, np.random.default_rng(0))
    assert np.abs(params["char_emb"]).max() <= math.sqrt(3 / 50)
    assert np.abs(params["pos_emb"]).max() <= math.sqrt(3 / config.pos_dim)
    H = 256
    for key in ("lstm.0.fw.b", "lstm.1.bw.b"):
        b = params[key]
        assert np.all(b[H:2 * H] == 1.0)
        assert not b[:H].any() and not b[2 * H:].any()
    assert not params["mlp.b"].any() and not params["scorer.b"].any() and not params["cnn.b"].any()
    wh = params["lstm.0.fw.Wh"][:H]  # one 256 x 256 gate block
    bound = math.sqrt(6 / (H + H))
    assert np.abs(wh).max() <= bound
    sigma = bound / math.sqrt(3) / math.sqrt(wh.size)
    assert abs(wh.mean()) < 3 * sigma
    mlp = params["mlp.W"]
    assert np.abs(mlp).max() <= math.sqrt(6 / sum(mlp.shape))


def test_pretrained_vectors_are_copied(tiny10):
    vocab_words = {"teacher": np.full(4, 0.25), "unseen-word": np.full(4, -0.5)}
    vocab = build_vocab(tiny10, vocab_words)
    params = init_params(tiny_config(), vocab, np.random.default_rng(0), vocab_words)
    assert np.array_equal(params["word_emb"][vocab.word_id("teacher")], vocab_words["teacher"])
    assert np.array_equal(params["word_emb"][vocab.word_id("unseen-word")], vocab_words["unseen-word"])
    with pytest.raises(ConfigurationError):
        init_params(tiny_config(), vocab, np.random.default_rng(0), {"teacher": np.zeros(5)})


def test_clip_examples():
    g = {"a": np.array([2.0, 0.0])}
    clip_gradients(g, 5.0)
    assert np.array_equal(g["a"], [2.0, 0.0])
    g = {"a": np.array([6.0, 8.0])}
    clip_gradients(g, 5.0)
    assert global_norm(g) == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(g["a"], [3.0, 4.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_clip_bound(seed, scale):
    rng = np.random.default_rng(seed)
    g = {k: rng.normal(scale=scale, size=rng.integers(1, 20)) for k in "abc"}
    clip_gradients(g, 5.0)
    assert global_norm(g) <= 5.0 + 1e-12


def test_clip_reports_nan_parameter():
    with pytest.raises(TrainingDivergenceError, match="lstm.0.fw.Wx"):
        clip_gradients({"mlp.W": np.zeros(2), "lstm.0.fw.Wx": np.array([np.nan])})


def test_adam_zero_gradient():
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState.for_params(params)
    state.m["w"][:] = 0.4
    state.v["w"][:] = 0.2
    fresh = OptimizerState.for_params(params)
    adam_step(params, {"w": np.zeros(2)}, fresh)
    assert np.array_equal(params["w"], [1.0, -2.0])
    adam_step(params, {"w": np.zeros(2)}, state)
    assert np.allclose(state.m["w"], 0.36) and np.allclose(state.v["w"], 0.18)


def test_adam_first_step_is_rate_sized():
    params = {"w": np.array([0.0])}
    state = OptimizerState.for_params(params)
    lr = adam_step(params, {"w": np.array([3.0])}, state, epoch=10)
    assert lr == 0.001
    assert params["w"][0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_scalar_convergence():
    params = {"t": np.zeros(1)}
    state = OptimizerState.for_params(params)
    reached = False
    for _ in range(2000):
        adam_step(params, {"t": 2 * (params["t"] - 3.0)}, state, 0)
        reached = reached or abs(params["t"][0] - 3.0) < 1e-3
    assert reached


def test_epoch_record_roundtrip():
    record = EpochRecord(7, 1.234567, 88.5, 80.25, 0.0005)
    line = record.line()
    assert line == "epoch=7 loss=1.234567 dev_uas=88.5000 dev_las=80.2500 lr=0.0005"
    assert EpochRecord.parse(line) == record


def test_reproducible_first_epoch(tiny10):
    losses = []
    for _ in range(2):
        model = tiny_model()
        result = train(model, tiny10, None, quick_config(epochs=1), np.random.default_rng(5))
        losses.append(result.log[0].loss)
    assert losses[0] == losses[1]


@pytest.mark.parametrize("objective", ["global_likelihood", "cross_entropy"])
def test_training_runs_and_logs(tiny10, objective):
    model = tiny_model()
    result = train(model, tiny10, tiny10[:4], quick_config(epochs=3, objective=objective),
                   np.random.default_rng(0))
    assert [r.epoch for r in result.log] == [1, 2, 3]
    assert all(math.isfinite(r.loss) and r.loss >= 0 for r in result.log)
    assert [r.lr for r in result.log] == [0.002] * 3
    assert result.best_las == max(r.dev_las for r in result.log)
    assert result.log[result.best_epoch - 1].dev_las == result.best_las


def test_best_checkpoint_is_restored(tiny10, tmp_path):
    model = tiny_model()
    path = tmp_path / "model.npz"
    result = train(model, tiny10, tiny10[:3], quick_config(epochs=3, checkpoint_path=str(path)),
                   np.random.default_rng(1))
    loaded, meta = load_checkpoint(path)
    assert len(meta["log"]) == 3
    for k, v in model.params.items():
        assert np.array_equal(loaded.params[k], v)
    assert result.best_epoch in (1, 2, 3)


def test_gradient_flow_after_one_batch(tiny10):
    model = tiny_model()
    encoded = [encode_ids(s, model.vocab) for s in tiny10[:4]]
    golds = [gold_tree(s, model.vocab) for s in tiny10[:4]]
    _, grads = model.batch_loss_and_grads(encoded, golds, rng=np.random.default_rng(0))
    for name, g in grads.items():
        assert g.any(), name


def bad_sentence():
    return Sentence.from_forms(["a", "b"], ["DT", "NN"], [2, 1], ["det", "nsubj"])


def test_invalid_gold_skip_or_abort(tiny10):
    data = list(tiny10) + [bad_sentence()]
    model = tiny_model(sentences=data)
    train(model, data, None, quick_config(epochs=1), np.random.default_rng(0))
    with pytest.raises(InvalidTreeError):
        train(tiny_model(sentences=data), data, None,
              quick_config(epochs=1, on_invalid_tree="abort"), np.random.default_rng(0))


def test_max_length_filters_training_sentences(tiny10):
    result = train(tiny_model(), tiny10, None, quick_config(epochs=1, max_length=8),
                   np.random.default_rng(0))
    assert result.log[0].loss > 0
    with pytest.raises(ValueError):
        train(tiny_model(), tiny10, None, quick_config(epochs=1, max_length=1),
              np.random.default_rng(0))


def test_checkpoint_roundtrip_and_errors(tmp_path, tiny10):
    model = tiny_model()
    path = tmp_path / "m.npz"
    save_checkpoint(path, model, TrainConfig(), [EpochRecord(1, 1.0, 50.0, 40.0, 0.002)])
    loaded, meta = load_checkpoint(path)
    assert meta["version"] == 1 and meta["train"]["batch_size"] == 32
    assert loaded.vocab.labels == model.vocab.labels
    assert loaded.config == model.config
    sent = tiny10[0]
    assert np.array_equal(loaded.edge_scores(loaded.encode(sent)).s,
                          model.edge_scores(model.encode(sent)).s)

    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not an archive")
    with pytest.raises(CheckpointError):
        load_checkpoint(junk)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")

    broken = copy.deepcopy(model)
    broken.params["mlp.W"] = np.zeros((2, 2))
    save_checkpoint(tmp_path / "b.npz", broken)
    with pytest.raises(CheckpointError, match="mlp.W"):
        load_checkpoint(tmp_path / "b.npz")


def test_checkpoint_version_mismatch(tmp_path, monkeypatch):
    import treecrf_parser.trainer as trainer_module
    model = tiny_model()
    monkeypatch.setattr(trainer_module, "CHECKPOINT_VERSION", 99)
    save_checkpoint(tmp_path / "v.npz", model)
    monkeypatch.setattr(trainer_module, "CHECKPOINT_VERSION", 1)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.npz")


def test_fixture_corpus_sizes():
    assert len(read_conllx(FIXTURES / "synthetic_train50.conllx")) == 50
    assert len(read_conllx(FIXTURES / "tiny10.conllx")) == 10
