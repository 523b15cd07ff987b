import math

import numpy as np
import pytest

from dualsource import tensor as T
from dualsource.batching import pad
from dualsource.metrics import evaluate
from dualsource.recycler import MultiPropertyRecord
from dualsource.seq2seq import (
    SEQ2SEQ_PRESETS,
    BasicSeq2Seq,
    LSTMLayer,
    Seq2SeqConfig,
    Seq2SeqExample,
    build_seq2seq_examples,
    collate_seq2seq,
    lstm_cell_step,
)
from dualsource.tensor import Parameter
from dualsource.tokenize import EOS, SEP, BOS, baseline_normalize, train_subword
from dualsource.training import TrainConfig, Trainer, TrainingDiverged
from dualsource.pipeline import fit_truecaser

TOY = SEQ2SEQ_PRESETS["toy"]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_zero_weights_keep_state_at_zero():
    hid = 3
    h, c = lstm_cell_step(T.constant(np.zeros((2, 4 * hid))), T.constant(np.zeros((2, hid))), T.constant(np.zeros((2, hid))))
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_open_forget_closed_input_keeps_cell():
    hid = 2
    c0 = np.array([[0.3, -0.7]])
    gates = np.zeros((1, 4 * hid))
    gates[0, :hid] = -50.0  # input gate shut
    gates[0, hid:2 * hid] = 50.0  # forget gate open
    gates[0, 2 * hid:3 * hid] = 0.9
    h, c = lstm_cell_step(T.constant(gates), T.constant(np.zeros((1, hid))), T.constant(c0))
    np.testing.assert_allclose(c.data, c0, atol=1e-12)
    np.testing.assert_allclose(h.data, sigmoid(0.0) * np.tanh(c0), atol=1e-12)


def test_cell_step_matches_textbook_formula(rng):
    hid = 4
    gates, h0, c0 = rng.normal(size=(3, 4 * hid)), rng.normal(size=(3, hid)), rng.normal(size=(3, hid))
    i, f, g, o = (gates[:, k * hid:(k + 1) * hid] for k in range(4))
    c_ref = sigmoid(f) * c0 + sigmoid(i) * np.tanh(g)
    h_ref = sigmoid(o) * np.tanh(c_ref)
    h, c = lstm_cell_step(T.constant(gates), T.constant(h0), T.constant(c0))
    np.testing.assert_allclose(c.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(h.data, h_ref, rtol=1e-12)


def test_masked_rows_carry_state(rng):
    hid = 3
    h0, c0 = rng.normal(size=(2, hid)), rng.normal(size=(2, hid))
    h, c = lstm_cell_step(T.constant(rng.normal(size=(2, 4 * hid))), T.constant(h0), T.constant(c0), np.array([1, 0]))
    np.testing.assert_array_equal(h.data[1], h0[1])
    np.testing.assert_array_equal(c.data[1], c0[1])
    assert not np.allclose(h.data[0], h0[0])


def test_gradient_through_five_unrolled_steps(rng):
    layer = LSTMLayer("l", 3, 4, rng, np.float64)
    xs = [T.constant(rng.normal(size=(2, 3))) for _ in range(5)]
    probe = rng.normal(size=(2, 4))

    def loss():
        h = c = T.constant(np.zeros((2, 4)))
        for x in xs:
            h, c = layer.step(x, h, c)
        return T.sum_all(T.mul(h, T.constant(probe)))

    result = T.grad_check(loss, list(layer.parameters()))
    assert result.passed, result.failures


def test_forget_bias_starts_open():
    layer = LSTMLayer("l", 2, 3, np.random.default_rng(0), np.float64)
    np.testing.assert_array_equal(layer.bias.data[3:6], 1.0)
    np.testing.assert_array_equal(np.delete(layer.bias.data, range(3, 6)), 0.0)


def test_logit_shapes_and_scorer_agree(rng):
    model = BasicSeq2Seq(TOY, seed=0)
    src, src_m = pad([[5, 6, 7], [8, 9]])
    ex = [Seq2SeqExample([5, 6, 7], [10, 11, EOS]), Seq2SeqExample([8, 9], [12, EOS])]
    batch = collate_seq2seq(ex)
    logits = model.logits(batch).data
    assert logits.shape == (2, 3, TOY.vocab_size)
    # teacher-forced logits match incremental scoring for the unpadded row
    scores = model.scorer([5, 6, 7])([(), (10,), (10, 11)])
    ref = logits[0] - np.logaddexp.reduce(logits[0], axis=1, keepdims=True)
    np.testing.assert_allclose(scores, ref, rtol=1e-9, atol=1e-12)


def test_padding_does_not_change_encoding():
    model = BasicSeq2Seq(TOY, seed=1)
    alone = model.encode(np.array([[5, 6]]), np.ones((1, 2), bool))
    src, mask = pad([[5, 6], [7, 8, 9, 10]])
    padded = model.encode(src, mask)
    for (h1, c1), (h2, c2) in zip(alone, padded):
        np.testing.assert_allclose(h2.data[0], h1.data[0], rtol=1e-12)
        np.testing.assert_allclose(c2.data[0], c1.data[0], rtol=1e-12)


def test_examples_are_lowercased_per_property():
    recs = [MultiPropertyRecord("a", "Born in Paris.", {"Place Of Birth": ["Paris"], "sex": ["female"]})]
    sp = train_subword(["born in paris .", "place of birth", "paris", "sex female"], 300)
    ex = build_seq2seq_examples(recs, sp)
    assert [e.key for e in ex] == [("a", "Place Of Birth"), ("a", "sex")]
    assert sp.decode(ex[0].source) == "place of birth<sep>born in paris ."
    assert SEP in ex[0].source
    assert sp.decode(ex[0].target[:-1]) == "paris" and ex[0].target[-1] == EOS
    batch = collate_seq2seq(ex)
    assert (batch.decoder_in[:, 0] == BOS).all()


def test_config_validation():
    with pytest.raises(ValueError):
        Seq2SeqConfig(patience=0)
    with pytest.raises(ValueError):
        Seq2SeqConfig(validation_interval=0)
    with pytest.raises(ValueError):
        Seq2SeqConfig(layers=0)


def noise_examples(seed, n):
    rng = np.random.default_rng(seed)
    return [Seq2SeqExample(list(rng.integers(5, 50, 4)), list(rng.integers(5, 50, 3)) + [EOS]) for _ in range(n)]


def test_stop_rule_with_flat_validation(tmp_path):
    # a zero learning rate keeps the validation loss flat, so patience 1 stops at the second check
    cfg = TrainConfig(lr=0.0, max_tokens=64, max_steps=100, validation_interval=1, patience=1)
    trainer = Trainer(BasicSeq2Seq(TOY, 0), noise_examples(0, 20), noise_examples(1, 8), collate_seq2seq, cfg,
                      outdir=tmp_path, use_dropout=False)
    res = trainer.fit()
    assert res.stop_reason == "patience"
    assert len(res.validations) == 2
    assert res.best.valid_loss <= res.final.valid_loss
    assert (tmp_path / "best.bin").exists() and (tmp_path / "train_log.jsonl").exists()


def test_stop_rule_on_unfittable_corpus():
    cfg = TrainConfig(lr=3e-2, max_tokens=64, max_steps=400, validation_interval=1, patience=1)
    res = Trainer(BasicSeq2Seq(TOY, 0), noise_examples(2, 20), noise_examples(3, 8), collate_seq2seq, cfg,
                  use_dropout=False).fit()
    assert res.stop_reason == "patience"
    vals = [v for _, v in res.validations]
    assert vals[-1] >= min(vals[:-1])
    assert all(b < a for a, b in zip(vals[:-2], vals[1:-1]))
    assert res.best.valid_loss == min(vals) <= res.final.valid_loss


def test_target_loss_and_callback_stop():
    cfg = TrainConfig(lr=1e-2, max_tokens=64, max_steps=50, validation_interval=5, patience=50, target_loss=100.0)
    res = Trainer(BasicSeq2Seq(TOY, 0), noise_examples(0, 10), noise_examples(1, 4), collate_seq2seq, cfg,
                  use_dropout=False).fit()
    assert res.stop_reason == "target_loss" and res.steps == 5
    cfg.target_loss = None
    res = Trainer(BasicSeq2Seq(TOY, 0), noise_examples(0, 10), noise_examples(1, 4), collate_seq2seq, cfg,
                  use_dropout=False).fit(lambda step, vl: step >= 10)
    assert res.stop_reason == "callback" and res.steps == 10


class NaNModel:
    def __init__(self):
        self.w = Parameter(np.zeros(2), "w")

    def parameters(self):
        return [self.w]

    def loss(self, batch, rng=None, label_smoothing=None):
        return T.sum_all(T.scale(self.w, math.nan))

    def state(self):
        return {"w": self.w.data}

    def load_state(self, arrays):
        self.w.data[...] = arrays["w"]


def test_repeated_nan_losses_raise_divergence():
    cfg = TrainConfig(lr=1.0, max_tokens=64, max_steps=100)
    trainer = Trainer(NaNModel(), noise_examples(0, 4), [], collate_seq2seq, cfg, use_dropout=False)
    with pytest.raises(TrainingDiverged):
        trainer.fit()
    assert trainer.nan_steps == 10
    assert trainer.opt.lr == pytest.approx(1.0 / 2 ** 10)
    np.testing.assert_array_equal(trainer.model.w.data, 0.0)


def test_truecasing_leaves_scores_unchanged():
    recs = [
        MultiPropertyRecord("1", "Anna Nowak lives in New York.", {"residence": ["New York"], "name": ["Anna Nowak"]}),
        MultiPropertyRecord("2", "Piotr was born in Paris, France.", {"pob": ["Paris"], "country": ["France", "USA"]}),
    ]
    tc = fit_truecaser(recs)
    golds = {r.article_id: r.properties for r in recs}
    lowered = {a: {k: [baseline_normalize(v) for v in vs] for k, vs in p.items()} for a, p in golds.items()}
    lowered["2"]["country"] = ["france", "spain"]
    cased = {a: {k: [tc.apply(v) for v in vs] for k, vs in p.items()} for a, p in lowered.items()}
    assert cased["1"]["residence"] == ["New York"]
    a, b = evaluate(lowered, golds), evaluate(cased, golds)
    assert (a.mean_f1, a.mean_multilabel_f1, a.per_label) == (b.mean_f1, b.mean_multilabel_f1, b.per_label)
