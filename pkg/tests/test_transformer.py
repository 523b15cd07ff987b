import copy
import math

import numpy as np
import pytest

from dualsource import tensor as T
from dualsource.batching import Batch
from dualsource.transformer import PRESETS, DualSourceConfig, DualSourceModel, config_from_dict

TOY = PRESETS["toy"]


def random_batch(rng, vocab, rows=3):
    def ids(lo, hi):
        lens = rng.integers(lo, hi + 1, size=rows)
        out = np.zeros((rows, hi), dtype=np.int64)
        mask = np.zeros((rows, hi), dtype=bool)
        for i, n in enumerate(lens):
            out[i, :n] = rng.integers(5, vocab, size=n)
            mask[i, :n] = True
        return out, mask

    art, art_m = ids(3, 7)
    prop, prop_m = ids(1, 3)
    tgt, tgt_m = ids(2, 5)
    dec_in = np.concatenate([np.ones((rows, 1), dtype=np.int64), tgt[:, :-1]], axis=1)
    return Batch(art, art_m, prop, prop_m, dec_in, tgt, tgt_m, [(str(i),) for i in range(rows)])


def grads_of(model, batch):
    for p in model.parameters():
        p.zero_grad()
    with T.Tape() as tape:
        loss = model.loss(batch)
    tape.backward(loss)
    return {p.name: p.grad.copy() for p in model.parameters()}, loss.item()


def test_encoder_parameters_are_shared():
    model = DualSourceModel(TOY, seed=0)
    enc = {id(p) for p in model.encoder.parameters()}
    assert enc == {id(p) for p in model.property_encoder.parameters()}
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names))
    assert sum(n.startswith("encoder.") for n in names) == len(enc)


def test_identical_sources_give_identical_states():
    model = DualSourceModel(TOY, seed=1)
    ids = [7, 9, 11, 13]
    a, p = model.encode_pair(ids, ids)
    np.testing.assert_array_equal(a, p)
    assert a.shape == (4, TOY.model_dim)


def test_shared_gradient_is_sum_of_two_copies(rng):
    model = DualSourceModel(TOY, seed=2)
    batch = random_batch(rng, TOY.vocab_size)
    shared, loss_shared = grads_of(model, batch)

    twin = DualSourceModel(TOY, seed=2)
    twin.property_encoder = copy.deepcopy(twin.encoder)
    for p in twin.property_encoder.parameters():
        p.name = "copy." + p.name
    split, loss_split = grads_of(twin, batch)
    assert loss_split == pytest.approx(loss_shared, rel=1e-12)
    for name, g in shared.items():
        expected = split[name] + split.get("copy." + name, 0.0)
        np.testing.assert_allclose(g, expected, rtol=1e-9, atol=1e-12, err_msg=name)


def test_output_projection_is_tied_to_embedding(rng):
    model = DualSourceModel(TOY, seed=3)
    assert not any("output" in p.name or "proj_out" in p.name for p in model.parameters())
    batch = random_batch(rng, TOY.vocab_size)
    enc = model.encode_sources(batch.article, batch.article_mask, batch.properties, batch.properties_mask)
    before = model.decode(batch.decoder_in, enc).data.copy()
    model.embedding.data[:, :] *= 1.5
    enc = model.encode_sources(batch.article, batch.article_mask, batch.properties, batch.properties_mask)
    assert not np.allclose(model.decode(batch.decoder_in, enc).data, before)


def test_decoder_is_causal(rng):
    model = DualSourceModel(TOY, seed=4)
    batch = random_batch(rng, TOY.vocab_size, rows=2)
    enc = model.encode_sources(batch.article, batch.article_mask, batch.properties, batch.properties_mask)
    dec = np.array([[1, 8, 9, 10, 11], [1, 12, 13, 14, 15]])
    base = model.decode(dec, enc).data
    for t in range(1, dec.shape[1]):
        changed = dec.copy()
        changed[:, t:] = 20
        out = model.decode(changed, enc).data
        np.testing.assert_allclose(out[:, :t], base[:, :t], rtol=1e-10, atol=1e-12)
        assert not np.allclose(out[:, t:], base[:, t:])


def test_encoder_without_positions_is_permutation_equivariant(rng):
    model = DualSourceModel(TOY, seed=5)
    ids = np.array([6, 17, 23, 31, 42])
    props = [9, 10]
    a, _ = model.encode_pair(ids, props, use_positions=False)
    for _ in range(5):
        perm = rng.permutation(len(ids))
        b, _ = model.encode_pair(ids[perm], props, use_positions=False)
        np.testing.assert_allclose(b, a[perm], rtol=1e-9, atol=1e-12)
    c, _ = model.encode_pair(ids[::-1], props, use_positions=True)
    assert not np.allclose(c, a[::-1])


def test_logit_shapes(rng):
    model = DualSourceModel(TOY, seed=6)
    batch = random_batch(rng, TOY.vocab_size, rows=4)
    enc = model.encode_sources(batch.article, batch.article_mask, batch.properties, batch.properties_mask)
    assert enc.article.shape == batch.article.shape + (TOY.model_dim,)
    assert enc.properties.shape == batch.properties.shape + (TOY.model_dim,)
    assert model.decode(batch.decoder_in, enc).shape == batch.decoder_in.shape + (TOY.vocab_size,)
    scores = model.scorer([6, 7, 8], [9])([(), (10,), (10, 11)])
    assert scores.shape == (3, TOY.vocab_size)
    np.testing.assert_allclose(np.exp(scores).sum(axis=1), 1.0, atol=1e-9)


def test_initial_loss_is_near_uniform(rng):
    cfg = DualSourceConfig(model_dim=32, heads=4, ffn_dim=64, depth=2, vocab_size=400, dtype="float64")
    losses = [DualSourceModel(cfg, seed=s).loss(random_batch(rng, cfg.vocab_size, rows=8)).item() for s in range(3)]
    assert abs(np.mean(losses) - math.log(cfg.vocab_size)) <= 0.05 * math.log(cfg.vocab_size)


def test_loss_trace_is_deterministic(rng):
    batch = random_batch(rng, TOY.vocab_size)

    def trace():
        model = DualSourceModel(TOY, seed=8)
        params = list(model.parameters())
        states = [T.AdamState.like(p) for p in params]
        out = []
        for _ in range(5):
            out.append(grads_of(model, batch)[1])
            T.adam_step(params, states, lr=1e-2)
        return out

    a, b = trace(), trace()
    assert a == b
    assert a[-1] < a[0]


def test_long_articles_are_truncated_with_warning():
    cfg = DualSourceConfig(model_dim=16, heads=2, ffn_dim=32, depth=1, vocab_size=50, max_positions=8, dtype="float64")
    model = DualSourceModel(cfg, seed=0)
    warnings = {}
    art, prop = model.encode_pair(list(range(5, 25)), list(range(5, 17)), warnings=warnings)
    assert art.shape[0] == 8
    assert prop.shape[0] == 12
    assert warnings == {"truncated_articles": 1}
    with pytest.raises(ValueError):
        model.encode_pair([], [5])


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        DualSourceConfig(model_dim=30, heads=4)
    with pytest.raises(ValueError):
        DualSourceConfig(depth=0)
    with pytest.raises(ValueError):
        DualSourceConfig(cross_order=("article", "article"))
    cfg = DualSourceConfig(cross_order=["article", "property"])
    assert config_from_dict(cfg.to_dict()) == cfg


def test_state_roundtrip_and_shape_check():
    a, b = DualSourceModel(TOY, seed=0), DualSourceModel(TOY, seed=1)
    b.load_state(a.state())
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    bad = dict(a.state())
    bad["embedding"] = bad["embedding"][:-1]
    with pytest.raises(ValueError):
        b.load_state(bad)
    with pytest.raises(KeyError):
        b.load_state({})
