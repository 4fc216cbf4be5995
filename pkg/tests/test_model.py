"""Set embedding model: pooling, box construction, the seven-ratio loss, training."""

import math

import numpy as np
import pytest

from set2box import autodiff as ad
from set2box.autodiff import Tape, softplus_value
from set2box.boxes import Box, hard_volume
from set2box.corpus import SetCorpus
from set2box.datasets import make_random_corpus, planted_corpus
from set2box.errors import ArtifactError, ConfigError
from set2box.model import (
    EntityEmbeddings,
    TrainConfig,
    embed_set,
    embed_sets,
    estimate_similarity,
    graph_batch_loss,
    graph_embed_sets,
    graph_triple_ratio_loss,
    ratio_table,
    scp_pool,
    train,
    triple_loss,
)
from set2box.optim import gradcheck


def all_train(corpus):
    return SetCorpus(
        corpus.members, corpus.offsets, corpus.num_entities,
        split=np.zeros(corpus.n_sets, dtype=np.int8),
    )


class TestScpPool:
    def test_singleton_returns_its_row(self, rng):
        rows = rng.normal(size=(1, 6))
        np.testing.assert_array_equal(scp_pool(rows, rng.normal(size=6)), rows[0])

    def test_equal_rows_return_the_row(self):
        v = np.array([0.3, -1.2, 0.8])
        rows = np.tile(v, (4, 1))
        np.testing.assert_allclose(scp_pool(rows, np.array([1.0, 0.0, 2.0])), v, rtol=1e-15)

    def test_two_member_hand_computation(self):
        rows = np.array([[1.0, 0.0], [0.0, 2.0]])
        ctx = np.array([0.5, -0.25])
        # stage one: scores against the context
        e0, e1 = math.exp(0.5), math.exp(-0.5)
        a0, a1 = e0 / (e0 + e1), e1 / (e0 + e1)
        b = [a0 * 1.0, a1 * 2.0]
        # stage two: scores against the pooled summary
        f0, f1 = math.exp(b[0]), math.exp(2 * b[1])
        w0, w1 = f0 / (f0 + f1), f1 / (f0 + f1)
        np.testing.assert_allclose(scp_pool(rows, ctx), [w0 * 1.0, w1 * 2.0], rtol=1e-12)

    def test_output_in_convex_hull(self, rng):
        rows = rng.normal(size=(7, 5))
        out = scp_pool(rows, rng.normal(size=5))
        assert np.all(out >= rows.min(axis=0) - 1e-12)
        assert np.all(out <= rows.max(axis=0) + 1e-12)


class TestEmbedSets:
    def test_singleton_set_uses_entity_rows(self, rng):
        emb = EntityEmbeddings.init(5, 3, beta=2.0, rng=rng)
        corpus = SetCorpus([2], [0, 1], num_entities=5)
        box = embed_set(emb, corpus, 0)
        np.testing.assert_array_equal(box.center, emb.store["q_center"][2].astype(np.float64))
        want = softplus_value(emb.store["q_offset_raw"][2], 1.0)
        np.testing.assert_array_equal(box.offset, want.astype(np.float64))

    def test_size_16_d4_scales_offsets_by_2(self, rng):
        emb = EntityEmbeddings.init(16, 4, beta=2.0, rng=rng)
        emb.store["q_offset_raw"][:] = emb.store["q_offset_raw"][0]
        big = SetCorpus(np.arange(16), [0, 16], num_entities=16)
        one = SetCorpus([0], [0, 1], num_entities=16)
        f_big = embed_set(emb, big, 0).offset
        f_one = embed_set(emb, one, 0).offset
        np.testing.assert_allclose(f_big, 2.0 * f_one, rtol=1e-6)
        # volume grows by the set size: scale^d = (|s|^(1/d))^d
        c_big = embed_set(emb, big, 0)
        v_scaled = hard_volume(c_big.mins, c_big.maxs)
        v_plain = hard_volume(c_big.center - f_one, c_big.center + f_one)
        np.testing.assert_allclose(v_scaled / v_plain, 16.0, rtol=1e-5)

    def test_offsets_strictly_positive(self, rng):
        emb = EntityEmbeddings.init(30, 4, beta=2.0, rng=rng)
        corpus = make_random_corpus(num_sets=20, num_entities=30, seed=1)
        _, offsets = embed_sets(emb, corpus)
        assert np.all(offsets > 0)

    def test_graph_path_matches_inference_path(self, rng):
        emb = EntityEmbeddings.init(25, 4, beta=2.0, rng=rng)
        corpus = make_random_corpus(num_sets=15, num_entities=25, seed=2)
        ids = np.arange(corpus.n_sets)
        tape = Tape()
        c_node, f_node = graph_embed_sets(emb.store.leaves(tape), corpus, ids)
        c_arr, f_arr = embed_sets(emb, corpus, ids)
        np.testing.assert_array_equal(c_node.value, c_arr)
        np.testing.assert_array_equal(f_node.value, f_arr)


def leaf_slots(tape, boxes):
    slots = []
    for c, f in boxes:
        slots.append((
            tape.leaf(np.asarray(c, dtype=np.float64).reshape(1, -1)),
            tape.leaf(np.asarray(f, dtype=np.float64).reshape(1, -1)),
        ))
    return slots


class TestTripleRatioLoss:
    def test_identical_boxes_on_identical_profile(self):
        tape = Tape()
        slots = leaf_slots(tape, [([0.0, 0.0], [1.0, 1.0])] * 3)
        ratios = np.full((1, 7), 1 / 7)
        loss = graph_triple_ratio_loss(slots, ratios, beta=2.0)
        assert abs(float(loss.value[0])) < 1e-12

    def test_one_dominant_volume_approaches_42_49(self):
        """p=(1/7,..), p_hat -> (1,0,..,0): loss -> (6/7)^2 + 6*(1/7)^2."""
        tape = Tape()
        slots = leaf_slots(tape, [
            ([0.0, 0.0], [500.0, 500.0]),          # volume ~1e6
            ([1e4, 1e4], [1e-3, 1e-3]),            # tiny, far away
            ([-2e4, 2e4], [1e-3, 1e-3]),
        ])
        ratios = np.full((1, 7), 1 / 7)
        loss = graph_triple_ratio_loss(slots, ratios, beta=2.0)
        assert abs(float(loss.value[0]) - 42 / 49) < 1e-4

    def test_invariant_to_common_volume_scale(self):
        # saturated softplus: all edges huge, so volumes scale exactly with t^d
        base = [
            ([50.0, 50.0], [50.0, 50.0]),
            ([60.0, 55.0], [55.0, 60.0]),
            ([45.0, 50.0], [48.0, 42.0]),
        ]
        ratios = np.array([[0.3, 0.2, 0.1, 0.15, 0.1, 0.1, 0.05]])
        vals = []
        for t in (1.0, 3.0):
            tape = Tape()
            slots = leaf_slots(tape, [(np.array(c) * t, np.array(f) * t) for c, f in base])
            vals.append(float(graph_triple_ratio_loss(slots, ratios, beta=2.0).value[0]))
        assert vals[0] == pytest.approx(vals[1], rel=1e-12)

    def test_bounded_by_two(self, rng):
        for _ in range(20):
            tape = Tape()
            slots = leaf_slots(tape, [
                (rng.normal(size=3), rng.uniform(0.1, 2.0, size=3)) for _ in range(3)
            ])
            p = rng.dirichlet(np.ones(7)).reshape(1, 7)
            val = float(graph_triple_ratio_loss(slots, p, beta=2.0).value[0])
            assert 0.0 <= val <= 2.0

    def test_ratio_mean_divides_by_seven(self):
        tape = Tape()
        slots = leaf_slots(tape, [
            ([0.0, 0.0], [1.0, 1.0]),
            ([2.0, 0.0], [0.5, 0.5]),
            ([0.0, 2.0], [0.5, 0.5]),
        ])
        p = np.full((1, 7), 1 / 7)
        a = float(graph_triple_ratio_loss(slots, p, beta=2.0).value[0])
        tape = Tape()
        slots = leaf_slots(tape, [
            ([0.0, 0.0], [1.0, 1.0]),
            ([2.0, 0.0], [0.5, 0.5]),
            ([0.0, 2.0], [0.5, 0.5]),
        ])
        b = float(graph_triple_ratio_loss(slots, p, beta=2.0, ratio_mean=True).value[0])
        assert b == pytest.approx(a / 7)


def test_batch_loss_gradcheck():
    corpus = SetCorpus([0, 1, 2, 1, 3, 2, 4, 5, 0, 5], [0, 3, 5, 7, 8, 10], num_entities=6)
    ids = np.array([[0, 1, 2], [2, 3, 4]])
    ratios = ratio_table(corpus, ids, dtype=np.float64)
    r = np.random.default_rng(7)
    params = {
        "q_center": r.normal(0, 0.3, size=(6, 3)),
        "q_offset_raw": r.normal(0, 0.3, size=(6, 3)),
        "ctx_center": r.normal(0, 0.3, size=3),
        "ctx_offset": r.normal(0, 0.3, size=3),
    }
    report = gradcheck(
        lambda lv: graph_batch_loss(lv, corpus, ids, ratios, beta=2.0),
        params,
    )
    assert report.passed, report


class TestTrain:
    def test_planted_corpus_loss_halves(self):
        corpus = all_train(planted_corpus(
            num_clusters=4, sets_per_cluster=5, core_size=6, noise_size=2,
            num_entities=100, seed=3,
        ))
        cfg = TrainConfig(d=4, beta=2.0, lr=0.01, epochs=200, seed=1)
        _, history = train(corpus, cfg)
        assert len(history) == 200
        assert history[-1].mean_loss < 0.5 * history[0].mean_loss

    def test_zero_epochs_is_a_no_op(self, small_split_corpus, rng):
        emb = EntityEmbeddings.init(small_split_corpus.num_entities, 4, 2.0, rng)
        before = {k: v.copy() for k, v in emb.store.items()}
        out, history = train(small_split_corpus, TrainConfig(d=4, epochs=0), emb=emb)
        assert history == []
        for k, v in before.items():
            np.testing.assert_array_equal(out.store[k], v)

    def test_same_seed_is_bitwise_identical(self, small_split_corpus):
        cfg = TrainConfig(d=4, beta=2.0, lr=0.01, epochs=3, seed=11)
        emb_a, _ = train(small_split_corpus, cfg)
        emb_b, _ = train(small_split_corpus, cfg)
        for name in EntityEmbeddings.PARAM_NAMES:
            np.testing.assert_array_equal(emb_a.store[name], emb_b.store[name])

    def test_triple_loss_scalar_matches_batch(self, small_split_corpus, rng):
        emb = EntityEmbeddings.init(small_split_corpus.num_entities, 4, 2.0, rng)
        val = triple_loss(emb, small_split_corpus, (0, 1, 2))
        assert np.isfinite(val) and 0.0 <= val <= 2.0


class TestModelFile:
    def test_roundtrip_is_bitwise(self, tmp_path, rng):
        emb = EntityEmbeddings.init(12, 5, beta=4.0, rng=rng)
        p = tmp_path / "m.s2b"
        emb.save(p)
        back = EntityEmbeddings.load(p)
        assert (back.num_entities, back.d, back.beta) == (12, 5, 4.0)
        for name in EntityEmbeddings.PARAM_NAMES:
            np.testing.assert_array_equal(back.store[name], emb.store[name])

    def test_bad_magic_rejected(self, tmp_path, rng):
        emb = EntityEmbeddings.init(3, 2, beta=2.0, rng=rng)
        p = tmp_path / "m.s2b"
        emb.save(p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XXXX"
        p.write_bytes(bytes(raw))
        with pytest.raises(ArtifactError):
            EntityEmbeddings.load(p)

    def test_truncation_rejected(self, tmp_path, rng):
        emb = EntityEmbeddings.init(3, 2, beta=2.0, rng=rng)
        p = tmp_path / "m.s2b"
        emb.save(p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(ArtifactError):
            EntityEmbeddings.load(p)


class TestEstimateSimilarity:
    def test_hard_volume_substitution(self):
        a = Box.from_bounds([0.0, 0.0], [2.0, 1.0])   # volume 2
        b = Box.from_bounds([1.0, 0.0], [3.0, 1.0])   # volume 2, overlap 1
        assert estimate_similarity(a, b, "ji", beta=None) == pytest.approx(1 / 3)
        assert estimate_similarity(a, b, "di", beta=None) == pytest.approx(0.5)
        assert estimate_similarity(a, b, "oc", beta=None) == pytest.approx(0.5)
        assert estimate_similarity(a, b, "cs", beta=None) == pytest.approx(0.5)

    def test_identical_boxes_are_fully_similar(self):
        b = Box.from_bounds([0.0, 1.0], [2.0, 3.0])
        for m in ("oc", "cs", "ji", "di"):
            assert estimate_similarity(b, b, m, beta=None) == 1.0

    def test_symmetric(self, rng):
        a = Box(rng.normal(size=3), rng.uniform(0.2, 1.0, size=3))
        b = Box(rng.normal(size=3), rng.uniform(0.2, 1.0, size=3))
        for m in ("oc", "cs", "ji", "di"):
            assert estimate_similarity(a, b, m, 2.0) == estimate_similarity(b, a, m, 2.0)


@pytest.mark.parametrize(
    "field, value",
    [("d", 0), ("beta", 0.0), ("lr", -1.0), ("batch_size", 0), ("epochs", -1)],
)
def test_config_validation(field, value):
    cfg = TrainConfig(**{field: value})
    with pytest.raises(ConfigError):
        cfg.validate()
