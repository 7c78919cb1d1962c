"""Metrics: top-k with documented tie-breaks, confusion, similarity, concat."""

import numpy as np
import pytest

from cafkt.errors import DimensionError
from cafkt.evaluation import (
    RoundRecord,
    RunMetrics,
    concat_classifiers,
    confusion_matrix,
    mean_abs_off_diagonal,
    predictions,
    topk_accuracy,
    weight_self_similarity,
)
from cafkt.model import ClassifierWeights


class TestTopK:
    def test_k_equals_c_is_always_one(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((10, 4))
        labels = rng.integers(0, 4, 10)
        assert topk_accuracy(logits, labels, 4) == 1.0

    def test_hand_ranking(self):
        logits = np.array([[2.0, 1.0, 0.0]])
        assert topk_accuracy(logits, [1], 1) == 0.0
        assert topk_accuracy(logits, [1], 2) == 1.0

    def test_tie_break_prefers_lowest_index(self):
        logits = np.zeros((1, 5))
        assert topk_accuracy(logits, [0], 1) == 1.0
        assert topk_accuracy(logits, [1], 1) == 0.0
        assert predictions(logits)[0] == 0

    def test_top5_at_least_top1(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((50, 8))
        labels = rng.integers(0, 8, 50)
        t1 = topk_accuracy(logits, labels, 1)
        t5 = topk_accuracy(logits, labels, 5)
        assert 0.0 <= t1 <= t5 <= 1.0

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            topk_accuracy(np.zeros((1, 3)), [0], 0)
        with pytest.raises(ValueError):
            topk_accuracy(np.zeros((1, 3)), [0], 4)


class TestConfusion:
    def test_perfect_predictor_is_diagonal(self):
        labels = np.array([0, 1, 2, 2, 1])
        m = confusion_matrix(labels, labels, 3)
        np.testing.assert_array_equal(m, np.diag([1, 2, 2]))

    def test_total_conservation(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 6, 200)
        preds = rng.integers(0, 6, 200)
        m = confusion_matrix(preds, labels, 6)
        assert m.sum() == 200
        np.testing.assert_array_equal(m.sum(axis=1), np.bincount(labels, minlength=6))

    def test_hand_counts(self):
        m = confusion_matrix(np.array([1, 1, 1]), np.array([0, 0, 1]), 2)
        expected = np.zeros((2, 2), dtype=int)
        expected[0, 1] = 2
        expected[1, 1] = 1
        np.testing.assert_array_equal(m, expected)

    def test_trace_over_total_is_top1(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((80, 5))
        labels = rng.integers(0, 5, 80)
        m = confusion_matrix(predictions(logits), labels, 5)
        assert np.trace(m) / m.sum() == pytest.approx(topk_accuracy(logits, labels, 1))


class TestSelfSimilarity:
    def test_orthogonal_rows_identity(self):
        s = weight_self_similarity(ClassifierWeights(np.eye(4) * 3.0))
        np.testing.assert_allclose(s, np.eye(4), atol=1e-12)

    def test_hand_cosine(self):
        s = weight_self_similarity(ClassifierWeights([[1.0, 0.0], [1.0, 1.0]]))
        assert s[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
        assert s[1, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(4)
        s = weight_self_similarity(ClassifierWeights(rng.standard_normal((6, 9))))
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(s), 1.0, atol=1e-12)

    def test_zero_row_convention(self):
        w = np.zeros((3, 2))
        w[0] = [1.0, 0.0]
        s = weight_self_similarity(ClassifierWeights(w))
        assert s[1, 1] == 1.0
        assert s[0, 1] == 0.0 and s[1, 2] == 0.0

    def test_mean_abs_off_diagonal(self):
        s = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert mean_abs_off_diagonal(s) == pytest.approx(0.5)


class TestConcat:
    def test_single_decoder_is_identity(self):
        w = ClassifierWeights(np.random.default_rng(5).standard_normal((3, 4)))
        multi = concat_classifiers([w])
        np.testing.assert_array_equal(multi.weights.weight, w.weight)
        assert multi.blocks == ((0, 3),)

    def test_stacking_blocks(self):
        rng = np.random.default_rng(6)
        a = ClassifierWeights(rng.standard_normal((3, 4)))
        b = ClassifierWeights(rng.standard_normal((5, 4)))
        multi = concat_classifiers([a, b])
        assert multi.weights.num_classes == 8
        assert multi.blocks == ((0, 3), (3, 8))
        assert multi.domain_of_class(2) == 0
        assert multi.domain_of_class(3) == 1
        np.testing.assert_array_equal(multi.weights.weight[3:], b.weight)

    def test_feature_dim_mismatch(self):
        a = ClassifierWeights(np.ones((2, 3)))
        b = ClassifierWeights(np.ones((2, 4)))
        with pytest.raises(DimensionError):
            concat_classifiers([a, b])

    def test_agnostic_never_beats_specific(self):
        # argmax over a superset of rows cannot outscore argmax in the true block
        rng = np.random.default_rng(7)
        decoders = [
            ClassifierWeights(rng.standard_normal((4, 6))),
            ClassifierWeights(rng.standard_normal((5, 6))),
        ]
        multi = concat_classifiers(decoders)
        feats = rng.standard_normal((100, 6))
        for dom, dec in enumerate(decoders):
            labels = rng.integers(0, dec.num_classes, 100)
            specific = topk_accuracy(feats @ dec.weight.T, labels, 1)
            start, _ = multi.blocks[dom]
            agnostic = topk_accuracy(feats @ multi.weights.weight.T, labels + start, 1)
            assert agnostic <= specific + 1e-12


class TestPathEvaluation:
    def test_zero_decoder_top1_equals_class_zero_frequency(self):
        # all-zero logits tie-break to class 0, so top-1 is class 0's share
        from cafkt.model import FeatureBatch, SyntheticEncoder
        from cafkt.evaluation import server_plug_eval

        rng = np.random.default_rng(8)
        teacher = SyntheticEncoder(rng.standard_normal((6, 4)))
        labels = rng.integers(0, 5, 200)
        batch = FeatureBatch(rng.standard_normal((200, 4)), labels)
        top1, top5 = server_plug_eval(teacher, ClassifierWeights(np.zeros((5, 6))), batch)
        assert top1 == pytest.approx((labels == 0).mean())
        assert top5 == 1.0  # k = C here

    def test_debiased_decoder_scores_identically(self):
        from cafkt.federation import cdb_apply
        from cafkt.model import FeatureBatch, SyntheticEncoder
        from cafkt.evaluation import server_plug_eval

        rng = np.random.default_rng(9)
        teacher = SyntheticEncoder(rng.standard_normal((6, 4)))
        batch = FeatureBatch(rng.standard_normal((100, 4)), rng.integers(0, 5, 100))
        decoder = ClassifierWeights(rng.standard_normal((5, 6)))
        assert server_plug_eval(teacher, decoder, batch) == server_plug_eval(
            teacher, cdb_apply(decoder), batch
        )


class TestMetricsCsv:
    def test_fixed_column_order_and_empty_fields(self):
        metrics = RunMetrics()
        metrics.records.append(RoundRecord(round=1, lr=0.005))
        metrics.records.append(
            RoundRecord(
                round=2,
                lr=0.004,
                clip_norm=12.6,
                sigma=0.01,
                client_top1=0.5,
                client_top5=0.75,
                server_top1=0.5,
                server_top5=0.8,
            )
        )
        text = metrics.csv_text()
        lines = text.strip().split("\n")
        assert lines[0] == "round,lr,clip_norm,sigma,client_top1,client_top5,server_top1,server_top5"
        assert lines[1] == "1,0.005,,,,,,"
        assert lines[2] == "2,0.004,12.6,0.01,0.5,0.75,0.5,0.8"

    def test_final_requires_records(self):
        with pytest.raises(ValueError):
            RunMetrics().final()
