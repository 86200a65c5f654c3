import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ce_ref, fd_grad_w, matvec_ref, rel_err_max, softmax_ref
from recal.data import ClassAnchors
from recal.errors import ConfigError, DataError
from recal.head import (ClassifierConfig, ProjectionHead, ce_loss_and_grad,
                        class_scores, forward, init_head, load_head,
                        predict, save_head)

CFG = ClassifierConfig()


def unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestForward:
    def test_identity_weight_normalizes(self):
        head = ProjectionHead(np.eye(2))
        npt.assert_allclose(forward(head, np.array([3.0, 4.0]), CFG), [0.6, 0.8])

    def test_zero_output_stays_zero(self):
        head = ProjectionHead(np.zeros((3, 2)))
        npt.assert_array_equal(forward(head, np.array([1.0, 2.0]), CFG), np.zeros(3))

    def test_matches_reference_matvec(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 6))
        v = rng.normal(size=6)
        got = forward(ProjectionHead(w), v, ClassifierConfig(normalize_output=False))
        npt.assert_allclose(got, matvec_ref(w, v), atol=1e-12)

    def test_unit_norm_whenever_nonzero(self):
        rng = np.random.default_rng(1)
        head = ProjectionHead(rng.normal(size=(5, 7)))
        for _ in range(20):
            out = forward(head, rng.normal(size=7), CFG)
            npt.assert_allclose(np.linalg.norm(out), 1.0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            forward(ProjectionHead(np.eye(3)), np.zeros(4), CFG)


class TestClassScores:
    def test_aligned_anchor_wins(self):
        anchors = ClassAnchors(np.eye(3)[:2])
        head = ProjectionHead(np.eye(3))
        v = np.array([0.0, 5.0, 0.0])  # f(v) equals anchor row 1
        scores = class_scores(head, v, anchors, ClassifierConfig(beta=100.0))
        assert np.argmax(scores) == 1

    def test_tiny_beta_gives_near_uniform_softmax(self):
        rng = np.random.default_rng(2)
        anchors = ClassAnchors(unit_rows(rng, 3, 4))
        head = ProjectionHead(rng.normal(size=(4, 5)))
        scores = class_scores(head, rng.normal(size=5), anchors,
                              ClassifierConfig(beta=1e-12))
        npt.assert_allclose(softmax_ref(scores), np.full(3, 1 / 3), atol=1e-9)

    def test_softmax_matches_reference(self):
        rng = np.random.default_rng(3)
        anchors = ClassAnchors(unit_rows(rng, 4, 3))
        head = ProjectionHead(rng.normal(size=(3, 6)))
        scores = class_scores(head, rng.normal(size=6), anchors, CFG)
        ref = softmax_ref(scores)
        shifted = np.exp(scores - scores.max())
        npt.assert_allclose(shifted / shifted.sum(), ref, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(0.5, 50.0))
    def test_argmax_invariant_to_beta_rescaling(self, seed, scale):
        rng = np.random.default_rng(seed)
        anchors = ClassAnchors(unit_rows(rng, 3, 4))
        head = ProjectionHead(rng.normal(size=(4, 5)))
        v = rng.normal(size=5)
        a = class_scores(head, v, anchors, ClassifierConfig(beta=1.0))
        b = class_scores(head, v, anchors, ClassifierConfig(beta=scale))
        assert np.argmax(a) == np.argmax(b)


class TestCeLossAndGrad:
    def test_confident_correct_sample_has_tiny_loss(self):
        anchors = ClassAnchors(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        head = ProjectionHead(np.eye(2))
        feats = np.array([[5.0, 0.0]])
        loss, grad = ce_loss_and_grad(head, feats, np.array([0]), anchors,
                                      ClassifierConfig(beta=100.0))
        assert loss < 1e-10
        assert np.abs(grad).max() < 1e-8

    def test_matches_loss_reference(self):
        rng = np.random.default_rng(4)
        anchors = ClassAnchors(unit_rows(rng, 3, 4))
        head = ProjectionHead(rng.normal(size=(4, 6)))
        feats = rng.normal(size=(5, 6))
        labels = rng.integers(0, 3, size=5)
        loss, _ = ce_loss_and_grad(head, feats, labels, anchors, CFG)
        ref = ce_ref(head.weight, feats, labels, anchors.vectors, CFG.beta)
        assert abs(loss - ref) < 1e-10

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        anchors = ClassAnchors(unit_rows(rng, 2, 4))
        w = rng.normal(size=(4, 6))
        feats = rng.normal(size=(3, 6))
        labels = rng.integers(0, 2, size=3)
        cfg = ClassifierConfig(beta=5.0)
        _, grad = ce_loss_and_grad(ProjectionHead(w), feats, labels, anchors, cfg)
        fd = fd_grad_w(lambda m: ce_loss_and_grad(ProjectionHead(m), feats, labels,
                                                  anchors, cfg)[0], w)
        assert rel_err_max(grad, fd) <= 1e-4

    def test_duplicated_batch_keeps_mean_loss(self):
        rng = np.random.default_rng(6)
        anchors = ClassAnchors(unit_rows(rng, 2, 3))
        head = ProjectionHead(rng.normal(size=(3, 4)))
        v = rng.normal(size=(1, 4))
        y = np.array([1])
        single, _ = ce_loss_and_grad(head, v, y, anchors, CFG)
        double, _ = ce_loss_and_grad(head, np.vstack([v, v]), np.array([1, 1]),
                                     anchors, CFG)
        assert double == pytest.approx(single, abs=1e-12)

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(7)
        anchors = ClassAnchors(unit_rows(rng, 2, 3))
        with pytest.raises(DataError):
            ce_loss_and_grad(ProjectionHead(np.zeros((3, 4))),
                             np.empty((0, 4)), np.empty(0, dtype=int), anchors, CFG)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_gradient_property(self, seed):
        rng = np.random.default_rng(seed)
        anchors = ClassAnchors(unit_rows(rng, 2, 3))
        w = rng.normal(size=(3, 4))
        feats = rng.normal(size=(2, 4)) + 0.1  # keep away from the zero-output cusp
        labels = rng.integers(0, 2, size=2)
        cfg = ClassifierConfig(beta=3.0)
        _, grad = ce_loss_and_grad(ProjectionHead(w), feats, labels, anchors, cfg)
        fd = fd_grad_w(lambda m: ce_loss_and_grad(ProjectionHead(m), feats, labels,
                                                  anchors, cfg)[0], w)
        assert rel_err_max(grad, fd) <= 1e-4


class TestHeadFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        head = ProjectionHead(rng.normal(size=(3, 5)).astype(np.float32))
        path = tmp_path / "head.prj1"
        save_head(head, path)
        back = load_head(path)
        assert back.weight.dtype == np.float64
        npt.assert_array_equal(back.weight.astype(np.float32),
                               head.weight.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.prj1"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(DataError, match="magic"):
            load_head(path)

    def test_size_mismatch(self, tmp_path):
        rng = np.random.default_rng(9)
        path = tmp_path / "h.prj1"
        save_head(ProjectionHead(rng.normal(size=(2, 3))), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataError, match="size"):
            load_head(path)


class TestInitAndConfig:
    def test_init_is_seed_deterministic(self):
        a = init_head(6, 4, seed=42)
        b = init_head(6, 4, seed=42)
        npt.assert_array_equal(a.weight, b.weight)
        assert not np.array_equal(a.weight, init_head(6, 4, seed=43).weight)

    def test_init_scale(self):
        head = init_head(400, 100, seed=0)
        expected = np.sqrt(2.0 / 500)
        assert head.weight.std() == pytest.approx(expected, rel=0.1)

    def test_nonfinite_weight_rejected(self):
        with pytest.raises(DataError):
            ProjectionHead(np.array([[np.inf, 0.0]]))

    def test_beta_must_be_positive(self):
        with pytest.raises(ConfigError):
            ClassifierConfig(beta=0.0)

    def test_predict_breaks_ties_toward_lower_class(self):
        anchors = ClassAnchors(np.array([[1.0, 0.0], [1.0, 0.0]]))
        from recal.data import EmbeddingDataset
        ds = EmbeddingDataset(np.array([[1.0, 0.0]], dtype=np.float64),
                              np.array([0]), anchors)
        assert predict(ProjectionHead(np.eye(2)), ds, CFG)[0] == 0
