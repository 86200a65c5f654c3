import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recal.data import ClassAnchors, EmbeddingDataset
from recal.errors import DataError
from recal.head import ClassifierConfig, ProjectionHead, predict
from recal.kv import read_kv
from recal.metrics import (GroupMetrics, evaluate, export_embeddings,
                           metrics_pairs, write_group_table, write_metrics_report)

SIGN_ANCHORS = ClassAnchors(np.array([[1.0, 0.0], [-1.0, 0.0]]))
IDENTITY = ProjectionHead(np.eye(2))


def sign_dataset(per_group):
    """Dataset where the identity head predicts 0 iff x[0] > 0.

    ``per_group`` maps group -> (n_correct, n_wrong); all labels are 0,
    so correct samples get x=(+1, e) and wrong ones x=(-1, e).
    """
    xs, labels, groups = [], [], []
    for g, (good, bad) in per_group.items():
        xs += [[1.0, 0.1]] * good + [[-1.0, 0.1]] * bad
        labels += [0] * (good + bad)
        groups += [g] * (good + bad)
    return EmbeddingDataset(np.asarray(xs), np.asarray(labels), SIGN_ANCHORS,
                            groups=np.asarray(groups), split_tag="test")


class TestEvaluate:
    def test_wga_is_the_minimum_group_accuracy(self):
        ds = sign_dataset({0: (9, 1), 1: (8, 2), 2: (19, 1), 3: (4, 6)})
        m = evaluate(IDENTITY, ds)
        accs = {g: acc for g, (_, _, acc) in m.per_group.items()}
        assert accs == {0: 0.9, 1: 0.8, 2: 0.95, 3: 0.4}
        assert m.wga == 0.4

    def test_all_correct_gives_ones(self):
        ds = sign_dataset({0: (5, 0), 1: (7, 0)})
        m = evaluate(IDENTITY, ds)
        assert m.wga == 1.0 and m.avg == 1.0

    def test_ten_sample_hand_tally(self):
        # columns: x0 sign decides the prediction; label + group hand-picked
        rows = [  # (x0, label, group)  -> pred = 0 if x0 > 0 else 1
            (+1, 0, 0),  # correct
            (+1, 0, 0),  # correct
            (-1, 0, 0),  # wrong
            (-1, 1, 1),  # correct
            (+1, 1, 1),  # wrong
            (+1, 1, 1),  # wrong
            (-1, 1, 2),  # correct
            (-1, 1, 2),  # correct
            (+1, 0, 2),  # correct
            (-1, 0, 2),  # wrong
        ]
        feats = np.array([[x, 0.5] for x, _, _ in rows], dtype=np.float64)
        ds = EmbeddingDataset(feats, np.array([l for _, l, _ in rows]),
                              SIGN_ANCHORS, groups=np.array([g for _, _, g in rows]),
                              split_tag="test")
        m = evaluate(IDENTITY, ds)
        assert m.per_group == {0: (2, 3, 2 / 3), 1: (1, 3, 1 / 3), 2: (3, 4, 3 / 4)}
        assert m.wga == 1 / 3
        assert m.avg == 6 / 10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_wga_never_exceeds_avg_and_totals_conserve(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 60))
        feats = rng.normal(size=(n, 3))
        anchors = ClassAnchors.from_directions(rng.normal(size=(2, 4)))
        ds = EmbeddingDataset(feats, rng.integers(0, 2, n), anchors,
                              groups=rng.integers(0, 4, n), split_tag="test")
        head = ProjectionHead(rng.normal(size=(4, 3)))
        m = evaluate(head, ds)
        assert m.wga <= m.avg + 1e-15
        assert sum(t for _, t, _ in m.per_group.values()) == n
        preds = predict(head, ds, ClassifierConfig())
        assert sum(c for c, _, _ in m.per_group.values()) == int(
            (preds == ds.labels).sum())

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(1)
        ds = sign_dataset({0: (9, 1), 1: (4, 6)})
        perm = rng.permutation(ds.n_samples)
        shuffled = EmbeddingDataset(ds.features[perm], ds.labels[perm],
                                    ds.anchors, groups=ds.groups[perm],
                                    split_tag="test")
        a, b = evaluate(IDENTITY, ds), evaluate(IDENTITY, shuffled)
        assert a.per_group == b.per_group
        assert (a.wga, a.avg) == (b.wga, b.avg)

    def test_missing_groups_rejected(self):
        ds = sign_dataset({0: (2, 0)}).without_groups()
        with pytest.raises(DataError, match="group"):
            evaluate(IDENTITY, ds)

    def test_empty_dataset_rejected(self):
        ds = EmbeddingDataset(np.empty((0, 2)), np.empty(0, dtype=int),
                              SIGN_ANCHORS, groups=np.empty(0, dtype=int),
                              split_tag="test")
        with pytest.raises(DataError, match="empty"):
            evaluate(IDENTITY, ds)

    def test_empty_groups_never_appear(self):
        ds = sign_dataset({0: (3, 0), 5: (2, 1)})  # group ids with gaps
        m = evaluate(IDENTITY, ds)
        assert set(m.per_group) == {0, 5}


class TestReports:
    def test_metrics_report_round_trips(self, tmp_path):
        ds = sign_dataset({0: (9, 1), 1: (4, 6)})
        m = evaluate(IDENTITY, ds)
        path = tmp_path / "metrics.txt"
        write_metrics_report(m, path)
        pairs = read_kv(path)
        assert float(pairs["wga"]) == m.wga
        assert float(pairs["avg"]) == m.avg
        assert pairs["group_1_correct"] == "4"
        assert pairs["group_1_total"] == "10"

    def test_group_table_layout(self, tmp_path):
        m = GroupMetrics({1: (1, 2, 0.5), 0: (3, 3, 1.0)}, wga=0.5, avg=0.8)
        path = tmp_path / "groups.tsv"
        write_group_table(m, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "group\tcorrect\ttotal\taccuracy"
        assert lines[1].startswith("0\t3\t3\t")
        assert lines[2].startswith("1\t1\t2\t")

    def test_metrics_pairs_are_parseable_floats(self):
        m = GroupMetrics({0: (1, 3, 1 / 3)}, wga=1 / 3, avg=1 / 3)
        pairs = metrics_pairs(m)
        assert float(pairs["group_0_acc"]) == 1 / 3  # repr round-trips exactly


class TestExportEmbeddings:
    def test_three_samples_make_four_lines(self, tmp_path):
        rng = np.random.default_rng(2)
        ds = EmbeddingDataset(rng.normal(size=(3, 4)), np.array([0, 1, 0]),
                              ClassAnchors.from_directions(rng.normal(size=(2, 2))),
                              groups=np.array([0, 1, 2]), split_tag="test")
        head = ProjectionHead(rng.normal(size=(2, 4)))
        path = tmp_path / "emb.tsv"
        export_embeddings(head, ds, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0] == "index\tlabel\tgroup\te0\te1"

    def test_reexport_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = EmbeddingDataset(rng.normal(size=(5, 3)), rng.integers(0, 2, 5),
                              ClassAnchors.from_directions(rng.normal(size=(2, 4))))
        head = ProjectionHead(rng.normal(size=(4, 3)))
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        export_embeddings(head, ds, a)
        export_embeddings(head, ds, b)
        assert a.read_bytes() == b.read_bytes()

    def test_exported_rows_are_unit_norm_and_group_defaults_to_minus_one(self, tmp_path):
        rng = np.random.default_rng(4)
        ds = EmbeddingDataset(rng.normal(size=(6, 3)), rng.integers(0, 2, 6),
                              ClassAnchors.from_directions(rng.normal(size=(2, 4))))
        head = ProjectionHead(rng.normal(size=(4, 3)))
        path = tmp_path / "emb.tsv"
        export_embeddings(head, ds, path)
        for line in path.read_text().splitlines()[1:]:
            cells = line.split("\t")
            assert cells[2] == "-1"
            vec = np.array([float(c) for c in cells[3:]])
            npt.assert_allclose(np.linalg.norm(vec), 1.0, atol=1e-12)
