import numpy as np
import pytest

from flextune.evaluation import (RETRIEVAL_CSV_HEADER, SELECTION_CSV_HEADER,
                                 SWEEP_CSV_HEADER, ap_at_k, emit_csv,
                                 nearest_neighbors, per_unit_sweep,
                                 retrieval_csv_rows, retrieval_map,
                                 selection_csv_rows, sweep_csv_rows)
from flextune.seeds import make_rng
from flextune.selection import flex_tune
from flextune.training import CostLedger, EarlyStopConfig, TrainConfig
from test_training import blob_dataset, blob_net


class TestApAtK:
    def test_all_relevant(self):
        assert ap_at_k(1, [1, 1, 1], 3) == pytest.approx(1.0)

    def test_none_relevant(self):
        assert ap_at_k(1, [0, 2, 0], 3) == pytest.approx(0.0)

    def test_first_hit_only(self):
        # rel = [1,0,0]; precisions 1, 1/2, 1/3; AP = 1/3
        assert ap_at_k(1, [1, 0, 0], 3) == pytest.approx(1 / 3)

    def test_late_hit_scores_less(self):
        # rel = [0,0,1]; AP = (1/3)/3 = 1/9
        assert ap_at_k(1, [0, 0, 1], 3) == pytest.approx(1 / 9)
        assert ap_at_k(1, [0, 0, 1], 3) < ap_at_k(1, [1, 0, 0], 3)

    def test_mixed_hand_computed(self):
        # rel = [1,0,1,1]; prec at hits: 1, 2/3, 3/4; AP = (1+2/3+3/4)/4
        assert ap_at_k(0, [0, 9, 0, 0], 4) == pytest.approx(
            (1 + 2 / 3 + 3 / 4) / 4)

    def test_extra_neighbors_ignored(self):
        assert ap_at_k(1, [1, 1, 0, 0, 0], 2) == pytest.approx(1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            ap_at_k(1, [1, 1], 3)
        with pytest.raises(ValueError):
            ap_at_k(1, [1, 1], 0)


class TestNeighbors:
    def brute_force(self, targets, sources, k):
        """Independent O(n^2) reference with explicit per-pair distances."""
        out = np.empty((len(targets), k), dtype=np.int64)
        for i, t in enumerate(targets):
            d = np.array([np.sqrt(((t - s) ** 2).sum()) for s in sources])
            out[i] = np.argsort(d, kind="stable")[:k]
        return out

    def test_matches_brute_force(self):
        rng = make_rng(0)
        targets = rng.normal(size=(40, 6))
        sources = rng.normal(size=(70, 6))
        assert np.array_equal(nearest_neighbors(targets, sources, 5),
                              self.brute_force(targets, sources, 5))

    def test_matches_brute_force_large(self):
        rng = make_rng(1)
        targets = rng.normal(size=(1000, 8))
        sources = rng.normal(size=(1000, 8))
        assert np.array_equal(nearest_neighbors(targets, sources, 10),
                              self.brute_force(targets, sources, 10))

    def test_ties_resolve_to_lower_index(self):
        sources = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        targets = np.array([[0.5, 0.5]])
        nn = nearest_neighbors(targets, sources, 3)
        assert list(nn[0]) == [0, 1, 2]


class TestRetrievalMap:
    def test_perfect_retrieval(self):
        feats = np.eye(4).repeat(5, axis=0)
        labels = np.arange(4).repeat(5)
        result = retrieval_map(feats, labels, feats, labels, k=5)
        assert result.map_at_k == pytest.approx(1.0)

    def test_chunking_invariant(self):
        rng = make_rng(2)
        t, s = rng.normal(size=(30, 4)), rng.normal(size=(50, 4))
        tl, sl = rng.integers(0, 3, 30), rng.integers(0, 3, 50)
        a = retrieval_map(t, tl, s, sl, 5, chunk=7)
        b = retrieval_map(t, tl, s, sl, 5, chunk=512)
        assert np.array_equal(a.per_query_ap, b.per_query_ap)

    def test_random_features_baseline(self):
        """Monte-Carlo check against the analytic chance level: with
        label-free features each neighbor is relevant independently with
        p = 1/classes, so E[AP@k] = (1/k) * sum_i p*(1 + (i-1)p)/i."""
        p, k = 0.1, 10
        chance = sum(p * (1 + (i - 1) * p) / i for i in range(1, k + 1)) / k
        rng = make_rng(3)
        t = rng.normal(size=(400, 16))
        s = rng.normal(size=(1000, 16))
        tl = rng.integers(0, 10, 400)
        sl = np.arange(1000) % 10
        result = retrieval_map(t, tl, s, sl, k)
        assert abs(result.map_at_k - chance) < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            retrieval_map(np.zeros((2, 3)), [0, 1], np.zeros((2, 4)), [0, 1], 1)
        with pytest.raises(ValueError):
            retrieval_map(np.zeros((2, 3)), [0, 1], np.zeros((2, 3)), [0, 1], 5)


@pytest.fixture(scope="module")
def blob_splits():
    return blob_dataset(1), blob_dataset(2, n=60), blob_dataset(3, n=60)


def quick_cfg():
    return TrainConfig(seed=5, early_stop=EarlyStopConfig(5, 2, 20))


class TestSweep:
    def test_row_count_and_argmax(self, blob_splits):
        net = blob_net()
        splits = [(10, blob_splits), (30, blob_splits)]
        table = per_unit_sweep(net, splits, quick_cfg())
        assert len(table.rows) == 2 * (net.num_units + 1)
        for ratio in (10, 30):
            rows = [r for r in table.rows if r.ratio == ratio]
            assert sum(r.is_argmax for r in rows) == 1
            best = max(r.val_accuracy for r in rows)
            marked = next(r for r in rows if r.is_argmax)
            assert marked.val_accuracy == best

    def test_argmax_matches_flex_choice(self, blob_splits):
        net = blob_net()
        table = per_unit_sweep(net, [(30, blob_splits)], quick_cfg())
        report = flex_tune(net, *blob_splits, quick_cfg())
        marked = next(r for r in table.rows if r.is_argmax)
        assert str(marked.candidate) == str(report.chosen)
        assert marked.test_accuracy == report.test_accuracy

    def test_worker_invariance(self, blob_splits):
        net = blob_net()
        a = per_unit_sweep(net, [(30, blob_splits)], quick_cfg(), workers=1)
        b = per_unit_sweep(net, [(30, blob_splits)], quick_cfg(), workers=3)
        assert sweep_csv_rows(a) == sweep_csv_rows(b)

    def test_ledger_accumulates(self, blob_splits):
        net = blob_net()
        ledger = CostLedger()
        per_unit_sweep(net, [(30, blob_splits)], quick_cfg(), ledger=ledger)
        assert ledger.single_unit_runs == net.num_units
        assert ledger.full_network_runs == 1

    def test_empty_ratios_rejected(self):
        with pytest.raises(ValueError):
            per_unit_sweep(blob_net(), [], quick_cfg())


class TestCsv:
    def test_headers_pinned(self):
        assert SWEEP_CSV_HEADER == ["ratio", "candidate", "val_acc",
                                    "test_acc", "epochs", "is_argmax"]
        assert RETRIEVAL_CSV_HEADER == ["query_index", "ap"]
        assert SELECTION_CSV_HEADER == ["candidate", "val_acc", "chosen",
                                        "test_acc"]

    def test_formatting(self, tmp_path):
        path = tmp_path / "out.csv"
        emit_csv(path, ["a", "b", "c"], [(1, 0.123456789, True),
                                         (2, 0.5, False)])
        text = path.read_text(encoding="utf-8")
        assert text == "a,b,c\n1,0.123457,1\n2,0.500000,0\n"
        assert "\r" not in text

    def test_sweep_rows_round_trip(self, blob_splits, tmp_path):
        table = per_unit_sweep(blob_net(), [(30, blob_splits)], quick_cfg())
        path = tmp_path / "sweep.csv"
        emit_csv(path, SWEEP_CSV_HEADER, sweep_csv_rows(table))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(SWEEP_CSV_HEADER)
        assert len(lines) == 1 + len(table.rows)
        first = lines[1].split(",")
        assert first[0] == "30" and first[1] == "unit1"

    def test_retrieval_rows(self):
        rng = make_rng(4)
        t = rng.normal(size=(5, 3))
        result = retrieval_map(t, [0] * 5, t, [0] * 5, 2)
        rows = retrieval_csv_rows(result)
        assert [r[0] for r in rows] == [0, 1, 2, 3, 4]

    def test_selection_rows(self, blob_splits):
        report = flex_tune(blob_net(), *blob_splits, quick_cfg())
        rows = selection_csv_rows(report)
        assert len(rows) == 4
        chosen_rows = [r for r in rows if r[2]]
        assert len(chosen_rows) == 1
        assert chosen_rows[0][3] == report.test_accuracy
        # non-chosen rows leave test accuracy blank
        assert all(r[3] == "" for r in rows if not r[2])
