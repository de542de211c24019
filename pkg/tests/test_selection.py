import numpy as np
import pytest

from flextune.network import trainable_param_count, apply_mask
from flextune.seeds import make_rng
from flextune.selection import (CandidateId, all_mask, attach_pixel_unit,
                                baseline, fast_flex_tune, faster_flex_tune,
                                fc_mask, fc_unit_indices, flex_tune, ss_mask,
                                unit_mask)
from flextune.training import EarlyStopConfig, TrainConfig
from test_training import blob_dataset, blob_net


@pytest.fixture(scope="module")
def splits():
    return blob_dataset(1), blob_dataset(2, n=60), blob_dataset(3, n=60)


def cfg(seed=5, max_epochs=20):
    return TrainConfig(seed=seed,
                       early_stop=EarlyStopConfig(5, 2, max_epochs))


class TestFlex:
    def test_dominance_is_exact(self, splits):
        train, val, test = splits
        report = flex_tune(blob_net(), train, val, test, cfg())
        accs = [acc for _, acc in report.candidates]
        assert report.chosen_outcome.val_accuracy == max(accs)

    def test_candidate_set(self, splits):
        train, val, test = splits
        net = blob_net()
        report = flex_tune(net, train, val, test, cfg())
        names = [str(cid) for cid, _ in report.candidates]
        assert names == ["unit1", "unit2", "unit3", "all"]
        assert report.strategy == "flex"

    def test_tie_breaks_prefer_fewer_params(self, splits):
        """With a vanishing learning rate every candidate keeps the starting
        accuracy, so the tie resolves to the smallest trainable mask."""
        train, val, test = splits
        net = blob_net()
        tiny = TrainConfig(learning_rate=1e-30, seed=5,
                           early_stop=EarlyStopConfig(5, 1, 5))
        report = flex_tune(net, train, val, test, tiny)
        accs = [acc for _, acc in report.candidates]
        assert len(set(accs)) == 1  # genuinely tied
        counts = {}
        for i in range(1, net.num_units + 1):
            probe = net.clone()
            apply_mask(probe, unit_mask(probe, i))
            counts[f"unit{i}"] = trainable_param_count(probe)
        smallest = min(counts, key=lambda k: (counts[k], k))
        assert str(report.chosen) == smallest

    def test_ledger_counts(self, splits):
        train, val, test = splits
        net = blob_net()
        report = flex_tune(net, train, val, test, cfg())
        assert report.ledger.single_unit_runs == net.num_units
        assert report.ledger.full_network_runs == 1
        assert report.ledger.single_unit_epochs > 0
        assert report.ledger.full_network_epochs > 0

    def test_worker_count_invariance(self, splits):
        train, val, test = splits
        net = blob_net()
        a = flex_tune(net, train, val, test, cfg(), workers=1)
        b = flex_tune(net, train, val, test, cfg(), workers=4)
        assert [(str(c), acc) for c, acc in a.candidates] == \
               [(str(c), acc) for c, acc in b.candidates]
        assert str(a.chosen) == str(b.chosen)
        assert a.test_accuracy == b.test_accuracy
        assert a.ledger.single_unit_epochs == b.ledger.single_unit_epochs
        assert [p.value.tobytes() for p in a.chosen_outcome.network.params] == \
               [p.value.tobytes() for p in b.chosen_outcome.network.params]

    def test_deterministic(self, splits):
        train, val, test = splits
        net = blob_net()
        a = flex_tune(net, train, val, test, cfg())
        b = flex_tune(net, train, val, test, cfg())
        assert [(str(c), acc) for c, acc in a.candidates] == \
               [(str(c), acc) for c, acc in b.candidates]
        assert a.test_accuracy == b.test_accuracy


class TestFastFlex:
    def test_two_trained_models(self, splits):
        train, val, test = splits
        report = fast_flex_tune(blob_net(), train, val, test, cfg())
        assert report.ledger.single_unit_runs + \
            report.ledger.full_network_runs == 2
        assert report.ledger.full_network_runs == 1
        assert len(report.candidates) == 2

    def test_proxy_accuracies_cover_all_units(self, splits):
        train, val, test = splits
        net = blob_net()
        report = fast_flex_tune(net, train, val, test, cfg())
        assert len(report.proxy_accuracies) == net.num_units
        assert all(0.0 <= a <= 1.0 for a in report.proxy_accuracies)

    def test_falls_back_to_all_units_when_better(self, splits):
        train, val, test = splits
        report = fast_flex_tune(blob_net(), train, val, test, cfg())
        cand = dict((str(c), a) for c, a in report.candidates)
        if cand["all"] > max(a for n, a in cand.items() if n != "all"):
            assert str(report.chosen) == "all"
        else:
            assert str(report.chosen) != "all"

    def test_chosen_is_argmax_of_the_pair(self, splits):
        train, val, test = splits
        report = fast_flex_tune(blob_net(), train, val, test, cfg())
        accs = [a for _, a in report.candidates]
        assert report.chosen_outcome.val_accuracy == max(accs)


class TestFasterFlex:
    def test_exactly_one_full_network_epoch(self, splits):
        train, val, test = splits
        report = faster_flex_tune(blob_net(), train, val, test, cfg())
        assert report.ledger.full_network_epochs == 1
        assert report.ledger.full_network_runs == 0
        assert report.ledger.single_unit_runs == 1

    def test_returns_single_unit_model(self, splits):
        train, val, test = splits
        net = blob_net()
        report = faster_flex_tune(net, train, val, test, cfg())
        assert str(report.chosen).startswith("unit")
        assert len(report.proxy_accuracies) == net.num_units


class TestBaselines:
    def test_ft_fc_equals_last_unit_flex_candidate(self, splits):
        """ft-fc(1) tunes exactly the last fc unit; with the shared seed
        derivation it reproduces flex's unit-L candidate bit for bit."""
        train, val, test = splits
        net = blob_net()
        flex = flex_tune(net, train, val, test, cfg())
        ftfc = baseline(net, "ft-fc", train, val, test, cfg())
        last = max(fc_unit_indices(net))
        flex_acc = dict((str(c), a) for c, a in flex.candidates)[f"unit{last}"]
        assert ftfc.chosen_outcome.val_accuracy == flex_acc
        assert str(ftfc.chosen) == f"unit{last}"

    def test_ft_all_equals_flex_all_candidate(self, splits):
        train, val, test = splits
        net = blob_net()
        flex = flex_tune(net, train, val, test, cfg())
        ftall = baseline(net, "ft-all", train, val, test, cfg())
        flex_acc = dict((str(c), a) for c, a in flex.candidates)["all"]
        assert ftall.chosen_outcome.val_accuracy == flex_acc

    def test_ft_fc2_mask(self, splits):
        train, val, test = splits
        net = blob_net()
        report = baseline(net, "ft-fc2", train, val, test, cfg())
        assert str(report.chosen) == "fc2"
        assert report.ledger.full_network_runs == 1  # multi-unit cost class

    def test_ft_ss_counts_as_full_network(self, splits):
        train, val, test = splits
        net = blob_net()
        report = baseline(net, "ft-ss", train, val, test, cfg())
        assert str(report.chosen) == "ss"
        assert report.ledger.full_network_runs == 1

    def test_unknown_baseline(self, splits):
        train, val, test = splits
        with pytest.raises(ValueError):
            baseline(blob_net(), "ft-everything", train, val, test, cfg())


class TestPixelUnit:
    def net(self):
        from flextune.architectures import build_network, init_network
        net = build_network("mnist4", (3, 8, 8), 4)
        init_network(net, 2)
        return net

    def test_forward_equal_when_attached(self):
        net = self.net()
        aug = attach_pixel_unit(net)
        x = make_rng(0).random((4, 3, 8, 8)).astype(np.float32)
        assert np.allclose(aug.forward(x), net.forward(x), atol=1e-6)
        assert aug.num_units == net.num_units + 1
        assert aug.units[0].name == "pixel"

    def test_original_untouched(self):
        net = self.net()
        before = [p.value.tobytes() for p in net.params]
        attach_pixel_unit(net)
        assert [p.value.tobytes() for p in net.params] == before

    def test_pixel_candidate_in_flex(self):
        from flextune.data import synth_dataset, SplitSpec, subsample_and_split
        from flextune.architectures import build_network, init_network
        data = synth_dataset(0, 200, channels=3)
        train, val, test = subsample_and_split(data, SplitSpec(5, 5, 5, seed=0))
        net = build_network("mnist4", (3, 16, 16), 10)
        init_network(net, 2)
        aug = attach_pixel_unit(net)
        report = flex_tune(aug, train, val, test,
                           cfg(max_epochs=5))
        names = [str(c) for c, _ in report.candidates]
        assert names[0] == "pixel"
        assert len(names) == aug.num_units + 1

    def test_pixel_mask_costed_as_full_network(self):
        aug = attach_pixel_unit(self.net())
        mask = unit_mask(aug, 1)
        assert mask.kind == "pixel-unit"
        assert not mask.is_single_unit_cost

    def test_requires_image_input(self):
        with pytest.raises(ValueError):
            attach_pixel_unit(blob_net())
