"""Metrics, report aggregation, few-shot and zero-shot protocols."""

import numpy as np
import pytest

from fedcast import config as cfgmod
from fedcast import evaluation as ev
from fedcast import federation as fed
from fedcast.checkpoint import artifact_groups, group_checksum
from fedcast.errors import ProtocolError, TransferError


def synth_domain(name, *, channels=1, train=60, val=48, test=48, lookback=16,
                 horizon=4, stride=4, batch=8, own=(1 / 9, 0.5), family=None,
                 seed=None):
    entry = {"name": name, "channels": channels, "splits": [train, val, test],
             "lookback": lookback, "horizon": horizon, "stride": stride,
             "batch_size": batch,
             "synth": {"shared": [[1 / 12, 1.0]], "own": [list(own)],
                       "noise_std": 0.1}}
    if family:
        entry["family"] = family
    if seed is not None:
        entry["synth"]["seed"] = seed
    return entry


def tiny_config(domains, targets=(), rounds=2, seed=5, lr=1e-3):
    return cfgmod.from_dict({
        "global": {"seed": seed, "rounds": rounds, "lr": lr, "dim": 16,
                   "heads": 4, "patch_len": 8, "vocab": 40,
                   "num_prototypes": 10, "num_prompts": 3, "max_len": 12,
                   "depth": 1},
        "domains": list(domains),
        "zeroshot_targets": list(targets)})


class TestMetrics:
    def test_perfect_prediction(self):
        preds = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert ev.pooled_metrics(preds, preds) == (0.0, 0.0)

    def test_plus_minus_one(self):
        mse, mae = ev.pooled_metrics(np.array([1.0, -1.0]), np.zeros(2))
        assert mse == 1.0 and mae == 1.0

    def test_zero_and_two(self):
        mse, mae = ev.pooled_metrics(np.array([0.0, 2.0]), np.zeros(2))
        assert mse == 2.0 and mae == 1.0

    def test_naive_double_loop_oracle(self):
        rng = np.random.default_rng(3)
        preds = rng.standard_normal((40, 6))
        targets = rng.standard_normal((40, 6))
        mse, mae = ev.pooled_metrics(preds, targets)
        total_sq = 0.0
        total_abs = 0.0
        count = 0
        for i in range(40):
            for j in range(6):
                err = preds[i, j] - targets[i, j]
                total_sq += err * err
                total_abs += abs(err)
                count += 1
        assert abs(mse - total_sq / count) < 1e-12
        assert abs(mae - total_abs / count) < 1e-12

    def test_mae_squared_never_exceeds_mse(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            preds = rng.standard_normal((10, 4))
            targets = rng.standard_normal((10, 4))
            mse, mae = ev.pooled_metrics(preds, targets)
            assert mae ** 2 <= mse + 1e-15


class TestMetricReport:
    def _report(self):
        r = ev.MetricReport()
        for h, (mse, mae) in zip((96, 192, 336, 720),
                                 [(0.4, 0.3), (0.5, 0.35), (0.6, 0.4), (0.7, 0.45)]):
            r.add(ev.MetricRecord(domain="a", horizon=h, mse=mse, mae=mae))
        r.add(ev.MetricRecord(domain="b", horizon=96, mse=1.0, mae=0.8))
        return r

    def test_domain_average_is_mean_of_horizons(self):
        avg = self._report().domain_average()
        assert avg["a"][0] == pytest.approx((0.4 + 0.5 + 0.6 + 0.7) / 4, abs=1e-12)
        assert avg["a"][1] == pytest.approx((0.3 + 0.35 + 0.4 + 0.45) / 4, abs=1e-12)

    def test_overall_average_over_domain_averages(self):
        mse, mae = self._report().overall_average()
        assert mse == pytest.approx((0.55 + 1.0) / 2, abs=1e-12)
        assert mae == pytest.approx((0.375 + 0.8) / 2, abs=1e-12)

    def test_merge(self):
        merged = self._report().merged_with(
            ev.MetricReport(records=[ev.MetricRecord("c", 96, 0.1, 0.1)],
                            excluded=["x"]))
        assert {r.domain for r in merged.records} == {"a", "b", "c"}
        assert merged.excluded == ["x"]


class TestEvaluateArtifacts:
    def test_eval_val_matches_logged_best(self):
        cfg = tiny_config([synth_domain("a"), synth_domain("b", own=(1 / 7, 0.5))],
                          rounds=3)
        art = fed.run(cfg)
        report = ev.evaluate_artifacts(art, "val")
        per_domain = {r.domain: r.mse for r in report.records}
        best = art.records[art.best_round]
        for name, logged in best.val_loss.items():
            assert per_domain[name] == pytest.approx(logged, abs=1e-12)
        avg = float(np.mean(list(per_domain.values())))
        assert avg == pytest.approx(art.best_avg_val, abs=1e-12)


class TestFewshot:
    def test_fraction_one_matches_main_protocol(self):
        cfg = tiny_config([synth_domain("a")], rounds=2)
        result = ev.fewshot_protocol(cfg, 1.0)
        direct = fed.run(cfg)
        for ra, rb in zip(result.trained.records, direct.records):
            assert ra.avg_val_loss == rb.avg_val_loss
        assert result.report.excluded == []

    def test_small_domain_excluded_with_marker(self):
        # 16+4=20-step window; 10% of 60 train steps = 6 eligible -> excluded
        domains = [synth_domain("big", train=400),
                   synth_domain("tiny", train=60)]
        cfg = tiny_config(domains, rounds=1)
        result = ev.fewshot_protocol(cfg, 0.10)
        assert result.report.excluded == ["tiny"]
        assert {r.domain for r in result.report.records} == {"big"}

    def test_all_excluded_is_protocol_error(self):
        cfg = tiny_config([synth_domain("tiny", train=60)], rounds=1)
        with pytest.raises(ProtocolError):
            ev.fewshot_protocol(cfg, 0.10)

    def test_fraction_bounds(self):
        cfg = tiny_config([synth_domain("a")], rounds=1)
        with pytest.raises(ProtocolError):
            ev.fewshot_protocol(cfg, 0.0)
        with pytest.raises(ProtocolError):
            ev.fewshot_protocol(cfg, 1.5)

    def test_eligibility_arithmetic(self):
        # 617-step train split at 5%: 31 eligible < 36+24
        spec = cfgmod.DomainSpec(name="ili", channels=7, splits=(617, 74, 170),
                                 csv="x.csv", lookback=36, horizon=24)
        assert not ev.fewshot_eligible(spec, 0.05)
        assert ev.fewshot_eligible(spec, 0.10)  # 62 >= 60


class TestZeroshot:
    def _train(self):
        sources = [synth_domain("s1", own=(1 / 6, 0.5), seed=11),
                   synth_domain("s2", own=(1 / 9, 0.5), seed=12),
                   synth_domain("s3", own=(1 / 15, 0.5), seed=13)]
        cfg = tiny_config(sources, rounds=2)
        return fed.run(cfg)

    def test_selection_is_validation_argmin(self):
        trained = self._train()
        targets = [cfgmod.DomainSpec(name="t1", channels=1, splits=(60, 48, 48),
                                     synth={"shared": [[1 / 12, 1.0]],
                                            "own": [[1 / 7, 0.5]],
                                            "noise_std": 0.1, "seed": 21},
                                     lookback=16, horizon=4, stride=4,
                                     batch_size=8)]
        result = ev.zeroshot_protocol(trained, targets)
        scores = result.candidate_val_mse["t1"]
        assert set(scores) == {"s1", "s2", "s3"}
        assert result.chosen["t1"] == min(scores, key=scores.get)
        assert result.report.records[0].source == result.chosen["t1"]

    def test_self_transfer_reproduces_standard_evaluation(self):
        trained = self._train()
        spec = trained.config.domains[0]
        result = ev.zeroshot_protocol(trained, [spec])
        assert result.chosen["s1"] == "s1"
        assert result.candidate_val_mse["s1"] == {}  # family match, no search
        standard = ev.evaluate_artifacts(trained, "test")
        std_mse = {r.domain: r.mse for r in standard.records}["s1"]
        assert result.report.records[0].mse == pytest.approx(std_mse, abs=0.0)

    def test_sources_not_mutated(self):
        trained = self._train()
        before = {tag: group_checksum(arrays)
                  for tag, arrays in artifact_groups(trained).items()}
        targets = [cfgmod.DomainSpec(name="t1", channels=2, splits=(60, 48, 48),
                                     synth={"shared": [[1 / 12, 1.0]],
                                            "own": [[1 / 7, 0.4]],
                                            "noise_std": 0.1, "seed": 22},
                                     lookback=16, horizon=4, stride=4,
                                     batch_size=8)]
        ev.zeroshot_protocol(trained, targets)
        after = {tag: group_checksum(arrays)
                 for tag, arrays in artifact_groups(trained).items()}
        assert before == after

    def test_incompatible_target_is_transfer_error(self):
        trained = self._train()
        bad = cfgmod.DomainSpec(name="bad", channels=1, splits=(80, 48, 48),
                                synth={"shared": [[1 / 12, 1.0]],
                                       "own": [[1 / 7, 0.4]],
                                       "noise_std": 0.1, "seed": 23},
                                lookback=16, horizon=8,  # horizon mismatch
                                stride=4, batch_size=8)
        with pytest.raises(TransferError):
            ev.zeroshot_protocol(trained, [bad])

    def test_no_targets_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            ev.zeroshot_protocol(self._train(), [])

    def test_family_tag_overrides_argmin_search(self):
        sources = [synth_domain("s1", own=(1 / 6, 0.5), family="power", seed=11),
                   synth_domain("s2", own=(1 / 9, 0.5), seed=12)]
        trained = fed.run(tiny_config(sources, rounds=1))
        target = cfgmod.DomainSpec(
            name="cousin", channels=1, splits=(60, 48, 48), lookback=16,
            horizon=4, stride=4, batch_size=8, family="power",
            synth={"shared": [[1 / 12, 1.0]], "own": [[1 / 6, 0.5]],
                   "noise_std": 0.1, "seed": 24})
        result = ev.zeroshot_protocol(trained, [target])
        assert result.chosen["cousin"] == "s1"  # family match, no search
        assert result.candidate_val_mse["cousin"] == {}


class TestAblationSuite:
    def test_variants_run_and_report(self):
        cfg = tiny_config([synth_domain("a"), synth_domain("b", own=(1 / 7, 0.5))],
                          rounds=1)
        out = ev.ablation_suite(cfg, variants=("baseline", "no-prompt", "no-agg"))
        assert set(out) == {"baseline", "no-prompt", "no-agg"}
        for info in out.values():
            assert np.isfinite(info["best_avg_val"])
            assert len(info["report"].records) == 2

    def test_no_prompt_changes_backbone_rows(self):
        cfg = tiny_config([synth_domain("a")], rounds=1)
        base = fed.build_clients(cfg)[3]
        ablated = fed.build_clients(cfgmod.with_overrides(cfg, ablation="no-prompt"))[3]
        rows_base = base.rows_for(16, 4)
        rows_ablated = ablated.rows_for(16, 4)
        assert rows_base - rows_ablated == 3  # exactly the prompt rows

    def test_shared_head_requires_homogeneous_shapes(self):
        domains = [synth_domain("a"), synth_domain("b", horizon=8, train=80)]
        with pytest.raises(Exception, match="shared-head"):
            cfgmod.from_dict({
                "global": {"seed": 0, "rounds": 1, "dim": 16, "heads": 4,
                           "patch_len": 8, "vocab": 40, "num_prototypes": 10,
                           "num_prompts": 3, "max_len": 12, "depth": 1,
                           "ablation": "shared-head"},
                "domains": domains})
