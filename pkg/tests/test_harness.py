import json

import numpy as np
import pytest

from ambical.core import LogitDataset, one_hot
from ambical.errors import InputError, LoadError, SplitError
from ambical.harness import (
    ExperimentConfig,
    check_propositions,
    dataset_digest,
    emit_report,
    load_dataset,
    nested_subsample,
    run_ablation,
    run_benchmark,
    save_dataset,
    split_stratified,
)
from ambical.harness.io import read_dataset_lines
from ambical.harness.methods import METHODS, resolve_method
from ambical.harness.report import HEADERS, csv_text, fmt, markdown_table, reference_deviations
from ambical.harness.synthetic import temperature_dataset


def _lines(*records, K=3):
    return [json.dumps({"version": 1, "K": K})] + [json.dumps(r) for r in records]


@pytest.fixture(scope="module")
def annotated():
    return temperature_dataset(n=1200, K=4, T_star=2.5, m=7, seed=3)


@pytest.fixture(scope="module")
def exact():
    return temperature_dataset(n=1200, K=4, T_star=2.5, seed=3)


class TestDatasetIO:
    def test_annotations_to_pi(self):
        ds = read_dataset_lines(_lines({"id": "a", "logits": [0, 1, 2], "annotations": [1, 1, 2]}))
        np.testing.assert_allclose(ds.pi[0], [0, 2 / 3, 1 / 3])
        assert ds.voted[0] == 1

    def test_pi_tie_rule(self):
        ds = read_dataset_lines(_lines({"id": "a", "logits": [0, 1], "pi": [0.5, 0.5]}, K=2))
        assert ds.voted[0] == 0

    def test_wrong_length_names_record(self):
        with pytest.raises(LoadError) as info:
            read_dataset_lines(_lines({"id": "rec-7", "logits": [0, 1], "pi": [0.2, 0.3, 0.5]}))
        assert "rec-7" in str(info.value)
        assert info.value.line == 2

    @pytest.mark.parametrize(
        "record",
        [
            {"id": "a", "logits": [0, 1, 2]},
            {"id": "a", "logits": [0, 1, 2], "annotations": [3]},
            {"id": "a", "logits": [0, 1, 2], "pi": [0.5, 0.6, 0.0]},
            {"id": "a", "logits": [0, 1, 2], "annotations": [0, 1], "pi": [1.0, 0.0, 0.0]},
            {"id": "a", "logits": [0, 1, 2], "pi": [1, 0, 0], "extra": 1},
            {"logits": [0, 1, 2], "pi": [1, 0, 0]},
        ],
    )
    def test_schema_violations(self, record):
        with pytest.raises(LoadError):
            read_dataset_lines(_lines(record))

    def test_duplicate_ids_and_bad_header(self):
        rec = {"id": "a", "logits": [0, 1, 2], "pi": [1, 0, 0]}
        with pytest.raises(LoadError):
            read_dataset_lines(_lines(rec, rec))
        with pytest.raises(LoadError):
            read_dataset_lines([json.dumps({"version": 2, "K": 3})])
        with pytest.raises(LoadError):
            read_dataset_lines([])

    def test_round_trip(self, annotated, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(annotated, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.logits, annotated.logits)
        np.testing.assert_allclose(back.pi, annotated.pi)
        assert dataset_digest(back) == dataset_digest(annotated)


class TestSplits:
    def test_balanced(self):
        y = np.repeat([0, 1], 50)
        cal, test = split_stratified(y, 0.5, seed=1)
        assert np.bincount(y[cal]).tolist() == [25, 25]
        assert np.bincount(y[test]).tolist() == [25, 25]
        assert np.array_equal(np.sort(np.r_[cal, test]), np.arange(100))

    def test_same_seed(self):
        y = np.random.default_rng(0).integers(0, 3, 90)
        a, b = split_stratified(y, 0.3, 5), split_stratified(y, 0.3, 5)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], split_stratified(y, 0.3, 6)[0])

    def test_round_half_up(self):
        y = np.r_[np.zeros(3, int), np.ones(7, int)]
        cal, _ = split_stratified(y, 0.5, 0)
        assert np.bincount(y[cal]).tolist() == [2, 4]

    def test_tiny_class(self):
        with pytest.raises(SplitError):
            split_stratified([0, 0, 1], 0.5, 0)
        cal, test = split_stratified([0, 0, 1], 0.5, 0, stratify=False)
        assert len(cal) == 2 and len(test) == 1

    def test_nested_subsample(self):
        y = np.random.default_rng(1).integers(0, 3, 200)
        subs = nested_subsample(y, [0.1, 0.5, 1.0], 4)
        assert set(subs[0.1]) <= set(subs[0.5]) <= set(subs[1.0])
        np.testing.assert_array_equal(subs[1.0], np.arange(200))


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"methods": ["ts"], "colour": 1})

    @pytest.mark.parametrize(
        "kw",
        [
            {"methods": ["nope"]},
            {"seeds": [1, 1]},
            {"cal_fraction": 1.0},
            {"seed_axis": "annotations"},
            {"ablation": {"axis": "calsize", "values": [1.5]}},
            {"ablation": {"axis": "width", "values": [1]}},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            ExperimentConfig(**kw)

    def test_digest_ignores_dataset_path(self):
        a = ExperimentConfig(dataset="a.jsonl")
        assert a.digest() == ExperimentConfig(dataset="b.jsonl").digest()
        assert a.digest() != ExperimentConfig(mc_S=5).digest()

    def test_round_trip(self):
        cfg = ExperimentConfig(methods=("ts", "vs"), seeds=(1, 2), oracle=True)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_method_resolution(self):
        assert resolve_method("ts", "soft").name == "slts"
        assert resolve_method("ts", "mc").name == "mcts"
        assert resolve_method("vs").name == "vs"
        with pytest.raises(InputError):
            resolve_method("bogus")
        assert METHODS["oracle_ts"].oracle


class TestBenchmark:
    def test_one_hot_voted_equals_true(self):
        z = np.random.default_rng(0).normal(size=(300, 3)) * 2
        y = np.random.default_rng(1).integers(0, 3, 300)
        ds = LogitDataset(z, one_hot(y, 3), [str(i) for i in range(300)])
        rep = run_benchmark(ds, ExperimentConfig(methods=("uncal",), mc_S=5, seeds=(1, 2)))
        for c in rep["cells"]:
            assert c["metrics"]["ece_voted"] == c["metrics"]["ece_true"]

    def test_slts_beats_ts(self, exact):
        rep = run_benchmark(exact, ExperimentConfig(methods=("ts", "slts"), mc_S=20, seeds=(1, 2, 3)))
        agg = {r["method"]: r for r in rep["aggregate"]}
        assert agg["slts"]["ece_true"]["mean"] < agg["ts"]["ece_true"]["mean"]
        assert agg["slts"]["T"]["mean"] == pytest.approx(2.5, abs=0.01)

    def test_oracle_flag(self, exact):
        rep = run_benchmark(exact, ExperimentConfig(methods=("ts",), mc_S=5, oracle=True))
        oracle = [c for c in rep["cells"] if c["method"] == "oracle_ts"]
        assert oracle and all(c["oracle"] for c in oracle)
        assert oracle[0]["fitted_on"] == "test (oracle)"
        assert not [c for c in rep["cells"] if c["method"] == "ts"][0]["oracle"]
        assert "oracle" in markdown_table(rep)

    def test_missing_supervision_is_recorded(self, exact):
        rep = run_benchmark(exact, ExperimentConfig(methods=("mcts", "ts"), mc_S=5, seeds=(1, 2)))
        status = {(c["method"], c["seed"]): c["status"] for c in rep["cells"]}
        assert status[("mcts", 1)] == "error" and status[("ts", 1)] == "ok"
        row = [r for r in rep["aggregate"] if r["method"] == "mcts"][0]
        assert row["n_error"] == 2 and row["ece_true"] is None

    def test_cell_order_and_aggregate(self, annotated):
        cfg = ExperimentConfig(methods=("uncal", "ts"), mc_S=5, seeds=(3, 1))
        rep = run_benchmark(annotated, cfg)
        assert [(c["seed"], c["method"]) for c in rep["cells"]] == [(3, "uncal"), (3, "ts"), (1, "uncal"), (1, "ts")]
        ts = [c["metrics"]["ece_true"] for c in rep["cells"] if c["method"] == "ts"]
        row = [r for r in rep["aggregate"] if r["method"] == "ts"][0]
        assert row["ece_true"]["mean"] == pytest.approx(np.mean(ts))
        assert row["ece_true"]["std"] == pytest.approx(np.std(ts, ddof=1))
        single = run_benchmark(annotated, ExperimentConfig(methods=("ts",), mc_S=5))
        assert single["aggregate"][0]["ece_true"]["std"] is None

    def test_threads_do_not_change_report(self, annotated):
        cfg = ExperimentConfig(methods=("ts", "vs", "mcts"), mc_S=5, seeds=(1, 2))
        assert run_benchmark(annotated, cfg, threads=1) == run_benchmark(annotated, cfg, threads=4)

    def test_annotation_seed_axis(self, exact):
        cfg = ExperimentConfig(
            methods=("slts",), mc_S=5, seeds=(1, 2), seed_axis="annotations",
            annotation_model={"confusion": {"version": 1, "K": 4, "rows": (0.7 * np.eye(4) + 0.075).tolist()}, "m": 5},
        )
        rep = run_benchmark(exact, cfg)
        t = [c["metrics"]["T_fitted"] for c in rep["cells"]]
        assert t[0] != t[1]


class TestAblation:
    def test_calsize_full_fraction_matches_benchmark(self, annotated):
        base = dict(methods=("ts", "slts"), mc_S=5, seeds=(4,))
        bench = run_benchmark(annotated, ExperimentConfig(**base))
        abl = run_ablation(annotated, ExperimentConfig(**base, ablation={"axis": "calsize", "values": [0.25, 1.0]}))
        for c in abl["cells"]:
            if c["calsize"] == 1.0:
                ref = [b for b in bench["cells"] if b["method"] == c["method"]][0]
                assert c["metrics"] == ref["metrics"]
        sizes = sorted({(c["calsize"], c["n_cal"]) for c in abl["cells"]})
        assert sizes[0][1] < sizes[1][1]

    def test_annotation_sweep_needs_annotations(self, exact):
        cfg = ExperimentConfig(methods=("slts",), mc_S=5, ablation={"axis": "annotations", "values": [1, 3]})
        with pytest.raises(InputError):
            run_ablation(exact, cfg)

    def test_full_pool_equals_unablated(self, annotated):
        base = dict(methods=("slts",), mc_S=5, seeds=(4,))
        bench = run_benchmark(annotated, ExperimentConfig(**base))
        abl = run_ablation(annotated, ExperimentConfig(**base, ablation={"axis": "annotations", "values": [1, 7]}))
        full = [c for c in abl["cells"] if c["annotations"] == 7][0]
        assert full["metrics"]["T_fitted"] == pytest.approx(bench["cells"][0]["metrics"]["T_fitted"], rel=1e-12)
        one = [c for c in abl["cells"] if c["annotations"] == 1][0]
        assert one["metrics"]["T_fitted"] != full["metrics"]["T_fitted"]

    def test_mcts_sweep_variance_shrinks(self, annotated):
        cfg = ExperimentConfig(methods=("mcts",), mc_S=5, seeds=tuple(range(12)), ablation={"axis": "mcts-s", "values": [1, 50]})
        rep = run_ablation(annotated, cfg)
        std = {r["mcts-s"]: r["T"]["std"] for r in rep["aggregate"]}
        assert std[50] < std[1]


class TestTheory:
    def test_degenerate(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(400, 3)) * 3
        ds = LogitDataset(z, one_hot(rng.integers(0, 3, 400), 3), [str(i) for i in range(400)])
        cfg = ExperimentConfig(methods=("ts", "slts"), mc_S=5)
        th = check_propositions(run_benchmark(ds, cfg), ds, cfg)
        a = th["temperature_order"]
        assert a["status"] == "degenerate: no ambiguity"
        assert a["max_abs_gap"] < 1e-6

    def test_published_temperatures(self, exact):
        cfg = ExperimentConfig(methods=("ts", "slts"), mc_S=5)
        rep = run_benchmark(exact, cfg)
        for c in rep["cells"]:
            c["metrics"]["T_fitted"] = 2.03 if c["method"] == "ts" else 3.18
        th = check_propositions(rep, exact, cfg)
        assert th["temperature_order"]["status"] == "pass"
        assert th["temperature_order"]["per_seed"][0]["gap"] == pytest.approx(1.15)

    def test_entropy_profile_check(self, exact):
        cfg = ExperimentConfig(methods=("ts", "slts"), mc_S=5)
        th = check_propositions(run_benchmark(exact, cfg), exact, cfg)
        assert th["temperature_order"]["holds"]
        b = th["entropy_monotonicity"]
        assert len(b["profile"]) == 10 and b["status"] in ("pass", "fail")
        assert b["threshold"] == 0.9

    def test_needs_ts_cells(self, exact):
        cfg = ExperimentConfig(methods=("uncal",), mc_S=5)
        with pytest.raises(InputError):
            check_propositions(run_benchmark(exact, cfg), exact, cfg)


@pytest.fixture(scope="module")
def report(annotated):
    return run_benchmark(annotated, ExperimentConfig(methods=("uncal", "ts", "slts", "vs"), mc_S=5, seeds=(1, 2)))


class TestReport:
    def test_byte_identical(self, report, annotated, tmp_path):
        cfg = ExperimentConfig.from_dict(report)
        again = run_benchmark(annotated, cfg)
        emit_report(report, tmp_path / "a")
        emit_report(again, tmp_path / "b")
        for name in ("report.json", "reliability.json", "report.csv", "report.md"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_markdown_columns(self, report):
        lines = markdown_table(report).strip().splitlines()
        header = [h.strip() for h in lines[0].strip("|").split("|")]
        assert header[1:7] == list(HEADERS)
        assert len(lines) == 2 + 4

    def test_reliability_file(self, report, tmp_path):
        emit_report(report, tmp_path)
        rel = json.loads((tmp_path / "reliability.json").read_text())
        body = json.loads((tmp_path / "report.json").read_text())
        assert "reliability" not in body["cells"][0]["metrics"]
        bins = rel["cells"][0]["reliability"]["bins"]
        assert len(bins) == 15
        assert set(bins[0]) == {"count", "confidence", "accuracy", "gap"}

    def test_fixed_precision(self, report):
        assert fmt("ece_true", 0.0123456) == "1.2346"
        assert fmt("nll_soft", 0.29349) == "0.293"
        assert fmt("T", None) == ""
        first = csv_text(report).splitlines()[1].split(",")
        assert first[:4] == ["1", "uncal", "false", "ok"]

    def test_theory_files(self, report, annotated, tmp_path):
        cfg = ExperimentConfig.from_dict(report)
        paths = emit_report(check_propositions(report, annotated, cfg), tmp_path)
        assert sorted(p.rsplit("/", 1)[1] for p in paths) == ["theory.json", "theory.md"]

    def test_reference_deviations(self, report):
        rows = reference_deviations(report, "cifar10h-r50")
        assert {r[0] for r in rows} == {"uncal", "ts", "slts", "vs"}
        ts_T = [r for r in rows if r[0] == "ts" and r[1] == "T"][0]
        assert ts_T[3] == 2.03
        assert reference_deviations(report, "unknown") == []
