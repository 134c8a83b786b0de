import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bitdlab.diagnostics import mstde
from bitdlab.approx import FeatureMap
from bitdlab.harness import (ExperimentConfig, Problem, auc, emit_outputs, method_to_learner,
                             run_single, run_sweep, seed_material, summarize)
from bitdlab.mdp import Policy


@pytest.fixture(scope="module")
def small_cfg():
    return ExperimentConfig(methods=("TDLambda",), alphas=(0.03,), lambdas=(0.4,), steps=1000,
                            eval_interval=100, seeds=3)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(alphas=())
    with pytest.raises(ValueError):
        ExperimentConfig(steps=0)
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=0)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("SARSA",))
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"stepz": 3})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"methods": ["BiTD_FBi"], "alphas": [0.1], "steps": 10}))
    cfg = ExperimentConfig.load(path)
    assert cfg.methods == ("BiTD_FBi",) and cfg.steps == 10


def test_method_names():
    assert method_to_learner("TD0") == ("TD0", "BiTD_FR")
    assert method_to_learner("BiTD_BiR") == ("BiTD", "BiTD_BiR")
    with pytest.raises(ValueError):
        method_to_learner("BiTD")


def test_td_lambda_zero_equals_td0(small_cfg):
    a = run_single(small_cfg, "TDLambda", 0.03, 0.0, 0)
    b = run_single(small_cfg, "TD0", 0.03, 0.0, 0)
    np.testing.assert_array_equal(a.mstde, b.mstde)


def test_zero_step_size_is_flat(small_cfg):
    problem = Problem.build(small_cfg)
    rec = run_single(small_cfg, "BiTD_FR", 0.0, 0.4, 0, problem)
    net, _ = seed_material(small_cfg, problem, 0)
    m = problem.mdp
    v0 = mstde(net, m, Policy.uniform(m), problem.visit, FeatureMap.triangular(9))
    np.testing.assert_allclose(rec.mstde, v0, rtol=1e-12)


def test_oversized_step_size_flags_divergence(small_cfg):
    rec = run_single(small_cfg, "TDLambda", 10.0, 0.9, 0)
    assert rec.diverged and math.isinf(rec.auc)


def test_runs_are_deterministic(small_cfg):
    a = run_single(small_cfg, "BiTD_FR", 0.03, 0.4, 2)
    b = run_single(small_cfg, "BiTD_FR", 0.03, 0.4, 2)
    assert a == b


def test_seed_streams_ignore_grid_shape(small_cfg):
    wide = replace(small_cfg, alphas=(0.1, 0.03), lambdas=(0.0, 0.4, 0.9),
                   methods=("BiTD_FR", "TDLambda"))
    narrow = run_sweep(small_cfg)[0]
    wide_recs = {r.key: r for r in run_sweep(wide)[0]}
    for r in narrow:
        np.testing.assert_array_equal(r.mstde, wide_recs[r.key].mstde)


def test_summary_mean_is_arithmetic_mean(small_cfg):
    records, summary = run_sweep(small_cfg)
    assert len(summary) == 1 and summary[0].n_seeds == 3
    np.testing.assert_allclose(summary[0].mean_curve, np.mean([r.mstde for r in records], axis=0))
    assert summary[0].best


def test_parallel_and_serial_agree(small_cfg):
    cfg = replace(small_cfg, lambdas=(0.0, 0.8))
    serial = run_sweep(cfg)
    parallel = run_sweep(cfg, workers=2)
    assert serial[0] == parallel[0]
    for a, b in zip(serial[1], parallel[1]):
        np.testing.assert_array_equal(a.mean_curve, b.mean_curve)
        assert a.best == b.best


def test_best_flag_picks_lowest_mean_auc(small_cfg):
    _, summary = run_sweep(replace(small_cfg, alphas=(0.1, 0.01), lambdas=(0.0, 0.9)))
    best = [c for c in summary if c.best]
    assert len(best) == 1
    assert best[0].mean_auc == min(c.mean_auc for c in summary)


def test_td0_runs_once_per_alpha(small_cfg):
    records, _ = run_sweep(replace(small_cfg, methods=("TD0",), lambdas=(0.0, 0.5, 0.9)))
    assert {r.lam for r in records} == {0.0}


def test_auc_trapezoid():
    assert auc(np.array([0, 1, 2]), np.array([1.0, 3.0, 1.0])) == pytest.approx(4.0)
    assert math.isinf(auc(np.array([0, 1]), np.array([1.0, np.inf])))


@given(st.lists(st.floats(0, 100), min_size=2, max_size=20), st.floats(0.01, 10))
def test_lower_curve_has_lower_auc(values, shift):
    y = np.array(values)
    x = np.arange(len(y)) * 100
    assert auc(x, y) < auc(x, y + shift)


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_empty_records_write_headers_only(tmp_path):
    emit_outputs([], summarize([]), tmp_path, svg=True)
    assert len(_rows(tmp_path / "curves.csv")) == 1
    assert _rows(tmp_path / "curves.csv")[0] == ["step", "algorithm", "alpha", "lambda", "seed",
                                                 "mstde", "rmsve"]
    assert len(_rows(tmp_path / "summary.csv")) == 1
    assert (tmp_path / "curves.svg").read_text().startswith("<svg")


def test_curve_rows_count(tmp_path, small_cfg):
    cfg = replace(small_cfg, seeds=2)
    records, summary = run_sweep(cfg)
    emit_outputs(records, summary, tmp_path)
    n_points = cfg.steps // cfg.eval_interval + 1
    assert len(_rows(tmp_path / "curves.csv")) - 1 == 2 * n_points


def test_outputs_are_byte_identical(tmp_path, small_cfg):
    for sub in ("a", "b"):
        records, summary = run_sweep(small_cfg)
        emit_outputs(records, summary, tmp_path / sub, svg=True)
    for name in ("curves.csv", "summary.csv", "mean_curves.csv", "curves.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs([], [], blocker / "sub")


def test_custom_environment_runs():
    from oracles import SMALL_SPEC
    cfg = ExperimentConfig(environment=SMALL_SPEC, features="one_hot", methods=("BiTD_FBi",),
                           alphas=(0.05,), lambdas=(0.5,), steps=500, seeds=1)
    rec = run_single(cfg, "BiTD_FBi", 0.05, 0.5, 0)
    assert not rec.diverged and rec.mstde[-1] < rec.mstde[0]
