import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from gridstab.errors import ConfigError, ValidationError
from gridstab.smallsignal import DEFAULT_MARGIN
from gridstab.sweep import (
    PF_INFEASIBLE, THREADS_ENV, Axis, PointRecord, SweepResult, SweepSpec, load_sweep_spec,
    region_summary, run_sweep, worker_count,
)

from conftest import config_path

SMALL = {
    "axes": [
        {"path": "GFL2.v", "min": 0.94, "max": 0.95, "steps": 2},
        {"path": "GFL2.p", "min": 0.05, "max": 0.10, "steps": 2},
    ],
    "dispatch": {"slack": "GFM1", "units": {"GFM1": {"v": 1.0}}},
}


def _result(axes, verdicts):
    """SweepResult with the given verdict grid (C order over ``axes``)."""
    verdicts = np.asarray(verdicts, dtype=object)
    coords = [tuple(float(a.values[i]) for a, i in zip(axes, idx)) for idx in np.ndindex(verdicts.shape)]
    recs = [PointRecord(c, v, -1.0 if v == "Stable" else 1.0, 0.0, "x")
            for c, v in zip(coords, verdicts.ravel())]
    return SweepResult(tuple(axes), recs, {"config": "test", "version": "0"})


# ---- sweep description ------------------------------------------------------------------------

def test_axis_validation():
    with pytest.raises(ValidationError):
        Axis("GFL2.p", 1.0, 0.0, 5)
    with pytest.raises(ValidationError):
        Axis("GFL2.p", 0.0, 1.0, 1)
    with pytest.raises(ValidationError):
        SweepSpec(axes=())


def test_unknown_axis_path(three_bus):
    spec = SweepSpec.from_dict({"axes": [{"path": "GFL2.nope", "min": 0, "max": 1, "steps": 2}]})
    with pytest.raises(ValidationError):
        run_sweep(three_bus, spec)
    spec = SweepSpec.from_dict({"axes": [{"path": "X9.p", "min": 0, "max": 1, "steps": 2}]})
    with pytest.raises(ValidationError):
        run_sweep(three_bus, spec)


def test_shipped_specs():
    pv = load_sweep_spec(config_path("sweep_pv.json"))
    assert pv.shape == (5, 25, 25)
    assert [a.path for a in pv.axes] == ["GFL2.K_P_s", "GFL2.v", "GFL2.p"]
    assert (pv.axes[2].min, pv.axes[2].max) == (0.01, 1.0)
    pq = load_sweep_spec(config_path("sweep_pq.json"))
    assert pq.axes[1].path == "GFL2.q"
    s39 = load_sweep_spec(config_path("sweep_ieee39.json"))
    assert s39.linked[0].target == "GFL30.p"
    assert pv.margin == DEFAULT_MARGIN


def test_malformed_spec(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"axes": [{"path": "GFL2.p"}]}')
    with pytest.raises(ConfigError):
        load_sweep_spec(path)


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert worker_count(3) == 3
    monkeypatch.setenv(THREADS_ENV, "2")
    assert worker_count(8) == 2
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        worker_count(1)


# ---- run_sweep -------------------------------------------------------------------

def test_small_stable_grid(three_bus):
    res = run_sweep(three_bus, SweepSpec.from_dict(SMALL))
    assert len(res.records) == 4
    assert all(r.verdict == "Stable" for r in res.records)
    assert all(r.re_dominant < -DEFAULT_MARGIN for r in res.records)


def test_anchor_points(three_bus):
    spec = SweepSpec.from_dict({
        "axes": [{"path": "GFL2.K_P_s", "min": 1.0, "max": 2.0, "steps": 2},
                 {"path": "GFL2.v", "min": 0.95, "max": 1.06, "steps": 2},
                 {"path": "GFL2.p", "min": 0.10, "max": 0.60, "steps": 2}],
        "dispatch": {"slack": "GFM1", "units": {"GFM1": {"v": 1.0}}},
    })
    v = run_sweep(three_bus, spec).verdicts()
    assert v[1, 0, 0] == "Stable"    # K = 2, v = 0.95, p = 0.10
    assert v[1, 1, 1] == "Unstable"  # K = 2, v = 1.06, p = 0.60


def test_serial_parallel_identical(three_bus, monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    spec = SweepSpec.from_dict(dict(SMALL, axes=[
        {"path": "GFL2.v", "min": 0.9, "max": 1.1, "steps": 3},
        {"path": "GFL2.p", "min": 0.05, "max": 0.8, "steps": 3}]))
    a = run_sweep(three_bus, spec, parallelism=1).to_csv()
    b = run_sweep(three_bus, spec, parallelism=3).to_csv()
    assert a == b


def test_infeasible_points_recorded(three_bus):
    spec = SweepSpec.from_dict(dict(SMALL, axes=[
        {"path": "GFL2.v", "min": 0.9, "max": 1.0, "steps": 2},
        {"path": "GFL2.p", "min": 0.1, "max": 12.0, "steps": 3}]))
    res = run_sweep(three_bus, spec)
    verdicts = res.verdicts()
    assert verdicts[0, 0] != PF_INFEASIBLE
    assert verdicts[0, -1] == PF_INFEASIBLE and verdicts[1, -1] == PF_INFEASIBLE
    assert math.isnan(res.records[-1].re_dominant)


def test_all_infeasible_warns(three_bus):
    spec = SweepSpec.from_dict(dict(SMALL, axes=[{"path": "GFL2.p", "min": 20.0, "max": 30.0, "steps": 2}]))
    with pytest.warns(RuntimeWarning):
        run_sweep(three_bus, spec)


def test_csv_round_trip(three_bus, tmp_path):
    res = run_sweep(three_bus, SweepSpec.from_dict(SMALL))
    path = tmp_path / "r.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# gridstab sweep config=")
    assert lines[1] == "GFL2.v,GFL2.p,verdict,re_dominant,im_dominant,top_state"
    back = SweepResult.from_csv(path)
    assert [r.verdict for r in back.records] == [r.verdict for r in res.records]
    assert [r.re_dominant for r in back.records] == [r.re_dominant for r in res.records]
    assert back.to_csv() == res.to_csv()


def test_parameter_axis_applied(three_bus):
    spec = SweepSpec.from_dict(dict(SMALL, axes=[
        {"path": "GFL2.K_P_s", "min": 1.0, "max": 2.0, "steps": 2},
        {"path": "GFL2.p", "min": 0.05, "max": 0.1, "steps": 2}]))
    res = run_sweep(three_bus, spec)
    assert res.records[0].re_dominant != res.records[2].re_dominant


# ---- region_summary ---------------------------------------------------------------

def test_summary_all_stable():
    axes = (Axis("U.v", 0.9, 1.1, 3), Axis("U.p", 0.0, 1.0, 4))
    s = region_summary(_result(axes, [["Stable"] * 4] * 3))
    assert set(s.max_stable_p.values()) == {1.0}
    assert s.stable_count == s.total == 12
    assert s.trends["v_nonincreasing"] == 1.0


def test_summary_triangle():
    axes = (Axis("U.v", 0.9, 1.1, 3), Axis("U.p", 0.0, 1.0, 3))
    grid = [["Stable", "Stable", "Stable"],
            ["Stable", "Stable", "Unstable"],
            ["Stable", "Unstable", "Unstable"]]
    s = region_summary(_result(axes, grid), v_from=0.9)
    assert s.max_stable_p == {(0.9,): 1.0, (1.0,): 0.5, (1.1,): 0.0}
    assert s.trends["v_nonincreasing"] == 1.0
    # reversed triangle violates the trend
    s2 = region_summary(_result(axes, grid[::-1]), v_from=0.9)
    assert s2.trends["v_nonincreasing"] == 0.0


def test_summary_no_stable_point():
    axes = (Axis("U.v", 0.9, 1.1, 2), Axis("U.p", 0.0, 1.0, 2))
    s = region_summary(_result(axes, [["Unstable"] * 2] * 2))
    assert all(v == -math.inf for v in s.max_stable_p.values())


def test_summary_q_trend():
    axes = (Axis("U.q", -0.5, 0.5, 3), Axis("U.p", 0.0, 1.0, 3))
    grid = [["Stable", "Stable", "Stable"],      # q = -0.5 (absorbing)
            ["Stable", "Stable", "Unstable"],
            ["Stable", "Unstable", "Unstable"]]  # q = +0.5 (supplying)
    s = region_summary(_result(axes, grid))
    assert s.trends["q_absorb_ge_supply"] == 1.0
    assert region_summary(_result(axes, grid[::-1])).trends["q_absorb_ge_supply"] == 0.0


def test_summary_k_trend():
    axes = (Axis("U.K_P_s", 1.0, 2.0, 2), Axis("U.v", 0.9, 1.0, 2), Axis("U.p", 0.0, 1.0, 2))
    grid = [[["Stable", "Unstable"], ["Unstable", "Unstable"]],
            [["Stable", "Stable"], ["Stable", "Unstable"]]]
    s = region_summary(_result(axes, grid))
    assert s.trends["k_nondecreasing"] == 1.0
    assert s.trends["k_stable_counts"] == (1, 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=4, max_size=4), min_size=3, max_size=3))
def test_summary_matches_brute_force(mask):
    axes = (Axis("U.v", 0.9, 1.1, 3), Axis("U.p", 0.0, 1.0, 4))
    grid = [["Stable" if b else "Unstable" for b in row] for row in mask]
    s = region_summary(_result(axes, grid))
    assert s.total == 12 and s.stable_count == sum(map(sum, mask))
    for i, v in enumerate(axes[0].values):
        ps = [p for p, b in zip(axes[1].values, mask[i]) if b]
        assert s.max_stable_p[(float(v),)] == (max(ps) if ps else -math.inf)
