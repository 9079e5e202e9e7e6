import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mse_loop, psnr_ref
from wcellnet.data import FrameSample
from wcellnet.metrics import (
    BaselineKind,
    baseline_predict,
    evaluate_baselines,
    mse,
    psnr,
    psnr_capped,
    read_metrics_csv,
    report_from_samples,
    time_grid,
    write_metrics_csv,
)


def test_time_grid():
    np.testing.assert_allclose(time_grid(3), [0.25, 0.5, 0.75])


def test_baselines():
    f, l = np.zeros((2, 2)), np.full((2, 2), 100.0)
    assert np.all(baseline_predict("FFR", f, l, 3) == 0)
    assert np.all(baseline_predict(BaselineKind.LFR, f, l, 3) == 100)
    wf = baseline_predict("WF", f, l, 3)
    np.testing.assert_allclose(wf[:, 0, 0], [25, 50, 75])
    with pytest.raises(ValueError):
        baseline_predict("XX", f, l, 3)


def test_wf_exact_on_linear_ramp():
    f = np.random.default_rng(0).uniform(0, 100, (4, 4))
    slope = np.random.default_rng(1).uniform(0, 30, (4, 4))
    frames = np.stack([f + slope * t for t in range(6)])
    pred = baseline_predict("WF", frames[0], frames[-1], 4)
    np.testing.assert_allclose(pred, frames[1:5], atol=1e-12)


@given(st.lists(st.floats(0, 255), min_size=1, max_size=30), st.integers(0, 1000))
def test_mse_oracle(values, seed):
    a = np.array(values)
    b = np.random.default_rng(seed).uniform(0, 255, a.shape)
    assert mse(a, b) == pytest.approx(mse_loop(a, b), rel=1e-9, abs=1e-9)


def test_psnr():
    assert psnr(1.0) == pytest.approx(psnr_ref(1.0))
    assert psnr(65025.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(0.0)
    assert psnr_capped(0.0) == 200.0


def test_report_and_csv(tmp_path):
    rep = report_from_samples("test", [1.0, 3.0])
    assert rep.mse == 2.0 and rep.psnr == pytest.approx(10 * math.log10(65025 / 2))
    norm = report_from_samples("test", [1.0, 3.0], scale="normalized")
    assert norm.mse == pytest.approx(2.0 / 65025)
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [rep])
    assert path.read_text().splitlines()[0] == "split,n,mse,psnr"
    row = read_metrics_csv(path)[0]
    assert row["split"] == "test" and int(row["n"]) == 2 and float(row["mse"]) == 2.0


def test_evaluate_baselines_names_and_values():
    frames = np.stack([np.full((4, 4), v, dtype=np.uint8) for v in (0, 10, 20, 30, 40)])
    sample = FrameSample(frames)
    reps = {r.split: r for r in evaluate_baselines([sample], split="val")}
    assert set(reps) == {"val:FFR", "val:LFR", "val:WF"}
    assert reps["val:WF"].mse == 0.0 and reps["val:WF"].psnr == 200.0
    assert reps["val:FFR"].mse == pytest.approx((100 + 400 + 900) / 3)
