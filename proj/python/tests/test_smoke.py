import math

import numpy as np
import pytest

import iofhmm


def test_calibration():
    b0, scale = iofhmm.calibrate_simulation("tp-scaled", 0.05, 0.95)
    assert b0 == pytest.approx(-math.log(0.95))
    assert scale == pytest.approx(2.9957, abs=1e-4)
    with pytest.raises(iofhmm.ConfigError):
        iofhmm.calibrate_simulation("tp-exp", 0.05, 0.95)


def test_transition_prob_complements():
    w = np.array([0.4, 1.0])
    x = np.array([0.2, 0.7])
    on = iofhmm.transition_prob("tp-scaled", w, w[::-1].copy(), x, 1.5, -1, 1)
    off = iofhmm.transition_prob("tp-scaled", w, w[::-1].copy(), x, 1.5, -1, -1)
    assert on + off == pytest.approx(1.0, abs=1e-15)
    assert iofhmm.transition_prob("sig", np.zeros(1), np.zeros(1), np.ones(1), 1.0, -1, 1) == pytest.approx(0.5)


def test_forward_backward_two_steps():
    node = np.zeros((2, 2))
    edge = np.log(np.array([[0.9, 0.1], [0.2, 0.8]]))
    mu, pair, log_z = iofhmm.forward_backward(node, [edge], True)
    assert mu[0] == -1.0
    assert mu[1] == pytest.approx(2 * 0.1 - 1)
    assert pair[0][0, 1] == pytest.approx(0.1)
    assert log_z == pytest.approx(0.0, abs=1e-14)


def test_roc():
    roc = iofhmm.roc_recovery([1, 0, 1, 0], np.array([0.9, 0.8, 0.3, 0.1]))
    assert roc["auc"] == pytest.approx(0.75)
    assert math.isinf(roc["thresholds"][0])


def test_generate_and_fit():
    design = {"family": "tp-scaled", "T": 30, "replicates": 1, "seed": 3, "n_s": 3, "n_y": 10}
    inst = iofhmm.generate_instance(design)
    assert inst["Y"].shape == (10, 30)
    assert (inst["S"][:, 0] == -1).all()
    res = iofhmm.fit(inst["Y"], inst["X"], inst["structure"], config={"mode": "variational-em", "max_outer": 50})
    trace = np.array(res["trace"])
    assert (np.diff(trace) <= 1e-8 * np.maximum(1, np.abs(trace[:-1]))).all()
    assert res["mu"].shape == (3, 30)
    assert res["W"].shape == (3, 8)
    with pytest.raises(iofhmm.ConfigError):
        iofhmm.fit(inst["Y"], inst["X"], inst["structure"], family="sig", config={"mode": "variational-em"})


def test_bad_data():
    y = np.full((2, 4), np.nan)
    with pytest.raises(iofhmm.DataError):
        iofhmm.fit(y, np.zeros((1, 4)), [(0, 0), (1, 0)])


def test_pipeline_rerun(tmp_path):
    iofhmm.simulate({"family": "tp-scaled", "T": 20, "replicates": 1, "seed": 5, "n_s": 3, "n_y": 6}, tmp_path / "data")
    manifest = iofhmm.infer(tmp_path / "data", tmp_path / "fit", {"mode": "variational-em"})
    assert manifest["command"] == "infer"
    iofhmm.evaluate(tmp_path / "fit", tmp_path / "data", tmp_path / "eval")
    assert (tmp_path / "eval" / "auc.csv").exists()
    iofhmm.rerun(tmp_path / "fit" / "manifest.json", tmp_path / "again")
    assert iofhmm.output_digests(tmp_path / "again") == iofhmm.output_digests(tmp_path / "fit")
    with pytest.raises(iofhmm.ConfigError):
        iofhmm.simulate({"family": "tp-scaled"}, tmp_path / "x")
