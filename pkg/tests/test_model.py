import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from edgevtp import data
from edgevtp.data import SyntheticSpec
from edgevtp.model import EdgeVTP, ModelConfig, batch_edges, fit_scales, make_batch
from edgevtp.numerics import container

from conftest import tiny_model_config


def _corpus(n=4):
    return data.synthesize_corpus(SyntheticSpec(seed=5, n_vehicles=5), n, t_in=5, t_out=6)


def test_batch_centers_each_window_and_weights_slots():
    ws = _corpus(3)
    b = make_batch(ws)
    assert b.n_vehicles == sum(w.n for w in ws)
    start = 0
    for i, w in enumerate(ws):
        rows = slice(start, start + w.n)
        np.testing.assert_allclose(b.anchors[rows].mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(b.positions[rows] + b.shift[rows, None], w.positions_in, atol=1e-12)
        assert np.all(b.window_index[rows] == i)
        start += w.n
    assert b.slot_weight.sum() * ws[0].t_out == pytest.approx(1.0)


def test_batch_edges_never_cross_windows():
    ws = _corpus(3)
    b = make_batch(ws)
    for i, j in batch_edges(b, 1e6, 10).pairs():
        assert b.window_index[i] == b.window_index[j]


def test_fit_scales_values():
    ws = _corpus(4)
    s = fit_scales(ws)
    futures = np.concatenate([(w.futures - w.last_positions[:, None])[w.mask > 0] for w in ws])
    assert s["out_scale"] == pytest.approx(np.sqrt(np.mean(futures ** 2)))
    disp = np.concatenate([w.displacements_in[:, 1:].reshape(-1, 2) for w in ws])
    np.testing.assert_allclose(s["disp_shift"], disp.mean(axis=0))
    assert fit_scales([]) == {"pos_scale": 1.0, "disp_shift": (0.0, 0.0),
                              "disp_scale": (1.0, 1.0), "out_scale": 1.0}


def test_config_dict_round_trip():
    cfg = tiny_model_config(k=math.inf, disp_shift=(0.5, -0.25))
    d = json.loads(json.dumps(cfg.to_dict()))
    assert d["k"] == "inf"
    d["k"] = math.inf
    assert ModelConfig.from_dict(d) == cfg


def test_checkpoint_round_trip_predicts_identically(tmp_path):
    model = EdgeVTP(tiny_model_config(residual=True), seed=4)
    model.save(tmp_path / "m", {"note": 1})
    loaded, meta = EdgeVTP.load(tmp_path / "m")
    assert meta["note"] == 1 and meta["param_count"] == model.n_parameters()
    ws = _corpus(2)
    for (c1, s1), (c2, s2) in zip(model.predict(ws), loaded.predict(ws)):
        assert s1.tobytes() == s2.tobytes()


def test_checkpoint_shape_mismatch(tmp_path):
    EdgeVTP(tiny_model_config(), seed=0).save(tmp_path / "m")
    manifest = json.loads((tmp_path / "m.json").read_text())
    manifest["meta"]["model"]["d_model"] = 16
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    with pytest.raises(container.ContainerError):
        EdgeVTP.load(tmp_path / "m")


def test_checkpoint_kind_checked(tmp_path):
    container.save(tmp_path / "x", {"a": np.zeros(1)}, {"kind": "scene-windows"})
    with pytest.raises(container.ContainerError, match="not an EdgeVTP checkpoint"):
        EdgeVTP.load(tmp_path / "x")


def test_default_parameter_count_is_compact():
    assert EdgeVTP(ModelConfig(), seed=0).n_parameters() < 200_000
    assert EdgeVTP(tiny_model_config(residual=True), seed=0).n_parameters() <= 5000


def test_predict_horizon_override():
    model = EdgeVTP(tiny_model_config(), seed=0)
    (ctrl, samples), = model.predict(_corpus(1), t_out=50)
    assert samples.shape[1:] == (50, 2)
    np.testing.assert_allclose(samples[:, -1], ctrl[:, 4], atol=1e-12)


def test_pure_python_fallback_selected_by_environment():
    env = dict(os.environ, EDGEVTP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from edgevtp import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
