# Copyright 2026 The BEVTraj Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math

import numpy as np
import pytest

import bevtraj

TINY = """
n_scenes = 6
sim.grid_cells = 24
sim.max_agents = 4
model.d_model = 16
model.n_heads = 2
model.n_points = 2
model.n_bev_queries = 8
model.n_modes = 4
model.max_agents = 4
model.local_attn_layers = 2
model.local_k = 6
model.bda_layers = 2
model.itr_blocks = 2
model.encoder_blocks = 1
train.batch_size = 3
train.epochs = 1
train.pretrain_steps = 2
"""


def test_config_round_trip():
    text = bevtraj.default_config()
    assert "model.d_model = 256" in text
    assert bevtraj.config_hash(text) == bevtraj.config_hash("")
    assert bevtraj.config_hash(TINY) != bevtraj.config_hash("")
    with pytest.raises(bevtraj.BevTrajError, match="bogus"):
        bevtraj.config_hash("bogus = 1")


def test_scene_is_deterministic():
    a = bevtraj.generate_scene(3, TINY)
    b = bevtraj.generate_scene(3, TINY)
    assert a["scene_id"] == b["scene_id"]
    assert a["raster"].shape == (6, 24, 24)
    assert a["seg"].shape == (24, 24)
    np.testing.assert_array_equal(a["raster"], b["raster"])
    assert a["target_id"] in a["agents"]
    assert a["agents"][a["target_id"]].shape[1] == 7


def test_bilinear_sample_at_cell_centres():
    grid = np.random.default_rng(0).normal(size=(1, 2, 4, 5))
    i, j = 2, 3
    pts = np.array([[[(j + 0.5) / 5, (i + 0.5) / 4]]])
    out = bevtraj.bilinear_sample(grid, pts)
    np.testing.assert_allclose(out[0, 0], grid[0, :, i, j], atol=1e-12)


def test_metrics_by_hand():
    traj = np.zeros((2, 3, 2))
    traj[0, :, 1] = 1.0
    traj[1, :, 0] = [0, 1, 2]
    traj[1, 2, 1] = 3.0
    y = np.stack([np.arange(3.0), np.zeros(3)], -1)
    mask = np.ones(3, np.uint8)
    probs = np.array([0.3, 0.7])
    assert bevtraj.min_fde(traj, probs, y, mask, 1) == pytest.approx(3.0)
    assert bevtraj.min_ade(traj, probs, y, mask, 2) == pytest.approx(1.0)
    assert bevtraj.miss_rate([1.9, 2.0, 2.1]) == pytest.approx(1 / 3)
    mask[-1] = 0
    assert bevtraj.min_fde(traj, probs, y, mask, 2) is None


def test_gradcheck_registry():
    results = bevtraj.gradcheck(0)
    assert len({name for name, _, _ in results}) >= 4
    assert all(ok for _, _, ok in results)
    bad = bevtraj.gradcheck(0, "bilinear_sample")
    assert [name for name, _, ok in bad if not ok][0] == "bilinear_sample"


def test_train_eval_predict(tmp_path):
    data = tmp_path / "data"
    assert bevtraj.generate_dataset(1, 6, str(data), TINY) == 6
    assert len(bevtraj.read_dataset(str(data))) == 6
    run = bevtraj.train(TINY, str(data), str(tmp_path / "run"))
    assert run["steps"] == 2
    assert math.isclose(run["last"][0], sum(run["last"][1:]), rel_tol=1e-5)
    rep = bevtraj.evaluate(TINY, run["checkpoint"], str(data), str(tmp_path / "eval"))
    assert rep["samples"] + rep["skipped"] == 6
    assert len(rep["per_layer"]) == 3
    assert (tmp_path / "eval" / "metrics.csv").read_text().splitlines()[0] == (
        "minADE5,minADE10,minFDE1,minFDE10,MissRate"
    )
    p = bevtraj.predict(TINY, run["checkpoint"], str(data), 0)
    assert p["means"].shape == (4, 60, 2)
    assert p["probs"].sum() == pytest.approx(1.0)
    with pytest.raises(bevtraj.BevTrajError, match="model.itr_blocks"):
        bevtraj.evaluate(TINY + "model.itr_blocks = 3\n", run["checkpoint"], str(data))
