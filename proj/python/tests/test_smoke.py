import math

import numpy as np
import pytest

import relrefine

SMALL = """[run]
train_sequences = 1
eval_sequences = 1

[scenario]
frames = 8
object_counts = 8,4,2
extent = 50

[intra]
hidden = 8
iterations = 1
train_iterations = 5
batch = 2

[inter]
channels = 8
heads = 2
max_sequence = 4
train_iterations = 5
batch = 4
"""


def test_iou_examples():
    a = relrefine.Box3D(0, 0, length=2, width=2)
    assert relrefine.bev_iou(a, a) == pytest.approx(1.0)
    b = relrefine.Box3D(1, 0, length=2, width=2)
    assert relrefine.bev_iou(a, b) == pytest.approx(1 / 3)
    c = relrefine.Box3D(0, 0, length=2, width=2, yaw=math.pi / 2)
    assert relrefine.bev_iou(a, c) == pytest.approx(1.0)
    assert relrefine.heading_delta(0.0, math.pi) == pytest.approx(math.pi)


def test_radius_graph_matches_brute_force():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 20, size=(80, 2))
    got = relrefine.radius_graph(pts, 2.5)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    for i, nb in enumerate(got):
        want = [j for j in range(len(pts)) if j != i and d[i, j] <= 2.5]
        assert nb == want
    with pytest.raises(ValueError):
        relrefine.radius_graph(np.zeros((3, 3)), 1.0)


def test_counts():
    assert relrefine.count_intra(0) == 0
    assert relrefine.count_intra(50) < 0.5e9
    inter = relrefine.count_inter(50, 100)
    assert 1.6e9 < inter < 6.4e9
    assert relrefine.count_dense_gnn(50, 100) / inter >= 10


def test_simulate_and_evaluate(tmp_path):
    scene = tmp_path / "eval.jsonl"
    n = relrefine.simulate(str(scene), split="eval", config=SMALL, seed=4)
    assert n == 8
    report = relrefine.evaluate_scene(scene)
    raw = report["stages"][0]
    assert raw["name"] == "raw"
    for cls in ("Vehicle", "Pedestrian", "Cyclist"):
        assert raw[cls]["APH"] <= raw[cls]["AP"]


def test_pipeline_is_deterministic(tmp_path):
    a = relrefine.run_pipeline(SMALL, seed=2)
    b = relrefine.run_pipeline(SMALL, seed=2, out_dir=tmp_path / "run")
    assert a == b
    assert [s["name"] for s in a["stages"]] == ["raw", "intra", "inter"]
    assert (tmp_path / "run" / "report.json").exists()
    assert "[intra]" in relrefine.default_config()
