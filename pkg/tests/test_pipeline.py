import json

import pytest

from aads.pipeline import ConfigError, PipelineError, _stage, demo_config, resolve_threads, run_pipeline, validate_config


def small_config(seed=3):
    cfg = demo_config(seed)
    cfg["camera"] = {"width": 40, "height": 30, "hfov": 70.0}
    cfg["synth"] = {"trws_max_iter": 10}
    cfg["lidar"] = {"enabled": True, "model": {"azimuth_step": 4.0}, "resolution": 48, "mount_height": 1.8}
    return cfg


def test_demo_config_is_valid():
    validate_config(demo_config())


def test_missing_lane_map_named():
    cfg = demo_config()
    del cfg["traffic"]["lanes"]
    with pytest.raises(ConfigError, match="traffic.lanes"):
        validate_config(cfg)
    cfg["traffic"]["enabled"] = False
    validate_config(cfg)


def test_bad_camera_list_named():
    cfg = demo_config()
    cfg["frames"]["cameras"] = [{"eye": [0, 0, 1]}]
    with pytest.raises(ConfigError, match=r"frames.cameras\[0\]"):
        validate_config(cfg)


def test_stage_failure_carries_stage_and_frame(tmp_path):
    cfg = small_config()
    cfg["frames"]["cameras"][1] = {"eye": [1, 1, 1], "target": [1, 1, 1]}
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, tmp_path / "out")
    assert info.value.stage == "camera" and info.value.frame == 1
    assert "frame 1" in str(info.value)


def test_stage_wrapper():
    def boom():
        raise ZeroDivisionError("x")
    with pytest.raises(PipelineError, match="stage 'lidar-sim', frame 4: x"):
        _stage("lidar-sim", 4, boom)


def test_small_run_writes_hashed_manifest(tmp_path):
    man = run_pipeline(small_config(), tmp_path / "out", threads=2)
    files = man["files"]
    assert "traffic/sim.csv" in files and "frames/frame_0001_scan.ply" in files
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk == man
    for rel in files:
        assert (tmp_path / "out" / rel).exists()
    ann = json.loads((tmp_path / "out" / "frames" / "frame_0000.ann.json").read_text())
    assert ann["frame"] == 0 and isinstance(ann["objects"], list)


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv("AADS_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.delenv("AADS_THREADS")
    assert resolve_threads(None) == 1
