import json
import shutil

import pytest

from scenevid.errors import DependencyError
from scenevid.pipeline import RunConfig, Run, RunLock, dir_hash, main, run_command
from scenevid.scene3d import DEMO_SCENE

TINY_MODELS = {
    "image_steps": 3,
    "image_data": 4,
    "video_steps": 2,
    "video_data": 2,
    "video_frames": 16,
    "depth_steps": 3,
    "depth_data": 4,
}


@pytest.fixture(scope="module")
def model_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("models")


def tiny_config(tmp_path, **kw):
    doc = {
        "n_frames": 9,
        "keyframe_spacing": 4,
        "image_steps": 3,
        "video_steps": 2,
        "customization": {"steps": 2, "draws": 2},
        "models": TINY_MODELS,
        "out": str(tmp_path / "run"),
        **kw,
    }
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


def cli(config, model_cache, *args):
    return main([*args, "--config", str(config), "--model-cache", str(model_cache), "-q"])


def test_demo_end_to_end(tmp_path, model_cache, capsys):
    cfg = tiny_config(tmp_path)
    assert cli(cfg, model_cache, "demo") == 0
    report = json.loads(capsys.readouterr().out)
    assert {"ssim", "d_rmse", "consistency"} <= set(report)
    assert report["n_frames"] == 9 and report["keyframe_indices"] == [0, 4, 8]
    out = tmp_path / "run"
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert set(manifest["stages"]) == {"render", "models", "customize", "keyframes", "interpolate", "evaluate"}
    assert manifest["config_hash"] == RunConfig.load(cfg).digest()
    assert len(list((out / "interpolate").glob("frame_*.png"))) == 9
    # a second run finds everything current
    assert cli(cfg, model_cache, "demo") == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert all(s["skipped"] for s in manifest["stages"].values())


def test_render_counts_and_is_bit_identical(tmp_path, model_cache):
    a = tiny_config(tmp_path / "a", n_frames=33)
    b = tiny_config(tmp_path / "b", n_frames=33)
    assert cli(a, model_cache, "render") == 0 and cli(b, model_cache, "render", "--stage-cache", "off") == 0
    packs_a = tmp_path / "a" / "run" / "render"
    assert len(list((packs_a / "packs").glob("*.rgb.png"))) == 33
    assert dir_hash(packs_a) == dir_hash(tmp_path / "b" / "run" / "render")


def test_corrupt_scene_reports_line(tmp_path, model_cache, capsys):
    bad = tmp_path / "bad.scene"
    bad.write_text(DEMO_SCENE.read_text() + "mesh fg box size=banana\n")
    cfg = tiny_config(tmp_path, scene=str(bad))
    assert cli(cfg, model_cache, "render") == 2
    err = capsys.readouterr().err
    n_lines = len(bad.read_text().splitlines())
    assert f":{n_lines}:" in err


def test_exit_codes_for_config_and_dependency_errors(tmp_path, model_cache, capsys):
    cfg = tiny_config(tmp_path)
    assert cli(cfg, model_cache, "keyframes") == 3
    assert "scenevid render" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["render", "--config", str(broken)]) == 2
    wrong = tiny_config(tmp_path, bogus=1)
    assert cli(wrong, model_cache, "render") == 2


def test_missing_adapter_cites_customize(tmp_path, model_cache):
    cfg = RunConfig.load(tiny_config(tmp_path))
    run_command("demo", cfg, cache_dir=model_cache)
    shutil.rmtree(tmp_path / "run" / "customize" / "adapter")
    with pytest.raises(DependencyError) as err:
        run_command("interpolate", cfg, cache_dir=model_cache)
    assert err.value.command == "customize"


def test_stage_isolation(tmp_path, model_cache):
    cfg = RunConfig.load(tiny_config(tmp_path))
    run_command("demo", cfg, cache_dir=model_cache)
    changed = cfg.override(interpolation={"tau_conv": 0.0, "tau_sa": 0.5, "conv_taps": ["up1.conv"]})
    run = Run(changed, cache_dir=model_cache)
    fresh = {s: run.current(s) for s in ("render", "models", "customize", "keyframes", "interpolate")}
    assert fresh == {"render": True, "models": True, "customize": True, "keyframes": True, "interpolate": False}
    run_command("demo", changed, cache_dir=model_cache)
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    skipped = {s: v["skipped"] for s, v in manifest["stages"].items()}
    assert skipped == {
        "render": True,
        "models": True,
        "customize": True,
        "keyframes": True,
        "interpolate": False,
        "evaluate": False,
    }


def test_start_index_away_from_input_frame(tmp_path, model_cache):
    cfg = tiny_config(tmp_path, start_index=3, n_frames=12)
    assert cli(cfg, model_cache, "demo") == 0
    keys = json.loads((tmp_path / "run" / "keyframes" / "manifest.json").read_text())
    assert keys["frame_indices"][0] == 3 != keys["input_index"]
    assert keys["frame_indices"] == [3, 7, 11]


def test_lock_excludes_concurrent_commands(tmp_path):
    with RunLock(tmp_path):
        with pytest.raises(Exception, match="locked"):
            with RunLock(tmp_path):
                pass
    (tmp_path / ".lock").write_text("999999999")  # dead owner
    with RunLock(tmp_path):
        pass
    assert not (tmp_path / ".lock").exists()
