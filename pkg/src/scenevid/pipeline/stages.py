"""Pipeline stages with hashed artifacts, dependency checks and caching.

Every stage writes its outputs plus ``stage.json`` into ``<out>/<stage>``.
A stage's input hash covers its own configuration and the output hashes
of the stages it reads; its output hash covers every file it wrote.
"""
from __future__ import annotations

import hashlib
import json
import os
import platform
import shutil
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .. import __version__
from ..customization import LoRAAdapter, train_customization
from ..denoiser import load_denoiser
from ..errors import ConfigError, DependencyError
from ..interpolation import chain
from ..keyframes import KeyframeConfig, KeyframeSet, generate_keyframes, keyframe_indices
from ..metrics import LearnedDepthEstimator, consistency, input_similarity, sequence_d_rmse, ssim
from ..scene3d import foreground_novel_views, read_packs, render_animation, write_packs
from .config import RunConfig, _hash
from .models import ensure_models

STAGE_FILE = "stage.json"
RUN_MANIFEST = "run_manifest.json"

# stage -> (CLI command, upstream stages)
STAGES = {
    "render": ("render", ()),
    "models": ("train", ()),
    "customize": ("customize", ("render", "models")),
    "keyframes": ("keyframes", ("render", "models", "customize")),
    "interpolate": ("interpolate", ("render", "models", "customize", "keyframes")),
    "evaluate": ("evaluate", ("render", "models", "keyframes", "interpolate")),
}
ORDER = list(STAGES)


def dir_hash(directory):
    """Hash of every file below ``directory`` except the stage record."""
    h = hashlib.sha256()
    directory = Path(directory)
    for path in sorted(p for p in directory.rglob("*") if p.is_file() and p.name != STAGE_FILE):
        h.update(path.relative_to(directory).as_posix().encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def stage_config(cfg: RunConfig, stage):
    """The part of the run configuration a stage's outputs depend on."""
    if stage == "render":
        if not cfg.scene_path.exists():
            raise ConfigError(f"scene file not found: {cfg.scene_path}")
        return {"scene": hashlib.sha256(cfg.scene_path.read_bytes()).hexdigest(), "resolution": cfg.resolution, "n_frames": cfg.n_frames}
    if stage == "models":
        return asdict(cfg.model_config())
    if stage == "customize":
        c = cfg.customization_config()
        return {"customization": asdict(c), "input_index": cfg.input_index, "n_views": cfg.n_views, "radius": cfg.view_radius}
    if stage == "keyframes":
        return {
            "steps": cfg.image_steps,
            "injection": asdict(cfg.injection_config()),
            "spacing": cfg.keyframe_spacing,
            "start": cfg.start_index,
            "seed": cfg.seed,
        }
    if stage == "interpolate":
        return {"interpolation": asdict(cfg.interpolation_config())}
    if stage == "evaluate":
        return {"metrics": 1}
    raise ConfigError(f"unknown stage {stage!r}")


class Run:
    """One output directory driven by one :class:`RunConfig`."""

    def __init__(self, cfg: RunConfig, stage_cache=True, cache_dir=None, log=None):
        self.cfg = cfg
        self.out = cfg.out_dir
        self.stage_cache = stage_cache
        self.cache_dir = cache_dir
        self.log = log or (lambda msg: None)

    def path(self, stage):
        return self.out / stage

    # --- records -------------------------------------------------------------

    def record(self, stage):
        try:
            return json.loads((self.path(stage) / STAGE_FILE).read_text())
        except FileNotFoundError:
            return None

    def input_hash(self, stage):
        ups = {u: self.require(u, stage)["output_hash"] for u in STAGES[stage][1]}
        return _hash({"stage": stage, "config": stage_config(self.cfg, stage), "upstream": ups})

    def require(self, upstream, for_stage):
        """Stage record of ``upstream``; raises :class:`DependencyError` if missing or stale."""
        command = STAGES[upstream][0]
        rec = self.record(upstream)
        hint = f"run `scenevid {command}` first"
        if rec is None:
            raise DependencyError(f"{for_stage} needs the {upstream} outputs in {self.path(upstream)}; {hint}", command)
        if dir_hash(self.path(upstream)) != rec["output_hash"]:
            raise DependencyError(f"{upstream} outputs in {self.path(upstream)} were modified or removed; {hint}", command)
        if rec["input_hash"] != self.input_hash(upstream):
            raise DependencyError(f"{upstream} outputs are stale for the current configuration; {hint}", command)
        return rec

    def current(self, stage):
        rec = self.record(stage)
        if rec is None or not self.stage_cache:
            return False
        try:
            return rec["input_hash"] == self.input_hash(stage) and dir_hash(self.path(stage)) == rec["output_hash"]
        except DependencyError:
            return False

    # --- execution -----------------------------------------------------------

    def run_stage(self, stage):
        if self.current(stage):
            self.log(f"{stage}: up to date, skipped")
            rec = self.record(stage)
            self._manifest(stage, rec, skipped=True)
            return rec
        in_hash = self.input_hash(stage)
        target = self.path(stage)
        if target.exists():
            shutil.rmtree(target)
        target.mkdir(parents=True)
        t0 = time.perf_counter()
        getattr(self, "_" + stage)(target)
        rec = {
            "stage": stage,
            "command": STAGES[stage][0],
            "input_hash": in_hash,
            "output_hash": dir_hash(target),
            "upstream": {u: self.record(u)["output_hash"] for u in STAGES[stage][1]},
            "config_hash": self.cfg.digest(),
            "seconds": round(time.perf_counter() - t0, 3),
        }
        (target / STAGE_FILE).write_text(json.dumps(rec, indent=2))
        self._manifest(stage, rec, skipped=False)
        self.log(f"{stage}: done in {rec['seconds']:.1f}s")
        return rec

    def _manifest(self, stage, rec, skipped):
        path = self.out / RUN_MANIFEST
        man = json.loads(path.read_text()) if path.exists() else {}
        if man.get("config_hash") != self.cfg.digest():
            man = {"stages": {}}
        man.update(
            config_hash=self.cfg.digest(),
            config=self.cfg.to_dict(),
            versions={
                "scenevid": __version__,
                "python": platform.python_version(),
                "torch": torch.__version__,
                "numpy": np.__version__,
            },
        )
        entry = {k: rec[k] for k in ("input_hash", "output_hash", "seconds")}
        man["stages"][stage] = {**entry, "skipped": skipped}
        self.out.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(man, indent=2))

    # --- loaders -------------------------------------------------------------

    def packs(self):
        packs, _ = read_packs(self.path("render") / "packs")
        return packs

    def model_paths(self):
        root = self.path("models")
        return {k: root / k for k in ("image", "video", "depth")}

    def customized_image_model(self):
        model = load_denoiser(self.model_paths()["image"])
        LoRAAdapter.load(model, self.path("customize") / "adapter")
        return model

    # --- stage bodies ----------------------------------------------------------

    def _render(self, target):
        scene = self.cfg.build_scene()
        res = self.cfg.resolution or self.cfg.scene_description().resolution
        packs = render_animation(scene, res)
        write_packs(target / "packs", packs, list(scene.camera_track), extra={"scene": str(self.cfg.scene)})

    def _models(self, target):
        paths = ensure_models(self.cfg.model_config(), self.cache_dir, log=self.log)
        for name, src in paths.items():
            shutil.copytree(src, target / name)

    def _customize(self, target):
        packs = self.packs()
        if self.cfg.input_index >= len(packs):
            raise ConfigError(f"input_index {self.cfg.input_index} outside the {len(packs)} rendered frames")
        scene = self.cfg.build_scene()
        res = packs[0].resolution
        views = foreground_novel_views(scene.foreground, self.cfg.n_views, self.cfg.view_radius, resolution=res)
        model = load_denoiser(self.model_paths()["image"])
        result = train_customization(model, packs[self.cfg.input_index].rgb, views, self.cfg.customization_config())
        result.adapter.info.update(input_index=self.cfg.input_index)
        result.adapter.save(target / "adapter")

    def _keyframes(self, target):
        packs = self.packs()
        start = self.cfg.start_index
        if start >= len(packs) - 1:
            raise ConfigError(f"start_index {start} leaves no room for a second keyframe in {len(packs)} frames")
        idx = [start + i for i in keyframe_indices(len(packs) - start, self.cfg.keyframe_spacing)]
        model = self.customized_image_model()
        kcfg = KeyframeConfig(
            steps=self.cfg.image_steps,
            injection=self.cfg.injection_config(),
            prompt=self.cfg.customization_config().input_prompt,
            seed=self.cfg.seed,
        )
        ks = generate_keyframes([packs[i] for i in idx], model, kcfg, frame_indices=idx)
        ks.info.update(adapter_hash=self.record("customize")["output_hash"], input_index=self.cfg.input_index)
        ks.save(target)

    def _interpolate(self, target):
        packs = self.packs()
        keys = KeyframeSet.load(self.path("keyframes"))
        model = load_denoiser(self.model_paths()["video"])
        icfg = self.cfg.interpolation_config()
        n_seg = len(keys) - 1
        seeds = [self.cfg.seed * 1000 + s for s in range(n_seg)]
        first, last = keys.frame_indices[0], keys.frame_indices[-1]
        frames, segments = chain(keys, packs[first : last + 1], model, icfg, seeds)
        write_frames(target, frames, first)
        info = {
            "frame_indices": list(range(first, last + 1)),
            "segments": [list(s.frame_indices) for s in segments],
            "seeds": seeds,
            "config_hash": icfg.digest(),
        }
        (target / "manifest.json").write_text(json.dumps(info, indent=2))

    def _evaluate(self, target):
        report = evaluate_run(self)
        (target / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))


def write_frames(directory, frames, first_index=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for j, f in enumerate(frames):
        img = np.round(np.clip(f, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img).save(directory / f"frame_{first_index + j:04d}.png")
    np.save(directory / "video.npy", np.asarray(frames, dtype=np.float32))


def read_video(directory):
    return np.load(Path(directory) / "video.npy").astype(np.float64)


def evaluate_run(run: Run):
    packs = run.packs()
    info = json.loads((run.path("interpolate") / "manifest.json").read_text())
    idx = info["frame_indices"]
    frames = read_video(run.path("interpolate"))
    ref = [packs[i] for i in idx]
    keys = KeyframeSet.load(run.path("keyframes"))
    estimator = LearnedDepthEstimator.load(run.model_paths()["depth"])
    input_image = packs[run.cfg.input_index].rgb
    return {
        "ssim": float(np.mean([ssim(f, p.rgb) for f, p in zip(frames, ref)])),
        "d_rmse": float(sequence_d_rmse(frames, ref, estimator)),
        "consistency": float(consistency(frames)),
        "input_similarity": float(input_similarity(frames, input_image)),
        "keyframe_d_rmse": float(sequence_d_rmse(keys.frames, [packs[i] for i in keys.frame_indices], estimator)),
        "n_frames": len(frames),
        "frame_indices": [idx[0], idx[-1]],
        "keyframe_indices": list(keys.frame_indices),
        "config_hash": run.cfg.digest(),
    }


# --- locking -------------------------------------------------------------------


class RunLock:
    """Exclusive ``.lock`` file in the output directory; stale locks of dead processes are taken over."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise ConfigError(f"{self.path.parent} is locked by another running command ({self.path})") from None
            with os.fdopen(fd, "w") as f:
                f.write(str(os.getpid()))
            return self
        raise ConfigError(f"could not acquire {self.path}")

    def _stale(self):
        try:
            pid = int(self.path.read_text().strip() or 0)
        except (OSError, ValueError):
            return True
        if pid <= 0:
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False

