"""Feature traces: tap values recorded per (step, tap id) during inversion."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..errors import ContractError


class FeatureTrace:
    """Mapping ``(timestep, tap_id) -> tensor | (q, k)``.

    ``tap_shapes`` optionally declares the per-sample shape of each tap
    (conv: ``(C, h, w)``; attention: ``((N, d), (N, d))``); recorded values
    are checked against it. With ``spill_dir`` the arrays live on disk and
    are loaded on access.
    """

    def __init__(self, tap_ids, tap_shapes=None, spill_dir=None):
        self.tap_ids = tuple(tap_ids)
        if len(set(self.tap_ids)) != len(self.tap_ids):
            raise ContractError("tap ids must be unique")
        self.tap_shapes = dict(tap_shapes or {})
        self.spill_dir = Path(spill_dir) if spill_dir else None
        if self.spill_dir:
            self.spill_dir.mkdir(parents=True, exist_ok=True)
        self._data = {}

    def __len__(self):
        return len(self._data)

    def __contains__(self, key):
        return key in self._data

    @property
    def steps(self):
        seen = []
        for t, _ in self._data:
            if t not in seen:
                seen.append(t)
        return seen

    def _check_shape(self, tap, value):
        want = self.tap_shapes.get(tap)
        if want is None:
            return
        if isinstance(value, tuple):
            got = tuple(tuple(v.shape[1:]) for v in value)
            want = tuple(tuple(w) for w in want)
        else:
            got, want = tuple(value.shape[1:]), tuple(want)
        if got != want:
            raise ContractError(f"tap {tap}: recorded shape {got} != declared {want}")

    def record(self, t, tap, value):
        if tap not in self.tap_ids:
            raise ContractError(f"unknown tap id {tap!r}")
        self._check_shape(tap, value)
        if isinstance(value, tuple):
            value = tuple(v.detach().clone() for v in value)
        else:
            value = value.detach().clone()
        if self.spill_dir:
            key = f"t{t}__{tap}"
            if isinstance(value, tuple):
                for name, v in zip("qk", value):
                    np.save(self.spill_dir / f"{key}__{name}.npy", v.numpy())
            else:
                np.save(self.spill_dir / f"{key}.npy", value.numpy())
            self._data[(t, tap)] = ("spilled", key, isinstance(value, tuple))
        else:
            self._data[(t, tap)] = value

    def record_all(self, t, values: dict):
        for tap in self.tap_ids:
            if tap in values:
                self.record(t, tap, values[tap])

    def get(self, t, tap):
        try:
            value = self._data[(t, tap)]
        except KeyError:
            raise ContractError(f"trace has no entry for step {t}, tap {tap!r}") from None
        if isinstance(value, tuple) and value and value[0] == "spilled":
            _, key, pair = value
            if pair:
                return tuple(torch.from_numpy(np.load(self.spill_dir / f"{key}__{n}.npy")) for n in "qk")
            return torch.from_numpy(np.load(self.spill_dir / f"{key}.npy"))
        return value

    def items(self):
        for t, tap in list(self._data):
            yield (t, tap), self.get(t, tap)

    def save(self, directory):
        """Write ``arrays.npz`` plus ``manifest.json`` (dtype, shapes, taps, steps)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays, entries = {}, []
        for i, ((t, tap), value) in enumerate(self.items()):
            if isinstance(value, tuple):
                arrays[f"e{i}_q"], arrays[f"e{i}_k"] = value[0].numpy(), value[1].numpy()
                entries.append({"t": _jsonable(t), "tap": tap, "kind": "attn", "shape": [list(v.shape) for v in value]})
            else:
                arrays[f"e{i}"] = value.numpy()
                entries.append({"t": _jsonable(t), "tap": tap, "kind": "conv", "shape": list(value.shape)})
        np.savez(directory / "arrays.npz", **arrays)
        dtype = str(next(iter(arrays.values())).dtype) if arrays else "float32"
        manifest = {
            "dtype": dtype,
            "tap_ids": list(self.tap_ids),
            "steps": [_jsonable(s) for s in self.steps],
            "entries": entries,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        trace = cls(manifest["tap_ids"])
        with np.load(directory / "arrays.npz") as arrays:
            for i, e in enumerate(manifest["entries"]):
                if e["kind"] == "attn":
                    val = (torch.from_numpy(arrays[f"e{i}_q"]), torch.from_numpy(arrays[f"e{i}_k"]))
                else:
                    val = torch.from_numpy(arrays[f"e{i}"])
                trace._data[(e["t"], e["tap"])] = val
        return trace

    def map_values(self, fn):
        """New in-memory trace with ``fn`` applied to every tensor (e.g. frame flip)."""
        out = FeatureTrace(self.tap_ids, self.tap_shapes)
        for key, value in self.items():
            out._data[key] = tuple(fn(v) for v in value) if isinstance(value, tuple) else fn(value)
        return out


def _jsonable(t):
    return t.item() if hasattr(t, "item") else t
