"""Single-stage baseline: forward-only autoregressive extension from the first frame."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import ContractError
from .dual import InterpolationConfig, interpolate


def autoregressive_chain(first_frame, packs, model, window, config: InterpolationConfig = InterpolationConfig()):
    """Extend from ``first_frame`` in windows of ``window`` frames.

    Each window is one forward trajectory conditioned on the last frame
    produced so far; no later keyframe anchors it. Windows overlap by one
    frame, so the output length equals ``len(packs)``.
    """
    if window < 2:
        raise ContractError("window must hold at least two frames")
    n = len(packs)
    cfg = replace(config, dual=False)
    out = [np.asarray(first_frame)]
    start = 0
    cond = np.asarray(first_frame)
    while start < n - 1:
        stop = min(start + window, n)
        seg = interpolate(cond, cond, packs[start:stop], model, cfg, tuple(range(start, stop)))
        out.extend(seg.frames[1:])
        cond = seg.frames[-1]
        start = stop - 1
    return np.stack(out)
