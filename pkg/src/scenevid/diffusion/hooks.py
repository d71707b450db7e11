"""Per-call hook bundle understood by the toy denoisers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional


@dataclass
class TapHooks:
    """Optional interventions at the denoiser's declared tap points.

    conv(tap_id, value) -> value
        may replace a conv block output before it flows onward.
    attn(tap_id, q, k) -> (q, k)
        may replace self-attention queries/keys (values always stay generated).
    processor(q, k, v, heads) -> out
        replaces the self-attention kernel (used for extended attention).
    recorder:
        dict filled with ``tap_id -> value`` (conv tensor or ``(q, k)``).
    """

    conv: Optional[Callable] = None
    attn: Optional[Callable] = None
    processor: Optional[Callable] = None
    recorder: Optional[dict] = None


def resolve(hooks, step, t):
    """``hooks`` may be None, a TapHooks, or a callable ``(step, t) -> TapHooks | None``."""
    if hooks is None or isinstance(hooks, TapHooks):
        return hooks
    return hooks(step, t)
