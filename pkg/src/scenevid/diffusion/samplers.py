"""Deterministic DDIM (eta = 0) and EDM Euler samplers with inversion.

A *denoiser* is any callable ``denoiser(z, t, cond, hooks=None, **kwargs)``
returning predicted noise shaped like ``z``. For variance-preserving
schedules ``t`` is an integer step; for noise ladders it is the ladder
index, the denoiser reading the level from ``sigmas[t]``.
"""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import torch

from ..errors import ConfigError, ContractError, NumericError
from .hooks import TapHooks, resolve
from .schedule import NOISE_LADDER, VARIANCE_PRESERVING, NoiseSchedule
from .trace import FeatureTrace


def ddim_timesteps(schedule: NoiseSchedule, steps):
    """``steps + 1`` increasing step indices from 0 to T-1."""
    if steps < 0 or steps > schedule.T - 1:
        raise ConfigError(f"steps must lie in [0, {schedule.T - 1}], got {steps}")
    if steps == 0:
        return [0]
    return [int(x) for x in np.round(np.linspace(0, schedule.T - 1, steps + 1))]


def ddim_step(schedule: NoiseSchedule, z_t, eps_hat, t, t_prev):
    """Move ``z_t`` from step ``t`` to ``t_prev`` (either direction)."""
    if schedule.kind != VARIANCE_PRESERVING:
        raise ContractError("ddim_step needs a variance-preserving schedule")
    schedule.check_step(t)
    schedule.check_step(t_prev)
    if t == t_prev:
        return z_t
    a_t, a_p = schedule.alphas_bar[t], schedule.alphas_bar[t_prev]
    x0 = (z_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)
    return math.sqrt(a_p) * x0 + math.sqrt(1.0 - a_p) * eps_hat


def _check_finite(eps, step):
    if not torch.isfinite(eps).all():
        raise NumericError(f"denoiser produced non-finite output at step {step}", step=step)


def _with_recorder(h, rec):
    return TapHooks(recorder=rec) if h is None else replace(h, recorder=rec)


def _new_trace(denoiser, spill_dir):
    taps = getattr(denoiser, "tap_ids", ())
    shapes = denoiser.tap_shapes() if hasattr(denoiser, "tap_shapes") else None
    return FeatureTrace(taps, shapes, spill_dir=spill_dir)


def _implicit_step(step, denoiser, z, t_next, cond, h, rec, refine, kwargs):
    """Solve ``z_next = step(z, eps(z_next))`` by ``refine`` fixed-point passes.

    The first pass evaluates at the current latent (plain explicit
    inversion); only the final pass is recorded, so the trace holds the
    features of the latent that sampling will start the reverse step from.
    """
    z_next = z
    for k in range(refine + 1):
        last = k == refine
        hk = _with_recorder(h, rec) if last and rec is not None else h
        eps = denoiser(z_next, t_next, cond, hooks=hk, **kwargs)
        _check_finite(eps, t_next)
        z_next = step(z, eps)
    return z_next


@torch.no_grad()
def ddim_invert(z0, denoiser, schedule, steps, cond=None, hooks=None, spill_dir=None, record=True, refine=1, **kwargs):
    """Run DDIM toward higher noise; returns ``(z_inv, trace)``.

    The model is evaluated at the *target* step. With ``refine = 0`` it sees
    the current latent (the usual explicit inversion); each refinement pass
    re-evaluates at the latest estimate of the target latent, which makes
    the step an approximate inverse of the sampling step.
    """
    if refine < 0:
        raise ConfigError("refine must be nonnegative")
    ts = ddim_timesteps(schedule, steps)
    trace = _new_trace(denoiser, spill_dir)
    z = z0
    for i in range(1, len(ts)):
        t_cur, t_next = ts[i - 1], ts[i]
        rec = {} if record else None
        h = resolve(hooks, i - 1, t_next)
        step = lambda zc, eps: ddim_step(schedule, zc, eps, t_cur, t_next)
        z = _implicit_step(step, denoiser, z, t_next, cond, h, rec, refine, kwargs)
        if record:
            trace.record_all(t_next, rec)
    return z, trace


@torch.no_grad()
def ddim_sample(z_T, denoiser, schedule, steps, cond=None, hooks=None, **kwargs):
    """Deterministic DDIM descent from step T-1 to 0.

    ``hooks(i, t)`` is invoked before every denoiser call and may return a
    :class:`TapHooks` bundle for that call.
    """
    ts = ddim_timesteps(schedule, steps)
    z = z_T
    for i in range(len(ts) - 1, 0, -1):
        t, t_prev = ts[i], ts[i - 1]
        h = resolve(hooks, len(ts) - 1 - i, t)
        eps = denoiser(z, t, cond, hooks=h, **kwargs)
        _check_finite(eps, t)
        z = ddim_step(schedule, z, eps, t, t_prev)
    return z


# --- noise ladder (EDM) ------------------------------------------------------


def ladder_indices(schedule: NoiseSchedule, steps=None):
    """Decreasing-noise indices into the ladder used for ``steps`` updates."""
    if schedule.kind != NOISE_LADDER:
        raise ContractError("EDM sampling needs a noise-ladder schedule")
    n = schedule.T - 1
    steps = n if steps is None else int(steps)
    if steps < 0 or steps > n:
        raise ConfigError(f"steps must lie in [0, {n}], got {steps}")
    if steps == 0:
        return [n]
    return [int(x) for x in np.round(np.linspace(0, n, steps + 1))]


def edm_step(schedule, z, eps_hat, i, i_next):
    """Euler step of dz/dsigma = eps between ladder indices."""
    s, s_next = schedule.sigmas[i], schedule.sigmas[i_next]
    if i == i_next:
        return z
    return z + (s_next - s) * eps_hat


@torch.no_grad()
def edm_invert(z0, denoiser, sigmas: NoiseSchedule, steps=None, cond=None, hooks=None, spill_dir=None, refine=1, **kwargs):
    """Invert a clean video latent up the ladder (sigma_min -> sigma_max).

    ``z0`` is treated as the sample at the lowest ladder level. ``refine``
    works as in :func:`ddim_invert`.
    """
    if z0.ndim < 4 or z0.shape[-4] < 2:
        raise ContractError("edm_invert expects a video latent with at least 2 frames")
    if refine < 0:
        raise ConfigError("refine must be nonnegative")
    idx = ladder_indices(sigmas, steps)[::-1]  # increasing noise
    trace = _new_trace(denoiser, spill_dir)
    z = z0
    for k in range(1, len(idx)):
        i_cur, i_next = idx[k - 1], idx[k]
        rec = {}
        h = resolve(hooks, k - 1, i_next)
        step = lambda zc, eps: edm_step(sigmas, zc, eps, i_cur, i_next)
        z = _implicit_step(step, denoiser, z, i_next, cond, h, rec, refine, kwargs)
        trace.record_all(i_next, rec)
    return z, trace


@torch.no_grad()
def edm_sample(z_T, denoiser, sigmas: NoiseSchedule, steps=None, cond=None, hooks=None, **kwargs):
    idx = ladder_indices(sigmas, steps)
    z = z_T
    for k in range(len(idx) - 1):
        i, i_next = idx[k], idx[k + 1]
        h = resolve(hooks, k, i)
        eps = denoiser(z, i, cond, hooks=h, **kwargs)
        _check_finite(eps, i)
        z = edm_step(sigmas, z, eps, i, i_next)
    return z
