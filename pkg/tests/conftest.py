"""Shared test helpers: tiny profiles, clip factories, and the
finite-difference gradient oracle used to cross-check autograd."""

from __future__ import annotations

import numpy as np
import torch

from tad.config import TrainConfig
from tad.data import SyntheticWorldConfig, generate_clip


def tiny_train_config(**overrides) -> TrainConfig:
    """Config small enough that a forward pass takes milliseconds."""
    base = dict(d_model=16, height=16, width=16, mem_slots=8, shrink_lambda=0.05,
                layers=1, heads=2, roi_size=3, obs_len=3, pred_len=4, delta=2,
                batch_size=8, epochs=2, seed=1)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_world(**overrides) -> SyntheticWorldConfig:
    base = dict(frames=14, height=16, width=16, min_objects=1, max_objects=2,
                noise_sigma=0.02, ego_speed_max=1.0, onset_min=6, onset_max=8,
                dur_min=3, dur_max=4)
    base.update(overrides)
    return SyntheticWorldConfig(**base)


def make_clips(world: SyntheticWorldConfig, kinds, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [generate_clip(world, kind, rng, f"clip_{i:03d}")
            for i, kind in enumerate(kinds)]


def finite_difference_check(loss_fn, named_params, rng: np.random.Generator,
                            picks: int = 8, h: float = 1e-4,
                            rel_tol: float = 1e-3, denom_floor: float = 1e-4):
    """Assert autograd gradients of loss_fn() match central differences.

    loss_fn rebuilds the scalar loss from scratch on every call so in-place
    parameter perturbations are picked up. For each parameter tensor a few
    seeded entries are probed; rel error uses max(|analytic|, |fd|, floor)
    as denominator. Returns the worst (name, index, analytic, fd, rel).
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss_fn().backward()
    worst = ("", -1, 0.0, 0.0, 0.0)
    for name, p in named_params:
        flat = p.data.view(-1)
        grad = (p.grad.reshape(-1) if p.grad is not None
                else torch.zeros_like(flat))
        take = min(picks, flat.numel())
        for i in rng.choice(flat.numel(), size=take, replace=False):
            i = int(i)
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
            fd = (up - down) / (2.0 * h)
            analytic = float(grad[i])
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), denom_floor)
            if rel > worst[4]:
                worst = (name, i, analytic, fd, rel)
            assert rel <= rel_tol, (
                f"gradient mismatch at {name}[{i}]: analytic={analytic:.6e} "
                f"fd={fd:.6e} rel={rel:.3e}")
    return worst
