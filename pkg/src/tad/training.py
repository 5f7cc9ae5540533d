"""Training loop, checkpointing, streaming evaluation, ablation runner."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from tad.config import TrainConfig, config_hash
from tad.data import Clip, frame_observation, make_samples
from tad.model import TadModel, collate
from tad.objective import LossBreakdown, total_loss
from tad.scoring import (PredictionBuffer, ScoreSeries, frame_auc, fuse_scores,
                         per_class_auc, score_flow)

CHECKPOINT_VERSION = 1


@dataclass
class TrainResult:
    model: TadModel
    history: list[LossBreakdown]      # per-epoch means, as floats
    checkpoint_path: Path | None = None


def _assert_normal_training_set(clips: list[Clip]) -> None:
    for clip in clips:
        if clip.labels.any():
            raise ValueError(
                f"training clip {clip.meta.clip_id!r} contains anomalous frames; "
                f"the training set must be all-normal")


def save_checkpoint(path: str | Path, model: TadModel, optimizer, epoch: int,
                    history: list[LossBreakdown], numpy_state: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.cfg),
        "config_hash": config_hash(model.cfg),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "epoch": epoch,
        "history": [dataclasses.asdict(h) for h in history],
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": numpy_state,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def model_from_checkpoint(path: str | Path) -> tuple[TadModel, TrainConfig]:
    payload = load_checkpoint(path)
    cfg = TrainConfig(**{**payload["config"],
                         "betas": tuple(payload["config"]["betas"])})
    model = TadModel(cfg)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, cfg


def train(cfg: TrainConfig, clips: list[Clip], out: str | Path | None = None,
          resume: str | Path | None = None, log=None) -> TrainResult:
    """Fit on all-normal clips; optionally checkpoint to out each epoch.

    Resuming restores model, optimizer, and both RNG streams, so a resumed
    run produces the same history and weights as an uninterrupted one.
    """
    _assert_normal_training_set(clips)
    torch.manual_seed(cfg.seed)
    shuffle_rng = np.random.default_rng(cfg.seed)
    model = TadModel(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                                 weight_decay=cfg.weight_decay)
    history: list[LossBreakdown] = []
    start_epoch = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["config_hash"] != config_hash(cfg):
            raise ValueError("checkpoint config does not match the requested config")
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        history = [LossBreakdown(**h) for h in payload["history"]]
        start_epoch = payload["epoch"]
        torch.set_rng_state(payload["torch_rng"])
        shuffle_rng.bit_generator.state = payload["numpy_rng"]

    samples = []
    for clip in clips:
        samples.extend(make_samples(clip, cfg.obs_len, cfg.pred_len))
    if not samples:
        raise ValueError("no training samples; clips too short for the window sizes")

    model.train()
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.monotonic()
        order = shuffle_rng.permutation(len(samples))
        sums = {k: 0.0 for k in ("motion", "recon", "flow", "boxes", "sparsity", "total")}
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = collate([samples[i] for i in idx])
            output = model(batch)
            losses = total_loss(output, batch, cfg.lambda1, cfg.lambda2, cfg.lambda3,
                                smooth_eps=1e-8).check_finite()
            optimizer.zero_grad()
            losses.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            flat = losses.to_floats()
            n = len(idx)
            seen += n
            for k in sums:
                sums[k] += getattr(flat, k) * n
        epoch_mean = LossBreakdown(**{k: sums[k] / seen for k in sums})
        history.append(epoch_mean)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} "
                f"total={epoch_mean.total:.5f} flow={epoch_mean.flow:.5f} "
                f"boxes={epoch_mean.boxes:.5f} sparsity={epoch_mean.sparsity:.5f} "
                f"({time.monotonic() - t0:.1f}s)")
        if out is not None:
            save_checkpoint(out, model, optimizer, epoch + 1, history,
                            shuffle_rng.bit_generator.state)
    model.eval()
    return TrainResult(model=model, history=history,
                       checkpoint_path=Path(out) if out is not None else None)


@dataclass
class EvalResult:
    series: list[ScoreSeries]
    auc: float | None                # fused-score frame AUC; None if one class
    report: dict                     # per-category and ego/non-ego breakdown
    warm_frames: int = 0
    mem_fallbacks: int = 0

    def concat(self, attr: str) -> np.ndarray:
        return np.concatenate([getattr(s, attr) for s in self.series])


def _score_clip(model: TadModel, clip: Clip, cfg: TrainConfig):
    """Raw per-frame s_e and s_l for one clip, plus fallback count."""
    T = clip.meta.frames
    obs = [frame_observation(clip, t, cfg.obs_len) for t in range(T)]
    s_e = np.zeros(T)
    s_l = np.zeros(T)
    warm = np.zeros(T, dtype=bool)
    rollouts: list[np.ndarray | None] = [None] * T
    fallbacks = 0
    with torch.no_grad():
        for lo in range(0, T, cfg.batch_size):
            chunk = obs[lo:lo + cfg.batch_size]
            batch = collate(chunk)
            output = model(batch)
            fallbacks += output.mem_fallbacks
            if output.recon is not None:
                recon = output.recon.numpy()
                for i, frame in enumerate(chunk):
                    s_e[lo + i] = score_flow(recon[i], frame.flow)
            if output.rollouts is not None:
                parts = np.split(output.rollouts.numpy(),
                                 np.cumsum(batch.counts.numpy())[:-1])
                for i, frame in enumerate(chunk):
                    rollouts[lo + i] = parts[i]
    if model.has_box_task:
        buffer = PredictionBuffer(cfg.delta, cfg.pred_len)
        for t in range(T):
            boxes = obs[t].obs_boxes[:, -1, :] if obs[t].obs_boxes.size else \
                np.zeros((0, 4))
            s_l[t], warm[t] = buffer.score(t, obs[t].object_ids, boxes)
            if rollouts[t] is not None and len(obs[t].object_ids):
                buffer.push(t, obs[t].object_ids, rollouts[t])
    return s_e, s_l, warm, fallbacks


def evaluate(model: TadModel, clips: list[Clip], cfg: TrainConfig) -> EvalResult:
    """Score every frame of every clip and fuse into the final series.

    Variants with a single score stream fuse trivially: the missing stream
    is all zeros, so the fused score is the normalized surviving stream.
    With normalize_per_clip the fusion is done clip by clip; otherwise the
    normalization statistics span the whole run.
    """
    model.eval()
    raw = []
    fallbacks = 0
    for clip in clips:
        s_e, s_l, warm, fb = _score_clip(model, clip, cfg)
        fallbacks += fb
        raw.append((clip, s_e, s_l, warm))

    if model.has_flow_task and not model.has_box_task:
        alpha = 1.0
    elif model.has_box_task and not model.has_flow_task:
        alpha = 0.0
    else:
        alpha = cfg.alpha

    series = []
    if cfg.normalize_per_clip:
        for clip, s_e, s_l, warm in raw:
            s_f = fuse_scores(s_e, s_l, alpha)
            series.append(ScoreSeries(clip.meta.clip_id,
                                      np.arange(clip.meta.frames), s_e, s_l, s_f,
                                      clip.labels.copy(), warm))
    else:
        all_e = np.concatenate([r[1] for r in raw])
        all_l = np.concatenate([r[2] for r in raw])
        fused = fuse_scores(all_e, all_l, alpha)
        offset = 0
        for clip, s_e, s_l, warm in raw:
            T = clip.meta.frames
            series.append(ScoreSeries(clip.meta.clip_id, np.arange(T), s_e, s_l,
                                      fused[offset:offset + T],
                                      clip.labels.copy(), warm))
            offset += T

    scores = np.concatenate([s.s_f for s in series])
    labels = np.concatenate([s.labels for s in series])
    categories = np.concatenate([[c.meta.category] * c.meta.frames for c, *_ in raw])
    ego = np.concatenate([[c.meta.ego] * c.meta.frames for c, *_ in raw])
    if labels.min() != labels.max():
        report = per_class_auc(scores, labels, categories, ego)
    else:
        # single-class sets (a lone normal clip, say) still get scored,
        # they just have no rankable AUC
        report = {"overall": None, "buckets": {}, "ego": None, "non_ego": None}
    warm_frames = int(sum(s.warm.sum() for s in series))
    return EvalResult(series=series, auc=report["overall"], report=report,
                      warm_frames=warm_frames, mem_fallbacks=fallbacks)


def run_ablation(train_clips: list[Clip], test_clips: list[Clip],
                 base_cfg: TrainConfig, cells: list[dict], seeds: list[int],
                 log=None) -> dict:
    """Train and evaluate one model per (cell, seed) on a shared split.

    Each cell is a dict of TrainConfig overrides (variant, mem_slots,
    shrink_lambda, layers, alpha, delta, ...) with an optional 'name'.
    An empty cell list yields an empty report.
    """
    names: list[str] = []
    results: dict = {}
    for cell in cells:
        overrides = {k: v for k, v in cell.items() if k != "name"}
        name = cell.get("name") or ",".join(
            f"{k}={v}" for k, v in sorted(overrides.items())) or "base"
        names.append(name)
        results[name] = {}
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, seed=seed, **overrides)
            result = train(cfg, train_clips, log=None)
            auc = evaluate(result.model, test_clips, cfg).auc
            results[name][seed] = auc
            if log is not None:
                log(f"{name} seed={seed} auc={auc:.4f}")
    summary = {name: float(np.mean(list(results[name].values()))) for name in names}
    return {"auc": results, "mean_auc": summary,
            "seeds": list(seeds), "cells": names}
