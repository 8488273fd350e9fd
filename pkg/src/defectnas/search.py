"""The progressive, deeply-supervised bilevel architecture search.

The training set is split 6:4 into an architecture split (alpha updates) and
a weight split (w updates). The search runs K stages; each stage starts with
weight-only warm-up epochs to re-stabilize after pruning, then alternates
single-batch w and alpha steps until both splits are exhausted, and ends by
pruning every edge to the stage's top-k surviving ops. After the final stage
each edge carries one op and the genotype is decoded.

Supernet weights carry across stage boundaries (warm restart). All batch
orders derive statelessly from (seed, stage, epoch, split), so a checkpoint
resumed at an epoch boundary replays exactly the run it interrupted.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .arch import ArchWeights, decode_genotype, prune_edges
from .config import (config_digest, dumps_config, loads_config,
                     network_config, validate_config)
from .data import samples_to_tensors
from .exceptions import ConfigError, DataError, SearchDivergedError, StateError
from .fileio import append_jsonl, atomic_save_torch
from .losses import debug_checks_enabled, total_loss, verify_bundle
from .rng import numpy_rng
from .supernet import build_supernet

CHECKPOINT_VERSION = 1


class SearchState:
    """Everything the search mutates: networks, weights, optimizers, counters."""

    def __init__(self, cfg, supernet, arch, splits, seed):
        self.cfg = cfg
        self.supernet = supernet
        self.arch = arch
        self.images_arch, self.masks_arch, self.images_weight, self.masks_weight = splits
        self.seed = seed
        self.stage = 1
        self.epoch = 0
        self.pruned_stages = 0
        self.opt_weight = None
        self.opt_alpha = None
        self.rebuild_optimizers()

    def rebuild_optimizers(self):
        cfg = self.cfg
        self.opt_weight = torch.optim.SGD(
            self.supernet.parameters(), lr=cfg.weight_lr,
            momentum=cfg.weight_momentum, weight_decay=cfg.weight_decay)
        if self.opt_alpha is None:
            self.opt_alpha = torch.optim.Adam(
                self.arch.parameters(), lr=cfg.arch_lr,
                weight_decay=cfg.arch_weight_decay)


def _split_samples(samples, cfg, seed):
    if not samples:
        raise DataError("search requires a non-empty train split")
    if len(samples) < 2:
        raise DataError(
            "search needs at least 2 samples to form disjoint "
            "architecture/weight splits")
    images, masks = samples_to_tensors(samples)
    order = numpy_rng(seed, "search", "split").permutation(len(samples))
    n_arch = min(max(int(round(cfg.arch_split * len(samples))), 1),
                 len(samples) - 1)
    arch_idx = torch.from_numpy(order[:n_arch].copy())
    weight_idx = torch.from_numpy(order[n_arch:].copy())
    return (images[arch_idx], masks[arch_idx],
            images[weight_idx], masks[weight_idx])


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def interleave_steps(n_weight, n_arch, warmup):
    """Step plan for one epoch: every batch of both splits exactly once.

    Warm-up epochs use the weight split only; otherwise weight and alpha
    steps alternate until one split runs out, then the other drains.
    """
    if warmup:
        return ["weight"] * n_weight
    plan = []
    w, a = 0, 0
    while w < n_weight or a < n_arch:
        if w < n_weight:
            plan.append("weight")
            w += 1
        if a < n_arch:
            plan.append("arch")
            a += 1
    return plan


def _loss_on_batch(state, images, masks):
    out = state.supernet(images, state.arch)
    return total_loss(out.prediction, out.branches, masks,
                      n_branches=state.supernet.n_levels,
                      dice_eps=state.cfg.dice_eps,
                      deep_supervision=state.cfg.deep_supervision)


def _check_finite(bundle, state):
    value = float(bundle.loss_total.detach())
    if not math.isfinite(value):
        raise SearchDivergedError(
            f"non-finite loss {value} at stage {state.stage} epoch {state.epoch} "
            f"(loss_out={float(bundle.loss_out.detach())})")


def run_epoch(state, warmup):
    """One search epoch; returns the per-split loss records."""
    cfg = state.cfg
    state.supernet.train()
    batches = {
        "weight": _epoch_batches(
            state.images_weight.shape[0], cfg.batch_size,
            numpy_rng(state.seed, "search", "order", state.stage, state.epoch,
                      "weight")),
        "arch": _epoch_batches(
            state.images_arch.shape[0], cfg.batch_size,
            numpy_rng(state.seed, "search", "order", state.stage, state.epoch,
                      "arch")),
    }
    cursors = {"weight": 0, "arch": 0}
    sums = {"weight": [0.0, 0.0, 0], "arch": [0.0, 0.0, 0]}
    plan = interleave_steps(len(batches["weight"]), len(batches["arch"]), warmup)
    for split in plan:
        idx = batches[split][cursors[split]]
        cursors[split] += 1
        if split == "weight":
            images, masks = state.images_weight[idx], state.masks_weight[idx]
            optimizer = state.opt_weight
        else:
            images, masks = state.images_arch[idx], state.masks_arch[idx]
            optimizer = state.opt_alpha
        optimizer.zero_grad(set_to_none=True)
        bundle = _loss_on_batch(state, images, masks)
        _check_finite(bundle, state)
        if debug_checks_enabled():
            verify_bundle(bundle)
        bundle.loss_total.backward()
        optimizer.step()
        sums[split][0] += float(bundle.loss_out.detach()) * len(idx)
        sums[split][1] += float(bundle.loss_bra.detach()) * len(idx)
        sums[split][2] += len(idx)
    counts = state.arch.alive_counts()
    records = []
    for split in ("weight", "arch"):
        total_out, total_bra, n = sums[split]
        if n == 0:
            continue
        records.append({
            "stage": state.stage,
            "epoch": state.epoch,
            "split": split,
            "loss_out": total_out / n,
            "loss_bra": total_bra / n,
            "alive_min": min(counts),
            "alive_max": max(counts),
        })
    return records


def bilevel_epoch(state):
    """One alternating epoch: w steps on the weight split, alpha on the other."""
    state.last_records = run_epoch(state, warmup=False)
    return state


def save_search_checkpoint(state, path):
    atomic_save_torch({
        "version": CHECKPOINT_VERSION,
        "kind": "search",
        "config": dumps_config(state.cfg),
        "config_digest": config_digest(state.cfg),
        "seed": state.seed,
        "stage": state.stage,
        "epoch": state.epoch,
        "pruned_stages": state.pruned_stages,
        "supernet_state": state.supernet.state_dict(),
        "arch_state": state.arch.export_state(),
        "opt_weight": state.opt_weight.state_dict(),
        "opt_alpha": state.opt_alpha.state_dict(),
    }, path)


def load_search_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "search":
        raise StateError(f"{path} is not a search checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version: {payload.get('version')}")
    return payload


def restore_arch(payload):
    """Rebuild the architecture weights recorded in a search checkpoint."""
    cfg = validate_config(loads_config(payload["config"]))
    arch = ArchWeights(n_intermediate=cfg.n_intermediate,
                       schedule=cfg.schedule, seed=payload["seed"])
    arch.load_state(payload["arch_state"])
    return cfg, arch


def _resume_state(state, payload):
    if payload["config_digest"] != config_digest(state.cfg):
        raise ConfigError(
            "checkpoint was written under a different architecture config")
    if payload["seed"] != state.seed:
        raise ConfigError(
            f"checkpoint seed {payload['seed']} does not match --seed {state.seed}")
    state.arch.load_state(payload["arch_state"])
    state.supernet.sync_alive(state.arch)
    state.supernet.load_state_dict(payload["supernet_state"])
    state.stage = payload["stage"]
    state.epoch = payload["epoch"]
    state.pruned_stages = payload["pruned_stages"]
    state.rebuild_optimizers()
    state.opt_weight.load_state_dict(payload["opt_weight"])
    state.opt_alpha.load_state_dict(payload["opt_alpha"])


def run_search(cfg, samples, seed, log_path=None, checkpoint_path=None,
               resume=False, epoch_callback=None):
    """Execute the staged search and return the decoded genotype.

    ``epoch_callback(state)`` runs after each epoch's checkpoint; returning
    True stops the search early (it can be resumed from the checkpoint).
    """
    cfg = validate_config(cfg)
    splits = _split_samples(samples, cfg, seed)
    net_cfg = network_config(cfg, role="search")
    supernet = build_supernet(net_cfg, seed)
    arch = ArchWeights(n_intermediate=cfg.n_intermediate, schedule=cfg.schedule,
                       seed=seed)
    state = SearchState(cfg, supernet, arch, splits, seed)

    if resume:
        if checkpoint_path is None:
            raise ConfigError("resume requested without a checkpoint path")
        _resume_state(state, load_search_checkpoint(checkpoint_path))

    n_stages = len(cfg.schedule)
    start_stage = state.stage
    for stage_idx in range(start_stage, n_stages + 1):
        state.stage = stage_idx
        start_epoch = state.epoch + 1 if stage_idx == start_stage else 1
        if state.pruned_stages >= stage_idx:
            state.epoch = 0
            continue
        for epoch in range(start_epoch, cfg.epochs_per_stage + 1):
            state.epoch = epoch
            records = run_epoch(state, warmup=epoch <= cfg.warmup_epochs)
            if log_path is not None:
                for record in records:
                    append_jsonl(log_path, record)
            if checkpoint_path is not None:
                save_search_checkpoint(state, checkpoint_path)
            if epoch_callback is not None and epoch_callback(state):
                return None
        prune_edges(state.arch, cfg.schedule[stage_idx - 1])
        state.supernet.sync_alive(state.arch)
        state.pruned_stages = stage_idx
        state.rebuild_optimizers()
        if checkpoint_path is not None:
            save_search_checkpoint(state, checkpoint_path)
        state.epoch = 0

    return decode_genotype(state.arch, config_digest=config_digest(cfg),
                           seed=seed)
