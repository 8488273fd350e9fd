"""Retraining of the decoded network, evaluation, and their checkpoints."""

from __future__ import annotations

import math

import numpy as np
import torch

from .complexity import count_params_flops
from .config import config_digest, dumps_config, loads_config, network_config, validate_config
from .data import samples_to_tensors
from .exceptions import ConfigError, DataError, SearchDivergedError, StateError
from .fileio import append_jsonl, atomic_save_torch
from .genotype import parse_genotype, serialize_genotype
from .losses import debug_checks_enabled, total_loss, verify_bundle
from .metrics import segmentation_metrics
from .rng import numpy_rng
from .supernet import build_discrete_network

CHECKPOINT_VERSION = 1


def check_genotype_config(genotype, cfg):
    """Reject retraining a genotype under a different architecture config."""
    digest = config_digest(cfg)
    if genotype.config_digest and genotype.config_digest != digest:
        raise ConfigError(
            f"genotype was searched under config digest {genotype.config_digest}, "
            f"current config digests to {digest}")


def retrain(cfg, genotype, samples, seed, epochs=None, log_path=None,
            checkpoint_path=None):
    """Train the decoded network from fresh initialization.

    Returns the trained network and the final epoch's mean total loss.
    """
    cfg = validate_config(cfg)
    check_genotype_config(genotype, cfg)
    if not samples:
        raise DataError("retraining requires a non-empty train split")
    epochs = cfg.retrain_epochs if epochs is None else epochs
    images, masks = samples_to_tensors(samples)
    net = build_discrete_network(genotype, network_config(cfg, role="discrete"),
                                 seed)
    optimizer = torch.optim.SGD(net.parameters(), lr=cfg.weight_lr,
                                momentum=cfg.weight_momentum,
                                weight_decay=cfg.weight_decay)
    net.train()
    final_loss = math.nan
    for epoch in range(1, epochs + 1):
        order = numpy_rng(seed, "retrain", "order", epoch).permutation(len(samples))
        sums = [0.0, 0.0, 0.0, 0]
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            optimizer.zero_grad(set_to_none=True)
            out = net(images[idx])
            bundle = total_loss(out.prediction, out.branches, masks[idx],
                                n_branches=net.n_levels, dice_eps=cfg.dice_eps,
                                deep_supervision=cfg.deep_supervision)
            value = float(bundle.loss_total.detach())
            if not math.isfinite(value):
                raise SearchDivergedError(
                    f"non-finite loss {value} at retrain epoch {epoch}")
            if debug_checks_enabled():
                verify_bundle(bundle)
            bundle.loss_total.backward()
            optimizer.step()
            sums[0] += float(bundle.loss_out.detach()) * len(idx)
            sums[1] += float(bundle.loss_bra.detach()) * len(idx)
            sums[2] += value * len(idx)
            sums[3] += len(idx)
        final_loss = sums[2] / sums[3]
        if log_path is not None:
            append_jsonl(log_path, {
                "stage": 0, "epoch": epoch, "split": "train",
                "loss_out": sums[0] / sums[3], "loss_bra": sums[1] / sums[3],
                "alive_min": 1, "alive_max": 1,
            })
    if checkpoint_path is not None:
        save_retrain_checkpoint(net, cfg, genotype, seed, epochs, checkpoint_path)
    return net, final_loss


def save_retrain_checkpoint(net, cfg, genotype, seed, epochs, path):
    atomic_save_torch({
        "version": CHECKPOINT_VERSION,
        "kind": "retrain",
        "config": dumps_config(cfg),
        "config_digest": config_digest(cfg),
        "seed": seed,
        "epochs": epochs,
        "genotype": serialize_genotype(genotype),
        "model_state": net.state_dict(),
    }, path)


def load_retrain_checkpoint(path):
    """Rebuild the trained network stored in a retrain checkpoint."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "retrain":
        raise StateError(f"{path} is not a retrain checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version: {payload.get('version')}")
    cfg = validate_config(loads_config(payload["config"]))
    genotype = parse_genotype(payload["genotype"])
    net = build_discrete_network(genotype, network_config(cfg, role="discrete"),
                                 payload["seed"])
    net.load_state_dict(payload["model_state"])
    return net, cfg, genotype


def predict_dataset(net, samples, batch_size=8):
    """Predictions for a sample list as a (N, H, W) float array."""
    images, _ = samples_to_tensors(samples)
    net.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out = net(images[start:start + batch_size])
            preds.append(out.prediction[:, 0].cpu().numpy())
    return np.concatenate(preds, axis=0)


def evaluate_network(net, samples, threshold=0.5, batch_size=8,
                     count_complexity=True):
    """Segmentation metrics of a trained network on a sample list."""
    preds = predict_dataset(net, samples, batch_size)
    masks = np.stack([s.mask for s in samples])
    record = segmentation_metrics(preds, masks, threshold)
    if count_complexity:
        h, w = net.cfg.input_size
        record.params, record.flops = count_params_flops(
            net, (net.cfg.in_channels, h, w))
    return record, preds
