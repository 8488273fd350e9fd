"""Analytic parameter and FLOP accounting.

FLOPs are reported as multiply-accumulates times two, plus bias additions,
so every number is auditable: a convolution contributes
2 * k_h * k_w * (C_in / groups) * C_out * H_out * W_out, a linear map
2 * in * out, and pooling, normalization, activation, and resize layers one
or two ops per element. Element-wise sums between feature maps and the
functional reductions inside attention gates are not counted.

Counting walks the module tree with shape-recording forward hooks; any leaf
layer type without a registered rule raises an accounting error naming it.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .exceptions import AccountingError
from .ops import ZeroOp


def _conv2d(m, out):
    k = m.weight.shape[2] * m.weight.shape[3]
    macs = k * (m.in_channels // m.groups) * out.numel()
    return 2 * macs + (out.numel() if m.bias is not None else 0)


def _linear(m, out):
    macs = m.in_features * out.numel()
    return 2 * macs + (out.numel() if m.bias is not None else 0)


_RULES = {
    nn.Conv2d: _conv2d,
    nn.Linear: _linear,
    nn.BatchNorm2d: lambda m, out: 2 * out.numel(),
    nn.ReLU: lambda m, out: out.numel(),
    nn.Sigmoid: lambda m, out: out.numel(),
    nn.MaxPool2d: lambda m, out: out.numel(),
    nn.AvgPool2d: lambda m, out: out.numel(),
    nn.AdaptiveAvgPool2d: lambda m, out: out.numel(),
    nn.Upsample: lambda m, out: out.numel(),
    nn.Identity: lambda m, out: 0,
    ZeroOp: lambda m, out: 0,
}

_CONTAINER_TYPES = (nn.Sequential, nn.ModuleList, nn.ModuleDict)


def _rule_for(module):
    for cls, rule in _RULES.items():
        if type(module) is cls:
            return rule
    return None


def count_params_flops(module, input_shape=None, forward=None):
    """Count trainable parameters and per-image FLOPs of a network.

    ``forward`` overrides how the dummy input is pushed through the module
    (needed when forward takes extra arguments); it receives the input tensor.
    """
    params = sum(p.numel() for p in module.parameters() if p.requires_grad)
    total = [0]
    handles = []
    try:
        for name, sub in module.named_modules():
            if list(sub.children()):
                continue
            rule = _rule_for(sub)
            if rule is None:
                if isinstance(sub, _CONTAINER_TYPES):
                    continue
                raise AccountingError(
                    f"no accounting rule for layer {name or '<root>'} "
                    f"of type {type(sub).__name__}")

            def hook(m, inputs, output, _rule=rule):
                total[0] += int(_rule(m, output))

            handles.append(sub.register_forward_hook(hook))
        was_training = module.training
        module.eval()
        try:
            with torch.no_grad():
                if forward is not None:
                    if input_shape is None:
                        forward(None)
                    else:
                        forward(torch.zeros(1, *input_shape))
                else:
                    module(torch.zeros(1, *input_shape))
        finally:
            module.train(was_training)
    finally:
        for handle in handles:
            handle.remove()
    return int(params), int(total[0])
