"""Shared helpers: finite-difference gradient checks and tiny configs."""

import numpy as np
import pytest
import torch

from defectnas.config import Config, validate_config

_CRITERION_ATTR = "_acceptance_criterion"


def criterion(label):
    """Tag an acceptance test so its verdict prints as one line."""
    def mark(fn):
        setattr(fn, _CRITERION_ATTR, label)
        return fn
    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    label = getattr(item.function, _CRITERION_ATTR, None)
    if label is not None:
        print(f"\nACCEPTANCE {label}: {'PASS' if report.passed else 'FAIL'}")


def central_difference(loss_fn, param, flat_index, step=1e-3):
    """Central finite difference of loss_fn w.r.t. one parameter element."""
    flat = param.data.view(-1)
    original = flat[flat_index].item()
    with torch.no_grad():
        flat[flat_index] = original + step
    hi = float(loss_fn())
    with torch.no_grad():
        flat[flat_index] = original - step
    lo = float(loss_fn())
    with torch.no_grad():
        flat[flat_index] = original
    return (hi - lo) / (2.0 * step)


def grads_match(analytic, numeric, rel_tol=1e-2, abs_tol=1e-5):
    scale = max(abs(analytic), abs(numeric))
    return abs(analytic - numeric) <= max(abs_tol, rel_tol * scale)


def check_param_gradients(loss_fn, params, picks, step=1e-3,
                          rel_tol=1e-2, abs_tol=1e-5):
    """Compare autograd gradients against central differences.

    ``picks`` is a list of (param_position, flat_index) pairs into ``params``.
    Returns the list of (analytic, numeric) mismatches (empty when all agree).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    failures = []
    for param_pos, flat_index in picks:
        param = params[param_pos]
        analytic = 0.0
        if param.grad is not None:
            analytic = float(param.grad.view(-1)[flat_index])
        numeric = central_difference(lambda: loss_fn().detach(), param,
                                     flat_index, step)
        if not grads_match(analytic, numeric, rel_tol, abs_tol):
            failures.append((param_pos, flat_index, analytic, numeric))
    return failures


@pytest.fixture
def tiny_config():
    """A config small enough for second-scale end-to-end runs."""
    return validate_config(Config(
        image_size=32,
        stem_channels=4,
        schedule=(2, 1),
        epochs_per_stage=2,
        warmup_epochs=1,
        batch_size=4,
        retrain_epochs=2,
    ))


def random_mask_batch(rng, n, h, w, p=0.3):
    return (rng.random((n, h, w)) < p).astype(np.float64)
