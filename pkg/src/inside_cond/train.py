"""Training loop, early stopping, cross-validation and result aggregation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import build_dataset
from .losses import combined_loss, dice_score, one_hot
from .networks import build_model
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)

FOREGROUND = (1,)


def _batch_tensors(samples, idx, num_classes, dtype):
    images = np.stack([samples[i].image for i in idx]).astype(dtype)
    conds = np.stack([samples[i].condition for i in idx]).astype(dtype)
    targets = np.stack([one_hot(samples[i].mask, num_classes, dtype)
                        for i in idx])
    return Tensor(images), Tensor(conds), Tensor(targets)


def predict_labels(model, samples, batch_size=16):
    """Hard label maps for a list of samples (forward only)."""
    num_classes = model.config.num_classes
    dtype = next(iter(model.weights.values())).data.dtype
    out = []
    for start in range(0, len(samples), batch_size):
        idx = range(start, min(start + batch_size, len(samples)))
        images, conds, _ = _batch_tensors(samples, idx, num_classes, dtype)
        logits, _ = model.forward(images, conds)
        out.append(logits.data.argmax(axis=1))
    return np.concatenate(out, axis=0)


def evaluate_dice(model, samples, batch_size=16):
    """Mean over samples of the per-sample foreground Dice, plus per-class means."""
    labels = predict_labels(model, samples, batch_size)
    per_sample = []
    per_class_acc = {c: [] for c in FOREGROUND}
    for pred, sample in zip(labels, samples):
        per_class, mean = dice_score(pred, sample.mask, FOREGROUND)
        per_sample.append(mean)
        for c, v in per_class.items():
            per_class_acc[c].append(v)
    return float(np.mean(per_sample)), {c: float(np.mean(v))
                                        for c, v in per_class_acc.items()}


def mean_sigma_for_conditions(model, conditions):
    """Average raw sigma predicted by the model's hypernetworks for the given
    conditioning vectors.  None when the model has no attention layers."""
    dtype = next(iter(model.weights.values())).data.dtype
    z = Tensor(np.asarray(conditions, dtype=dtype))
    values = []
    for net in model.hypernets:
        if net is None or net.kind not in ("inside-multi", "inside-single",
                                           "attention-multi", "attention-single"):
            continue
        params = net.forward(z)
        gauss = params[0] if isinstance(params, tuple) else params
        values.append(gauss.sigma_h_raw.data.mean())
        values.append(gauss.sigma_w_raw.data.mean())
    if not values:
        return None
    return float(np.mean(values))


@dataclass
class TrainResult:
    best_state: dict
    best_val_dice: float
    best_epoch: int
    log: list              # (epoch, train_loss, val_dice) rows
    epochs_run: int


def train_model(model, train_samples, val_samples, loss_cfg, opt_cfg, seed=0):
    """Optimize until max_epochs or until validation Dice stalls for
    `patience` epochs; returns the best-validation checkpoint and the log."""
    cfg = model.config
    dtype = next(iter(model.weights.values())).data.dtype
    opt = Adam(model.parameters(), opt_cfg)
    rng = np.random.default_rng(seed)
    n = len(train_samples)
    best = -1.0
    best_state = model.state_arrays()
    best_epoch = 0
    bad = 0
    log = []
    for epoch in range(1, opt_cfg.max_epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, opt_cfg.batch_size):
            idx = perm[start:start + opt_cfg.batch_size]
            images, conds, targets = _batch_tensors(
                train_samples, idx, cfg.num_classes, dtype)
            logits, sigmas = model.forward(images, conds)
            probs = logits.softmax(axis=1)
            loss = combined_loss(probs, targets, sigmas, loss_cfg, FOREGROUND)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"training diverged: loss = {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_dice, _ = evaluate_dice(model, val_samples, opt_cfg.batch_size)
        log.append((epoch, float(np.mean(losses)), val_dice))
        if val_dice > best:
            best = val_dice
            best_state = model.state_arrays()
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad > opt_cfg.patience:
                break
    model.load_state(best_state)
    return TrainResult(best_state=best_state, best_val_dice=best,
                       best_epoch=best_epoch, log=log, epochs_run=len(log))


def kfold_indices(n, folds, rng):
    """Disjoint validation chunks covering range(n) exactly once."""
    perm = rng.permutation(n)
    return [np.sort(perm[i::folds]) for i in range(folds)]


def fold_split(dataset, fold, folds, rng_seed):
    """Re-pool train+val and carve out the fold's validation chunk; the test
    split stays held out.  folds == 1 keeps the dataset's own train/val."""
    if folds == 1:
        return dataset.splits["train"], dataset.splits["val"]
    pool = dataset.splits["train"] + dataset.splits["val"]
    rng = np.random.default_rng([rng_seed, 9173])
    chunks = kfold_indices(len(pool), folds, rng)
    val_idx = set(int(i) for i in chunks[fold])
    train = [s for i, s in enumerate(pool) if i not in val_idx]
    val = [pool[i] for i in sorted(val_idx)]
    return train, val


@dataclass
class RunResult:
    fold: int
    seed: int
    test_dice: float
    per_class: dict
    mean_sigma: float
    best_epoch: int
    epochs_run: int
    state: dict = field(repr=False, default=None)
    log: list = field(repr=False, default_factory=list)


@dataclass
class CrossValResult:
    runs: list
    mean: float
    std: float
    incomplete: bool = False
    errors: list = field(default_factory=list)


def run_single(cfg, dataset, fold, seed):
    """One (fold, seed) training run; returns RunResult."""
    train_samples, val_samples = fold_split(dataset, fold, cfg.folds,
                                            cfg.dataset_seed)
    model = build_model(cfg.make_backbone(), seed=seed)
    t0 = time.time()
    result = train_model(model, train_samples, val_samples, cfg.loss,
                         cfg.optimizer, seed=seed * 1000 + fold)
    test = dataset.splits["test"]
    test_dice, per_class = evaluate_dice(model, test, cfg.optimizer.batch_size)
    sigma = mean_sigma_for_conditions(model, [s.condition for s in test])
    logger.info("run fold=%d seed=%d dice=%.4f sigma=%s epochs=%d (%.1fs)",
                fold, seed, test_dice, sigma, result.epochs_run, time.time() - t0)
    return RunResult(fold=fold, seed=seed, test_dice=test_dice,
                     per_class=per_class,
                     mean_sigma=float("nan") if sigma is None else sigma,
                     best_epoch=result.best_epoch, epochs_run=result.epochs_run,
                     state=result.best_state, log=result.log)


def cross_validate(cfg, dataset=None):
    """folds x seeds runs; aggregates mean and population std of test Dice."""
    if dataset is None:
        dataset = build_dataset(cfg.dataset_size, cfg.scenario,
                                cfg.dataset_seed, cfg.canvas)
    runs, errors = [], []
    for fold in range(cfg.folds):
        for seed in cfg.seeds:
            try:
                runs.append(run_single(cfg, dataset, fold, seed))
            except FloatingPointError as exc:
                logger.error("run fold=%d seed=%d failed: %s", fold, seed, exc)
                errors.append((fold, seed, str(exc)))
    scores = [r.test_dice for r in runs]
    mean = float(np.mean(scores)) if scores else float("nan")
    std = float(np.std(scores)) if scores else float("nan")
    return CrossValResult(runs=runs, mean=mean, std=std,
                          incomplete=bool(errors), errors=errors)


def aggregate(scores):
    """Mean and population std of a list of run scores."""
    scores = np.asarray(scores, dtype=np.float64)
    return float(scores.mean()), float(scores.std())
