"""Training loop, evaluation and optimizer state handling."""

import csv
import logging

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import RunConfig
from .data import augment, preprocess
from .errors import ConfigurationError, DataError, DivergenceError, FormatError
from .loss import build_gt_pyramid, total_loss
from .metrics import EDGE_THRESHOLDS, MetricReport, evaluate_pair
from .model import SARPN

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "total_loss", "l_depth", "l_grad", "l_normal")


def make_optimizer(params, cfg):
    """Adam with decoupled weight decay (``p <- p - lr * wd * p`` outside the moments)."""
    return torch.optim.AdamW(
        params, lr=cfg.lr_init, betas=(cfg.beta1, cfg.beta2), eps=1e-8, weight_decay=cfg.weight_decay
    )


def optimizer_state(model, opt):
    out = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"{name}/step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(1).clone()
        out[f"{name}/exp_avg"] = st["exp_avg"].detach().clone()
        out[f"{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().clone()
    return out


def load_optimizer_state(model, opt, state):
    for name, p in model.named_parameters():
        if f"{name}/exp_avg" not in state:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(state[f"{name}/step"].reshape(-1)[0])),
            "exp_avg": state[f"{name}/exp_avg"].to(p.dtype).reshape(p.shape).clone(),
            "exp_avg_sq": state[f"{name}/exp_avg_sq"].to(p.dtype).reshape(p.shape).clone(),
        }


def build_model(config: RunConfig, dtype=torch.float32):
    torch.manual_seed(config.train.seed)
    return SARPN(config.model).to(dtype)


def model_from_checkpoint(ckpt: Checkpoint, dtype=torch.float32):
    model = SARPN(ckpt.config.model)
    missing = set(model.state_dict()) ^ set(ckpt.model_state)
    if missing:
        raise ConfigurationError(
            f"checkpoint parameters do not match the {ckpt.config.model.ablation} model: "
            f"{sorted(missing)[:3]}"
        )
    state = {k: v.reshape(model.state_dict()[k].shape) for k, v in ckpt.model_state.items()}
    model.load_state_dict(state)
    return model.to(dtype)


def prepare(samples, config: RunConfig):
    size = (config.model.input_height, config.model.input_width)
    return [preprocess(s, size, config.train.precrop) for s in samples]


def _batch(samples, indices, config, epoch, dtype):
    images, depths = [], []
    for idx in indices:
        s = samples[idx]
        if config.train.augment:
            seed = np.random.SeedSequence([config.train.seed, epoch, int(idx)]).generate_state(1)[0]
            s = augment(s, int(seed))
        images.append(s.image)
        depths.append(s.depth)
    image = torch.from_numpy(np.stack(images)).to(dtype)
    depth = torch.from_numpy(np.stack(depths)[:, None]).to(dtype)
    return image, build_gt_pyramid(depth, config.model.levels, allow_holes=True)


def epoch_order(seed, epoch, n):
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def train(config: RunConfig, samples, resume: Checkpoint = None, on_epoch=None, dtype=torch.float32):
    """Run the training protocol; returns ``(checkpoint, log_rows)``.

    ``samples`` must already be preprocessed (see :func:`prepare`).  Batch
    order and augmentation draws are functions of ``(seed, epoch, index)``
    only, so resuming from an epoch-boundary checkpoint reproduces an
    uninterrupted run exactly.
    """
    if not samples:
        raise DataError("training set is empty")
    tc = config.train
    if resume is not None:
        if resume.config.digest() != config.digest():
            raise ConfigurationError("resume checkpoint was produced with a different config")
        model = model_from_checkpoint(resume, dtype)
    else:
        model = build_model(config, dtype)
    model.train()
    opt = make_optimizer(model.parameters(), tc)
    start_epoch, step = 0, 0
    if resume is not None:
        load_optimizer_state(model, opt, resume.optimizer_state)
        start_epoch, step = resume.epoch, resume.step

    rows = []
    n = len(samples)
    for epoch in range(start_epoch, tc.epochs):
        if tc.max_steps and step >= tc.max_steps:
            break
        lr = tc.learning_rate(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = dict.fromkeys(LOG_FIELDS[2:], 0.0)
        batches = 0
        order = epoch_order(tc.seed, epoch, n)
        for start in range(0, n, tc.batch_size):
            if tc.max_steps and step >= tc.max_steps:
                break
            image, gt = _batch(samples, order[start:start + tc.batch_size], config, epoch, dtype)
            breakdown = total_loss(model(image), gt, config.loss)
            if not torch.isfinite(breakdown.total):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}")
            opt.zero_grad(set_to_none=True)
            breakdown.total.backward()
            opt.step()
            step += 1
            batches += 1
            for k, v in breakdown.summary().items():
                sums[k] += v
        row = {"epoch": epoch, "lr": lr, **{k: v / max(batches, 1) for k, v in sums.items()}}
        rows.append(row)
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, row["total_loss"])
        if on_epoch is not None:
            on_epoch(row, _snapshot(config, model, opt, epoch + 1, step))
    final_epoch = rows[-1]["epoch"] + 1 if rows else start_epoch
    return _snapshot(config, model, opt, final_epoch, step), rows


def _snapshot(config, model, opt, epoch, step):
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(config, state, optimizer_state(model, opt), epoch, step)


def write_log(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])


def read_log(path):
    """Parse an epoch CSV written by the trainer."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_FIELDS:
            raise FormatError(f"{path}: expected header {','.join(LOG_FIELDS)}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(LOG_FIELDS):
                raise FormatError(f"{path}:{lineno}: expected {len(LOG_FIELDS)} fields, got {len(rec)}")
            try:
                row = {k: float(v) for k, v in zip(LOG_FIELDS, rec)}
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
            row["epoch"] = int(row["epoch"])
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no epoch rows")
    return rows


def model_predictor(model):
    """Predictor mapping a preprocessed sample to its finest depth map."""
    model.eval()
    dtype = next(model.parameters()).dtype

    def predict(sample):
        with torch.no_grad():
            image = torch.from_numpy(sample.image[None]).to(dtype)
            return model(image).finest[0, 0].double()

    return predict


def identity_predictor(sample):
    """Oracle returning the ground truth itself."""
    return torch.from_numpy(sample.full_depth).double()


def evaluate(predictor, samples, thresholds=EDGE_THRESHOLDS, epsilon_depth=1e-3):
    """Mean metric report over preprocessed samples.

    Predictions are bilinearly upsampled to the full-resolution ground truth.
    """
    if not samples:
        raise DataError("evaluation set is empty")
    reports = []
    for s in samples:
        gt = s.full_depth if s.full_depth is not None else s.depth
        pred = predictor(s)
        if not torch.isfinite(torch.as_tensor(pred)).all():
            raise DivergenceError("prediction contains non-finite values")
        reports.append(evaluate_pair(pred, gt, thresholds, epsilon_depth))
    return MetricReport.mean(reports)


def predict_pyramid(model, image):
    """Depth pyramid for one ``(3, H, W)`` image."""
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model(torch.as_tensor(image)[None].to(dtype))

