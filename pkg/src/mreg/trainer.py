"""Training loop, checkpoint format and split evaluation."""
from __future__ import annotations

import csv
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, asdict, fields

import numpy as np
import torch

from . import evalstat
from .encoder import VideoTextEncoder
from .losses import (BINARY_ALPHA, l2cls, l3cls, l_expert, l_smooth, l_sparsity,
                     total_loss, focal_loss)
from .model import MRegHead, MRegNet, ModelOutput

log = logging.getLogger(__name__)

MAGIC = b"MREG1"
LOSS_COLUMNS = ("l2cls", "l3cls", "lexpert", "lsmooth", "lsparsity", "total")


class DivergenceError(FloatingPointError):
    """Raised when a training step produced a non-finite loss."""


class ShapeMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-5
    batch_size: int = 1
    weight_decay: float = 0.01
    seed: int = 0
    dim: int = 64
    n_patches: int = 16
    n_instances: int = 3
    clip_len: int = 16
    frame_hw: tuple = (48, 48)
    beta: float = 2.0
    kernel_width: int = 3
    thresholds: tuple = (0.5, 1.5)
    lambdas: tuple = (0.01, 0.001)
    focal_gamma: float = 2.0
    grad_clip: float = 5.0
    temperature: float = 0.07
    use_fs: bool = True
    use_amp: bool = True
    use_moe: bool = True
    use_lexpert: bool = True
    regression_or_classification: str = "regression"
    freeze_encoder: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        self.frame_hw = tuple(int(v) for v in self.frame_hw)
        self.thresholds = tuple(float(v) for v in self.thresholds)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if not self.thresholds[0] < self.thresholds[1]:
            raise ValueError(f"thresholds must be increasing, got {self.thresholds}")
        if self.regression_or_classification not in ("regression", "classification"):
            raise ValueError("regression_or_classification must be 'regression' or 'classification'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("frame_hw", "thresholds", "lambdas"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def build_model(config: TrainConfig) -> MRegNet:
    dt = config.torch_dtype
    enc = VideoTextEncoder(config.dim, config.n_patches, config.frame_hw, seed=config.seed, dtype=dt)
    head = MRegHead(config.dim, beta=config.beta, kernel_width=config.kernel_width,
                    thresholds=config.thresholds, use_amp=config.use_amp,
                    use_moe=config.use_moe, mode=config.regression_or_classification,
                    temperature=config.temperature, seed=config.seed, dtype=dt)
    return MRegNet(enc, head)


# --------------------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    state: "OrderedDict[str, np.ndarray]"
    config: dict
    epoch: int = 0
    val_accuracy: float = 0.0
    extra: dict = field(default_factory=dict)


def model_state(model: MRegNet) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, v.detach().cpu().to(torch.float64).numpy().copy())
                       for k, v in model.state_dict().items())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """``MREG1`` | uint64 header length | UTF-8 JSON header | little-endian float64 arrays."""
    arrays = [(k, np.array(v, dtype="<f8", order="C")) for k, v in ckpt.state.items()]
    header = {
        "config": ckpt.config,
        "epoch": int(ckpt.epoch),
        "val_accuracy": float(ckpt.val_accuracy),
        "extra": ckpt.extra,
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an MReg checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    state = OrderedDict()
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(tuple(spec["shape"]))
        state[spec["name"]] = arr.astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{path}: trailing or missing bytes in checkpoint")
    return Checkpoint(state, header["config"], header["epoch"], header["val_accuracy"],
                      header.get("extra", {}))


def model_from_checkpoint(ckpt: Checkpoint, config: TrainConfig | None = None) -> MRegNet:
    cfg = config or TrainConfig.from_dict(ckpt.config)
    model = build_model(cfg)
    current = model.state_dict()
    for k, v in ckpt.state.items():
        if k not in current:
            raise ShapeMismatchError(f"checkpoint parameter {k!r} not present in model")
        if tuple(current[k].shape) != tuple(v.shape):
            raise ShapeMismatchError(
                f"parameter {k!r}: checkpoint shape {tuple(v.shape)} vs model shape {tuple(current[k].shape)}")
    missing = set(current) - set(ckpt.state)
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks parameters {sorted(missing)}")
    model.load_state_dict({k: torch.from_numpy(np.array(v)).to(current[k].dtype)
                           for k, v in ckpt.state.items()})
    model.eval()
    return model


# --------------------------------------------------------------------------- loop

def class_weights(y, n_classes: int = 3) -> list[float]:
    """Inverse-frequency weights normalised so a balanced set gets all ones."""
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes).astype(float)
    n = counts.sum()
    return [float(n / (n_classes * c)) if c > 0 else 1.0 for c in counts]


def compute_losses(out: ModelOutput, y3: int, config: TrainConfig, expert_weights=None):
    y2 = int(y3 > 0)
    a = out.alpha
    parts = {"l2cls": l2cls(out.probs2, a, y2, config.focal_gamma, BINARY_ALPHA)}
    if config.regression_or_classification == "classification":
        probs = torch.softmax(out.instance_scores_expert[:, a], dim=0)
        parts["l3cls"] = focal_loss(probs, y3, config.focal_gamma, expert_weights)
    else:
        parts["l3cls"] = l3cls(out.instance_score_mixed, a, y3)
    if config.use_lexpert and config.use_moe and config.regression_or_classification == "regression":
        parts["lexpert"] = l_expert(out.instance_scores_expert, a, y3, config.focal_gamma,
                                    expert_weights)
    else:
        parts["lexpert"] = 0.0
    parts["lsmooth"] = l_smooth(out.frame_scores_mixed, a)
    parts["lsparsity"] = l_sparsity(out.frame_scores_mixed, a)
    return total_loss(parts, *config.lambdas)


def make_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    """AdamW (decoupled weight decay), moments 0.9/0.999, eps 1e-8."""
    return torch.optim.AdamW(params, lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=config.weight_decay)


def random_alpha(seed: int, tag: int, index: int, n_instances: int) -> int:
    return int(np.random.default_rng([seed, tag, index]).integers(n_instances))


@torch.no_grad()
def predict_outputs(model: MRegNet, X, config: TrainConfig, tag: int = 2) -> list[ModelOutput]:
    model.eval()
    outs = []
    for k in range(len(X)):
        alpha = None if config.use_fs else random_alpha(config.seed, tag, k, config.n_instances)
        outs.append(model(torch.as_tensor(np.asarray(X[k])), alpha=alpha).detach())
    return outs


def summarize(outs: list[ModelOutput], y) -> dict:
    y = np.asarray(y, dtype=np.int64)
    preds = np.array([o.grade_pred for o in outs], dtype=np.int64)
    report = evalstat.evaluate_predictions(preds, y)
    binary = float(np.mean((preds > 0) == (y > 0)) * 100) if len(y) else 0.0
    return {"report": report, "preds": preds, "binary_accuracy": round(binary, 2)}


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    final: Checkpoint
    history: list = field(default_factory=list)
    epoch_history: list = field(default_factory=list)
    diverged: bool = False
    divergence_report: str = ""


def fit_arrays(config: TrainConfig, X_train, y_train, X_val=None, y_val=None,
               progress: bool = False) -> TrainResult:
    """Train on in-memory bags ``[N, I, T, 3, H, W]`` (uint8) with grades ``y``.

    The checkpoint with the best validation accuracy is kept (earliest on ties).
    """
    torch.manual_seed(config.seed)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(X_train) == 0:
        raise ValueError("training set is empty")
    if X_val is None:
        X_val, y_val = X_train, y_train
    y_val = np.asarray(y_val, dtype=np.int64)

    model = build_model(config)
    if config.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_optimizer(params, config)
    weights = class_weights(y_train)
    order_rng = np.random.default_rng([config.seed, 0])

    cfg = config.to_dict()
    best = Checkpoint(model_state(model), cfg, 0, -1.0)
    last_finite = best
    history, epoch_history = [], []
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        for k in order_rng.permutation(len(X_train)):
            alpha = None if config.use_fs else random_alpha(config.seed, 1, step, config.n_instances)
            out = model(torch.as_tensor(np.asarray(X_train[k])), alpha=alpha)
            try:
                loss, parts = compute_losses(out, int(y_train[k]), config, weights)
            except FloatingPointError as exc:
                msg = f"diverged at epoch {epoch}, step {step}: {exc}"
                log.error(msg)
                return TrainResult(best, last_finite, history, epoch_history, True, msg)
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            history.append({"epoch": epoch, "step": step, **{c: getattr(parts, c) for c in LOSS_COLUMNS}})
            step += 1

        summary = summarize(predict_outputs(model, X_val, config, tag=2), y_val)
        acc = summary["report"].accuracy
        epoch_history.append({"epoch": epoch, "val_accuracy": acc,
                              "val_binary_accuracy": summary["binary_accuracy"],
                              "train_loss": float(np.mean([h["total"] for h in history[-len(X_train):]]))})
        last_finite = Checkpoint(model_state(model), cfg, epoch, acc)
        if acc > best.val_accuracy:
            best = last_finite
        if progress:
            log.info("epoch %d  val acc %.2f  binary %.2f", epoch, acc, summary["binary_accuracy"])
    if best.val_accuracy < 0:
        best = Checkpoint(best.state, cfg, 0, 0.0)
    return TrainResult(best, last_finite, history, epoch_history)


def write_history(rows: list[dict], path, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def train(config: TrainConfig, data_root, manifest=None, progress: bool = False) -> TrainResult:
    """Train on the ``train`` split of a generated dataset, selecting on ``val``."""
    from .dataio import load_split
    kw = dict(out_hw=config.frame_hw, n_instances=config.n_instances, clip_len=config.clip_len)
    Xtr, ytr, _ = load_split(data_root, "train", manifest, **kw)
    Xva, yva, _ = load_split(data_root, "val", manifest, **kw)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("manifest needs non-empty train and val splits")
    return fit_arrays(config, Xtr, ytr, Xva, yva, progress=progress)


def evaluate_split(ckpt: Checkpoint, data_root, split: str, manifest=None):
    """Return ``(MetricsReport, outputs, records, labels)`` for one split."""
    from .dataio import load_split
    cfg = TrainConfig.from_dict(ckpt.config)
    model = model_from_checkpoint(ckpt, cfg)
    X, y, recs = load_split(data_root, split, manifest, out_hw=cfg.frame_hw,
                            n_instances=cfg.n_instances, clip_len=cfg.clip_len)
    if len(X) == 0:
        raise ValueError(f"split {split!r} is empty")
    outs = predict_outputs(model, X, cfg, tag=3)
    return evalstat.evaluate_predictions([o.grade_pred for o in outs], y), outs, recs, y
