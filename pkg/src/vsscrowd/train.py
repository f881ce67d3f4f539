"""Training loop, evaluation, and the flat checkpoint format."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .data import AugmentConfig, Sample, augment, sample_rng
from .errors import DimensionError, InputError, NumericError, ParameterError
from .matching import ttc_loss
from .metrics import CountReport, DatasetLocAccumulator, LocReport, count_metrics
from .model import CrowdCounter
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

CKPT_MAGIC = "vsscrowd-checkpoint-v1"


# -- checkpoints -------------------------------------------------------------------

def checkpoint_bytes(model: CrowdCounter) -> bytes:
    """JSON header line (config text + shape manifest) followed by little-endian float64 values."""
    named = list(model.named_parameters())
    header = {
        "format": CKPT_MAGIC,
        "config": model.config.to_text(),
        "params": [[name, list(p.shape)] for name, p in named],
    }
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p in named)
    return json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n" + body


def save_checkpoint(model: CrowdCounter, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> CrowdCounter:
    """Rebuild the model from a checkpoint; with ``config`` the manifest must match it."""
    try:
        raw = Path(path).read_bytes()
        head, body = raw.split(b"\n", 1)
        header = json.loads(head)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None
    if header.get("format") != CKPT_MAGIC:
        raise InputError(f"{path}: not a vsscrowd checkpoint")
    model = CrowdCounter(config or ModelConfig.from_text(header["config"]))
    expected = [[name, list(p.shape)] for name, p in model.named_parameters()]
    if expected != header["params"]:
        diff = _manifest_diff(expected, header["params"])
        raise DimensionError(f"checkpoint does not fit the configured model:\n{diff}")
    values = np.frombuffer(body, dtype="<f8")
    total = sum(p.size for p in model.parameters())
    if values.size != total:
        raise InputError(f"{path}: expected {total} values, found {values.size}")
    pos = 0
    for p in model.parameters():
        p.data[...] = values[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return model


def _manifest_diff(expected, found) -> str:
    exp, got = dict((n, tuple(s)) for n, s in expected), dict((n, tuple(s)) for n, s in found)
    lines = []
    for name in sorted(set(exp) | set(got)):
        if exp.get(name) != got.get(name):
            lines.append(f"  {name}: model {exp.get(name)} vs checkpoint {got.get(name)}")
    return "\n".join(lines) or "  parameter order differs"


# -- training -----------------------------------------------------------------------

@dataclass
class StepLog:
    step: int
    sample: str
    cls: float
    loc: float
    cnt: float
    total: float

    def line(self) -> str:
        return (f"step={self.step} sample={self.sample} total={self.total:.8g} "
                f"cls={self.cls:.8g} loc={self.loc:.8g} cnt={self.cnt:.8g}")


def train(model: CrowdCounter, samples: Sequence[Sample], steps: Optional[int] = None,
          augment_cfg: Optional[AugmentConfig] = None,
          on_step: Optional[Callable[[StepLog], None]] = None,
          checkpoint_cb: Optional[Callable[[CrowdCounter], None]] = None) -> List[StepLog]:
    """Adam on the three-task loss, one image per forward, ``batch_size`` images per update.

    Samples are visited in a fresh seeded permutation each epoch. A non-finite
    loss raises :class:`NumericError` before the update is applied, so the
    parameters still hold the last good state.
    """
    cfg = model.config
    if not samples:
        raise ParameterError("training needs at least one sample")
    steps = cfg.steps if steps is None else steps
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    order_rng = np.random.default_rng(cfg.seed)
    queue: List[int] = []
    history: List[StepLog] = []
    for step in range(1, steps + 1):
        opt.zero_grad()
        parts = []
        for _ in range(cfg.batch_size):
            if not queue:
                queue = list(order_rng.permutation(len(samples)))
            s = samples[queue.pop(0)]
            if augment_cfg is not None:
                s = augment(s, augment_cfg, sample_rng(cfg.seed * 1_000_003 + step, s.id))
            _, H, W = s.image.shape
            offsets, logits = model(Tensor(s.image))
            if not (np.isfinite(offsets.data).all() and np.isfinite(logits.data).all()):
                raise NumericError(f"non-finite network output at step {step} on sample {s.id}")
            loss, bd, _ = ttc_loss(logits, offsets, model.grid(H, W), s.annotations, cfg.ttc, cfg.match_tau)
            if not math.isfinite(bd["total"]):
                raise NumericError(f"non-finite loss at step {step} on sample {s.id}")
            (loss * (1.0 / cfg.batch_size)).backward()
            parts.append((s.id, bd))
        opt.step()
        mean = {k: float(np.mean([bd[k] for _, bd in parts])) for k in ("cls", "loc", "cnt", "total")}
        entry = StepLog(step, parts[-1][0], **mean)
        history.append(entry)
        if on_step is not None:
            on_step(entry)
        if checkpoint_cb is not None:
            checkpoint_cb(model)
    return history


# -- evaluation -------------------------------------------------------------------

@dataclass
class EvalReport:
    counts: CountReport
    localization: Dict[float, Dict[str, LocReport]]

    def to_text(self) -> str:
        out = self.counts.to_text()
        for sigma in sorted(self.localization):
            for conv in ("standard", "paper_text"):
                out += self.localization[sigma][conv].to_text()
        return out


def evaluate(model: CrowdCounter, samples: Sequence[Sample], sigmas=(4.0, 8.0),
             threshold: Optional[float] = None, workers: int = 1) -> EvalReport:
    """Predict every sample (``workers`` threads) and aggregate in sample order."""
    if not samples:
        raise ParameterError("evaluation needs at least one sample")
    accs = {float(s): DatasetLocAccumulator(float(s)) for s in sigmas}
    pairs = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(lambda s: model.predict(s.image, threshold), samples))
    else:
        preds = [model.predict(s.image, threshold) for s in samples]
    for s, pred in zip(samples, preds):
        pairs.append((len(s.annotations), len(pred)))
        for acc in accs.values():
            acc.add(pred, s.annotations)
    loc = {sigma: {conv: acc.report(conv) for conv in ("standard", "paper_text")} for sigma, acc in accs.items()}
    return EvalReport(count_metrics(pairs), loc)
