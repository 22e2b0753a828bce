"""
Adam, the stepped learning-rate schedule, the training loop and evaluation.

One epoch draws one random crop per training recording in shuffled order.
Crops are processed in batches; each crop gets its own tape (possibly on a
worker thread) and the batch gradient is the crop-order mean, so results do
not depend on the worker count.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values

from .config import ModelConfig, RunConfig, TrainConfig, load_run_config, render_config
from .data import DatasetSplits, Recording, random_crop, read_tensor, write_tensor
from .errors import DataIOError, DataShapeError, InvalidValueError, NonFiniteGradientError, TrainingAborted
from .health_check import ResourceMonitor
from .layers import Dropout
from .model import init_parameters, loss, model_forward, pearson_r, predict
from .numerics import Tape, Tensor, backward
from .params import ParameterMap, count_parameters, frozen
from .prng import Xoshiro256pp
from .worker_pool import WorkerPool

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.tsv"


def lr_at_epoch(epoch: int, base: float = 5e-4, decay: float = 0.9, every: int = 50) -> float:
    """base * decay^floor(epoch / every)"""
    if epoch < 0:
        raise InvalidValueError(f"epoch must be >= 0, got {epoch}")
    return base * decay ** (epoch // every)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(
            m={path: np.zeros_like(t.data) for path, t in params.items()},
            v={path: np.zeros_like(t.data) for path, t in params.items()},
            beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    grad_clip: float = 0.0,
) -> Tuple[ParameterMap, AdamState]:
    """
    Bias-corrected Adam; returns new parameters and state, inputs untouched.

    Raises NonFiniteGradientError naming the first offending path before any
    update is applied.
    """
    for path in params:
        if not np.all(np.isfinite(grads[path])):
            raise NonFiniteGradientError(path)
    scale = 1.0
    if grad_clip > 0:
        norm = math.sqrt(sum(float(np.sum(grads[path] ** 2)) for path in params))
        if norm > grad_clip:
            scale = grad_clip / norm
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step
    new_params: ParameterMap = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for path, tensor in params.items():
        g = grads[path] * scale
        if weight_decay:
            g = g + weight_decay * tensor.data
        m = b1 * state.m[path] + (1.0 - b1) * g
        v = b2 * state.v[path] + (1.0 - b2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_params[path] = Tensor(tensor.data - update, requires_grad=True)
        new_m[path], new_v[path] = m, v
    return new_params, AdamState(new_m, new_v, step, b1, b2, state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    run_config: RunConfig
    params: ParameterMap
    adam: AdamState
    epoch: int = 0
    best_val: float = float("-inf")
    rng_state: str = ""
    seed: int = 0

    @property
    def model_config(self) -> ModelConfig:
        return self.run_config.model()


def _param_file(root: Path, group: str, path: str) -> Path:
    return root / group / f"{path}.ssmt"


def save_checkpoint(directory, checkpoint: Checkpoint) -> Path:
    """Directory bundle: manifest.txt, config.txt, state.txt and params/adam_m/adam_v TensorFiles."""
    root = Path(directory)
    paths = sorted(checkpoint.params)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.txt").write_text("".join(f"{p}\n" for p in paths), encoding="utf-8")
        (root / "config.txt").write_text(render_config(checkpoint.run_config), encoding="utf-8")
        state = (
            f"epoch={checkpoint.epoch}\n"
            f"adam_step={checkpoint.adam.step}\n"
            f"best_val={checkpoint.best_val!r}\n"
            f"seed={checkpoint.seed}\n"
            f"rng_state={checkpoint.rng_state}\n"
        )
        (root / "state.txt").write_text(state, encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint {root}: {e}") from e
    for path in paths:
        write_tensor(_param_file(root, "params", path), checkpoint.params[path])
        write_tensor(_param_file(root, "adam_m", path), checkpoint.adam.m[path])
        write_tensor(_param_file(root, "adam_v", path), checkpoint.adam.v[path])
    logger.info(f"Saved checkpoint (epoch {checkpoint.epoch}) to {root}")
    return root


def load_checkpoint(directory) -> Checkpoint:
    root = Path(directory)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataIOError(f"not a checkpoint directory (no manifest.txt): {root}")
    paths = [line.strip() for line in manifest.read_text(encoding="utf-8").splitlines() if line.strip()]
    run_config = load_run_config(root / "config.txt")
    state = dotenv_values(root / "state.txt")
    try:
        epoch = int(state["epoch"])
        adam_step_count = int(state["adam_step"])
        best_val = float(state["best_val"])
        seed = int(state.get("seed") or 0)
        rng_state = state.get("rng_state") or ""
    except (KeyError, TypeError, ValueError):
        raise DataIOError(f"{root / 'state.txt'}: malformed training state") from None
    train_cfg = run_config.train()
    params = {p: Tensor(read_tensor(_param_file(root, "params", p)).data, requires_grad=True) for p in paths}
    adam = AdamState(
        m={p: read_tensor(_param_file(root, "adam_m", p)).data for p in paths},
        v={p: read_tensor(_param_file(root, "adam_v", p)).data for p in paths},
        step=adam_step_count, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps,
    )
    return Checkpoint(run_config, params, adam, epoch, best_val, rng_state, seed)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    per_recording: Dict[str, float]
    mean: float
    predictions: Dict[str, Tensor] = field(default_factory=dict)

    def render(self) -> str:
        lines = [f"{rid}\t{value!r}" for rid, value in self.per_recording.items()]
        lines.append(f"mean\t{self.mean!r}")
        return "\n".join(lines) + "\n"


def evaluate(
    params: Mapping[str, Tensor],
    config: ModelConfig,
    recordings: Sequence[Recording],
    pool: Optional[WorkerPool] = None,
    keep_predictions: bool = False,
) -> EvaluationReport:
    """Segment, predict, concatenate and score each recording; unweighted mean over recordings."""
    if not recordings:
        raise DataShapeError("cannot evaluate an empty set of recordings")
    for recording in recordings:
        if recording.eeg.shape[1] != config.n_channels or recording.mel.shape[1] != config.n_mel:
            raise DataShapeError(
                f"recording {recording.recording_id}: eeg {list(recording.eeg.shape)} / "
                f"mel {list(recording.mel.shape)} do not match model "
                f"[T x {config.n_channels}] -> [T x {config.n_mel}]"
            )
    weights = frozen(params)

    def score(recording: Recording) -> Tuple[float, Tensor]:
        pred = predict(recording.eeg, recording.subject_id, weights, config)
        return pearson_r(pred, recording.mel).item(), pred

    results = (pool or WorkerPool(1)).map(score, recordings)
    per_recording = {rec.recording_id: value for rec, (value, _) in zip(recordings, results)}
    predictions = {rec.recording_id: pred for rec, (_, pred) in zip(recordings, results)} if keep_predictions else {}
    mean = float(sum(per_recording.values()) / len(per_recording))
    return EvaluationReport(per_recording, mean, predictions)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    val_pearson: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.lr!r}\t{self.train_loss!r}\t{self.val_pearson!r}\n"


@dataclass
class TrainingResult:
    best: Checkpoint
    final: Checkpoint
    history: List[EpochMetrics]


def crop_gradients(
    params: Mapping[str, Tensor],
    config: ModelConfig,
    eeg: Tensor,
    mel: Tensor,
    subject_id: int,
    dropout: Optional[Dropout] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss value and parameter gradients for one crop, on a private tape."""
    with Tape() as tape:
        pred = model_forward(eeg, subject_id, params, config, dropout or Dropout())
        value = loss(pred, mel, config.alpha)
    return value.item(), backward(tape, value, params)


def _snapshot(run_config, params, adam, epoch, best_val, rng, seed) -> Checkpoint:
    return Checkpoint(run_config, dict(params), adam, epoch, best_val, rng.state_string(), seed)


def train_loop(
    run_config: RunConfig,
    dataset: DatasetSplits,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    out_dir=None,
    workers: int = 1,
    resume: Optional[Checkpoint] = None,
) -> TrainingResult:
    """
    Train with Adam and the stepped schedule, keeping the best-validation checkpoint.

    With `out_dir`, writes best/ and final/ checkpoints and the per-epoch
    metrics log (tab-separated: epoch, lr, train_loss, val_pearson). A resumed
    run only rewrites best/ when it improves on the resumed best score.
    """
    config = run_config.model()
    tc: TrainConfig = run_config.train()
    epochs = tc.epochs if epochs is None else epochs
    if not dataset.train:
        raise DataShapeError("training split is empty")

    if resume is not None:
        seed = resume.seed
        params, adam = dict(resume.params), resume.adam
        start_epoch, best_val = resume.epoch, resume.best_val
        rng = Xoshiro256pp.from_state_string(resume.rng_state)
        best = resume
        best_updated = False
    else:
        seed = tc.seed if seed is None else seed
        params = init_parameters(config, seed)
        adam = AdamState.zeros(params, tc.beta1, tc.beta2, tc.eps)
        start_epoch, best_val = 0, float("-inf")
        rng = Xoshiro256pp(seed)
        best = _snapshot(run_config, params, adam, 0, best_val, rng, seed)
        best_updated = True

    monitor = ResourceMonitor()
    logger.info(
        f"Training {count_parameters(params)} parameters on {len(dataset.train)} recordings, "
        f"epochs {start_epoch}..{epochs}, batch {tc.batch_size}, {workers} worker(s)"
    )
    monitor.log("train start")

    metrics_handle = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        metrics_handle = open(Path(out_dir) / METRICS_FILE, "a" if resume else "w", encoding="utf-8")

    history: List[EpochMetrics] = []
    segment = config.segment_length
    train = dataset.train
    try:
        with WorkerPool(workers) as pool:
            for epoch in range(start_epoch, epochs):
                lr = lr_at_epoch(epoch, tc.lr, tc.lr_decay, tc.lr_decay_every)
                order = list(range(len(train)))
                rng.shuffle(order)
                # one crop stream per slot, independent of the worker that draws from it
                crops = [
                    (train[rec_index], stream, Dropout(config.dropout, np.random.default_rng([seed, epoch, index])))
                    for index, (rec_index, stream) in enumerate(zip(order, rng.spawn(len(order))))
                ]

                losses: List[float] = []
                for batch in (crops[i:i + tc.batch_size] for i in range(0, len(crops), tc.batch_size)):
                    def step(item, current=params):
                        recording, stream, drop = item
                        eeg, mel = random_crop(recording, stream, segment)
                        return crop_gradients(current, config, eeg, mel, recording.subject_id, drop)

                    results = pool.map(step, batch)
                    batch_losses = [value for value, _ in results]
                    if not all(math.isfinite(v) for v in batch_losses):
                        raise TrainingAborted(f"non-finite training loss at epoch {epoch}")
                    grads = {path: sum(g[path] for _, g in results) / len(results) for path in params}
                    params, adam = adam_step(params, grads, adam, lr, tc.weight_decay, tc.grad_clip)
                    losses.extend(batch_losses)

                train_loss = float(sum(losses) / len(losses))
                if dataset.val:
                    val_pearson = evaluate(params, config, dataset.val, pool).mean
                    score = val_pearson
                else:
                    val_pearson, score = float("nan"), -train_loss
                metrics = EpochMetrics(epoch, lr, train_loss, val_pearson)
                history.append(metrics)
                if metrics_handle is not None:
                    metrics_handle.write(metrics.line())
                    metrics_handle.flush()
                logger.info(f"epoch {epoch}: lr {lr:.3g} loss {train_loss:.5f} val r {val_pearson:.4f}")
                if score > best_val:
                    best_val = score
                    best = _snapshot(run_config, params, adam, epoch + 1, best_val, rng, seed)
                    best_updated = True
    finally:
        if metrics_handle is not None:
            metrics_handle.close()

    final_epoch = max(epochs, start_epoch)
    final = _snapshot(run_config, params, adam, final_epoch, best_val, rng, seed)
    if out_dir is not None:
        if best_updated:
            save_checkpoint(Path(out_dir) / "best", best)
        save_checkpoint(Path(out_dir) / "final", final)
    monitor.log("train end")
    return TrainingResult(best, final, history)
