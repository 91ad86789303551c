"""Contrastive training of projection heads with hard negatives.

Trains a linear image head and a linear text head over frozen base
embeddings. Two optional hardenings of the plain symmetric contrastive
objective:

* negative captions: each batch row carries one sampled swap negative; the
  image-to-text softmax runs over all 2N' caption columns, but negative
  columns never get a column-wise (text-to-image) loss of their own;
* mined neighbor images: each base item may pull in one of its K nearest
  neighbor items (image, caption, and negative caption), de-duplicated
  within the batch, so N <= N' <= 2N.

All array math is float64; gradients are analytic (including the Jacobian
of row normalization) and are verified against finite differences in tests.
The optimizer is Adam with decoupled weight decay; the learning rate ramps
linearly for ``warmup_steps`` and then follows a half-cosine to zero at
``total_steps``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataFormatError, NumericalError
from .rng import SplitMix64, stream_at

#: log(1/0.07), the customary inverse-temperature initialization.
LOGIT_SCALE_INIT = math.log(1.0 / 0.07)
MAX_SCALE = 100.0


@dataclass
class ProjectionModel:
    w_img: np.ndarray  # (d_in, d_out) float64
    w_txt: np.ndarray  # (d_in, d_out) float64
    logit_scale: float = LOGIT_SCALE_INIT

    def __post_init__(self) -> None:
        self.w_img = np.asarray(self.w_img, dtype=np.float64)
        self.w_txt = np.asarray(self.w_txt, dtype=np.float64)
        if self.w_img.shape != self.w_txt.shape or self.w_img.ndim != 2:
            raise ConfigError(
                f"head shapes must match: {self.w_img.shape} vs {self.w_txt.shape}"
            )

    @property
    def d_in(self) -> int:
        return self.w_img.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_img.shape[1]

    @property
    def scale(self) -> float:
        """exp(logit_scale), clamped."""
        return min(math.exp(self.logit_scale), MAX_SCALE)

    def copy(self) -> "ProjectionModel":
        return ProjectionModel(
            w_img=self.w_img.copy(), w_txt=self.w_txt.copy(), logit_scale=self.logit_scale
        )


def init_model(d_in: int, d_out: int, seed: int) -> ProjectionModel:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d_in)
    return ProjectionModel(
        w_img=rng.standard_normal((d_in, d_out)) * scale,
        w_txt=rng.standard_normal((d_in, d_out)) * scale,
    )


@dataclass
class ContrastiveBatch:
    image_vecs: np.ndarray  # (n, d_in)
    caption_vecs: np.ndarray  # (n, d_in)
    neg_caption_vecs: np.ndarray | None  # (n, d_in) or None when disabled
    provenance: list[str] = field(default_factory=list)  # "base" | "mined"

    def __post_init__(self) -> None:
        self.image_vecs = np.asarray(self.image_vecs, dtype=np.float64)
        self.caption_vecs = np.asarray(self.caption_vecs, dtype=np.float64)
        if self.neg_caption_vecs is not None:
            self.neg_caption_vecs = np.asarray(self.neg_caption_vecs, dtype=np.float64)
        shapes = {self.image_vecs.shape, self.caption_vecs.shape}
        if self.neg_caption_vecs is not None:
            shapes.add(self.neg_caption_vecs.shape)
        if len(shapes) != 1:
            raise DataFormatError(f"misaligned batch blocks: {sorted(shapes)}")
        if self.provenance and len(self.provenance) != len(self.image_vecs):
            raise DataFormatError("provenance flags misaligned with batch rows")

    def __len__(self) -> int:
        return self.image_vecs.shape[0]


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_steps: int = 50
    total_steps: int | None = None  # default: epochs * ceil(n / batch_size)
    neighbor_k: int = 3
    use_neg_captions: bool = True
    use_neg_images: bool = False
    seed: int = 0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    proj_dim: int = 16

    def __post_init__(self) -> None:
        if self.total_steps is not None and self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}"
            )
        if self.use_neg_images and self.neighbor_k < 1:
            raise ConfigError("neighbor_k must be >= 1 when mining images")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")


@dataclass
class TrainingData:
    """Frozen base embeddings plus per-item negative caption embeddings."""

    ids: list[str]
    image_vecs: np.ndarray  # (n, d_in) float64
    caption_vecs: np.ndarray  # (n, d_in)
    neg_caption_vecs: list[np.ndarray]  # per item: (m_i, d_in), m_i may be 0
    neighbors: list[list[int]] | None = None  # indices, per item

    def __post_init__(self) -> None:
        self.image_vecs = np.asarray(self.image_vecs, dtype=np.float64)
        self.caption_vecs = np.asarray(self.caption_vecs, dtype=np.float64)
        n = len(self.ids)
        if self.image_vecs.shape[0] != n or self.caption_vecs.shape[0] != n:
            raise DataFormatError("ids and vector blocks disagree on item count")
        if len(self.neg_caption_vecs) != n:
            raise DataFormatError("negative caption list misaligned with items")
        if self.neighbors is not None and len(self.neighbors) != n:
            raise DataFormatError("neighbor table misaligned with items")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.image_vecs.shape[1]


def assemble_batch(
    data: TrainingData,
    base_indices: Sequence[int],
    neighbors: list[list[int]] | None,
    rng_seed: int,
    use_neg_captions: bool = True,
) -> ContrastiveBatch:
    """Build one aligned batch; deterministic in (inputs, rng_seed).

    Draw order is fixed: one neighbor pick per base item first (stream 0 of
    the seed), then one negative-caption pick per final batch row (stream 1).
    Neighbor picks that collide with an item already in the batch are
    dropped after the draw, so the draws themselves never depend on
    collisions.
    """
    if len(set(base_indices)) != len(base_indices):
        raise ConfigError("base indices must be distinct")
    rows: list[int] = list(base_indices)
    flags = ["base"] * len(rows)

    if neighbors is not None:
        picker = SplitMix64(stream_at(rng_seed, 0))
        picks: list[int] = []
        for idx in base_indices:
            nbrs = neighbors[idx]
            if not nbrs:
                raise DataFormatError(f"item {data.ids[idx]} has no neighbors to mine")
            picks.append(nbrs[picker.below(len(nbrs))])
        seen = set(rows)
        for pick in picks:
            if pick not in seen:
                rows.append(pick)
                flags.append("mined")
                seen.add(pick)

    neg_block: np.ndarray | None = None
    if use_neg_captions:
        sampler = SplitMix64(stream_at(rng_seed, 1))
        chosen = []
        for idx in rows:
            negs = data.neg_caption_vecs[idx]
            if len(negs) == 0:
                raise DataFormatError(
                    f"item {data.ids[idx]} has no negative captions; "
                    "captions without negatives must be removed upstream"
                )
            chosen.append(negs[sampler.below(len(negs))])
        neg_block = np.stack(chosen)

    return ContrastiveBatch(
        image_vecs=data.image_vecs[rows],
        caption_vecs=data.caption_vecs[rows],
        neg_caption_vecs=neg_block,
        provenance=flags,
    )


# --- loss and gradients -----------------------------------------------------


def _require_finite(name: str, value: np.ndarray | float) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite values in {name}")


def _unit_rows(raw: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
    if np.any(norms == 0.0):
        raise NumericalError(f"zero-norm projected row in {name}")
    return raw / norms[:, None], norms


@dataclass
class _Forward:
    loss: float
    logits: np.ndarray  # (n, m)
    row_probs: np.ndarray  # softmax over each row, (n, m)
    col_probs: np.ndarray  # softmax over each column of the (n, n) block
    units: dict  # cached unit vectors and norms per block
    scale: float


def _forward(model: ProjectionModel, batch: ContrastiveBatch) -> _Forward:
    if batch.image_vecs.shape[1] != model.d_in:
        raise DataFormatError(
            f"batch dim {batch.image_vecs.shape[1]} does not match model d_in {model.d_in}"
        )
    n = len(batch)
    u_raw = batch.image_vecs @ model.w_img
    v_raw = batch.caption_vecs @ model.w_txt
    _require_finite("projected image embeddings", u_raw)
    _require_finite("projected caption embeddings", v_raw)
    u_hat, u_norm = _unit_rows(u_raw, "image head output")
    v_hat, v_norm = _unit_rows(v_raw, "text head output")
    units = {"u": (u_raw, u_hat, u_norm), "v": (v_raw, v_hat, v_norm)}

    t_hat = v_hat
    if batch.neg_caption_vecs is not None:
        h_raw = batch.neg_caption_vecs @ model.w_txt
        _require_finite("projected negative captions", h_raw)
        h_hat, h_norm = _unit_rows(h_raw, "text head output (negatives)")
        units["h"] = (h_raw, h_hat, h_norm)
        t_hat = np.vstack([v_hat, h_hat])

    scale = model.scale
    logits = scale * (u_hat @ t_hat.T)  # (n, m)
    _require_finite("logits", logits)

    # Row softmax over all caption columns.
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp_row = np.exp(shifted)
    row_probs = exp_row / exp_row.sum(axis=1, keepdims=True)
    loss_i2t = float(
        np.mean(np.log(exp_row.sum(axis=1)) - shifted[np.arange(n), np.arange(n)])
    )

    # Column softmax on the true-caption block only: negative caption
    # columns contribute no loss of their own.
    sub = logits[:, :n]
    shifted_c = sub - sub.max(axis=0, keepdims=True)
    exp_col = np.exp(shifted_c)
    col_probs = exp_col / exp_col.sum(axis=0, keepdims=True)
    loss_t2i = float(
        np.mean(np.log(exp_col.sum(axis=0)) - shifted_c[np.arange(n), np.arange(n)])
    )

    loss = 0.5 * (loss_i2t + loss_t2i)
    _require_finite("loss", loss)
    return _Forward(
        loss=loss,
        logits=logits,
        row_probs=row_probs,
        col_probs=col_probs,
        units=units,
        scale=scale,
    )


def loss_forward(model: ProjectionModel, batch: ContrastiveBatch) -> float:
    return _forward(model, batch).loss


@dataclass
class Gradients:
    w_img: np.ndarray
    w_txt: np.ndarray
    logit_scale: float


def _norm_backward(grad_hat: np.ndarray, raw_hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/dx of x/|x| applied to row vectors: (g - (g.x_hat) x_hat) / |x|.
    inner = np.einsum("ij,ij->i", grad_hat, raw_hat)
    return (grad_hat - inner[:, None] * raw_hat) / norms[:, None]


def loss_and_gradient(
    model: ProjectionModel, batch: ContrastiveBatch
) -> tuple[float, Gradients]:
    fwd = _forward(model, batch)
    n = len(batch)
    m = fwd.logits.shape[1]

    # dLoss/dLogits: row-softmax part everywhere, column part on the block.
    d_logits = fwd.row_probs.copy()
    d_logits[np.arange(n), np.arange(n)] -= 1.0
    d_logits /= 2.0 * n
    d_sub = fwd.col_probs.copy()
    d_sub[np.arange(n), np.arange(n)] -= 1.0
    d_logits[:, :n] += d_sub / (2.0 * n)

    u_raw, u_hat, u_norm = fwd.units["u"]
    v_raw, v_hat, v_norm = fwd.units["v"]
    t_hat = v_hat if m == n else np.vstack([v_hat, fwd.units["h"][1]])

    # Scale gradient; the clamp zeroes it once exp(logit_scale) saturates.
    g_scale = float(np.sum(d_logits * fwd.logits)) / fwd.scale
    raw_scale = math.exp(model.logit_scale)
    g_logit_scale = g_scale * raw_scale if raw_scale < MAX_SCALE else 0.0

    g_u_hat = fwd.scale * (d_logits @ t_hat)
    g_t_hat = fwd.scale * (d_logits.T @ u_hat)

    g_u = _norm_backward(g_u_hat, u_hat, u_norm)
    g_v = _norm_backward(g_t_hat[:n], v_hat, v_norm)
    g_w_img = batch.image_vecs.T @ g_u
    g_w_txt = batch.caption_vecs.T @ g_v
    if m != n:
        h_raw, h_hat, h_norm = fwd.units["h"]
        g_h = _norm_backward(g_t_hat[n:], h_hat, h_norm)
        g_w_txt = g_w_txt + batch.neg_caption_vecs.T @ g_h

    return fwd.loss, Gradients(w_img=g_w_img, w_txt=g_w_txt, logit_scale=g_logit_scale)


def loss_gradient(model: ProjectionModel, batch: ContrastiveBatch) -> Gradients:
    return loss_and_gradient(model, batch)[1]


# --- optimizer and schedule ---------------------------------------------------


def learning_rate_at(step: int, config: TrainConfig, total_steps: int) -> float:
    """Linear warmup to learning_rate, then half-cosine decay to 0."""
    if step < config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    span = max(1, total_steps - config.warmup_steps)
    progress = min(1.0, (step - config.warmup_steps) / span)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; the temperature is never decayed."""

    def __init__(self, model: ProjectionModel, config: TrainConfig):
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.weight_decay = config.weight_decay
        self.t = 0
        self.m_img = np.zeros_like(model.w_img)
        self.v_img = np.zeros_like(model.w_img)
        self.m_txt = np.zeros_like(model.w_txt)
        self.v_txt = np.zeros_like(model.w_txt)
        self.m_scale = 0.0
        self.v_scale = 0.0

    def step(self, model: ProjectionModel, grads: Gradients, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t

        def update(m, v, g):
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * np.square(g)
            direction = (m / c1) / (np.sqrt(v / c2) + self.eps)
            return m, v, direction

        self.m_img, self.v_img, d_img = update(self.m_img, self.v_img, grads.w_img)
        self.m_txt, self.v_txt, d_txt = update(self.m_txt, self.v_txt, grads.w_txt)
        model.w_img -= lr * (d_img + self.weight_decay * model.w_img)
        model.w_txt -= lr * (d_txt + self.weight_decay * model.w_txt)

        self.m_scale = self.beta1 * self.m_scale + (1.0 - self.beta1) * grads.logit_scale
        self.v_scale = self.beta2 * self.v_scale + (1.0 - self.beta2) * grads.logit_scale**2
        model.logit_scale -= lr * (self.m_scale / c1) / (
            math.sqrt(self.v_scale / c2) + self.eps
        )


# --- training loop ------------------------------------------------------------


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float
    val_r1: float | None = None


@dataclass
class TrainResult:
    model: ProjectionModel
    trace: list[TraceRow]
    best_val_r1: float | None
    steps: int


def pair_recall_at_1(
    model: ProjectionModel, image_vecs: np.ndarray, caption_vecs: np.ndarray
) -> float:
    """Mean of image->text and text->image R@1 over aligned pairs."""
    u_hat, _ = _unit_rows(np.asarray(image_vecs, dtype=np.float64) @ model.w_img, "image head")
    v_hat, _ = _unit_rows(np.asarray(caption_vecs, dtype=np.float64) @ model.w_txt, "text head")
    sims = u_hat @ v_hat.T
    n = sims.shape[0]
    hits = int(np.sum(sims.argmax(axis=1) == np.arange(n)))
    hits += int(np.sum(sims.argmax(axis=0) == np.arange(n)))
    return hits / (2.0 * n)


def _chunks(items: list[int], size: int) -> list[list[int]]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def train(
    data: TrainingData,
    config: TrainConfig,
    val_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> TrainResult:
    """Deterministic training loop; returns the best model by validation R@1.

    Negative captions and mined neighbors are re-sampled every epoch from
    per-epoch seed streams. Without a validation set the final model is
    returned.
    """
    if config.use_neg_images and data.neighbors is None:
        raise ConfigError("use_neg_images requires a neighbor table")
    n = len(data)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = (
        config.total_steps
        if config.total_steps is not None
        else config.epochs * steps_per_epoch
    )
    if config.warmup_steps > total_steps:
        raise ConfigError(
            f"warmup_steps {config.warmup_steps} exceeds total_steps {total_steps}"
        )

    model = init_model(data.dim, config.proj_dim, config.seed)
    optimizer = AdamW(model, config)
    trace: list[TraceRow] = []
    best_val: float | None = None
    best_model = model.copy()
    step = 0

    for epoch in range(config.epochs):
        if step >= total_steps:
            break
        epoch_seed = stream_at(config.seed, epoch)
        order = list(range(n))
        SplitMix64(stream_at(epoch_seed, 0)).shuffle(order)
        for b, base in enumerate(_chunks(order, config.batch_size)):
            if step >= total_steps:
                break
            batch = assemble_batch(
                data,
                base,
                data.neighbors if config.use_neg_images else None,
                stream_at(epoch_seed, b + 1),
                use_neg_captions=config.use_neg_captions,
            )
            loss, grads = loss_and_gradient(model, batch)
            lr = learning_rate_at(step, config, total_steps)
            optimizer.step(model, grads, lr)
            for name, block in (("w_img", model.w_img), ("w_txt", model.w_txt)):
                if not np.all(np.isfinite(block)):
                    raise NumericalError(f"non-finite {name} after step {step}")
            if not math.isfinite(model.logit_scale):
                raise NumericalError(f"non-finite logit_scale after step {step}")
            trace.append(TraceRow(step=step, lr=lr, loss=loss))
            step += 1
        if val_data is not None and trace:
            val_r1 = pair_recall_at_1(model, val_data[0], val_data[1])
            trace[-1].val_r1 = val_r1
            # Ties go to the later epoch: equally-retrieving models keep
            # improving on the rest of the objective.
            if best_val is None or val_r1 >= best_val:
                best_val = val_r1
                best_model = model.copy()

    final = best_model if val_data is not None else model
    return TrainResult(model=final, trace=trace, best_val_r1=best_val, steps=step)


def write_trace_csv(trace: Sequence[TraceRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,loss,val_r1\n")
        for row in trace:
            val = "" if row.val_r1 is None else f"{row.val_r1:.6f}"
            fh.write(f"{row.step},{row.lr:.8g},{row.loss:.8g},{val}\n")


# --- checkpoints ---------------------------------------------------------------

_CKPT_MAGIC = b"AROC"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIdQI")


def save_checkpoint(
    model: ProjectionModel, path: str | Path, config: TrainConfig | None = None, step: int = 0
) -> None:
    echo = json.dumps(
        {} if config is None else {k: v for k, v in vars(config).items()},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                _CKPT_MAGIC,
                _CKPT_VERSION,
                model.d_in,
                model.d_out,
                model.logit_scale,
                step,
                len(echo),
            )
        )
        fh.write(echo)
        fh.write(np.ascontiguousarray(model.w_img, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.w_txt, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ProjectionModel, dict, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, d_in, d_out, logit_scale, step, echo_len = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != _CKPT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_HEADER.size
    try:
        echo = json.loads(raw[offset : offset + echo_len] or b"{}")
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: bad config echo") from exc
    offset += echo_len
    block = 8 * d_in * d_out
    if len(raw) != offset + 2 * block:
        raise DataFormatError(f"{path}: parameter payload truncated")
    w_img = np.frombuffer(raw, dtype="<f8", count=d_in * d_out, offset=offset).reshape(
        d_in, d_out
    )
    w_txt = np.frombuffer(
        raw, dtype="<f8", count=d_in * d_out, offset=offset + block
    ).reshape(d_in, d_out)
    model = ProjectionModel(
        w_img=w_img.copy(), w_txt=w_txt.copy(), logit_scale=logit_scale
    )
    return model, echo, step
