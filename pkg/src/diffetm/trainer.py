"""Mini-batch training loop with validation-driven checkpoint selection.

Randomness is split into independent seeded streams (init / shuffle /
noise) so that runs with equal configuration and seed are bitwise
reproducible.  A checkpoint is written whenever validation perplexity
improves; the trajectory of those improving epochs is the model-quality
instrumentation exported by log_kl_trajectory.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from .corpus import BowCorpus, Dataset, dense_counts
from .model import (
    MODES,
    ModelConfig,
    forward_batch,
    init_params,
    predict_batch,
    store_vocab_size,
)

CKPT_MAGIC = b"DETMCKPT"
CKPT_VERSION = 1


class Diverged(RuntimeError):
    """Training produced a non-finite loss (learning rate too high)."""

    def __init__(self, message: str, report: "TrainReport | None" = None):
        super().__init__(message)
        self.report = report


class CorruptCheckpoint(ValueError):
    """Checkpoint magic, version, or framing did not validate."""


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 1000
    learning_rate: float = 0.008
    eval_every: int = 1
    max_checkpoints: int = 0  # 0 keeps every improving checkpoint
    deterministic: bool = False
    output_dir: str | None = None
    clip_norm: float = 0.0  # 0 disables clipping

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            # 0 is allowed: it freezes the parameters (Adam fixed point)
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class TrainReport:
    """Per-epoch loss components plus the validation series.

    Validation entries are None at epochs that were not evaluated
    (eval_every > 1).  In deterministic mode wall_seconds is reported as
    0.0 so identical runs produce identical reports.
    """

    seed: int
    epochs: int
    train_recon: list[float] = field(default_factory=list)
    train_kl: list[float] = field(default_factory=list)
    train_total: list[float] = field(default_factory=list)
    val_perplexity: list[float | None] = field(default_factory=list)
    val_kl: list[float | None] = field(default_factory=list)
    val_z_kl: list[float | None] = field(default_factory=list)
    best_epoch: int = 0
    best_val_perplexity: float = float("inf")
    wall_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        return cls(**json.loads(text))


@dataclass
class KlTrajectory:
    """(epoch, kl, perplexity) at exactly the improving-checkpoint epochs."""

    points: list[tuple[int, float, float]]

    def to_csv(self) -> str:
        lines = ["epoch,kl,perplexity"]
        for epoch, kl, ppl in self.points:
            lines.append(f"{epoch},{kl!r},{ppl!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint serialization (float32 storage)


def save_checkpoint(store: ad.ParamStore, config: ModelConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(
            struct.pack(
                "<IIIIdddBq",
                config.num_topics,
                config.embed_size,
                config.hidden_size,
                config.diff_steps,
                config.beta_start,
                config.beta_end,
                config.kl_weight,
                MODES.index(config.mode),
                config.seed,
            )
        )
        names = store.names()
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            t = store[name]
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", t.rows, t.cols))
            fh.write(t.data.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ad.ParamStore, ModelConfig]:
    """Rebuild a parameter store and config; eval_path defaults to
    deterministic since a loaded model is meant for evaluation."""
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", data, 8)
        if version != CKPT_VERSION:
            raise CorruptCheckpoint(
                f"{path}: checkpoint version {version}, expected {CKPT_VERSION}"
            )
        k, e, h, t, b0, bt, lam, mode_idx, seed = struct.unpack_from("<IIIIdddBq", data, 12)
        if mode_idx >= len(MODES):
            raise CorruptCheckpoint(f"{path}: unknown mode code {mode_idx}")
        config = ModelConfig(
            num_topics=k,
            embed_size=e,
            hidden_size=h,
            diff_steps=t,
            beta_start=b0,
            beta_end=bt,
            kl_weight=lam,
            mode=MODES[mode_idx],
            eval_path="deterministic",
            seed=seed,
        )
        offset = 12 + struct.calcsize("<IIIIdddBq")
        (n_params,) = struct.unpack_from("<I", data, offset)
        offset += 4
        store = ad.ParamStore()
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            if len(data) < offset + name_len:
                raise CorruptCheckpoint(f"{path}: truncated name block")
            offset += name_len
            rows, cols = struct.unpack_from("<II", data, offset)
            offset += 8
            nbytes = 4 * rows * cols
            if len(data) < offset + nbytes:
                raise CorruptCheckpoint(f"{path}: truncated array for {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
            offset += nbytes
            store.add(name, arr.astype(np.float64).reshape(rows, cols))
    except struct.error as exc:
        raise CorruptCheckpoint(f"{path}: truncated checkpoint ({exc})") from None
    if offset != len(data):
        raise CorruptCheckpoint(f"{path}: {len(data) - offset} trailing bytes")
    return store, config


# ---------------------------------------------------------------------------
# validation


def validate(
    store: ad.ParamStore,
    config: ModelConfig,
    valid_corpus: BowCorpus,
    batch_size: int = 1024,
) -> tuple[float, float]:
    """Held-out perplexity and the mean closed-form KL, deterministic path."""
    ppl = metrics_mod.perplexity(store, config, valid_corpus, batch_size=batch_size)
    v = store_vocab_size(store)
    kl_sum = 0.0
    n = len(valid_corpus)
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        x = dense_counts(valid_corpus, idx, v)
        latents, _ = predict_batch(x, store, config)
        per_doc = 0.5 * (
            latents.mu ** 2 + np.exp(latents.logvar) - latents.logvar - 1.0
        ).sum(axis=1)
        kl_sum += float(per_doc.sum())
    return ppl, kl_sum / n


def realized_z_kl(
    store: ad.ParamStore,
    config: ModelConfig,
    corpus_split: BowCorpus,
    rng: np.random.Generator,
    batch_size: int = 1024,
) -> float:
    """Moment-matched Gaussian KL of sampled latents z against N(0, I).

    Diagnostic only: with diffusion the marginal of z is not the Gaussian
    the closed form assumes, so this and the closed-form term are logged
    side by side without being compared.
    """
    cfg = replace(config, eval_path="sampled")
    v = store_vocab_size(store)
    n = len(corpus_split)
    zs = []
    with ad.no_grad():
        for start in range(0, n, batch_size):
            idx = range(start, min(start + batch_size, n))
            x = dense_counts(corpus_split, idx, v)
            zs.append(forward_batch(x, store, cfg, rng).latents.z)
    z = np.concatenate(zs, axis=0)
    mean = z.mean(axis=0)
    var = z.var(axis=0)
    var = np.maximum(var, 1e-12)
    return float(0.5 * (mean ** 2 + var - np.log(var) - 1.0).sum())


# ---------------------------------------------------------------------------
# training


def _epoch_batches(n_docs: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n_docs)
    for start in range(0, n_docs, batch_size):
        yield perm[start:start + batch_size]


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    data: Dataset,
) -> TrainReport:
    """Run the full training loop; returns the report, writes artifacts.

    Checkpoints land in train_config.output_dir (when set) as
    checkpoint_epoch{NNNN}.ckpt at each improving epoch plus best.ckpt;
    at most max_checkpoints epoch files are retained (0 = unlimited).
    Raises Diverged, carrying the partial report, on a non-finite loss.
    """
    model_config.validate()
    train_config.validate()
    if data.train.vocab_ref != data.vocab.ref_id or data.valid.vocab_ref != data.vocab.ref_id:
        raise ValueError("corpus splits are not bound to the dataset vocabulary")

    seed = model_config.seed
    init_rng = np.random.default_rng([seed, 0])
    shuffle_rng = np.random.default_rng([seed, 1])
    noise_rng = np.random.default_rng([seed, 2])

    v = data.vocab.V
    store = init_params(model_config, v, init_rng)
    adam = ad.AdamState(lr=train_config.learning_rate)
    train_cfg = replace(model_config, eval_path="sampled")

    out_dir = Path(train_config.output_dir) if train_config.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    report = TrainReport(seed=seed, epochs=train_config.epochs)
    epoch_ckpts: list[Path] = []
    n = len(data.train)
    started = time.monotonic()

    for epoch in range(1, train_config.epochs + 1):
        sum_recon = sum_kl = sum_total = 0.0
        for idx in _epoch_batches(n, train_config.batch_size, shuffle_rng):
            x = dense_counts(data.train, idx, v)
            result = forward_batch(x, store, train_cfg, noise_rng)
            recon, kl, total = result.values()
            if not np.isfinite(total):
                report.wall_seconds = _elapsed(started, train_config)
                raise Diverged(
                    f"non-finite loss at epoch {epoch} (lr={train_config.learning_rate})",
                    report=report,
                )
            ad.backward(result.total)
            if train_config.clip_norm > 0.0:
                norm = store.grad_global_norm()
                if norm > train_config.clip_norm:
                    store.scale_grads(train_config.clip_norm / norm)
            ad.adam_update(store, adam)
            w = len(idx) / n
            sum_recon += recon * w
            sum_kl += kl * w
            sum_total += total * w
        report.train_recon.append(sum_recon)
        report.train_kl.append(sum_kl)
        report.train_total.append(sum_total)

        if epoch % train_config.eval_every == 0:
            ppl, kl_term = validate(store, model_config, data.valid)
            z_kl = realized_z_kl(
                store, model_config, data.valid, np.random.default_rng([seed, 3, epoch])
            )
            report.val_perplexity.append(ppl)
            report.val_kl.append(kl_term)
            report.val_z_kl.append(z_kl)
            if ppl < report.best_val_perplexity:
                report.best_val_perplexity = ppl
                report.best_epoch = epoch
                if out_dir is not None:
                    ckpt = out_dir / f"checkpoint_epoch{epoch:04d}.ckpt"
                    save_checkpoint(store, model_config, ckpt)
                    save_checkpoint(store, model_config, out_dir / "best.ckpt")
                    epoch_ckpts.append(ckpt)
                    if train_config.max_checkpoints > 0:
                        while len(epoch_ckpts) > train_config.max_checkpoints:
                            epoch_ckpts.pop(0).unlink()
        else:
            report.val_perplexity.append(None)
            report.val_kl.append(None)
            report.val_z_kl.append(None)

    report.wall_seconds = _elapsed(started, train_config)
    if out_dir is not None:
        (out_dir / "train_report.json").write_text(report.to_json())
        log_kl_trajectory(report, out_dir / "kl_trajectory.csv")
    return report


def _elapsed(started: float, train_config: TrainConfig) -> float:
    return 0.0 if train_config.deterministic else time.monotonic() - started


def log_kl_trajectory(report: TrainReport, path: str | Path | None = None) -> KlTrajectory:
    """Extract the improving-checkpoint epochs as (epoch, kl, perplexity).

    The perplexity column is strictly decreasing by construction.
    """
    points = []
    best = float("inf")
    for i, ppl in enumerate(report.val_perplexity):
        if ppl is None:
            continue
        if ppl < best:
            best = ppl
            points.append((i + 1, report.val_kl[i], ppl))
    traj = KlTrajectory(points=points)
    if path is not None:
        Path(path).write_text(traj.to_csv())
    return traj
