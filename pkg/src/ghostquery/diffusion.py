"""Noise schedules, training, guided DDIM sampling, inversion and editing.

The forward corruption is the usual variance-preserving affine
``z_tau = sqrt(abar_tau) z0 + sqrt(1 - abar_tau) eps`` over ``N`` discrete
steps with a linear beta schedule. The denoiser predicts the clean latent
(sample objective) and sampling runs the deterministic DDIM recursion on
that prediction:

    eps_hat = (z - sqrt(abar_from) z0_hat) / sqrt(1 - abar_from)
    z'      = sqrt(abar_to) z0_hat + sqrt(1 - abar_to) eps_hat

with ``abar_0 = 1``, so the final denoising step returns ``z0_hat`` itself.
Because that last step is not invertible (its noise coefficient is zero),
inversion treats the clean latent as already sitting at level 1 — the
0<->1 transition is an identity reinterpretation in both directions. Every
other step is an exact affine bijection, which is what makes the
invert-then-denoise round trip exact whenever the model's prediction does
not depend on its input.

Guidance combines two predictions per step,
``(1 + w) G(z, tau, positive) - w G(z, tau, negative)``; the negative
branch defaults to the null conditioning (plain classifier-free guidance)
and can be any other conditioning sequence to steer away from it.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import denoiser as dn
from .errors import EmptyInput, InvalidSchedule, InvalidSpec, InvalidStep, ShapeError
from .latentdata import CondSeq, Corpus, as_latent
from .numerics import SeededRng

__all__ = [
    "NoiseSchedule",
    "GuidanceSpec",
    "TrainConfig",
    "TrainReport",
    "build_schedule",
    "add_noise",
    "train",
    "guided_prediction",
    "ddim_step",
    "sample",
    "invert",
    "edit",
]

DEFAULT_N = 50
DEFAULT_BETA = (1e-4, 0.02)


@dataclass(frozen=True)
class NoiseSchedule:
    """beta / cumulative-alpha tables over N discrete corruption steps."""

    N: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, tau: int) -> float:
        """Cumulative alpha with the clean-anchor convention abar_0 = 1."""
        if tau == 0:
            return 1.0
        return float(self.alpha_bar[tau - 1])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.N).encode())
        h.update(np.asarray(self.beta, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def build_schedule(
    n: int = DEFAULT_N, beta_start: float = DEFAULT_BETA[0], beta_end: float = DEFAULT_BETA[1]
) -> NoiseSchedule:
    """Linear beta schedule with exactly computed cumulative products."""
    if n < 2:
        raise InvalidSchedule(f"need at least 2 steps, got {n}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidSchedule(
            f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, n)
    return NoiseSchedule(N=n, beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def add_noise(z0, tau: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """Corrupt a clean latent to step tau with the given noise draw."""
    z0 = as_latent(z0, "z0")
    eps = as_latent(eps, "eps")
    if z0.shape != eps.shape:
        raise ShapeError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if not 1 <= tau <= sched.N:
        raise InvalidStep(f"step {tau} outside 1..{sched.N}")
    ab = sched.alpha_bar_at(tau)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


@dataclass(frozen=True)
class GuidanceSpec:
    """Classifier-free guidance strength with positive/negative conditioning."""

    w: float
    positive: CondSeq
    negative: CondSeq | None = None  # None -> null conditioning of matching width

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise InvalidSpec(f"guidance strength must be finite and >= 0, got {self.w}")

    def resolved_negative(self) -> CondSeq:
        if self.negative is None:
            return CondSeq.null(self.positive.dim)
        return self.negative


def _same_cond(a: CondSeq, b: CondSeq) -> bool:
    return a.is_null == b.is_null and np.array_equal(a.tokens, b.tokens)


def guided_prediction(model: dn.DenoiserModel, z_tau, tau: int, g: GuidanceSpec) -> np.ndarray:
    """(1 + w) * G(z, tau, positive) - w * G(z, tau, negative).

    Both branches share the same noisy input and step. Two exact identities
    hold bitwise: w = 0 reduces to the bare conditional forward, and equal
    positive/negative conditioning cancels for every w (the combination is
    algebraically the conditional prediction, so it is not recomputed
    through floating point).
    """
    pos = dn.forward(model, z_tau, tau, g.positive)
    if g.w == 0.0:
        return pos
    neg_cond = g.resolved_negative()
    if _same_cond(g.positive, neg_cond):
        return pos
    neg = dn.forward(model, z_tau, tau, neg_cond)
    return (1.0 + g.w) * pos - g.w * neg


def ddim_step(z_tau, z0_hat, tau_from: int, tau_to: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM transition between two step levels.

    tau_to < tau_from denoises, tau_to > tau_from re-noises (inversion leg).
    tau_from must be >= 1: at the clean anchor the implied noise direction
    is undefined, so there is nothing to transport from level 0.
    """
    z_tau = as_latent(z_tau, "z_tau")
    z0_hat = as_latent(z0_hat, "z0_hat")
    if z_tau.shape != z0_hat.shape:
        raise ShapeError(f"z shape {z_tau.shape} != z0_hat shape {z0_hat.shape}")
    if tau_from == 0:
        raise InvalidStep("cannot step from the clean anchor (tau_from = 0)")
    if not (1 <= tau_from <= sched.N) or not (0 <= tau_to <= sched.N):
        raise InvalidStep(f"steps ({tau_from} -> {tau_to}) outside 0..{sched.N}")
    if tau_from == tau_to:
        raise InvalidStep("tau_from and tau_to must differ")
    ab_from = sched.alpha_bar_at(tau_from)
    ab_to = sched.alpha_bar_at(tau_to)
    eps_hat = (z_tau - np.sqrt(ab_from) * z0_hat) / np.sqrt(1.0 - ab_from)
    return np.sqrt(ab_to) * z0_hat + np.sqrt(1.0 - ab_to) * eps_hat


def sample(
    model: dn.DenoiserModel,
    g: GuidanceSpec,
    n_q: int,
    sched: NoiseSchedule,
    seed: int,
    frames: int,
) -> list:
    """Generate n_q clean latent sequences under guided deterministic DDIM.

    Each query runs on its own noise stream, so the set is reproducible per
    seed and individual queries are independent. Models trained with the
    regression objective have no noise path: their (guided) prediction from
    the learned mask sequence is returned for every query.
    """
    if n_q < 1:
        raise InvalidSpec(f"n_q must be >= 1, got {n_q}")
    if g.positive.is_null:
        raise InvalidSpec("conditional sampling requires a non-null positive conditioning")
    if model.objective == "regression":
        if model.mask_frame is None:
            raise InvalidSpec("regression model has no stored mask sequence")
        mask_seq = np.tile(model.mask_frame, (frames, 1))
        out = guided_prediction(model, mask_seq, 1, g)
        return [out.copy() for _ in range(n_q)]
    outputs = []
    for q in range(n_q):
        gen = SeededRng(seed, q).generator()
        z = gen.standard_normal((frames, model.dims.d_a))
        for tau in range(sched.N, 0, -1):
            z0_hat = guided_prediction(model, z, tau, g)
            z = ddim_step(z, z0_hat, tau, tau - 1, sched)
        outputs.append(z)
    return outputs


def invert(model: dn.DenoiserModel, z0, cond: CondSeq, k: int, sched: NoiseSchedule) -> np.ndarray:
    """Re-noise a clean latent k levels up the trajectory (the edit pivot).

    Unguided (w = 0) predictions drive the lift, each evaluated at the
    lagging step, which is what makes inversion approximate for trained
    models. The clean latent enters at level 1 unchanged (identity anchor);
    levels 1..k are exact affine bijections.
    """
    z = as_latent(z0, "z0")
    if not 1 <= k <= sched.N:
        raise InvalidStep(f"inversion depth {k} outside 1..{sched.N}")
    for tau in range(2, k + 1):
        z0_hat = dn.forward(model, z, tau - 1, cond)
        z = ddim_step(z, z0_hat, tau - 1, tau, sched)
    return z


def edit(
    model: dn.DenoiserModel,
    z0,
    cond_new: GuidanceSpec,
    k: int,
    sched: NoiseSchedule,
    cond_original: CondSeq | None = None,
) -> np.ndarray:
    """Invert k levels, then denoise under new guidance.

    The denoising leg mirrors the inversion leg level-for-level (k..2 plus
    the identity anchor), so with an input-independent model the edit with
    unchanged conditioning returns the input exactly.
    """
    if cond_original is None:
        cond_original = CondSeq.null(model.dims.d_t)
    z = invert(model, z0, cond_original, k, sched)
    for tau in range(k, 1, -1):
        z0_hat = guided_prediction(model, z, tau, cond_new)
        z = ddim_step(z, z0_hat, tau, tau - 1, sched)
    return z


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "sample"  # sample | epsilon | regression
    steps: int = 3000
    batch: int = 64
    lr_peak: float = 1e-3
    warmup_steps: int = 300
    cond_mask_prob: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    eval_every: int = 200
    patience: int = 5
    log_every: int = 10

    def __post_init__(self):
        if self.objective not in ("sample", "epsilon", "regression"):
            raise InvalidSpec(f"unknown objective {self.objective!r}")
        if not 0.0 <= self.cond_mask_prob <= 1.0:
            raise InvalidSpec("cond_mask_prob must lie in [0, 1]")
        if self.warmup_steps > self.steps:
            raise InvalidSpec("warmup_steps must not exceed steps")
        if self.steps < 1 or self.batch < 1:
            raise InvalidSpec("steps and batch must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        base = dict(steps=100_000, batch=256, lr_peak=1e-4, warmup_steps=5000)
        base.update(overrides)
        return cls(**base)

    def digest(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainReport:
    """Loss curve and stopping bookkeeping for one training run."""

    curve: list = field(default_factory=list)  # {step, loss, lr, split} entries
    final_val_loss: float | None = None
    early_stop_step: int | None = None
    wall_time_s: float = 0.0

    def train_losses(self) -> list:
        return [e["loss"] for e in self.curve if e["split"] == "train"]


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_peak, then cosine decay to 0 at the final step."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr_peak * 0.5 * (1.0 + np.cos(np.pi * min(progress, 1.0)))


def _val_batch(items, sched: NoiseSchedule, cfg: TrainConfig, limit: int = 128) -> list:
    gen = SeededRng(cfg.seed, 2**32 + 1).generator()
    chosen = items[:limit]
    batch = []
    for it in chosen:
        batch.append(
            dn.BatchItem(
                z0=it.audio,
                tau=int(gen.integers(1, sched.N + 1)),
                eps=gen.standard_normal(it.audio.shape),
                cond=it.cond,
            )
        )
    return batch


def _batch_loss(model, batch, sched, objective, mask) -> float:
    out = dn.loss_and_grad(model, batch, sched, objective=objective, mask_frame=mask)
    return out[0]


def train(
    model: dn.DenoiserModel,
    corpus: Corpus,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    log_sink=None,
) -> tuple[dn.DenoiserModel, TrainReport]:
    """AdamW training with CFG conditioning dropout and early stopping.

    Each batch item draws a uniform step and a fresh noise realization;
    with probability ``cond_mask_prob`` its conditioning is replaced by the
    null sequence. Validation diffusion loss on a fixed batch is evaluated
    every ``eval_every`` steps; ``patience`` evaluations without improvement
    stop the run. Fully deterministic under ``cfg.seed``.

    ``log_sink``, when given, receives each curve entry as it is produced
    (used by the CLI to stream a JSONL training log).
    """
    train_items = corpus.split_items("train")
    if not train_items:
        raise EmptyInput("corpus has no train split")
    val_items = corpus.split_items("val")
    val_batch = _val_batch(val_items, sched, cfg) if val_items else None

    work = dn.DenoiserModel(
        arch=model.arch,
        dims=model.dims,
        params=model.params.copy(),
        objective=cfg.objective,
    )
    mask = np.zeros(model.dims.d_a) if cfg.objective == "regression" else None

    n_params = work.param_count + (model.dims.d_a if mask is not None else 0)
    m1 = np.zeros(n_params)
    m2 = np.zeros(n_params)
    gen = SeededRng(cfg.seed, 2**32).generator()
    report = TrainReport()
    best_val = np.inf
    stale = 0
    start = time.monotonic()

    def emit(entry):
        report.curve.append(entry)
        if log_sink is not None:
            log_sink(entry)

    for step in range(1, cfg.steps + 1):
        idx = gen.integers(0, len(train_items), size=cfg.batch)
        taus = gen.integers(1, sched.N + 1, size=cfg.batch)
        masked = gen.random(cfg.batch) < cfg.cond_mask_prob
        batch = []
        for j, i in enumerate(idx):
            it = train_items[int(i)]
            eps = gen.standard_normal(it.audio.shape)
            cond = CondSeq.null(corpus.d_t) if masked[j] else it.cond
            batch.append(dn.BatchItem(z0=it.audio, tau=int(taus[j]), eps=eps, cond=cond))
        if mask is None:
            loss, grad = dn.loss_and_grad(work, batch, sched, objective=cfg.objective)
            full_grad = grad
        else:
            loss, grad, mgrad = dn.loss_and_grad(
                work, batch, sched, objective=cfg.objective, mask_frame=mask
            )
            full_grad = np.concatenate([grad, mgrad])

        lr = lr_at(step, cfg)
        m1 = cfg.adam_beta1 * m1 + (1 - cfg.adam_beta1) * full_grad
        m2 = cfg.adam_beta2 * m2 + (1 - cfg.adam_beta2) * full_grad * full_grad
        mhat = m1 / (1 - cfg.adam_beta1**step)
        vhat = m2 / (1 - cfg.adam_beta2**step)
        update = mhat / (np.sqrt(vhat) + cfg.adam_eps)
        flat = (
            work.params if mask is None else np.concatenate([work.params, mask])
        )
        flat = flat - lr * (update + cfg.weight_decay * flat)
        if mask is None:
            work.params[...] = flat
        else:
            work.params[...] = flat[: work.param_count]
            mask[...] = flat[work.param_count :]

        if step == 1 or step % cfg.log_every == 0 or step == cfg.steps:
            emit({"step": step, "loss": float(loss), "lr": float(lr), "split": "train"})

        if val_batch is not None and step % cfg.eval_every == 0:
            vloss = _batch_loss(work, val_batch, sched, cfg.objective, mask)
            emit({"step": step, "loss": float(vloss), "lr": float(lr), "split": "val"})
            report.final_val_loss = float(vloss)
            if vloss < best_val - 1e-12:
                best_val = vloss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    report.early_stop_step = step
                    break

    report.wall_time_s = time.monotonic() - start
    work.mask_frame = mask
    work.meta = {"schedule_hash": sched.digest(), "train_digest": cfg.digest()}
    return work, report
