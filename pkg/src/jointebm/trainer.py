"""Direct joint maximum-likelihood training with PCD and LWG negatives.

Each iteration draws a data batch, advances persistent chains with the
joint sampler, and descends on mean f(neg) - mean f(pos), the negated
single-sample estimator of the joint likelihood gradient. When the KL
weight is positive the final Langevin step of the negative chains is
replayed on the tape: the step's energy gradient is built from primitive
ops (so it stays differentiable in theta) while the outer energy uses the
current weights as constants. Validation accuracy on the EMA weights
selects the checkpoint; divergence halts training with a diagnostic state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .buffers import InitialDistribution, JointBuffer
from .energy import (
    EnergyModel,
    MlpBackbone,
    joint_energy_on_tape,
    joint_energy_on_tape_const,
    joint_x_grad_on_tape,
)
from .engine import MlpSpec, ParameterSet, Tape, adam_step, backward, ema_update, init_mlp_params
from .metrics import PredictionSet, accuracy
from .samplers import (
    GibbsConfig,
    LangevinConfig,
    SampleBatch,
    SampleResult,
    lwg_sample,
    sample_labels,
)

DIVERGENCE_PARAM_BOUND = 1e9


@dataclass
class AugmentConfig:
    """Chain augmentation; identity unless the data is image-shaped."""

    enabled: bool = False
    image_shape: tuple[int, int] | None = None
    flip_prob: float = 0.5
    blur_sigma: float = 0.5
    every: int = 60


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    ema_mu: float = 0.999
    kl_weight: float = 0.3
    energy_reg: float = 0.0
    eval_every: int = 250
    seed: int = 0
    dequantize_inputs: bool = False
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    buffer_capacity: int = 10000
    buffer_reinit: float = 0.05
    buffer_mode: str = "replay"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or not 0 <= self.ema_mu <= 1:
            raise ValueError("bad optimizer settings")
        if self.kl_weight < 0 or self.energy_reg < 0:
            raise ValueError("loss weights must be non-negative")
        if self.kl_weight > 0 and self.gibbs.sweeps < 1:
            raise ValueError("the KL term needs at least one sweep to retain")


class TrainableModel:
    """A parameter set with live theta and EMA energy-model views."""

    def __init__(self, spec: MlpSpec, params: ParameterSet):
        self.spec = spec
        self.params = params
        self.model = EnergyModel(MlpBackbone.from_params(spec, params))
        self.eval_model = EnergyModel(MlpBackbone.from_params(spec, params, ema=True))


@dataclass
class TrainState:
    spec: MlpSpec
    params: ParameterSet
    buffer: JointBuffer
    p0: InitialDistribution | None = None
    iteration: int = 0
    diverged: bool = False
    diverged_reason: str = ""
    best_accuracy: float | None = None
    best_ema: dict[str, np.ndarray] | None = None
    best_iteration: int = 0
    accuracy_history: list[tuple[int, float]] = field(default_factory=list)
    log_rows: list[tuple] = field(default_factory=list)

    def selected_ema(self) -> dict[str, np.ndarray]:
        """The EMA snapshot with the best validation accuracy (else current)."""
        return self.best_ema if self.best_ema is not None else self.params.snapshot_ema()


def dequantize(x_int, rng: np.random.Generator, noise_sigma: float = 0.001) -> np.ndarray:
    """Map integers in [0, 255] to (z + u)/256, add tiny noise, clamp."""
    x = np.asarray(x_int)
    if not np.all(x == np.floor(x)):
        raise ValueError("dequantize expects integer-valued input")
    if (x < 0).any() or (x > 255).any():
        raise ValueError("dequantize expects values in [0, 255]")
    u = rng.random(x.shape)
    out = (x.astype(np.float64) + u) / 256.0
    if noise_sigma > 0:
        out = out + noise_sigma * rng.standard_normal(x.shape)
    return np.clip(out, 0.0, 1.0)


def horizontal_flip(x: np.ndarray, image_shape: tuple[int, int]) -> np.ndarray:
    h, w = image_shape
    return np.ascontiguousarray(np.flip(x.reshape(-1, h, w), axis=2)).reshape(x.shape[0], -1)


def gaussian_blur(x: np.ndarray, image_shape: tuple[int, int], sigma: float) -> np.ndarray:
    h, w = image_shape
    imgs = x.reshape(-1, h, w)
    out = np.stack([ndimage.gaussian_filter(img, sigma, mode="nearest") for img in imgs])
    return out.reshape(x.shape[0], -1)


def augment_chain(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Blur-and-maybe-flip for image-shaped tensors; identity otherwise."""
    if not cfg.enabled or cfg.image_shape is None:
        return x
    out = gaussian_blur(x, cfg.image_shape, cfg.blur_sigma) if cfg.blur_sigma > 0 else x.copy()
    if cfg.flip_prob > 0:
        flip = rng.random(x.shape[0]) < cfg.flip_prob
        if flip.any():
            out[flip] = horizontal_flip(out[flip], cfg.image_shape)
    return np.clip(out, 0.0, 1.0)


def _pcd_terms(tape: Tape, tm: TrainableModel, pos: SampleBatch, neg: SampleBatch):
    e_pos = joint_energy_on_tape(tape, tm.params, tm.spec, pos.x, pos.y)
    e_neg = joint_energy_on_tape(tape, tm.params, tm.spec, neg.x, neg.y)
    loss = tape.sub(tape.mean(e_neg), tape.mean(e_pos))
    return loss, e_pos, e_neg


def pcd_loss(tm: TrainableModel, pos: SampleBatch, neg: SampleBatch):
    """Loss mean f(neg) - mean f(pos) and its theta gradients."""
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("batches must be non-empty")
    tape = Tape()
    loss, _, _ = _pcd_terms(tape, tm, pos, neg)
    tm.params.clear_grads()
    backward(tape, loss)
    return loss.item(), tm.params.collect_grads()


def _kl_term(tape: Tape, tm: TrainableModel, res: SampleResult, lc: LangevinConfig):
    """Differentiable replay of the withheld final Langevin step.

    Returns the scalar KL tensor (negated mean outer energy, so descending
    on it pushes sampler outputs toward high model likelihood) and the
    numeric post-step states, which become the negative batch.
    """
    if not res.pending_step or res.last_noise is None:
        raise ValueError("sampler result is missing the retained last step")
    x_pre = tape.constant(res.x)
    gx = joint_x_grad_on_tape(tape, tm.params, tm.spec, x_pre, res.y)
    stepped = tape.add(x_pre, tape.scale(gx, lc.grad_coef))
    if lc.noise:
        stepped = tape.add(stepped, tape.constant(lc.step_size * res.last_noise))
    x_new = tape.clip01(stepped) if lc.clamp else stepped
    n_layers = tm.spec.num_layers
    ws = [tm.params.theta[f"w{i}"].data for i in range(n_layers)]
    bs = [tm.params.theta[f"b{i}"].data for i in range(n_layers)]
    e_outer = joint_energy_on_tape_const(tape, ws, bs, tm.spec, x_new, res.y)
    return tape.scale(tape.mean(e_outer), -1.0), x_new.data


def kl_aug_loss(tm: TrainableModel, res: SampleResult, lc: LangevinConfig):
    """Standalone KL term value and gradients (for testing and inspection)."""
    tape = Tape()
    term, _ = _kl_term(tape, tm, res, lc)
    tm.params.clear_grads()
    backward(tape, term)
    return term.item(), tm.params.collect_grads()


def _validation_accuracy(tm: TrainableModel, x_val, y_val, names) -> float:
    probs = tm.eval_model.label_conditional(x_val)
    return accuracy(PredictionSet(probs, y_val, names))


def train(data, model_spec: MlpSpec, cfg: TrainConfig) -> TrainState:
    """Run the PCD loop on the dataset's training split."""
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp_params(model_spec, rng)
    tm = TrainableModel(model_spec, params)
    buffer = JointBuffer(cfg.buffer_capacity, cfg.buffer_reinit, cfg.buffer_mode)
    state = TrainState(spec=model_spec, params=params, buffer=buffer)

    x_tr, y_tr = data.train()
    x_val, y_val = data.validation()
    if cfg.iterations > 0 and x_tr.shape[0] == 0:
        raise ValueError("training split is empty")

    def label_fn(x, r):
        return sample_labels(tm.model, x, r)

    use_kl = cfg.kl_weight > 0
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, x_tr.shape[0], size=cfg.batch_size)
        pos_x = x_tr[idx]
        if cfg.dequantize_inputs:
            pos_x = dequantize(pos_x, rng)
        pos = SampleBatch(pos_x, y_tr[idx])
        for combo in data.held_out_combos:
            if combo.matches(pos.y).any():
                raise RuntimeError("held-out combination leaked into a training batch")

        if state.p0 is None:
            state.p0 = InitialDistribution.from_batch(pos.x, label_fn)

        init = buffer.draw_init_batch(cfg.batch_size, state.p0, rng)
        if cfg.augment.enabled:
            init = SampleBatch(augment_chain(init.x, cfg.augment, rng), init.y)
        res = lwg_sample(
            tm.model,
            init,
            cfg.gibbs,
            cfg.langevin,
            rng,
            retain_last_step=use_kl,
            augment_fn=(lambda x, r: augment_chain(x, cfg.augment, r))
            if cfg.augment.enabled
            else None,
            augment_every=cfg.augment.every if cfg.augment.enabled else 0,
        )

        tape = Tape()
        if use_kl:
            kl_tensor, x_neg = _kl_term(tape, tm, res, cfg.langevin)
            neg = SampleBatch(x_neg, res.y)
        else:
            kl_tensor = None
            neg = res.batch
        loss_tensor, e_pos, e_neg = _pcd_terms(tape, tm, pos, neg)
        total = loss_tensor
        if kl_tensor is not None:
            total = tape.add(total, tape.scale(kl_tensor, cfg.kl_weight))
        if cfg.energy_reg > 0:
            reg = tape.add(tape.mean(tape.square(e_pos)), tape.mean(tape.square(e_neg)))
            total = tape.add(total, tape.scale(reg, cfg.energy_reg))

        params.clear_grads()
        backward(tape, total)
        grads = params.collect_grads()
        buffer.store(neg, rng)

        adam_step(params, grads, cfg.learning_rate)
        ema_update(params, cfg.ema_mu)
        state.iteration = it

        mean_pos = float(e_pos.data.mean())
        mean_neg = float(e_neg.data.mean())
        kl_value = float(kl_tensor.item()) if kl_tensor is not None else 0.0
        loss_value = float(total.item())

        reason = _divergence_reason(res, loss_value, mean_pos, mean_neg, params)
        if reason:
            state.diverged = True
            state.diverged_reason = reason
            state.log_rows.append((it, loss_value, mean_pos, mean_neg, kl_value, None, 1))
            break

        val_acc = None
        if cfg.eval_every > 0 and it % cfg.eval_every == 0 and x_val.shape[0] > 0:
            val_acc = _validation_accuracy(tm, x_val, y_val, data.attribute_names)
            if state.best_accuracy is None or val_acc > state.best_accuracy:
                state.best_accuracy = val_acc
                state.best_ema = params.snapshot_ema()
                state.best_iteration = it
                state.accuracy_history.append((it, val_acc))
        state.log_rows.append((it, loss_value, mean_pos, mean_neg, kl_value, val_acc, 0))

    if state.best_ema is None and not state.diverged:
        if cfg.iterations > 0 and x_val.shape[0] > 0:
            state.best_accuracy = _validation_accuracy(tm, x_val, y_val, data.attribute_names)
            state.accuracy_history.append((state.iteration, state.best_accuracy))
        state.best_ema = params.snapshot_ema()
        state.best_iteration = state.iteration
    return state


def _divergence_reason(res, loss_value, mean_pos, mean_neg, params) -> str:
    if res.diverged.any():
        return f"{int(res.diverged.sum())} sampling chains diverged"
    if not np.isfinite(loss_value) or not np.isfinite(mean_pos) or not np.isfinite(mean_neg):
        return "non-finite loss or energy"
    if max(abs(mean_pos), abs(mean_neg)) > DIVERGENCE_PARAM_BOUND:
        return "energy magnitude exceeded the divergence bound"
    for name in params.names():
        if not np.isfinite(params.theta[name].data).all():
            return f"non-finite parameter {name}"
    return ""


def write_train_log(path, state: TrainState) -> None:
    """Append-only CSV of per-iteration diagnostics."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss,pos_energy,neg_energy,kl_term,val_accuracy,diverged\n")
        for it, loss, ep, en, kl, acc, dv in state.log_rows:
            acc_s = "" if acc is None else repr(acc)
            fh.write(f"{it},{loss!r},{ep!r},{en!r},{kl!r},{acc_s},{dv}\n")
