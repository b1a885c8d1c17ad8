"""Langevin dynamics, Langevin-within-Gibbs, and semi-conditional sampling.

A joint sweep alternates an exact per-attribute label draw with one or more
Langevin updates of x under the joint energy at the freshly drawn labels.
Pinning a subset of attributes gives the resampling variant; folding the
free attributes into the energy via logsumexp gives the marginalizing
variant. Chains whose energy or gradient stops being finite (or exceeds
the divergence bound) are frozen and flagged rather than propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import ConditioningSpec, EnergyModel, label_conditional_from_logits

DIVERGENCE_ENERGY_BOUND = 1e9


@dataclass
class LangevinConfig:
    """Update x' = x + (step_size^2 / (2 temperature)) grad + step_size * noise."""

    step_size: float = 0.01
    temperature: float = 1.0 / 20000.0
    clamp: bool = True
    noise: bool = True

    def __post_init__(self):
        if self.step_size <= 0 or self.temperature <= 0:
            raise ValueError("step_size and temperature must be positive")

    @property
    def grad_coef(self) -> float:
        return self.step_size**2 / (2.0 * self.temperature)


@dataclass
class GibbsConfig:
    sweeps: int = 40
    inner_steps: int = 1

    def __post_init__(self):
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")


@dataclass
class JointSample:
    x: np.ndarray
    y: np.ndarray


@dataclass
class SampleBatch:
    """Paired (x, y) rows; the pairing is never split."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.int64))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y must have the same number of rows")

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> JointSample:
        return JointSample(self.x[i].copy(), self.y[i].copy())

    def copy(self) -> "SampleBatch":
        return SampleBatch(self.x.copy(), self.y.copy())


@dataclass
class ChainState:
    """One chain's current joint sample, RNG stream and step counter."""

    x: np.ndarray
    y: np.ndarray
    rng: np.random.Generator | None = None
    step: int = 0
    diverged: bool = False


@dataclass
class SampleResult:
    """Final states of a batch of chains plus divergence flags.

    When the final Langevin step was withheld for differentiable replay,
    ``pending_step`` is True and ``x`` holds the state *before* that step
    with ``last_noise`` the noise draw it should use.
    """

    x: np.ndarray
    y: np.ndarray
    diverged: np.ndarray
    pending_step: bool = False
    last_noise: np.ndarray | None = None

    @property
    def batch(self) -> SampleBatch:
        return SampleBatch(self.x, self.y)


def langevin_step(x: np.ndarray, energy_grad_fn, cfg: LangevinConfig, rng: np.random.Generator):
    """One Langevin update on a batch; returns (x_next, energies, diverged)."""
    e, g = energy_grad_fn(x)
    bad = ~np.isfinite(e) | (np.abs(e) > DIVERGENCE_ENERGY_BOUND)
    bad |= ~np.isfinite(g).all(axis=1)
    if cfg.noise:
        noise = rng.standard_normal(x.shape)
    else:
        noise = 0.0
    x_next = x + cfg.grad_coef * g + cfg.step_size * noise
    if cfg.clamp:
        x_next = np.clip(x_next, 0.0, 1.0)
    if bad.any():
        x_next[bad] = x[bad]
    return x_next, e, bad


def run_langevin(
    x0: np.ndarray,
    energy_grad_fn,
    cfg: LangevinConfig,
    rng: np.random.Generator,
    n_steps: int,
    collect=None,
):
    """Run a Langevin chain; ``collect(t, x)`` is called after each step."""
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    diverged = np.zeros(x.shape[0], dtype=bool)
    for t in range(n_steps):
        x_next, _, bad = langevin_step(x, energy_grad_fn, cfg, rng)
        diverged |= bad
        x_next[diverged] = x[diverged]
        x = x_next
        if collect is not None:
            collect(t, x)
    return x, diverged


def sample_labels(
    m: EnergyModel,
    x: np.ndarray,
    rng: np.random.Generator,
    spec: ConditioningSpec | None = None,
) -> np.ndarray:
    """Exact per-attribute label draw y_k ~ Bernoulli(p(y_k = 1 | x)).

    Conditioned attributes are copied from ``spec`` and consume no
    randomness, so an empty conditioning and none at all use identical RNG
    streams.
    """
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch = xb.shape[0]
    k = m.num_attributes
    y = np.zeros((batch, k), dtype=np.int64)
    free = np.arange(k) if spec is None else spec.free_indices
    if free.size > 0:
        p = label_conditional_from_logits(m.backbone.logits(xb))
        u = rng.random((batch, free.size))
        y[:, free] = u < p[:, free]
    if spec is not None and not spec.is_empty:
        idx, val = spec.as_arrays()
        y[:, idx] = val
    return y


def semi_conditional_resample(
    m: EnergyModel,
    spec: ConditioningSpec,
    init: SampleBatch,
    gc: GibbsConfig,
    lc: LangevinConfig,
    rng: np.random.Generator,
    trace=None,
    retain_last_step: bool = False,
    augment_fn=None,
    augment_every: int = 0,
) -> SampleResult:
    """Joint sampling with pinned attributes copied every sweep.

    ``trace(sweep, x, y)`` is called after each sweep. With
    ``retain_last_step`` the final Langevin update is withheld and its noise
    returned so the caller can replay it differentiably.
    """
    x = init.x.copy()
    y = init.y.copy()
    diverged = np.zeros(x.shape[0], dtype=bool)
    step_counter = 0
    for t in range(gc.sweeps):
        y_new = sample_labels(m, x, rng, spec)
        y_new[diverged] = y[diverged]
        y = y_new

        def grad_fn(xi):
            return m.backbone.joint_energy_grad(xi, y)

        for j in range(gc.inner_steps):
            if retain_last_step and t == gc.sweeps - 1 and j == gc.inner_steps - 1:
                noise = rng.standard_normal(x.shape) if lc.noise else np.zeros_like(x)
                return SampleResult(x, y, diverged, pending_step=True, last_noise=noise)
            x_next, _, bad = langevin_step(x, grad_fn, lc, rng)
            diverged |= bad
            x_next[diverged] = x[diverged]
            x = x_next
            step_counter += 1
            if augment_fn is not None and augment_every > 0 and step_counter % augment_every == 0:
                x = augment_fn(x, rng)
        if trace is not None:
            trace(t, x, y)
    return SampleResult(x, y, diverged)


def lwg_sample(
    m: EnergyModel,
    init: SampleBatch,
    gc: GibbsConfig,
    lc: LangevinConfig,
    rng: np.random.Generator,
    trace=None,
    retain_last_step: bool = False,
    augment_fn=None,
    augment_every: int = 0,
) -> SampleResult:
    """Unconditional joint sampling; the empty-conditioning special case."""
    spec = ConditioningSpec.empty(m.num_attributes)
    return semi_conditional_resample(
        m,
        spec,
        init,
        gc,
        lc,
        rng,
        trace=trace,
        retain_last_step=retain_last_step,
        augment_fn=augment_fn,
        augment_every=augment_every,
    )


def semi_conditional_marginalize(
    m: EnergyModel,
    spec: ConditioningSpec,
    init: SampleBatch,
    gc: GibbsConfig,
    lc: LangevinConfig,
    rng: np.random.Generator,
    trace=None,
) -> SampleResult:
    """Langevin on the semi-conditional energy with free attributes folded in.

    Runs sweeps * inner_steps updates so the Langevin budget matches the
    resampling variant. Free attributes are drawn once from the final x for
    reporting; pinned attributes are copied from ``spec``.
    """
    x = init.x.copy()
    diverged = np.zeros(x.shape[0], dtype=bool)
    idx, val = spec.as_arrays()

    def grad_fn(xi):
        return m.backbone.semicond_energy_grad(xi, idx, val)

    total = gc.sweeps * gc.inner_steps
    for t in range(total):
        x_next, _, bad = langevin_step(x, grad_fn, lc, rng)
        diverged |= bad
        x_next[diverged] = x[diverged]
        x = x_next
        if trace is not None and (t + 1) % gc.inner_steps == 0:
            trace(t // gc.inner_steps, x, None)
    if gc.sweeps > 0:
        y = sample_labels(m, x, rng, spec)
    else:
        y = init.y.copy()
    return SampleResult(x, y, diverged)


def likelihood_filter(
    m: EnergyModel,
    candidates: SampleBatch,
    spec: ConditioningSpec,
    keep: int,
):
    """Keep the ``keep`` candidates scoring highest under p(y_c | x).

    The score is the sum over conditioned attributes of log p(y_c[i] | x).
    Ties keep input order. Returns (filtered batch, their scores).
    """
    n = len(candidates)
    if keep > n:
        raise ValueError(f"cannot keep {keep} of {n} candidates")
    scores = conditioning_log_scores(m, candidates.x, spec)
    order = np.argsort(-scores, kind="stable")[:keep]
    return SampleBatch(candidates.x[order], candidates.y[order]), scores[order]


def conditioning_log_scores(m: EnergyModel, x: np.ndarray, spec: ConditioningSpec) -> np.ndarray:
    """Per-row sum over conditioned attributes of log p(y_c[i] | x)."""
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if spec.is_empty:
        return np.zeros(xb.shape[0])
    logits = m.backbone.logits(xb)
    idx, val = spec.as_arrays()
    pair = logits[:, idx, :]
    m_ = pair.max(axis=2, keepdims=True)
    lse = m_[:, :, 0] + np.log(np.exp(pair - m_).sum(axis=2))
    sel = pair[:, np.arange(idx.size), val]
    return (sel - lse).sum(axis=1)


def internal_consistency(m: EnergyModel, samples: SampleBatch, spec: ConditioningSpec) -> float:
    """Fraction of samples whose own-classifier prediction recovers y_c.

    A sample counts as consistent only if the thresholded conditional
    recovers every conditioned attribute.
    """
    if len(samples) == 0:
        raise ValueError("internal consistency needs at least one sample")
    if spec.is_empty:
        return 1.0
    p = label_conditional_from_logits(m.backbone.logits(samples.x))
    pred = (p >= 0.5).astype(np.int64)
    idx, val = spec.as_arrays()
    return float((pred[:, idx] == val).all(axis=1).mean())


def write_sample_dump(path, batches: list[tuple[int, int, SampleBatch]]) -> None:
    """CSV dump: chain id, sweep, y bits as a 0/1 string, then x columns."""
    with open(path, "w", encoding="utf-8") as fh:
        first = batches[0][2] if batches else None
        dim = first.x.shape[1] if first is not None else 0
        cols = ",".join(f"x_{d}" for d in range(dim))
        fh.write(f"chain,sweep,y,{cols}\n" if dim else "chain,sweep,y\n")
        for chain0, sweep, batch in batches:
            for i in range(len(batch)):
                bits = "".join(str(int(b)) for b in batch.y[i])
                xs = ",".join(repr(float(v)) for v in batch.x[i])
                fh.write(f"{chain0 + i},{sweep},{bits},{xs}\n")
