"""Joint, marginal, label-conditional and semi-conditional energies.

The backbone maps a point x to one logit pair per attribute. The joint
energy of (x, y) is the sum of the selected logits; marginalizing an
attribute replaces its selected logit with a logsumexp over the pair, which
is what makes the semi-conditional energy a single differentiable scalar.
An exact enumeration over all label vectors backs the identities as an
oracle at small K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .engine import MlpSpec, ParameterSet, Tape, Tensor, mlp_forward

ENUMERATION_MAX_ATTRIBUTES = 20


@dataclass(frozen=True)
class ConditioningSpec:
    """Partial attribute assignment: pin ``values[i]`` at ``indices[i]``."""

    num_attributes: int
    indices: tuple[int, ...] = ()
    values: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values must have equal length")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("conditioning indices must be unique")
        if any(i < 0 or i >= self.num_attributes for i in self.indices):
            raise ValueError("conditioning index out of range")
        if any(v not in (0, 1) for v in self.values):
            raise ValueError("conditioning values must be binary")

    @classmethod
    def empty(cls, num_attributes: int) -> "ConditioningSpec":
        return cls(num_attributes)

    @classmethod
    def full(cls, y) -> "ConditioningSpec":
        y = np.asarray(y)
        return cls(y.size, tuple(range(y.size)), tuple(int(v) for v in y))

    @property
    def is_empty(self) -> bool:
        return len(self.indices) == 0

    @property
    def is_full(self) -> bool:
        return len(self.indices) == self.num_attributes

    @property
    def free_indices(self) -> np.ndarray:
        mask = np.ones(self.num_attributes, dtype=bool)
        mask[list(self.indices)] = False
        return np.flatnonzero(mask)

    def as_arrays(self):
        return (
            np.asarray(self.indices, dtype=np.int64),
            np.asarray(self.values, dtype=np.int64),
        )

    def matches(self, y: np.ndarray) -> np.ndarray:
        """Row mask of label matrix rows agreeing with the assignment."""
        y = np.atleast_2d(y)
        if self.is_empty:
            return np.ones(y.shape[0], dtype=bool)
        idx, val = self.as_arrays()
        return (y[:, idx] == val).all(axis=1)


class MlpBackbone:
    """Swish-MLP logit head evaluated through the selected kernel backend."""

    def __init__(self, spec: MlpSpec, ws: list[np.ndarray], bs: list[np.ndarray]):
        self.spec = spec
        self.ws = [np.ascontiguousarray(w, dtype=np.float64) for w in ws]
        self.bs = [np.ascontiguousarray(b, dtype=np.float64) for b in bs]
        self.input_dim = spec.input_dim
        self.num_attributes = spec.num_attributes

    @classmethod
    def from_params(cls, spec: MlpSpec, params: ParameterSet, ema: bool = False) -> "MlpBackbone":
        source = params.ema if ema else {n: params.theta[n].data for n in params.names()}
        ws = [source[f"w{i}"] for i in range(spec.num_layers)]
        bs = [source[f"b{i}"] for i in range(spec.num_layers)]
        return cls(spec, ws, bs)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return backend.mlp_logits(self.ws, self.bs, x)

    def joint_energy_grad(self, x: np.ndarray, y: np.ndarray):
        return backend.joint_energy_grad(self.ws, self.bs, x, y)

    def semicond_energy_grad(self, x: np.ndarray, cond_idx: np.ndarray, cond_val: np.ndarray):
        return backend.semicond_energy_grad(self.ws, self.bs, x, cond_idx, cond_val)


class JacobianBackbone:
    """Backbone adapter for analytic toys: derive gradients from a jacobian.

    Subclasses implement ``logits(x) -> (B, K, 2)`` and
    ``logits_jacobian(x) -> (B, K, 2, D)``.
    """

    input_dim: int
    num_attributes: int

    def logits(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logits_jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def joint_energy_grad(self, x: np.ndarray, y: np.ndarray):
        logits = self.logits(x)
        jac = self.logits_jacobian(x)
        rows = np.arange(x.shape[0])[:, None]
        cols = np.arange(self.num_attributes)[None, :]
        e = logits[rows, cols, y].sum(axis=1)
        g = jac[rows, cols, y].sum(axis=1)
        return e, g

    def semicond_energy_grad(self, x: np.ndarray, cond_idx: np.ndarray, cond_val: np.ndarray):
        logits = self.logits(x)
        jac = self.logits_jacobian(x)
        weights = np.zeros_like(logits)
        e = np.zeros(x.shape[0])
        free = np.ones(self.num_attributes, dtype=bool)
        free[cond_idx] = False
        if len(cond_idx) > 0:
            rows = np.arange(x.shape[0])[:, None]
            e += logits[rows, cond_idx[None, :], cond_val[None, :]].sum(axis=1)
            weights[rows, cond_idx[None, :], cond_val[None, :]] = 1.0
        if free.any():
            fp = logits[:, free, :]
            m = fp.max(axis=2, keepdims=True)
            ex = np.exp(fp - m)
            denom = ex.sum(axis=2, keepdims=True)
            e += (m[:, :, 0] + np.log(denom[:, :, 0])).sum(axis=1)
            weights[:, free, :] = ex / denom
        g = (weights[:, :, :, None] * jac).sum(axis=(1, 2))
        return e, g


class EnergyModel:
    """Spec-facing energy functions over a logit backbone."""

    def __init__(self, backbone):
        self.backbone = backbone

    @property
    def num_attributes(self) -> int:
        return self.backbone.num_attributes

    @property
    def input_dim(self) -> int:
        return self.backbone.input_dim

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        return (x[None, :] if single else x), single

    def logits(self, x) -> np.ndarray:
        xb, single = self._as_batch(x)
        out = self.backbone.logits(xb)
        return out[0] if single else out

    def joint_energy(self, x, y):
        """Log-unnormalized joint density: sum of selected logits."""
        xb, single = self._as_batch(x)
        yb = _validate_labels(y, self.num_attributes, xb.shape[0])
        e, _ = self.backbone.joint_energy_grad(xb, yb)
        return float(e[0]) if single else e

    def joint_energy_grad(self, x, y):
        xb, single = self._as_batch(x)
        yb = _validate_labels(y, self.num_attributes, xb.shape[0])
        e, g = self.backbone.joint_energy_grad(xb, yb)
        return (float(e[0]), g[0]) if single else (e, g)

    def label_conditional(self, x) -> np.ndarray:
        """Per-attribute Bernoulli probabilities p(y_k = 1 | x)."""
        return label_conditional_from_logits(self.logits(x))

    def marginal_energy(self, x):
        xb, single = self._as_batch(x)
        idx = np.zeros(0, dtype=np.int64)
        e, _ = self.backbone.semicond_energy_grad(xb, idx, idx)
        return float(e[0]) if single else e

    def marginal_energy_grad(self, x):
        xb, single = self._as_batch(x)
        idx = np.zeros(0, dtype=np.int64)
        e, g = self.backbone.semicond_energy_grad(xb, idx, idx)
        return (float(e[0]), g[0]) if single else (e, g)

    def semi_conditional_energy(self, x, spec: ConditioningSpec):
        xb, single = self._as_batch(x)
        _check_spec(spec, self.num_attributes)
        idx, val = spec.as_arrays()
        e, _ = self.backbone.semicond_energy_grad(xb, idx, val)
        return float(e[0]) if single else e

    def semicond_energy_grad(self, x, spec: ConditioningSpec):
        xb, single = self._as_batch(x)
        _check_spec(spec, self.num_attributes)
        idx, val = spec.as_arrays()
        e, g = self.backbone.semicond_energy_grad(xb, idx, val)
        return (float(e[0]), g[0]) if single else (e, g)

    def enumerate_label_distribution(self, x):
        """Exact normalized table over all 2^K label vectors at one x."""
        k = self.num_attributes
        if k > ENUMERATION_MAX_ATTRIBUTES:
            raise ValueError(f"enumeration requires K <= {ENUMERATION_MAX_ATTRIBUTES}")
        logits = self.logits(np.asarray(x, dtype=np.float64))
        if logits.ndim != 2:
            raise ValueError("enumeration takes a single point, not a batch")
        vectors = _all_label_vectors(k)
        scores = vectors @ logits[:, 1] + (1 - vectors) @ logits[:, 0]
        m = scores.max()
        w = np.exp(scores - m)
        return vectors, w / w.sum()


def label_conditional_from_logits(logits: np.ndarray) -> np.ndarray:
    """Stable two-way softmax: p(y_k = 1 | x) from logit pairs (..., K, 2)."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e[..., 1] / e.sum(axis=-1)


def _all_label_vectors(k: int) -> np.ndarray:
    n = 1 << k
    out = np.zeros((n, k), dtype=np.int64)
    for j in range(k):
        out[:, j] = (np.arange(n) >> (k - 1 - j)) & 1
    return out


def _validate_labels(y, k: int, batch: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 1:
        y = np.broadcast_to(y, (batch, y.size))
    if y.shape != (batch, k):
        raise ValueError(f"labels must have shape ({batch}, {k}), got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    return np.ascontiguousarray(y, dtype=np.int64)


def _check_spec(spec: ConditioningSpec, k: int) -> None:
    if spec.num_attributes != k:
        raise ValueError(
            f"conditioning is over {spec.num_attributes} attributes, model has {k}"
        )


# -- tape-side energies used by the trainer ---------------------------------


def joint_energy_on_tape(tape: Tape, params: ParameterSet, spec: MlpSpec, x, y) -> Tensor:
    """Per-example joint energies (B,) recorded on the tape."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    tape.watch(xt)
    if xt.data.ndim == 1:
        xt = tape.reshape(xt, (1, -1))
    y = _validate_labels(y, spec.num_attributes, xt.data.shape[0])
    logits = mlp_forward(params, spec, xt, tape)
    return tape.select_pairs(logits, y)


def joint_energy_on_tape_const(tape: Tape, ws, bs, spec: MlpSpec, x: Tensor, y) -> Tensor:
    """Joint energies with the weights held constant (no theta gradient)."""
    h = x
    n_layers = spec.num_layers
    for i in range(n_layers):
        z = tape.add(tape.matmul(h, tape.constant(ws[i])), tape.constant(bs[i]))
        h = tape.swish(z) if i < n_layers - 1 else z
    logits = tape.reshape(h, (x.data.shape[0], spec.num_attributes, 2))
    yb = _validate_labels(y, spec.num_attributes, x.data.shape[0])
    return tape.select_pairs(logits, yb)


def joint_x_grad_on_tape(tape: Tape, params: ParameterSet, spec: MlpSpec, x: Tensor, y) -> Tensor:
    """Input gradient of the joint energy, built from primitive ops.

    The returned (B, D) tensor stays differentiable in theta, which is what
    lets a Langevin step be unrolled through the tape without second-order
    support in the engine.
    """
    batch = x.data.shape[0]
    yb = _validate_labels(y, spec.num_attributes, batch)
    n_layers = spec.num_layers

    h = x
    zs: list[Tensor] = []
    ws = [tape.watch(params[f"w{i}"]) for i in range(n_layers)]
    bs = [tape.watch(params[f"b{i}"]) for i in range(n_layers)]
    for i in range(n_layers - 1):
        z = tape.add(tape.matmul(h, ws[i]), bs[i])
        zs.append(z)
        h = tape.swish(z)

    seed = np.zeros((batch, 2 * spec.num_attributes))
    cols = 2 * np.arange(spec.num_attributes)[None, :] + yb
    seed[np.arange(batch)[:, None], cols] = 1.0
    g = tape.matmul_t(tape.constant(seed), ws[-1])
    one = tape.constant(np.array(1.0))
    for i in range(n_layers - 2, -1, -1):
        s = tape.sigmoid(zs[i])
        deriv = tape.add(s, tape.mul(tape.mul(zs[i], s), tape.sub(one, s)))
        g = tape.matmul_t(tape.mul(g, deriv), ws[i])
    return g
