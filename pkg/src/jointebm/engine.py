"""Dense-tensor arithmetic with reverse-mode differentiation.

Everything is float64. A :class:`Tape` is a Wengert list rebuilt for every
forward pass: ops append records, :func:`backward` replays them in reverse.
Forward matmuls are computed as a broadcast multiply followed by a pairwise
sum instead of BLAS, so a batched pass is bit-identical to the per-example
passes it stacks (BLAS picks different accumulation orders per shape).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Tensor:
    """A float64 array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def swish(z: np.ndarray) -> np.ndarray:
    """Elementwise z * sigmoid(z) on a plain array."""
    return np.asarray(z, dtype=np.float64) * _sigmoid(np.asarray(z, dtype=np.float64))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _matmul_fixed_order(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (B, m) @ (m, n) with an accumulation order that does not depend on B.
    return (a[:, :, None] * b[None, :, :]).sum(axis=1)


class Tape:
    """Recorded primal ops; one backward pass replays their adjoints."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._known: set[int] = set()

    def _emit(self, out: Tensor, parents: tuple[Tensor, ...], pull) -> Tensor:
        out.requires_grad = any(p.requires_grad for p in parents)
        self._records.append((out, parents, pull))
        self._known.add(id(out))
        return out

    def constant(self, data) -> Tensor:
        t = Tensor(data)
        self._known.add(id(t))
        return t

    def leaf(self, data) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._known.add(id(t))
        return t

    def watch(self, t: Tensor) -> Tensor:
        self._known.add(id(t))
        return t

    # -- arithmetic ------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data + b.data)

        def pull(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return self._emit(out, (a, b), pull)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data - b.data)

        def pull(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

        return self._emit(out, (a, b), pull)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data * b.data)

        def pull(g):
            return (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )

        return self._emit(out, (a, b), pull)

    def scale(self, a: Tensor, c: float) -> Tensor:
        out = Tensor(a.data * c)

        def pull(g):
            return (g * c,)

        return self._emit(out, (a,), pull)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        # a: (B, m), b: (m, n)
        out = Tensor(_matmul_fixed_order(a.data, b.data))

        def pull(g):
            ga = (g[:, None, :] * b.data[None, :, :]).sum(axis=2)
            gb = (a.data[:, :, None] * g[:, None, :]).sum(axis=0)
            return ga, gb

        return self._emit(out, (a, b), pull)

    def matmul_t(self, a: Tensor, b: Tensor) -> Tensor:
        # a: (B, n), b: (m, n); computes a @ b.T -> (B, m)
        out = Tensor((a.data[:, None, :] * b.data[None, :, :]).sum(axis=2))

        def pull(g):
            ga = _matmul_fixed_order(g, b.data)
            gb = (g[:, :, None] * a.data[:, None, :]).sum(axis=0)
            return ga, gb

        return self._emit(out, (a, b), pull)

    # -- nonlinearities and reductions ------------------------------------

    def swish(self, z: Tensor) -> Tensor:
        s = _sigmoid(z.data)
        out = Tensor(z.data * s)

        def pull(g):
            return (g * (s * (1.0 + z.data * (1.0 - s))),)

        return self._emit(out, (z,), pull)

    def sigmoid(self, z: Tensor) -> Tensor:
        s = _sigmoid(z.data)
        out = Tensor(s)

        def pull(g):
            return (g * s * (1.0 - s),)

        return self._emit(out, (z,), pull)

    def square(self, a: Tensor) -> Tensor:
        out = Tensor(a.data * a.data)

        def pull(g):
            return (g * 2.0 * a.data,)

        return self._emit(out, (a,), pull)

    def sum(self, a: Tensor, axis=None) -> Tensor:
        out = Tensor(a.data.sum(axis=axis))

        def pull(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            ge = np.expand_dims(g, axis)
            return (np.broadcast_to(ge, a.data.shape).copy(),)

        return self._emit(out, (a,), pull)

    def mean(self, a: Tensor) -> Tensor:
        n = a.data.size
        out = Tensor(a.data.mean())

        def pull(g):
            return (np.full(a.data.shape, float(g) / n),)

        return self._emit(out, (a,), pull)

    def reshape(self, a: Tensor, shape) -> Tensor:
        out = Tensor(a.data.reshape(shape))

        def pull(g):
            return (g.reshape(a.data.shape),)

        return self._emit(out, (a,), pull)

    def clip01(self, a: Tensor) -> Tensor:
        """Clamp to [0, 1]; clamped coordinates get zero gradient."""
        mask = (a.data >= 0.0) & (a.data <= 1.0)
        out = Tensor(np.clip(a.data, 0.0, 1.0))

        def pull(g):
            return (g * mask,)

        return self._emit(out, (a,), pull)

    def select_pairs(self, logits: Tensor, y: np.ndarray) -> Tensor:
        """Sum over attributes of logits[b, k, y[b, k]] -> (B,)."""
        b_idx = np.arange(logits.data.shape[0])[:, None]
        k_idx = np.arange(logits.data.shape[1])[None, :]
        out = Tensor(logits.data[b_idx, k_idx, y].sum(axis=1))

        def pull(g):
            gl = np.zeros_like(logits.data)
            gl[b_idx, k_idx, y] = g[:, None]
            return (gl,)

        return self._emit(out, (logits,), pull)

    def logsumexp_pairs(self, logits: Tensor) -> Tensor:
        """Sum over attributes of logsumexp(logits[b, k, :]) -> (B,)."""
        m = logits.data.max(axis=2, keepdims=True)
        e = np.exp(logits.data - m)
        lse = m[:, :, 0] + np.log(e.sum(axis=2))
        out = Tensor(lse.sum(axis=1))
        soft = e / e.sum(axis=2, keepdims=True)

        def pull(g):
            return (g[:, None, None] * soft,)

        return self._emit(out, (logits,), pull)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(tape: Tape, out: Tensor) -> dict[int, np.ndarray]:
    """Run adjoints for everything reachable from ``out``.

    Fills ``.grad`` on leaf tensors with ``requires_grad`` and returns a map
    from ``id(tensor)`` to the gradient array for those leaves.
    """
    if out.data.size != 1:
        raise ValueError("backward target must be a scalar")
    if id(out) not in tape._known:
        raise ValueError("output was not produced through this tape")

    produced = {id(rec_out) for rec_out, _, _ in tape._records}
    adjoint: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    leaves: dict[int, Tensor] = {}
    for rec_out, parents, pull in reversed(tape._records):
        g = adjoint.pop(id(rec_out), None)
        if g is None or not rec_out.requires_grad:
            continue
        for parent, pg in zip(parents, pull(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            adjoint[key] = adjoint[key] + pg if key in adjoint else pg
            if key not in produced:
                leaves[key] = parent

    grads: dict[int, np.ndarray] = {}
    for key, tensor in leaves.items():
        tensor.grad = adjoint[key]
        grads[key] = adjoint[key]
    return grads


@dataclass
class MlpSpec:
    """Fully-connected backbone producing two logits per attribute."""

    input_dim: int
    hidden: tuple[int, ...]
    num_attributes: int
    activation: str = "swish"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.input_dim < 1 or self.num_attributes < 1:
            raise ValueError("input_dim and num_attributes must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.activation != "swish":
            raise ValueError(f"unsupported activation: {self.activation}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, 2 * self.num_attributes]

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1


class ParameterSet:
    """Named parameter tensors plus their EMA shadow and Adam state."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._names = list(tensors)
        self.theta: dict[str, Tensor] = {
            name: Tensor(np.array(arr, dtype=np.float64), requires_grad=True)
            for name, arr in tensors.items()
        }
        self.ema: dict[str, np.ndarray] = {
            name: self.theta[name].data.copy() for name in self._names
        }
        self.adam_m = {name: np.zeros_like(self.theta[name].data) for name in self._names}
        self.adam_v = {name: np.zeros_like(self.theta[name].data) for name in self._names}
        self.step_count = 0

    def names(self) -> list[str]:
        return list(self._names)

    def __getitem__(self, name: str) -> Tensor:
        return self.theta[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: self.theta[name].data for name in self._names}

    def snapshot_ema(self) -> dict[str, np.ndarray]:
        return {name: self.ema[name].copy() for name in self._names}

    def load_ema(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self._names:
            self.ema[name][...] = arrays[name]

    def clear_grads(self) -> None:
        for name in self._names:
            self.theta[name].grad = None

    def collect_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self._names:
            g = self.theta[name].grad
            out[name] = g if g is not None else np.zeros_like(self.theta[name].data)
        return out


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator) -> ParameterSet:
    """He-style uniform fan-in init; biases start at zero."""
    sizes = spec.layer_sizes
    tensors: dict[str, np.ndarray] = {}
    for i in range(spec.num_layers):
        fan_in = sizes[i]
        bound = math.sqrt(6.0 / fan_in)
        tensors[f"w{i}"] = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
        tensors[f"b{i}"] = np.zeros(sizes[i + 1])
    return ParameterSet(tensors)


def mlp_forward(params: ParameterSet, spec: MlpSpec, x, tape: Tape) -> Tensor:
    """Recorded forward pass; returns logits shaped (B, K, 2) or (K, 2)."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    tape.watch(xt)
    single = xt.data.ndim == 1
    if single:
        xt = tape.reshape(xt, (1, -1))
    if xt.data.ndim != 2 or xt.data.shape[1] != spec.input_dim:
        raise ValueError(f"expected input dim {spec.input_dim}, got shape {xt.data.shape}")
    xa = xt.data
    h = xt
    for i in range(spec.num_layers):
        z = tape.add(tape.matmul(h, tape.watch(params[f"w{i}"])), tape.watch(params[f"b{i}"]))
        h = tape.swish(z) if i < spec.num_layers - 1 else z
    logits = tape.reshape(h, (xa.shape[0], spec.num_attributes, 2))
    if single:
        logits = tape.reshape(logits, (spec.num_attributes, 2))
    return logits


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float) -> ParameterSet:
    """One Adam update with bias correction; mutates ``params`` in place."""
    params.step_count += 1
    t = params.step_count
    for name in params.names():
        g = grads.get(name)
        if g is None:
            continue
        theta = params.theta[name].data
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {theta.shape}")
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


def ema_update(params: ParameterSet, mu: float) -> ParameterSet:
    """Shadow update ema <- mu * ema + (1 - mu) * theta."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    for name in params.names():
        e = params.ema[name]
        e *= mu
        e += (1.0 - mu) * params.theta[name].data
    return params
