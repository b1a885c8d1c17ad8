"""Synthetic multi-attribute mixtures with exactly computable conditionals.

Each label vector owns one isotropic Gaussian component. Component means
are specified in unit coordinates and affinely squeezed into the
[0.1, 0.9] box before sampling, so the clamp to [0, 1] almost never fires
for the sigmas used here and the closed-form oracle treats the mixture as
unclamped. The oracle has two independent routes: Gaussian-mixture algebra
and adaptive quadrature.
"""

from __future__ import annotations

import csv as _csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import container
from .energy import ConditioningSpec

BOX_LOW = 0.1
BOX_HIGH = 0.9
QUADRATURE_MAX_DIM = 3
QUADRATURE_ABS_TOL = 1e-8


@dataclass
class MixtureComponent:
    label: tuple[int, ...]
    mean: np.ndarray
    sigma: float
    weight: float

    def __post_init__(self):
        self.label = tuple(int(v) for v in self.label)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if any(v not in (0, 1) for v in self.label):
            raise ValueError("component labels must be binary")
        if self.sigma <= 0 or self.weight <= 0:
            raise ValueError("sigma and weight must be positive")


@dataclass
class MixtureSpec:
    dim: int
    num_attributes: int
    components: list[MixtureComponent]

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        labels = [c.label for c in self.components]
        if len(set(labels)) != len(labels):
            raise ValueError("one component per label vector")
        for c in self.components:
            if len(c.label) != self.num_attributes or c.mean.size != self.dim:
                raise ValueError("component shape mismatch")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")

    @classmethod
    def corner_grid(
        cls,
        dim: int = 2,
        num_attributes: int = 2,
        sigma: float = 0.03,
        weights: list[float] | None = None,
    ) -> "MixtureSpec":
        """One component per label vector, means on unit-box corners.

        Attribute k controls coordinate k (extra coordinates sit at 0.5),
        so the label is readable from the sample position.
        """
        if num_attributes > dim:
            raise ValueError("corner layout needs dim >= num_attributes")
        n = 1 << num_attributes
        if weights is None:
            weights = [1.0 / n] * n
        comps = []
        for idx in range(n):
            label = tuple((idx >> (num_attributes - 1 - j)) & 1 for j in range(num_attributes))
            mean = np.full(dim, 0.5)
            mean[:num_attributes] = label
            comps.append(MixtureComponent(label, mean, sigma, weights[idx]))
        return cls(dim, num_attributes, comps)

    @property
    def effective_means(self) -> np.ndarray:
        means = np.stack([c.mean for c in self.components])
        return BOX_LOW + (BOX_HIGH - BOX_LOW) * means

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([c.sigma for c in self.components])

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.components], dtype=np.int64)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    attribute_names: list[str]
    train_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    held_out_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    held_out_combos: list[ConditioningSpec] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")
        if self.y.shape[1] != len(self.attribute_names):
            raise ValueError("attribute name count mismatch")
        self._check_split()

    def _check_split(self):
        parts = [self.train_indices, self.val_indices, self.held_out_indices]
        joined = np.concatenate(parts) if any(len(p) for p in parts) else np.zeros(0, int)
        if len(joined) == 0:
            return
        if len(np.unique(joined)) != len(joined):
            raise ValueError("split indices overlap")
        if len(joined) != self.x.shape[0]:
            raise ValueError("split indices must cover the dataset")

    @property
    def num_examples(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def num_attributes(self) -> int:
        return self.y.shape[1]

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_indices], self.y[self.train_indices]

    def validation(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.val_indices], self.y[self.val_indices]


def default_validation_size(n: int) -> int:
    """5000 examples or 10 percent, whichever is smaller (at least 1)."""
    return max(1, min(5000, n // 10))


def assign_split(ds: Dataset, rng: np.random.Generator, val_size: int | None = None) -> Dataset:
    n = ds.num_examples
    if val_size is None:
        val_size = default_validation_size(n)
    order = rng.permutation(n)
    return Dataset(
        ds.x,
        ds.y,
        ds.attribute_names,
        train_indices=np.sort(order[val_size:]),
        val_indices=np.sort(order[:val_size]),
        held_out_combos=list(ds.held_out_combos),
    )


def generate_mixture(
    spec: MixtureSpec,
    n: int,
    rng: np.random.Generator,
    attribute_names: list[str] | None = None,
    split: bool = True,
) -> Dataset:
    """Sample the mixture; labels come from the drawn component."""
    if n < 1:
        raise ValueError("need at least one example")
    comp = rng.choice(len(spec.components), size=n, p=spec.weights)
    means = spec.effective_means[comp]
    x = means + spec.sigmas[comp][:, None] * rng.standard_normal((n, spec.dim))
    np.clip(x, 0.0, 1.0, out=x)
    y = spec.labels[comp]
    names = attribute_names or [f"a{i}" for i in range(spec.num_attributes)]
    ds = Dataset(x, y, names)
    return assign_split(ds, rng) if split else ds


def split_holdout(ds: Dataset, combos: list[ConditioningSpec]) -> Dataset:
    """Move every training example matching any combination to a held-out pool."""
    if not combos:
        return ds
    for c in combos:
        if c.num_attributes != ds.num_attributes:
            raise ValueError("combination attribute count mismatch")
    train = ds.train_indices
    matched = np.zeros(len(train), dtype=bool)
    for c in combos:
        matched |= c.matches(ds.y[train])
    if matched.all() and len(train) > 0:
        raise ValueError("holdout would remove every training example")
    return Dataset(
        ds.x,
        ds.y,
        ds.attribute_names,
        train_indices=train[~matched],
        val_indices=ds.val_indices,
        held_out_indices=np.sort(np.concatenate([ds.held_out_indices, train[matched]])),
        held_out_combos=list(ds.held_out_combos) + list(combos),
    )


def filter_attributes(ds: Dataset, min_frequency: float) -> Dataset:
    """Drop attributes whose positive frequency falls below the threshold."""
    freq = ds.y.mean(axis=0)
    keep = np.flatnonzero(freq >= min_frequency)
    if keep.size == 0:
        raise ValueError("no attribute passes the frequency filter")
    return Dataset(
        ds.x,
        ds.y[:, keep],
        [ds.attribute_names[i] for i in keep],
        train_indices=ds.train_indices,
        val_indices=ds.val_indices,
        held_out_indices=ds.held_out_indices,
    )


def one_hot_binarize(values: list[str], name: str) -> tuple[list[str], np.ndarray]:
    """Expand a categorical column into one binary attribute per category."""
    cats = sorted(set(values))
    mat = np.zeros((len(values), len(cats)), dtype=np.int64)
    index = {c: j for j, c in enumerate(cats)}
    for i, v in enumerate(values):
        mat[i, index[v]] = 1
    return [f"{name}={c}" for c in cats], mat


# -- exact oracle ------------------------------------------------------------


class MixtureOracle:
    """Closed-form and quadrature conditionals of a MixtureSpec.

    Both routes treat the mixture as unclamped; keep sigmas small enough
    that the [0, 1] clamp mass is negligible for the comparison at hand.
    """

    def __init__(self, spec: MixtureSpec):
        self.spec = spec
        self.means = spec.effective_means
        self.sigmas = spec.sigmas
        self.weights = spec.weights
        self.labels = spec.labels

    # closed forms

    def label_prior(self, cond: ConditioningSpec) -> float:
        """p(y_c): total weight of components matching the assignment."""
        mask = cond.matches(self.labels)
        return float(self.weights[mask].sum())

    def component_posterior(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        d = self.spec.dim
        log_w = np.log(self.weights)
        sq = ((x[None, :] - self.means) ** 2).sum(axis=1)
        log_pdf = -0.5 * sq / self.sigmas**2 - d * np.log(self.sigmas) - 0.5 * d * math.log(2 * math.pi)
        score = log_w + log_pdf
        score -= score.max()
        p = np.exp(score)
        return p / p.sum()

    def attribute_posterior(self, x: np.ndarray) -> np.ndarray:
        """p(y_k = 1 | x) for every attribute."""
        post = self.component_posterior(x)
        return post @ self.labels

    def conditional_mean(self, cond: ConditioningSpec) -> np.ndarray:
        """E[x | y_c] from the reweighted matching components."""
        mask = cond.matches(self.labels)
        if not mask.any():
            raise ValueError("no component matches the conditioning")
        w = self.weights[mask]
        w = w / w.sum()
        return w @ self.means[mask]

    def conditional_var(self, cond: ConditioningSpec) -> np.ndarray:
        """Per-dimension Var[x_d | y_c]."""
        mask = cond.matches(self.labels)
        if not mask.any():
            raise ValueError("no component matches the conditioning")
        w = self.weights[mask]
        w = w / w.sum()
        mu = w @ self.means[mask]
        second = w @ (self.means[mask] ** 2 + self.sigmas[mask][:, None] ** 2)
        return second - mu**2

    # quadrature route

    def _density(self, x: np.ndarray, mask: np.ndarray) -> float:
        d = self.spec.dim
        sq = ((x[None, :] - self.means[mask]) ** 2).sum(axis=1)
        pdf = np.exp(-0.5 * sq / self.sigmas[mask] ** 2)
        pdf /= (2 * math.pi) ** (d / 2) * self.sigmas[mask] ** d
        return float((self.weights[mask] * pdf).sum())

    def _integrate(self, fn) -> float:
        d = self.spec.dim
        if d > QUADRATURE_MAX_DIM:
            raise ValueError(f"quadrature supports dim <= {QUADRATURE_MAX_DIM}")
        pad = 12.0 * self.sigmas.max()
        ranges = [
            (self.means[:, j].min() - pad, self.means[:, j].max() + pad) for j in range(d)
        ]
        value, err = integrate.nquad(
            lambda *xs: fn(np.array(xs)),
            ranges,
            opts={"epsabs": QUADRATURE_ABS_TOL / 10, "epsrel": 1e-10},
        )
        if err > QUADRATURE_ABS_TOL:
            raise RuntimeError(f"quadrature tolerance not reached (err={err:g})")
        return value

    def label_prior_quadrature(self, cond: ConditioningSpec) -> float:
        mask = cond.matches(self.labels)
        if not mask.any():
            return 0.0
        return self._integrate(lambda x: self._density(x, mask))

    def conditional_mean_quadrature(self, cond: ConditioningSpec) -> np.ndarray:
        mask = cond.matches(self.labels)
        if not mask.any():
            raise ValueError("no component matches the conditioning")
        z = self._integrate(lambda x: self._density(x, mask))
        out = np.zeros(self.spec.dim)
        for j in range(self.spec.dim):
            out[j] = self._integrate(lambda x: x[j] * self._density(x, mask)) / z
        return out


def exact_conditionals(spec: MixtureSpec) -> MixtureOracle:
    return MixtureOracle(spec)


# -- dataset IO ---------------------------------------------------------------


def save_dataset(path, ds: Dataset) -> None:
    tensors: dict[str, np.ndarray] = {
        "data/x": ds.x,
        "data/y": ds.y.astype(np.float64),
        "split/train": ds.train_indices.astype(np.float64),
        "split/val": ds.val_indices.astype(np.float64),
        "split/held_out": ds.held_out_indices.astype(np.float64),
    }
    for i, name in enumerate(ds.attribute_names):
        tensors[f"meta/attr/{i}/{name}"] = np.zeros(1)
    for j, combo in enumerate(ds.held_out_combos):
        idx, val = combo.as_arrays()
        tensors[f"holdout/{j}/idx"] = idx.astype(np.float64)
        tensors[f"holdout/{j}/val"] = val.astype(np.float64)
    container.write_tensors(path, tensors)


def load_dataset(path) -> Dataset:
    tensors = container.read_tensors(path)
    try:
        x = tensors["data/x"]
        y = tensors["data/y"].astype(np.int64)
    except KeyError as exc:
        raise container.ContainerError(f"{path}: missing dataset records") from exc
    names_by_index = {}
    for name in tensors:
        if name.startswith("meta/attr/"):
            _, _, idx, attr = name.split("/", 3)
            names_by_index[int(idx)] = attr
    names = [names_by_index[i] for i in sorted(names_by_index)]
    combos = []
    j = 0
    while f"holdout/{j}/idx" in tensors:
        idx = tuple(int(v) for v in tensors[f"holdout/{j}/idx"])
        val = tuple(int(v) for v in tensors[f"holdout/{j}/val"])
        combos.append(ConditioningSpec(y.shape[1], idx, val))
        j += 1
    return Dataset(
        x,
        y,
        names,
        train_indices=tensors["split/train"].astype(np.int64),
        val_indices=tensors["split/val"].astype(np.int64),
        held_out_indices=tensors["split/held_out"].astype(np.int64),
        held_out_combos=combos,
    )


def write_csv(path, ds: Dataset) -> None:
    """Schema: y_<name> columns (0/1) then x_0 .. x_{D-1} (decimal f64)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            [f"y_{n}" for n in ds.attribute_names] + [f"x_{d}" for d in range(ds.dim)]
        )
        for i in range(ds.num_examples):
            writer.writerow(
                [str(int(v)) for v in ds.y[i]] + [repr(float(v)) for v in ds.x[i]]
            )


def read_csv(path) -> Dataset:
    """Read the CSV schema back; rejects missing or non-binary cells."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise container.ContainerError(f"{path}: empty CSV") from None
        names = [c[2:] for c in header if c.startswith("y_")]
        x_cols = [c for c in header if c.startswith("x_")]
        if (
            len(names) + len(x_cols) != len(header)
            or not names
            or not x_cols
            or header != [f"y_{n}" for n in names] + x_cols
        ):
            raise container.ContainerError(f"{path}: malformed CSV header")
        k = len(names)
        ys, xs = [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header) or any(cell.strip() == "" for cell in row):
                raise container.ContainerError(f"{path}: missing value at line {row_num}")
            yr = [int(v) for v in row[:k]]
            if any(v not in (0, 1) for v in yr):
                raise container.ContainerError(f"{path}: non-binary label at line {row_num}")
            ys.append(yr)
            xs.append([float(v) for v in row[k:]])
    if not xs:
        raise container.ContainerError(f"{path}: CSV has no data rows")
    return Dataset(np.array(xs), np.array(ys, dtype=np.int64), names)
