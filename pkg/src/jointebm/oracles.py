"""Quadrature oracles for model densities at dimension one or two.

These integrate the unnormalized densities an energy model defines, giving
sampler tests an exact target that shares no code with the samplers. Only
meant for toy models whose energies stay O(1) over the integration box.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .energy import ConditioningSpec, EnergyModel, _all_label_vectors


def _box_ranges(lo, hi, dim):
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (dim,))
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def _integrate_box(fn, ranges):
    value, _ = integrate.nquad(fn, ranges, opts={"epsabs": 1e-12, "epsrel": 1e-10})
    return value


def model_label_masses(model: EnergyModel, lo, hi):
    """Normalized mass of each label vector under the model, by quadrature."""
    dim = model.input_dim
    ranges = _box_ranges(lo, hi, dim)
    vectors = _all_label_vectors(model.num_attributes)
    masses = np.zeros(len(vectors))
    for i, v in enumerate(vectors):
        masses[i] = _integrate_box(
            lambda *xs: float(np.exp(model.joint_energy(np.array(xs), v))), ranges
        )
    return vectors, masses / masses.sum()


def model_conditional_attr_prob(model: EnergyModel, cond: ConditioningSpec, attr: int, lo, hi):
    """p(y_attr = 1 | y_c) under the model, by quadrature."""
    vectors, masses = model_label_masses(model, lo, hi)
    match = cond.matches(vectors)
    denom = masses[match].sum()
    num = masses[match & (vectors[:, attr] == 1)].sum()
    return float(num / denom)


def model_conditional_x_mean(model: EnergyModel, cond: ConditioningSpec, lo, hi):
    """E[x | y_c] under the semi-conditional density, by quadrature."""
    dim = model.input_dim
    ranges = _box_ranges(lo, hi, dim)

    def density(*xs):
        return float(np.exp(model.semi_conditional_energy(np.array(xs), cond)))

    z = _integrate_box(density, ranges)
    mean = np.zeros(dim)
    for j in range(dim):
        mean[j] = _integrate_box(lambda *xs: xs[j] * density(*xs), ranges) / z
    return mean
