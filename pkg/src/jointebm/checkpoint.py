"""Parameter checkpoint files: theta and its EMA shadow plus model shape."""

from __future__ import annotations

import numpy as np

from . import container
from .engine import MlpSpec, ParameterSet


def save_checkpoint(
    path,
    spec: MlpSpec,
    params: ParameterSet,
    attribute_names: list[str] | None = None,
    ema_override: dict[str, np.ndarray] | None = None,
) -> None:
    """Write theta and the EMA shadow (optionally a selected snapshot)."""
    tensors: dict[str, np.ndarray] = {
        "meta/layer_sizes": np.asarray(spec.layer_sizes, dtype=np.float64),
        "meta/num_attributes": np.array([float(spec.num_attributes)]),
    }
    if attribute_names is not None:
        for i, name in enumerate(attribute_names):
            tensors[f"meta/attr/{i}/{name}"] = np.zeros(1)
    ema = ema_override if ema_override is not None else params.ema
    for name in params.names():
        tensors[f"theta/{name}"] = params.theta[name].data
    for name in params.names():
        tensors[f"ema/{name}"] = ema[name]
    container.write_tensors(path, tensors)


def load_checkpoint(path) -> tuple[MlpSpec, ParameterSet, list[str]]:
    tensors = container.read_tensors(path)
    try:
        sizes = [int(v) for v in tensors["meta/layer_sizes"]]
        k = int(tensors["meta/num_attributes"][0])
    except KeyError as exc:
        raise container.ContainerError(f"{path}: missing checkpoint metadata") from exc
    spec = MlpSpec(input_dim=sizes[0], hidden=tuple(sizes[1:-1]), num_attributes=k)

    theta = {}
    ema = {}
    for name, arr in tensors.items():
        if name.startswith("theta/"):
            theta[name[len("theta/") :]] = arr
        elif name.startswith("ema/"):
            ema[name[len("ema/") :]] = arr
    if set(theta) != set(ema) or not theta:
        raise container.ContainerError(f"{path}: incomplete parameter records")
    params = ParameterSet(theta)
    params.load_ema(ema)

    names_by_index = {}
    for name in tensors:
        if name.startswith("meta/attr/"):
            _, _, idx, attr = name.split("/", 3)
            names_by_index[int(idx)] = attr
    attribute_names = [names_by_index[i] for i in sorted(names_by_index)]
    if not attribute_names:
        attribute_names = [f"a{i}" for i in range(k)]
    return spec, params, attribute_names
