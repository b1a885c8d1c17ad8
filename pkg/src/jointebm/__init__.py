"""Joint energy-based models over continuous data and binary attributes.

Exports resolve lazily (PEP 562) so importing the package, e.g. for the
command-line entry point, does not pull in numpy before the CLI has had a
chance to pin the BLAS thread pools.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "backend": ("backend_name", "has_compiled"),
    "buffers": ("InitialDistribution", "JointBuffer"),
    "checkpoint": ("load_checkpoint", "save_checkpoint"),
    "data": (
        "Dataset",
        "MixtureSpec",
        "exact_conditionals",
        "generate_mixture",
        "split_holdout",
    ),
    "energy": ("ConditioningSpec", "EnergyModel", "JacobianBackbone", "MlpBackbone"),
    "engine": (
        "MlpSpec",
        "ParameterSet",
        "Tape",
        "Tensor",
        "adam_step",
        "backward",
        "ema_update",
        "init_mlp_params",
        "mlp_forward",
        "swish",
    ),
    "metrics": (
        "MetricsReport",
        "PredictionSet",
        "accuracy",
        "auroc",
        "average_precision",
        "ece",
        "emit_curves",
        "f1",
        "full_report",
    ),
    "samplers": (
        "ChainState",
        "GibbsConfig",
        "JointSample",
        "LangevinConfig",
        "SampleBatch",
        "internal_consistency",
        "langevin_step",
        "likelihood_filter",
        "lwg_sample",
        "sample_labels",
        "semi_conditional_marginalize",
        "semi_conditional_resample",
    ),
    "trainer": (
        "TrainConfig",
        "TrainState",
        "TrainableModel",
        "augment_chain",
        "dequantize",
        "train",
    ),
}

_NAME_TO_MODULE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_NAME_TO_MODULE) + ["__version__"]


def __getattr__(name):
    module_name = _NAME_TO_MODULE.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    module = importlib.import_module(f".{module_name}", __name__)
    value = getattr(module, name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
