"""Command-line entry point: train, sample, eval, curves, gen-data.

Configuration is a JSON file validated exhaustively before any computation;
unknown keys are rejected so hyperparameter typos fail loudly. Exit codes:
0 success, 2 configuration error, 3 divergence, 4 IO error. Heavy imports
happen after argument parsing so --threads can pin the BLAS pools first.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class ConfigError(Exception):
    pass


class DivergenceError(Exception):
    pass


_SCHEMA = {
    "seed": int,
    "out_dir": str,
    "data": {
        "path": str,
        "mixture": {
            "kind": str,  # only "corners" for now
            "dim": int,
            "attributes": int,
            "sigma": float,
            "n": int,
            "weights": list,
            "names": list,
            "holdout": list,
            "min_frequency": float,
        },
    },
    "model": {"hidden": list},
    "train": {
        "iterations": int,
        "batch_size": int,
        "learning_rate": float,
        "ema_mu": float,
        "kl_weight": float,
        "energy_reg": float,
        "eval_every": int,
        "dequantize": bool,
    },
    "sampler": {
        "step_size": float,
        "temperature": float,
        "clamp": bool,
        "noise": bool,
        "sweeps": int,
        "inner_steps": int,
        "test_sweeps": int,
    },
    "buffer": {"capacity": int, "reinit_rate": float, "mode": str},
}


def _check_section(value, schema, path):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, sub in value.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        expected = schema[key]
        if isinstance(expected, dict):
            _check_section(sub, expected, where)
        elif expected is float:
            if not isinstance(sub, (int, float)) or isinstance(sub, bool):
                raise ConfigError(f"config key {where} must be a number")
        elif expected is int:
            if not isinstance(sub, int) or isinstance(sub, bool):
                raise ConfigError(f"config key {where} must be an integer")
        elif not isinstance(sub, expected):
            raise ConfigError(f"config key {where} must be {expected.__name__}")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _check_section(cfg, _SCHEMA, "")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointebm",
        description="Joint energy-based models over data and binary attributes",
    )
    parser.add_argument("--threads", type=int, default=0, help="pin BLAS thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")

    p_train = sub.add_parser("train", help="run PCD training and write artifacts")
    common(p_train)

    p_sample = sub.add_parser("sample", help="draw (semi-)conditional samples")
    common(p_sample)
    p_sample.add_argument("--cond", default="", help='conditioning, e.g. "a=1,b=0"')
    p_sample.add_argument("--method", choices=["resample", "marginalize"], default="resample")
    p_sample.add_argument("--source", choices=["noise", "buffer", "auto"], default="auto")
    p_sample.add_argument("--n", type=int, default=16)
    p_sample.add_argument("--filter-multiplier", type=int, default=10)
    p_sample.add_argument("--checkpoint", default=None)
    p_sample.add_argument("--buffer", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--dataset", default=None)

    p_curves = sub.add_parser("curves", help="emit ROC/PR/reliability plot data")
    common(p_curves)
    p_curves.add_argument("--checkpoint", default=None)
    p_curves.add_argument("--dataset", default=None)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic mixture dataset")
    common(p_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads > 0:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # ContainerError maps to the IO exit code
        if type(exc).__name__ == "ContainerError":
            print(f"io error: {exc}", file=sys.stderr)
            return 4
        raise


def _dispatch(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = args.out or cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("an output directory is required (--out or out_dir)")
    runner = {
        "train": _cmd_train,
        "sample": _cmd_sample,
        "eval": _cmd_eval,
        "curves": _cmd_curves,
        "gen-data": _cmd_gen_data,
    }[args.command]
    return runner(args, cfg, seed, out_dir)


# -- config materialization ---------------------------------------------------


def _mixture_from_config(cfg: dict):
    from .data import MixtureSpec

    data_cfg = cfg.get("data", {})
    mix = data_cfg.get("mixture")
    if mix is None:
        raise ConfigError("this command needs data.mixture in the config")
    kind = mix.get("kind", "corners")
    if kind != "corners":
        raise ConfigError(f"unknown mixture kind: {kind}")
    try:
        spec = MixtureSpec.corner_grid(
            dim=mix.get("dim", 2),
            num_attributes=mix.get("attributes", 2),
            sigma=mix.get("sigma", 0.03),
            weights=mix.get("weights"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, mix


def _holdout_specs(mix_cfg: dict, names: list[str]):
    from .energy import ConditioningSpec

    combos = []
    for entry in mix_cfg.get("holdout", []):
        if not isinstance(entry, dict) or not entry:
            raise ConfigError("holdout entries must be non-empty objects")
        idx, val = [], []
        for name, bit in entry.items():
            if name not in names:
                raise ConfigError(f"unknown attribute in holdout: {name}")
            if bit not in (0, 1):
                raise ConfigError(f"holdout value for {name} must be 0 or 1")
            idx.append(names.index(name))
            val.append(int(bit))
        combos.append(ConditioningSpec(len(names), tuple(idx), tuple(val)))
    return combos


def _build_dataset(cfg: dict, seed: int):
    import numpy as np

    from .data import filter_attributes, generate_mixture, load_dataset, split_holdout

    data_cfg = cfg.get("data", {})
    if "path" in data_cfg:
        return load_dataset(data_cfg["path"])
    spec, mix = _mixture_from_config(cfg)
    names = mix.get("names")
    ds = generate_mixture(spec, mix.get("n", 4000), np.random.default_rng(seed), names)
    combos = _holdout_specs(mix, ds.attribute_names)
    if combos:
        ds = split_holdout(ds, combos)
    if "min_frequency" in mix:
        ds = filter_attributes(ds, mix["min_frequency"])
    return ds


def _train_config(cfg: dict, seed: int):
    from .samplers import GibbsConfig, LangevinConfig
    from .trainer import TrainConfig

    t = cfg.get("train", {})
    s = cfg.get("sampler", {})
    b = cfg.get("buffer", {})
    try:
        return TrainConfig(
            iterations=t.get("iterations", 1000),
            batch_size=t.get("batch_size", 64),
            learning_rate=t.get("learning_rate", 1e-4),
            ema_mu=t.get("ema_mu", 0.999),
            kl_weight=t.get("kl_weight", 0.3),
            energy_reg=t.get("energy_reg", 0.0),
            eval_every=t.get("eval_every", 250),
            seed=seed,
            dequantize_inputs=t.get("dequantize", False),
            langevin=LangevinConfig(
                step_size=s.get("step_size", 0.01),
                temperature=s.get("temperature", 1.0 / 20000.0),
                clamp=s.get("clamp", True),
                noise=s.get("noise", True),
            ),
            gibbs=GibbsConfig(
                sweeps=s.get("sweeps", 40), inner_steps=s.get("inner_steps", 1)
            ),
            buffer_capacity=b.get("capacity", 10000),
            buffer_reinit=b.get("reinit_rate", 0.05),
            buffer_mode=b.get("mode", "replay"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _model_spec(cfg: dict, dim: int, k: int):
    from .engine import MlpSpec

    hidden = cfg.get("model", {}).get("hidden", [64, 64])
    try:
        return MlpSpec(input_dim=dim, hidden=tuple(hidden), num_attributes=k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- commands ------------------------------------------------------------------


def _cmd_gen_data(args, cfg, seed, out_dir) -> int:
    from .data import save_dataset, write_csv

    ds = _build_dataset(cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(os.path.join(out_dir, "dataset.gjem"), ds)
    write_csv(os.path.join(out_dir, "dataset.csv"), ds)
    print(
        f"dataset: {ds.num_examples} examples, {ds.num_attributes} attributes, "
        f"{len(ds.train_indices)} train / {len(ds.val_indices)} val / "
        f"{len(ds.held_out_indices)} held out"
    )
    return 0


def _cmd_train(args, cfg, seed, out_dir) -> int:
    from .buffers import save_buffer
    from .checkpoint import save_checkpoint
    from .metrics import PredictionSet, full_report, write_report_files
    from .trainer import train, write_train_log

    ds = _build_dataset(cfg, seed)
    tcfg = _train_config(cfg, seed)
    spec = _model_spec(cfg, ds.dim, ds.num_attributes)

    state = train(ds, spec, tcfg)

    os.makedirs(out_dir, exist_ok=True)
    write_train_log(os.path.join(out_dir, "train_log.csv"), state)
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.gjem"),
        spec,
        state.params,
        attribute_names=ds.attribute_names,
        ema_override=state.selected_ema(),
    )
    if len(state.buffer) > 0:
        save_buffer(os.path.join(out_dir, "buffer.gjem"), state.buffer, state.p0)
    if state.diverged:
        raise DivergenceError(f"training halted at iteration {state.iteration}: "
                              f"{state.diverged_reason}")

    x_val, y_val = ds.validation()
    if x_val.shape[0] > 0 and state.iteration > 0:
        from .energy import EnergyModel, MlpBackbone
        from .engine import ParameterSet

        eval_params = ParameterSet(state.selected_ema())
        backbone = MlpBackbone.from_params(spec, eval_params)
        probs = EnergyModel(backbone).label_conditional(x_val)
        report = full_report(PredictionSet(probs, y_val, ds.attribute_names))
        write_report_files(report, os.path.join(out_dir, "metrics"))
        print(f"validation accuracy (selected weights): {report.micro['accuracy']!r}")
    best = state.best_accuracy
    print(f"trained {state.iteration} iterations; best validation accuracy: "
          f"{'n/a' if best is None else repr(best)}")
    return 0


def _load_eval_model(args, cfg, out_dir):
    from .checkpoint import load_checkpoint
    from .energy import EnergyModel, MlpBackbone
    from .engine import ParameterSet

    ckpt_path = getattr(args, "checkpoint", None) or os.path.join(out_dir, "checkpoint.gjem")
    spec, params, names = load_checkpoint(ckpt_path)
    eval_params = ParameterSet(params.snapshot_ema())
    model = EnergyModel(MlpBackbone.from_params(spec, eval_params))
    return spec, model, names


def _parse_conditioning(expr: str, names: list[str]):
    from .energy import ConditioningSpec

    expr = expr.strip()
    if not expr:
        return ConditioningSpec.empty(len(names))
    idx, val = [], []
    for part in expr.split(","):
        if "=" not in part:
            raise ConfigError(f"bad conditioning term: {part!r} (want name=0|1)")
        name, _, bit = part.partition("=")
        name = name.strip()
        bit = bit.strip()
        if name not in names:
            raise ConfigError(f"unknown attribute name: {name!r}")
        if bit not in ("0", "1"):
            raise ConfigError(f"conditioning value for {name} must be 0 or 1")
        idx.append(names.index(name))
        val.append(int(bit))
    try:
        return ConditioningSpec(len(names), tuple(idx), tuple(val))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_sample(args, cfg, seed, out_dir) -> int:
    import numpy as np

    from .buffers import InitialDistribution, load_buffer
    from .samplers import (
        GibbsConfig,
        LangevinConfig,
        SampleBatch,
        internal_consistency,
        likelihood_filter,
        sample_labels,
        semi_conditional_marginalize,
        semi_conditional_resample,
        write_sample_dump,
    )

    spec, model, names = _load_eval_model(args, cfg, out_dir)
    cond = _parse_conditioning(args.cond, names)
    if args.n < 1 or args.filter_multiplier < 1:
        raise ConfigError("--n and --filter-multiplier must be positive")

    s = cfg.get("sampler", {})
    lc = LangevinConfig(
        step_size=s.get("step_size", 0.01),
        temperature=s.get("temperature", 1.0 / 20000.0),
        clamp=s.get("clamp", True),
        noise=s.get("noise", True),
    )
    gc = GibbsConfig(
        sweeps=s.get("test_sweeps", s.get("sweeps", 40)),
        inner_steps=s.get("inner_steps", 1),
    )

    rng = np.random.default_rng(seed)
    n_total = args.n * args.filter_multiplier

    buffer_path = args.buffer or os.path.join(out_dir, "buffer.gjem")
    buf = p0 = None
    if os.path.exists(buffer_path):
        buf, p0 = load_buffer(buffer_path, label_fn=lambda x, r: sample_labels(model, x, r))
    source = args.source
    if source == "auto":
        source = "buffer" if buf is not None and len(buf) > 0 else "noise"
    if source == "buffer" and (buf is None or len(buf) == 0):
        raise ConfigError(f"--source buffer but no usable buffer at {buffer_path}")
    if p0 is None:
        p0 = InitialDistribution(
            np.zeros(spec.input_dim),
            np.ones(spec.input_dim),
            lambda x, r: sample_labels(model, x, r),
        )

    if source == "buffer":
        fetch = buf.conditional_fetch(cond, n_total, rng)
        if fetch.shortfall > 0:
            print(
                f"buffer shortfall: {fetch.matched} matching entries, "
                f"{fetch.shortfall} of {n_total} chains fall back to noise"
            )
            fallback = p0.draw(fetch.shortfall, rng)
            if fetch.matched > 0:
                init = SampleBatch(
                    np.concatenate([fetch.batch.x, fallback.x]),
                    np.concatenate([fetch.batch.y, fallback.y]),
                )
            else:
                init = fallback
        else:
            init = fetch.batch
    else:
        init = p0.draw(n_total, rng)

    sampler = semi_conditional_resample if args.method == "resample" else semi_conditional_marginalize
    res = sampler(model, cond, init, gc, lc, rng)
    alive = ~res.diverged
    if int(alive.sum()) < args.n:
        raise DivergenceError(
            f"only {int(alive.sum())} of {n_total} chains usable, need {args.n}"
        )
    candidates = SampleBatch(res.x[alive], res.y[alive])
    kept, scores = likelihood_filter(model, candidates, cond, keep=args.n)

    os.makedirs(out_dir, exist_ok=True)
    dump_path = os.path.join(out_dir, "samples.csv")
    write_sample_dump(dump_path, [(0, gc.sweeps, kept)])
    consistency = internal_consistency(model, kept, cond)
    print(f"wrote {args.n} samples to {dump_path}")
    print(f"internal consistency: {consistency!r}")
    return 0


def _predictions(args, cfg, seed, out_dir):
    from .data import load_dataset
    from .metrics import PredictionSet

    spec, model, names = _load_eval_model(args, cfg, out_dir)
    ds_path = getattr(args, "dataset", None)
    if ds_path:
        ds = load_dataset(ds_path)
    else:
        ds = _build_dataset(cfg, seed)
    if ds.dim != spec.input_dim or ds.num_attributes != spec.num_attributes:
        raise ConfigError(
            f"dataset shape ({ds.dim}, {ds.num_attributes}) does not match "
            f"model ({spec.input_dim}, {spec.num_attributes})"
        )
    x, y = ds.validation() if len(ds.val_indices) else (ds.x, ds.y)
    if x.shape[0] == 0:
        raise ConfigError("dataset has no evaluation examples")
    probs = model.label_conditional(x)
    return PredictionSet(probs, y, ds.attribute_names)


def _cmd_eval(args, cfg, seed, out_dir) -> int:
    from .metrics import full_report, write_report_files

    pred = _predictions(args, cfg, seed, out_dir)
    report = full_report(pred)
    write_report_files(report, os.path.join(out_dir, "metrics"))
    print(f"micro accuracy: {report.micro['accuracy']!r}")
    print(f"wrote metrics to {os.path.join(out_dir, 'metrics')}")
    return 0


def _cmd_curves(args, cfg, seed, out_dir) -> int:
    from .metrics import MetricsReport, emit_curves, write_report_files

    pred = _predictions(args, cfg, seed, out_dir)
    report = MetricsReport(
        per_attribute={}, micro={}, macro={}, curves=emit_curves(pred),
        num_examples=pred.confidences.shape[0],
    )
    write_report_files(report, os.path.join(out_dir, "metrics"))
    print(f"wrote curve data to {os.path.join(out_dir, 'metrics', 'curves')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
