"""Command-line front end.

Subcommands:

* ``gen``      write train/test datasets of synthetic mixtures to disk
* ``baseline`` run a classical algorithm over a dataset, export records + curves
* ``train``    train an unrolled network, export checkpoint + history + curves
* ``eval``     evaluate a checkpoint or baseline on a dataset
* ``compare``  merge curve CSVs from previous runs into one table

Each command takes a JSON config file; scalar fields can be overridden on
the command line with ``--set key=value`` (dotted paths). Every output
directory receives the exact resolved config plus its SHA-256 digest, so
any CSV is traceable to its inputs. Report CSVs are accompanied by PNG
figures unless ``--no-plot`` is given.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
The environment variable ``UNROLLSEP_OUTPUT_ROOT`` sets the root for
relative output directories.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import oracle
from .errors import (
    ConfigError,
    DegenerateSignalError,
    DimensionError,
    NumericalFailureError,
    RankDeficientError,
    SingularStatisticsError,
    TapeError,
)
from .evaluate import RunRecord, CurveTable, aligned_record, convergence_curve, merge_curves
from .loss import LossConfig
from .model import GeneratorConfig, generate, load_instance, save_instance
from .train import (
    TrainConfig,
    forward,
    history_to_csv,
    mean_test_mse,
    sequence_loss,
    sequence_loss_grad,
    train,
)
from .unrolled import assign_flat, flatten, init_deep_easi, init_deep_rls, load_params, save_params

ENV_OUTPUT_ROOT = "UNROLLSEP_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_MAX_ALIGN_M = 6


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_override(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object key {part!r}")
    node[parts[-1]] = value


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be an object, got {type(cfg).__name__}")
    for item in overrides or []:
        _apply_override(cfg, *_parse_override(item))
    return cfg


def config_digest(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _resolve_output_dir(cfg: dict) -> Path:
    raw = cfg.get("output_dir")
    if not raw:
        raise ConfigError("config needs an 'output_dir'")
    path = Path(raw)
    if not path.is_absolute():
        path = Path(os.environ.get(ENV_OUTPUT_ROOT, ".")) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_provenance(out_dir: Path, cfg: dict) -> str:
    digest = config_digest(cfg)
    (out_dir / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (out_dir / "digest.txt").write_text(digest + "\n")
    return digest


def _generator_config(section: dict, seed: int) -> GeneratorConfig:
    known = {"m", "l", "T", "source_dist", "noise_var"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
    return GeneratorConfig(
        m=int(section.get("m", 3)),
        l=int(section.get("l", 3)),
        T=int(section.get("T", 300)),
        source_dist=section.get("source_dist", "uniform_zero_mean"),
        noise_var=float(section.get("noise_var", 1e-3)),
        seed=seed,
    )


def _nonlinearity(section: dict, default: str) -> bl.Nonlinearity:
    kind = section.get("nonlinearity", default)
    if kind == "tanh":
        return bl.Nonlinearity("tanh", float(section.get("tanh_scale", 1.0)))
    return bl.Nonlinearity(kind)


def _init_spec(section: dict) -> bl.InitSpec:
    return bl.InitSpec(delta=float(section.get("delta", 0.01)))


def _rls_config(cfg: dict) -> bl.RlsConfig:
    section = cfg.get("rls", {})
    return bl.RlsConfig(beta=float(section.get("beta", 0.99)),
                        nonlinearity=_nonlinearity(section, "linear"),
                        init=_init_spec(section))


def _easi_config(cfg: dict) -> bl.EasiConfig:
    section = cfg.get("easi", {})
    step = section.get("step_size", 0.01)
    if isinstance(step, list):
        step = tuple(float(v) for v in step)
    else:
        step = float(step)
    return bl.EasiConfig(step_size=step,
                         nonlinearity=_nonlinearity(section, "cubic"),
                         init=_init_spec(section))


def _loss_config(section: dict) -> LossConfig:
    return LossConfig(kind=section.get("kind", "mse"),
                      penalty_weight=float(section.get("penalty_weight", 10.0)),
                      div_mode=section.get("div_mode", "gsure"))


def _train_config(cfg: dict, jobs: int) -> TrainConfig:
    section = cfg.get("train", {})
    clip = section.get("clip_norm")
    return TrainConfig(
        epochs=int(section.get("epochs", 100)),
        batch_size=int(section.get("batch_size", 40)),
        learning_rate=float(section.get("learning_rate", 1e-4)),
        loss=_loss_config(section.get("loss", {})),
        seed=int(section.get("seed", 0)),
        clip_norm=None if clip is None else float(clip),
        eval_every=int(section.get("eval_every", 0)),
        jobs=jobs,
    )


def _build_net(cfg: dict, m: int, depth: int):
    algorithm = cfg.get("algorithm")
    section = cfg.get("net", {})
    common = dict(
        m=m,
        depth=depth,
        shared=bool(section.get("shared", True)),
        hidden=tuple(int(h) for h in section.get("hidden", [8])),
        activation=section.get("activation", "tanh"),
        nonlinearity=section.get("nonlinearity", "mlp"),
        seed=int(section.get("init_seed", 0)),
    )
    if algorithm == "deep_rls":
        return init_deep_rls(forgetting_init=float(section.get("scalar_init", 0.99)), **common)
    if algorithm == "deep_easi":
        return init_deep_easi(step_init=float(section.get("scalar_init", 0.05)),
                              mlp_init=section.get("mlp_init", "cubic"), **common)
    raise ConfigError(f"unknown network algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _write_split(out_dir: Path, gen_cfg: dict, base_seed: int, count: int) -> list[str]:
    names = []
    for i in range(count):
        cfg = _generator_config(gen_cfg, base_seed + i)
        name = f"inst_{i:06d}"
        save_instance(generate(cfg), out_dir / name)
        names.append(name)
    return names


def load_split(directory: str | Path) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory {directory} does not exist")
    names = sorted(p.name for p in directory.iterdir()
                   if p.is_dir() and p.name.startswith("inst_"))
    return [load_instance(directory / n) for n in names]


def _load_or_generate(cfg: dict, size_key: str, seed_offset: int) -> list:
    """Instances for one split: from dataset_dir if given, else generated."""
    if "dataset_dir" in cfg:
        split = "train" if size_key == "train_size" else "test"
        root = Path(cfg["dataset_dir"])
        return load_split(root / split if (root / split).is_dir() else root)
    base_seed = int(cfg.get("base_seed", 0))
    count = int(cfg.get(size_key, 0))
    gen = cfg.get("generator", {})
    return [generate(_generator_config(gen, base_seed + seed_offset + i))
            for i in range(count)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = _resolve_output_dir(cfg)
    digest = _write_provenance(out_dir, cfg)
    gen = cfg.get("generator", {})
    base_seed = int(cfg.get("base_seed", 0))
    train_size = int(cfg.get("train_size", 0))
    test_size = int(cfg.get("test_size", 0))
    manifest = {
        "generator": gen,
        "base_seed": base_seed,
        "config_digest": digest,
        "train": {"count": train_size,
                  "instances": _write_split(out_dir / "train", gen, base_seed, train_size)},
        "test": {"count": test_size,
                 "instances": _write_split(out_dir / "test", gen,
                                           base_seed + train_size, test_size)},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {train_size} train / {test_size} test instances to {out_dir}")
    return EXIT_OK


def _run_baseline(instance, cfg: dict, digest: str) -> RunRecord:
    algorithm = cfg.get("algorithm")
    if algorithm == "rls":
        return bl.rls_run(instance, _rls_config(cfg), algorithm="rls", config_digest=digest)
    if algorithm == "easi":
        return bl.easi_run(instance, _easi_config(cfg), algorithm="easi", config_digest=digest)
    raise ConfigError(f"unknown baseline algorithm {algorithm!r}")


def _export_records(records, instances, out_dir: Path, plot: bool, title: str) -> CurveTable:
    rec_dir = out_dir / "records"
    rec_dir.mkdir(exist_ok=True)
    rows = []
    for i, (rec, inst) in enumerate(zip(records, instances)):
        rec.to_csv(rec_dir / f"inst_{i:06d}.csv")
        rows.append(rec)
        if inst.m <= _MAX_ALIGN_M:
            rows.append(aligned_record(rec, inst.S))
    table = convergence_curve(rows)
    table.to_csv(out_dir / "curve.csv")
    if plot:
        from .report import save_curve_figure

        save_curve_figure(table, out_dir / "curve.png", title=title)
    return table


def _verify_baseline(records, instances, cfg: dict) -> None:
    algorithm = cfg.get("algorithm")
    if algorithm == "rls":
        rls_cfg = _rls_config(cfg)
        worst_g = worst_w = 0.0
        for rec, inst in zip(records, instances):
            G0 = rls_cfg.init.g_init(inst.m)
            direct = oracle.direct_gain(rec.y_seq, rls_cfg.beta, G0)
            rel = np.linalg.norm(rec.final_state.G - direct) / np.linalg.norm(direct)
            worst_g = max(worst_g, rel)
            stats = bl.OracleStats.from_init(rls_cfg.init, inst.m, inst.l)
            for t in range(inst.T):
                stats.update(inst.X[:, t], rec.y_seq[:, t], rls_cfg.beta)
            w_err = np.linalg.norm(rec.final_state.W - bl.closed_form_w(stats))
            worst_w = max(worst_w, w_err)
        print(f"verify: max |G - direct inverse| (rel Frobenius) = {worst_g:.3e} "
              f"({'OK' if worst_g <= 1e-8 else 'FAIL'} vs 1e-8)")
        print(f"verify: max |W - closed form| (Frobenius) = {worst_w:.3e} "
              f"({'OK' if worst_w <= 1e-6 else 'FAIL'} vs 1e-6)")
    else:
        easi_cfg = _easi_config(cfg)
        rng = np.random.default_rng(0)
        worst = 0.0
        for rec, inst in zip(records[:3], instances[:3]):
            if inst.l != inst.m:
                continue
            y = rec.y_seq[:, -1]
            for _ in range(3):
                W1 = np.eye(inst.l) + 0.1 * rng.standard_normal((inst.l, inst.m))
                W2 = np.eye(inst.l) + 0.1 * rng.standard_normal((inst.l, inst.m))
                r1 = (bl.easi_step(W1, y, easi_cfg) - W1).T @ np.linalg.inv(W1.T)
                r2 = (bl.easi_step(W2, y, easi_cfg) - W2).T @ np.linalg.inv(W2.T)
                worst = max(worst, float(np.max(np.abs(r1 - r2))))
        print(f"verify: equivariance of relative update across W = {worst:.3e} "
              f"({'OK' if worst <= 1e-10 else 'FAIL'} vs 1e-10)")


def cmd_baseline(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = _resolve_output_dir(cfg)
    digest = _write_provenance(out_dir, cfg)
    instances = _load_or_generate(cfg, "num_instances", 0)
    if not instances:
        raise ConfigError("no instances to run on (num_instances == 0?)")
    records = [_run_baseline(inst, cfg, digest) for inst in instances]
    _export_records(records, instances, out_dir, not args.no_plot,
                    title=cfg.get("algorithm", ""))
    if args.verify:
        _verify_baseline(records, instances, cfg)
    print(f"wrote {len(records)} run records and curve.csv to {out_dir}")
    return EXIT_OK


def _verify_train(params, instance, loss_cfg: LossConfig) -> None:
    theta0 = flatten(params)

    def loss_at(theta):
        assign_flat(params, theta)
        try:
            return sequence_loss(params, instance, loss_cfg)
        finally:
            assign_flat(params, theta0)

    _, grad = sequence_loss_grad(params, instance, loss_cfg)
    fd = oracle.fd_gradient(loss_at, theta0, oracle.FiniteDiffSpec(1e-5))
    denom = np.maximum(np.abs(fd), 1e-7)
    worst = float(np.max(np.abs(grad - fd) / denom))
    print(f"verify: max BPTT-vs-finite-difference gradient error = {worst:.3e} "
          f"({'OK' if worst <= 1e-4 else 'FAIL'} vs 1e-4)")


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = _resolve_output_dir(cfg)
    digest = _write_provenance(out_dir, cfg)
    train_set = _load_or_generate(cfg, "train_size", 0)
    test_set = _load_or_generate(cfg, "test_size", int(cfg.get("train_size", 0)))
    if not train_set:
        raise ConfigError("empty training set")
    first = train_set[0]
    params = _build_net(cfg, first.m, first.T)
    train_cfg = _train_config(cfg, args.jobs)
    if args.verify:
        _verify_train(params, train_set[0], train_cfg.loss)
    checkpoint_every = int(cfg.get("train", {}).get("checkpoint_every", 0))
    if train_cfg.epochs > 0:
        params, history = train(params, train_set, train_cfg, test_set=test_set or None,
                                checkpoint_dir=out_dir, checkpoint_every=checkpoint_every)
    else:
        history = []
    save_params(params, out_dir / "checkpoint.json")
    history_to_csv(history, out_dir / "history.csv")
    metrics = {}
    if test_set:
        records = [_deep_record(params, inst, cfg.get("algorithm", "net"), digest)
                   for inst in test_set]
        table = _export_records(records, test_set, out_dir, not args.no_plot,
                                title=cfg.get("algorithm", ""))
        metrics["test_mse_raw"] = float(np.mean([r.sq_errors.mean() for r in records]))
        aligned_cols = [c for c in table.columns if c.endswith("_aligned")]
        if aligned_cols:
            metrics["test_mse_aligned"] = float(table.columns[aligned_cols[0]][-1])
    if history and not args.no_plot:
        from .report import save_history_figure

        save_history_figure(history, out_dir / "history.png", title=cfg.get("algorithm", ""))
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"wrote checkpoint.json, history.csv and metrics.json to {out_dir}")
    return EXIT_OK


def _deep_record(params, instance, algorithm: str, digest: str) -> RunRecord:
    from .evaluate import squared_errors

    out = forward(params, instance)
    y_seq = out.outputs()
    return RunRecord(y_seq=y_seq, sq_errors=squared_errors(y_seq, instance.S),
                     algorithm=algorithm, config_digest=digest)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = _resolve_output_dir(cfg)
    digest = _write_provenance(out_dir, cfg)
    instances = _load_or_generate(cfg, "num_instances", 0)
    if not instances:
        raise ConfigError("no instances to evaluate on")
    algorithm = cfg.get("algorithm")
    if algorithm in ("rls", "easi"):
        records = [_run_baseline(inst, cfg, digest) for inst in instances]
    elif algorithm in ("deep_rls", "deep_easi"):
        if "checkpoint" in cfg:
            params = load_params(cfg["checkpoint"])
        else:
            params = _build_net(cfg, instances[0].m, instances[0].T)
        records = [_deep_record(params, inst, algorithm, digest) for inst in instances]
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    table = _export_records(records, instances, out_dir, not args.no_plot, title=algorithm)
    metrics = {"test_mse_raw": float(np.mean([r.sq_errors.mean() for r in records]))}
    aligned_cols = [c for c in table.columns if c.endswith("_aligned")]
    if aligned_cols:
        metrics["test_mse_aligned"] = float(table.columns[aligned_cols[0]][-1])
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records, curve.csv and metrics.json to {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    tables = []
    for raw in args.curves:
        path = Path(raw)
        if path.is_dir():
            path = path / "curve.csv"
        if not path.is_file():
            raise ConfigError(f"no curve CSV at {path}")
        tables.append(CurveTable.from_csv(path))
    lengths = [t.t.size for t in tables]
    if len(set(lengths)) != 1:
        raise ConfigError(f"curve CSVs have mismatched lengths: {lengths}")
    merged = merge_curves(tables)
    out_dir = Path(args.output)
    if not out_dir.is_absolute():
        out_dir = Path(os.environ.get(ENV_OUTPUT_ROOT, ".")) / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    merged.to_csv(out_dir / "compare.csv")
    if not args.no_plot:
        from .report import save_curve_figure

        save_curve_figure(merged, out_dir / "compare.png", title="comparison")
    print(f"merged {len(tables)} curve file(s) into {out_dir / 'compare.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unrollsep", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, verify=False):
        p.add_argument("config", help="path to a JSON experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a (dotted) config key")
        p.add_argument("--no-plot", action="store_true", help="skip PNG figures")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        if verify:
            p.add_argument("--verify", action="store_true",
                           help="print oracle comparison reports")

    common(sub.add_parser("gen", help="generate datasets"))
    common(sub.add_parser("baseline", help="run a classical algorithm"), verify=True)
    common(sub.add_parser("train", help="train an unrolled network"), verify=True)
    common(sub.add_parser("eval", help="evaluate a checkpoint or baseline"))
    cmp_p = sub.add_parser("compare", help="merge curve CSVs")
    cmp_p.add_argument("curves", nargs="+", help="curve CSVs or run directories")
    cmp_p.add_argument("--output", required=True, help="output directory")
    cmp_p.add_argument("--no-plot", action="store_true")
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NumericalFailureError, SingularStatisticsError, RankDeficientError,
            TapeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DimensionError, DegenerateSignalError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
