"""Command-line front end for the credit pipeline and the toy trainer.

Subcommands
-----------
analyze    full pipeline on one attention file; credit report + histogram
debias     calibration only; per-token connectivity report
partition  token graph + balanced clustering; partition report
credit     per-token advantages for a given sequence advantage
train-toy  synthetic RLVR runs; JSON report with per-step arrays
ablate     weighting-mode comparison table over shared seeds
sweep      hyperparameter grid vs. the default configuration

Exit codes: 0 success, 1 input error (bad files, flags, or config), 2
internal invariant violation. Flags override key=value config files,
which override built-in defaults; ``ATRL_SEED`` is the seed fallback
when neither a flag nor a config entry sets one.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import reports
from .errors import AtrlError
from .pipeline import (
    HISTOGRAM_BINS,
    PipelineConfig,
    anchor_stats,
    config_field_names,
    connectivity_only,
    run_pipeline,
)
from .reports import fmt_g
from .tensor_io import load_attention, load_token_meta
from .toy.train import ENGINES, TrainConfig, train

# CLI spelling -> PipelineConfig field for the flags whose names differ.
_FLAG_TO_FIELD = {
    "tau_cen": "tau_centroid",
    "q": "central_q",
    "tau_nb": "tau_neighbor",
}

_MODE_ALIASES = {
    "at-rl": "at_rl",
    "at_rl": "at_rl",
    "uniform": "uniform",
    "random": "random",
    "reverse": "reverse",
    "hard": "hard_top_p",
    "hard_top_p": "hard_top_p",
}

_ABLATE_HARD_PS = (0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.75)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for
    internal faults, so usage problems are routed to exit code 1."""

    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        raise AtrlError(message)


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` text; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise AtrlError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            out[key.strip()] = val.strip()
    return out


def parse_seeds(text: str) -> tuple[int, ...]:
    """Seed lists: ``4``, ``0,3,7``, or an inclusive range ``0..9``."""
    text = text.strip()
    if ".." in text:
        lo_s, _, hi_s = text.partition("..")
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise AtrlError(f"empty seed range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(part) for part in text.split(","))


def _canonical_mode(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = {"at_rl": "at-rl", "hard_top_p": "hard"}.get(key, key).replace("-", "_")
    alias = _MODE_ALIASES.get(name.strip().lower()) or _MODE_ALIASES.get(key)
    if alias is None:
        raise AtrlError(f"unknown weighting mode {name!r}")
    return alias


def _coerce(field: str, value: str):
    if field in ("top_layers", "k", "r_neighbors", "seed"):
        return int(value)
    if field in ("bias_axis", "central_by"):
        return value
    return float(value)


def resolve_pipeline(args: argparse.Namespace, file_cfg: dict[str, str]) -> PipelineConfig:
    """Fold flags > config file > defaults into one PipelineConfig."""
    fields = set(config_field_names())
    values: dict[str, object] = {}
    for key, raw in file_cfg.items():
        field = _FLAG_TO_FIELD.get(key, key)
        if field in fields:
            values[field] = _coerce(field, raw)
    for key, field in [(f, _FLAG_TO_FIELD.get(f, f)) for f in vars(args)]:
        if field in fields and getattr(args, key) is not None:
            values[field] = getattr(args, key)
    if "seed" not in values:
        env = os.environ.get("ATRL_SEED")
        if env is not None:
            try:
                values["seed"] = int(env)
            except ValueError as exc:
                raise AtrlError(f"ATRL_SEED must be an integer, got {env!r}") from exc
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise AtrlError(str(exc)) from exc


def _file_value(args: argparse.Namespace, file_cfg: dict[str, str], key: str,
                cast, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _add_pipeline_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--top-layers", dest="top_layers", type=int)
    sub.add_argument("--lambda-exp", dest="lambda_exp", type=float)
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--lambda-cos", dest="lambda_cos", type=float)
    sub.add_argument("--bias-axis", dest="bias_axis", choices=("gen", "ctx"))
    sub.add_argument("--tau-sim", dest="tau_sim", type=float)
    sub.add_argument("--k", type=int)
    sub.add_argument("--eps-bal", dest="eps_bal", type=float)
    sub.add_argument("--tau-cen", dest="tau_cen", type=float)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--q", type=float)
    sub.add_argument("--r-neighbors", dest="r_neighbors", type=int)
    sub.add_argument("--lambda-sim", dest="lambda_sim", type=float)
    sub.add_argument("--lambda-imp", dest="lambda_imp", type=float)
    sub.add_argument("--tau-nb", dest="tau_nb", type=float)
    sub.add_argument("--central-by", dest="central_by", choices=("degree", "phi"))
    sub.add_argument("--eps-low", dest="eps_low", type=float)
    sub.add_argument("--eps-high", dest="eps_high", type=float)
    sub.add_argument("--beta", type=float)
    sub.add_argument("--hard-p", dest="hard_p", type=float)


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--engine", choices=ENGINES)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--batch-prompts", dest="batch_prompts", type=int)
    sub.add_argument("--group-size", dest="group_size", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--max-len", dest="max_len", type=int)
    sub.add_argument("--seeds", type=str, help="e.g. 4, 0,3,7 or 0..9")
    sub.add_argument("--threshold", type=float)


def _load_inputs(args: argparse.Namespace):
    tensor = load_attention(args.attention)
    meta = load_token_meta(args.meta, ctx_len=tensor.ctx_len, gen_len=tensor.gen_len)
    return tensor, meta


def build_parser() -> _Parser:
    parser = _Parser(prog="atrl", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("analyze", help="full credit pipeline on one sequence")
    p.add_argument("--attention", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out-credit", dest="out_credit")
    p.add_argument("--out-hist", dest="out_hist")
    p.add_argument("--bins", type=int, default=HISTOGRAM_BINS)
    p.add_argument("--seq-adv", dest="seq_adv", type=float, default=1.0)
    _add_pipeline_flags(p)

    p = subs.add_parser("debias", help="calibrated per-token connectivity")
    p.add_argument("--attention", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", dest="out")
    _add_pipeline_flags(p)

    p = subs.add_parser("partition", help="token graph and balanced clusters")
    p.add_argument("--attention", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", dest="out")
    p.add_argument("--graph-out", dest="graph_out")
    _add_pipeline_flags(p)

    p = subs.add_parser("credit", help="token advantages for one sequence")
    p.add_argument("--attention", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--seq-adv", dest="seq_adv", type=float, default=1.0)
    p.add_argument("--mode", default="at-rl")
    p.add_argument("--out", dest="out")
    _add_pipeline_flags(p)

    p = subs.add_parser("train-toy", help="synthetic RLVR training runs")
    p.add_argument("--mode", default=None)
    p.add_argument("--out", dest="out")
    _add_train_flags(p)
    _add_pipeline_flags(p)

    p = subs.add_parser("ablate", help="weighting-mode comparison table")
    p.add_argument("--out", dest="out")
    _add_train_flags(p)
    _add_pipeline_flags(p)

    p = subs.add_parser("sweep", help="hyperparameter grid, delta vs default")
    p.add_argument("--param", action="append", default=[],
                   help="name=v1,v2,... (repeatable; Cartesian product)")
    p.add_argument("--mode", default=None)
    p.add_argument("--out", dest="out")
    _add_train_flags(p)
    _add_pipeline_flags(p)

    return parser


def _print_anchor(stats: dict, gen_len: int) -> None:
    print(f"tokens {gen_len}")
    print(f"anchor_threshold {fmt_g(stats['threshold'])}")
    print(f"anchor_count {stats['count']}")
    print(f"anchor_fraction {fmt_g(stats['fraction'])}")


def _print_timings(timings: dict[str, float]) -> None:
    total = 0.0
    for stage, seconds in timings.items():
        total += seconds
        print(f"time_{stage}_ms {fmt_g(seconds * 1e3)}")
    print(f"time_total_ms {fmt_g(total * 1e3)}")


def cmd_analyze(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    config = resolve_pipeline(args, file_cfg)
    tensor, meta = _load_inputs(args)
    timings: dict[str, float] = {}
    result = run_pipeline(tensor, meta, config, timings=timings)
    stats = anchor_stats(result.connectivity)
    _print_anchor(stats, result.connectivity.shape[0])
    print(f"clusters {result.clustering.num_clusters}")
    print(f"edge_cut {fmt_g(result.clustering.edge_cut)}")
    _print_timings(timings)
    if args.out_credit:
        reports.write(reports.credit_report(result, args.seq_adv), args.out_credit)
    if args.out_hist:
        reports.write(reports.histogram_report(result.connectivity, args.bins),
                      args.out_hist)
    return 0


def cmd_debias(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    config = resolve_pipeline(args, file_cfg)
    tensor, meta = _load_inputs(args)
    conn = connectivity_only(tensor, meta, config)
    stats = anchor_stats(conn)
    _print_anchor(stats, conn.shape[0])
    if args.out:
        reports.write(reports.connectivity_report(conn), args.out)
    return 0


def cmd_partition(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    config = resolve_pipeline(args, file_cfg)
    tensor, meta = _load_inputs(args)
    result = run_pipeline(tensor, meta, config)
    print(f"tokens {result.connectivity.shape[0]}")
    print(f"clusters {result.clustering.num_clusters}")
    print(f"edge_cut {fmt_g(result.clustering.edge_cut)}")
    print(f"balance {fmt_g(result.clustering.balance)}")
    if args.graph_out:
        from .graph import save_graph

        save_graph(result.graph, args.graph_out)
    if args.out:
        n = result.connectivity.shape[0]
        reports.write(reports.partition_report(result.clustering, n), args.out)
    return 0


def cmd_credit(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    config = resolve_pipeline(args, file_cfg)
    mode = _canonical_mode(_file_value(args, file_cfg, "mode", str, "at-rl"))
    tensor, meta = _load_inputs(args)
    result = run_pipeline(tensor, meta, config, reverse=(mode == "reverse"))
    if mode in ("at_rl", "reverse"):
        weight = result.token_weight
    else:
        from .pipeline import mode_token_weights

        rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF]))
        weight = mode_token_weights(tensor, meta, config, mode, rng=rng)
    token_adv = weight * args.seq_adv
    print(f"tokens {result.connectivity.shape[0]}")
    print(f"mode {mode}")
    print(f"seq_adv {fmt_g(args.seq_adv)}")
    print(f"token_adv_sum {fmt_g(float(token_adv.sum()))}")
    if args.out:
        report = reports.credit_report(result, args.seq_adv)
        if mode not in ("at_rl", "reverse"):
            col = report.header.index("token_advantage")
            rows = [r[:col] + (fmt_g(token_adv[i]),) + r[col + 1:]
                    for i, r in enumerate(report.rows)]
            report.rows = rows
            report.meta["mode"] = mode
        reports.write(report, args.out)
    return 0


def _train_config(args: argparse.Namespace, file_cfg: dict[str, str],
                  pipeline: PipelineConfig, mode: str) -> TrainConfig:
    seeds_text = _file_value(args, file_cfg, "seeds", str, None)
    seeds = parse_seeds(seeds_text) if seeds_text else (pipeline.seed,)
    try:
        return TrainConfig(
            steps=_file_value(args, file_cfg, "steps", int, 150),
            batch_prompts=_file_value(args, file_cfg, "batch_prompts", int, 16),
            group_size=_file_value(args, file_cfg, "group_size", int, 8),
            lr=_file_value(args, file_cfg, "lr", float, 0.01),
            max_len=_file_value(args, file_cfg, "max_len", int, 12),
            threshold=_file_value(args, file_cfg, "threshold", float, 0.9),
            engine=_file_value(args, file_cfg, "engine", str, "grpo"),
            mode=mode,
            seeds=seeds,
            pipeline=pipeline,
        )
    except ValueError as exc:
        raise AtrlError(str(exc)) from exc


def cmd_train_toy(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    pipeline = resolve_pipeline(args, file_cfg)
    mode = _canonical_mode(_file_value(args, file_cfg, "mode", str, "at-rl"))
    config = _train_config(args, file_cfg, pipeline, mode)
    report = train(config)
    for run in report.runs:
        steps_to = "-" if run.steps_to_threshold is None else run.steps_to_threshold
        print(f"seed {run.seed} final_reward {fmt_g(run.final_reward)} "
              f"steps_to_threshold {steps_to}")
    print(f"mean_final_reward {fmt_g(report.mean_final_reward)}")
    for stage, seconds in report.runs[0].timings.items():
        print(f"time_{stage}_ms {fmt_g(seconds * 1e3)}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 0


def _ablation_rows(config: TrainConfig) -> list[tuple[str, ...]]:
    rows: list[tuple[str, ...]] = []
    variants: list[tuple[str, str, TrainConfig]] = [
        ("uniform", "", replace(config, mode="uniform")),
        ("random", "", replace(config, mode="random")),
        ("reverse", "", replace(config, mode="reverse")),
    ]
    for p in _ABLATE_HARD_PS:
        pipe = config.pipeline.with_overrides(hard_p=p)
        variants.append(("hard", fmt_g(p),
                         replace(config, mode="hard_top_p", pipeline=pipe)))
    variants.append(("at-rl", "", replace(config, mode="at_rl")))
    for name, detail, cfg in variants:
        report = train(cfg)
        reached = sum(r.steps_to_threshold is not None for r in report.runs)
        rows.append((
            name,
            detail,
            fmt_g(report.mean_final_reward),
            str(reached),
            str(len(report.runs)),
        ))
    return rows


def cmd_ablate(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    pipeline = resolve_pipeline(args, file_cfg)
    config = _train_config(args, file_cfg, pipeline, "at_rl")
    rows = _ablation_rows(config)
    report = reports.Report(
        kind=reports.ABLATION_KIND,
        meta={
            "engine": config.engine,
            "steps": str(config.steps),
            "seeds": ",".join(str(s) for s in config.seeds),
            "reference": "at-rl",
        },
        header=("mode", "hard_p", "mean_final_reward", "reached_threshold", "seeds"),
        rows=rows,
    )
    print(reports.render(report), end="")
    if args.out:
        reports.write(report, args.out)
    return 0


def _parse_grid(specs: list[str]) -> list[tuple[str, list[str]]]:
    grid: list[tuple[str, list[str]]] = []
    fields = set(config_field_names())
    for spec in specs:
        name, sep, vals = spec.partition("=")
        name = name.strip()
        field = _FLAG_TO_FIELD.get(name, name)
        if not sep or field not in fields:
            raise AtrlError(f"bad sweep parameter {spec!r}")
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise AtrlError(f"no values in sweep parameter {spec!r}")
        grid.append((field, values))
    return grid


def cmd_sweep(args: argparse.Namespace, file_cfg: dict[str, str]) -> int:
    pipeline = resolve_pipeline(args, file_cfg)
    mode = _canonical_mode(_file_value(args, file_cfg, "mode", str, "at-rl"))
    config = _train_config(args, file_cfg, pipeline, mode)
    grid = _parse_grid(args.param)

    base_report = train(config)
    base = base_report.mean_final_reward
    header = tuple(name for name, _ in grid) + ("mean_final_reward", "delta")
    rows = [tuple("default" for _ in grid) + (fmt_g(base), fmt_g(0.0))]
    for combo in itertools.product(*(vals for _, vals in grid)):
        overrides = {name: _coerce(name, val)
                     for (name, _), val in zip(grid, combo)}
        cfg = replace(config, pipeline=config.pipeline.with_overrides(**overrides))
        result = train(cfg)
        rows.append(combo + (fmt_g(result.mean_final_reward),
                             fmt_g(result.mean_final_reward - base)))
    report = reports.Report(
        kind=reports.SWEEP_KIND,
        meta={
            "mode": mode,
            "engine": config.engine,
            "steps": str(config.steps),
            "seeds": ",".join(str(s) for s in config.seeds),
        },
        header=header,
        rows=rows,
    )
    print(reports.render(report), end="")
    if args.out:
        reports.write(report, args.out)
    return 0


_COMMANDS = {
    "analyze": cmd_analyze,
    "debias": cmd_debias,
    "partition": cmd_partition,
    "credit": cmd_credit,
    "train-toy": cmd_train_toy,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = parse_config_file(args.config) if getattr(args, "config", None) else {}
        return _COMMANDS[args.command](args, file_cfg)
    except (AtrlError, OSError) as exc:
        print(f"atrl: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - invariant violations exit 2
        print(f"atrl: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
