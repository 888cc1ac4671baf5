"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 config error, 3 data error,
4 runtime failures (failed grid cells or diverged training).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import compatibility
from .config import OUTPUT_DIR_ENV, ExperimentConfig, _Section, load_config, synthetic_spec
from .dataset import Dataset, generate_synthetic, write_csv
from .errors import ConfigError, HarnessError
from .metrics import MetricKind
from .minimisation import build_learning_curve, decide_stop
from .models import fit_model
from .runner import prepare, run
from .unlearning import (
    CostLedger,
    WithdrawalRequest,
    cost_report,
    probe_grid,
    verify_exactness,
    withdraw,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 4

log = logging.getLogger("minbench")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(args, text: str = "") -> None:
    if not args.quiet:
        print(text)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg, args.output)
    _say(args, f"{result.n_cells} cells -> {result.output_dir}")
    if result.n_failed:
        _say(args, f"{result.n_failed} failed cell rows")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_curve(args) -> int:
    cfg = _config(args)
    name, mcfg = cfg.model(args.model)
    metric = MetricKind.parse(args.metric)
    grids = [g for g in cfg.plans.values() if g.is_curve]
    if args.plan:
        grids = [g for g in grids if g.name == args.plan]
    if not grids:
        raise ConfigError("no plan with >= 3 budgets of a subset strategy")
    grid = grids[0]
    data = prepare(cfg)
    curve = build_learning_curve(data, mcfg, metric, grid.template, grid.values, cfg.seeds)
    budgets, means = curve.means()
    _say(args, f"model={name} plan={grid.name} metric={metric}")
    _say(args, "budget,mean_value")
    for b, v in zip(budgets, means):
        _say(args, f"{int(b)},{v!r}")
    if curve.fit is None:
        _say(args, "fit: absent")
        return EXIT_RUNTIME
    f = curve.fit
    _say(args, f"fit: a={f.a!r} b={f.b!r} c={f.c!r} residual={f.residual!r}")
    if cfg.stopping is not None:
        _say(args, f"decision: {decide_stop(curve, cfg.stopping)}")
    return EXIT_OK


def _independent_oracle_train(train: Dataset, users: set[str]) -> Dataset:
    """Reduced training set rebuilt row by row, not via ``without_users``."""
    rows = [r for r in train if r.user_id not in users]
    return Dataset(
        [r.user_id for r in rows],
        [r.item_id for r in rows],
        [r.rating for r in rows],
        [r.timestamp for r in rows],
        rating_min=train.rating_min,
        rating_max=train.rating_max,
        group_map=train.group_map,
    )


def cmd_withdraw(args) -> int:
    cfg = _config(args)
    name, mcfg = cfg.model(args.model) if args.model else next(iter(cfg.models.items()))
    seed = cfg.seeds[0]
    data = prepare(cfg)
    users = [u for u in args.users.split(",") if u]
    model = fit_model(mcfg, data.train, seed)
    ledger = CostLedger(cfg.cost_weights)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = withdraw(model, data.train, WithdrawalRequest(users), ledger=ledger)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    oracle = fit_model(mcfg, _independent_oracle_train(data.train, set(users)), seed)
    all_users = set(data.train.user_ids.tolist()) | set(data.test.user_ids.tolist())
    all_items = set(data.train.item_ids.tolist()) | set(data.test.item_ids.tolist())
    check = verify_exactness(result.model, oracle, probe_grid(all_users, all_items))
    report = cost_report(ledger)

    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger.append_csv(out / "ledger.csv")

    _say(args, f"model={name} removed={len(users) - len(result.unknown_users)} unknown={len(result.unknown_users)}")
    _say(args, f"exact={check.exact} max_deviation={check.max_deviation!r} probes={check.n_probes}")
    _say(args, f"sgd_updates={result.cost.sgd_updates} similarity_ops={result.cost.similarity_ops} retrains={result.cost.retrains}")
    _say(args, f"energy_proxy={report.total!r}")
    return EXIT_OK if check.exact else EXIT_RUNTIME


def cmd_compat(args) -> int:
    cfg = _config(args)
    c = cfg.compatibility
    if c is None:
        raise ConfigError("missing section [analysis.compatibility]")
    seeds = (args.seed,) if args.seed is not None else c.seeds
    if len(seeds) * len(c.schedule) < 8:
        raise ConfigError("compatibility needs fractions x seeds >= 8 samples")
    data = prepare(cfg)
    report = compatibility(
        data, c.task_a, c.task_b, c.schedule, seeds,
        r_min=c.r_min, p_max=c.p_max, n_permutations=c.permutations,
        permutation_seed=c.permutation_seed,
    )
    if args.output:
        Path(args.output).write_text(report.to_csv(), encoding="utf-8")
    _say(args, f"{report.purpose_a} vs {report.purpose_b}: r={report.pearson_r!r}"
               f" p={report.permutation_p!r} verdict={report.verdict}")
    return EXIT_OK


def cmd_gen(args) -> int:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(Path(args.spec).read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read spec {args.spec}: {exc}") from None
    name = next((s for s in ("synthetic", "dataset") if cp.has_section(s)), None)
    if name is None:
        raise ConfigError("spec needs a [synthetic] or [dataset] section")
    sec = _Section(name, cp[name])
    if sec.has("source"):
        if sec.get("source") != "synthetic":
            raise ConfigError(f"[{name}] source must be synthetic")
    spec = synthetic_spec(sec)
    sec.finish()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    dataset = generate_synthetic(spec)
    write_csv(dataset, args.out)
    _say(args, f"wrote {len(dataset)} interactions to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the configured seeds with this one")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = _Parser(prog="minbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"minbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("run", parents=[common], help="run the experiment grid")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help=f"result directory (else ${OUTPUT_DIR_ENV} or [run] output_dir)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("curve", parents=[common], help="fit one learning curve and apply the stopping rule")
    s.add_argument("--config", required=True)
    s.add_argument("--model", required=True, help="model section name or kind")
    s.add_argument("--metric", required=True, help="e.g. rmse, ndcg@10")
    s.add_argument("--plan", help="plan section name (default: first curve-shaped plan)")
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("withdraw", parents=[common], help="withdraw users by exact retraining")
    s.add_argument("--config", required=True)
    s.add_argument("--users", required=True, help="comma-separated user ids")
    s.add_argument("--model", help="model section name or kind (default: first)")
    s.add_argument("--output", help="directory for ledger.csv")
    s.set_defaults(func=cmd_withdraw)

    s = sub.add_parser("compat", parents=[common], help="run the compatibility analysis")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help="write the report CSV here")
    s.set_defaults(func=cmd_compat)

    s = sub.add_parser("gen", parents=[common], help="write a synthetic dataset CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except HarnessError as exc:
        print(f"minbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
