"""Experiment configuration: an INI file parsed and validated up front.

See README.md for the full grammar. Sections:

``[run]``                 seeds, output_dir, workers
``[dataset]``             source = synthetic | csv, plus generator or file options
``[split]``               scheme = temporal_holdout | leave_last_k, fraction / k, seed
``[model.<name>]``        kind plus model hyperparameters (one or more)
``[plan.<name>]``         strategy plus budgets / fractions, optional ``then`` steps
``[metrics]``             ``<metric> = <aggregation>[, ...]`` lines, optional n_negatives
``[stopping]``            epsilon, grid
``[analysis.compatibility]``, ``[analysis.disparity]``, ``[analysis.cross_user]``
``[unlearning]``          weights
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .analysis import DEFAULT_P_MAX, DEFAULT_PERMUTATIONS, DEFAULT_R_MIN, Perturbation, Task
from .dataset import (
    Dataset,
    LeaveLastK,
    SyntheticSpec,
    TemporalHoldout,
    generate_synthetic,
    load_csv,
)
from .errors import ConfigError, HarnessError
from .metrics import AGGREGATIONS, DEFAULT_NEGATIVES, MetricKind
from .minimisation import SUBSET_STRATEGIES, MinimisationPlan, StoppingRule
from .models import ModelConfig, model_config
from .unlearning import CostWeights

OUTPUT_DIR_ENV = "MINBENCH_OUTPUT_DIR"


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _words(text: str) -> list[str]:
    return [x for x in text.replace(",", " ").split()]


def _number(text: str) -> int | float | str:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


class _Section:
    """Typed, tracked access to one INI section; leftover keys are errors."""

    def __init__(self, name: str, proxy) -> None:
        self.name = name
        self.values = dict(proxy)
        self.used: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, cast: Callable[[str], Any] = str, default: Any = ..., required=False):
        if key not in self.values:
            if required or default is ...:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        self.used.add(key)
        try:
            return cast(self.values[key].strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{self.name}] {key}: {exc}") from None

    def rest(self) -> dict[str, str]:
        out = {k: v.strip() for k, v in self.values.items() if k not in self.used}
        self.used.update(out)
        return out

    def finish(self) -> None:
        extra = sorted(set(self.values) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown keys: {', '.join(extra)}")


@dataclass(frozen=True)
class CsvSource:
    path: Path
    rating_min: float | None = None
    rating_max: float | None = None
    schema: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class PlanGrid:
    """A swept plan: one minimisation step per budget (or fraction)."""

    name: str
    template: MinimisationPlan
    values: tuple  # budgets, fractions, or (None,) for ``full``
    then: tuple[MinimisationPlan, ...] = ()

    def expand(self) -> list[tuple[Any, MinimisationPlan]]:
        out = []
        for v in self.values:
            if self.template.strategy == "shuffle":
                out.append((v, MinimisationPlan("shuffle", fraction=v)))
            elif self.template.strategy == "full":
                out.append(("all", self.template))
            else:
                out.append((v, self.template.at(budget=v)))
        return out

    @property
    def is_curve(self) -> bool:
        return self.template.strategy in SUBSET_STRATEGIES and len(set(self.values)) >= 3


@dataclass(frozen=True)
class CompatibilitySpec:
    task_a: Task
    task_b: Task
    schedule: tuple[Perturbation, ...]
    seeds: tuple[int, ...]
    r_min: float = DEFAULT_R_MIN
    p_max: float = DEFAULT_P_MAX
    permutations: int = DEFAULT_PERMUTATIONS
    permutation_seed: int = 0


@dataclass(frozen=True)
class DisparitySpec:
    model: str
    metric: MetricKind
    plan: MinimisationPlan
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class CrossUserSpec:
    model: str
    metric: MetricKind
    users: tuple[str, ...]
    seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: SyntheticSpec | CsvSource
    split_scheme: TemporalHoldout | LeaveLastK
    split_seed: int
    models: dict[str, ModelConfig]
    plans: dict[str, PlanGrid]
    metrics: list[tuple[MetricKind, str]]
    seeds: list[int]
    output_dir: Path
    n_negatives: int = DEFAULT_NEGATIVES
    workers: int = 1
    stopping: StoppingRule | None = None
    compatibility: CompatibilitySpec | None = None
    disparity: DisparitySpec | None = None
    cross_user: CrossUserSpec | None = None
    cost_weights: CostWeights = field(default_factory=CostWeights)
    source_text: str = ""
    source_path: Path | None = None

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    def load_dataset(self) -> Dataset:
        if isinstance(self.dataset, SyntheticSpec):
            return generate_synthetic(self.dataset)
        src = self.dataset
        return load_csv(
            src.path, dict(src.schema), rating_min=src.rating_min, rating_max=src.rating_max
        )

    def model(self, key: str) -> tuple[str, ModelConfig]:
        """Look a model up by section name, falling back to its kind."""
        if key in self.models:
            return key, self.models[key]
        for name, cfg in self.models.items():
            if cfg.kind == key:
                return name, cfg
        raise ConfigError(f"no model named or of kind {key!r}")

    def all_seeds(self) -> dict[str, list[int]]:
        """Every seed that feeds a random draw, by purpose."""
        seeds = {"run": list(self.seeds), "split": [self.split_seed]}
        if isinstance(self.dataset, SyntheticSpec):
            seeds["dataset"] = [self.dataset.seed]
        if self.compatibility:
            seeds["compatibility"] = list(self.compatibility.seeds)
            seeds["compatibility_permutation"] = [self.compatibility.permutation_seed]
        if self.disparity:
            seeds["disparity"] = list(self.disparity.seeds)
        if self.cross_user:
            seeds["cross_user"] = [self.cross_user.seed]
        return seeds


def synthetic_spec(sec: _Section) -> SyntheticSpec:
    groups = ()
    if sec.has("groups"):
        pairs = []
        for tok in sec.get("groups", _words):
            label, _, frac = tok.partition(":")
            if not frac:
                raise ConfigError(f"[{sec.name}] groups entries look like label:fraction")
            pairs.append((label, float(frac)))
        groups = tuple(pairs)
    return SyntheticSpec(
        n_users=sec.get("n_users", int, 200),
        n_items=sec.get("n_items", int, 100),
        latent_dim=sec.get("latent_dim", int, 4),
        group_fractions=groups,
        group_preference_shift=sec.get("group_preference_shift", float, 0.0),
        noise_sd=sec.get("noise_sd", float, 0.3),
        interactions_per_user=sec.get("interactions_per_user", int, 20),
        seed=sec.get("seed", int, 0),
    )


def _plan_spec(text: str, where: str) -> MinimisationPlan:
    """``full``, ``recency:5`` or ``shuffle:0.3``."""
    name, _, arg = text.strip().partition(":")
    try:
        if name == "full":
            return MinimisationPlan("full")
        if name == "shuffle":
            return MinimisationPlan("shuffle", fraction=float(arg))
        return MinimisationPlan(name, budget=int(arg))
    except ValueError:
        raise ConfigError(f"{where}: bad plan {text!r}") from None


def _task(text: str, models: dict[str, ModelConfig], where: str) -> Task:
    model, _, metric = text.partition(":")
    if model not in models:
        raise ConfigError(f"{where}: unknown model {model!r}")
    return Task(models[model], MetricKind.parse(metric), label=f"{model}:{metric}")


def parse_config(text: str, *, base_dir: Path | None = None, source_path: Path | None = None) -> ExperimentConfig:
    base_dir = Path(base_dir or ".")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    sections = {name: _Section(name, cp[name]) for name in cp.sections()}
    for required in ("run", "dataset", "split", "metrics"):
        if required not in sections:
            raise ConfigError(f"missing section [{required}]")
    known = {"run", "dataset", "split", "metrics", "stopping", "unlearning",
             "analysis.compatibility", "analysis.disparity", "analysis.cross_user"}
    for name in sections:
        if name not in known and not name.startswith(("model.", "plan.")):
            raise ConfigError(f"unknown section [{name}]")

    try:
        run = sections["run"]
        seeds = run.get("seeds", _ints, required=True)
        if not seeds:
            raise ConfigError("[run] seeds is empty")
        output_dir = Path(run.get("output_dir", str, "results"))
        workers = run.get("workers", int, 1)
        if workers < 1:
            raise ConfigError("[run] workers must be >= 1")

        ds = sections["dataset"]
        source = ds.get("source", str, "synthetic")
        if source == "synthetic":
            dataset = synthetic_spec(ds)
        elif source == "csv":
            path = Path(ds.get("path", str, required=True))
            if not path.is_absolute():
                path = base_dir / path
            schema = tuple(
                (col, ds.get(f"column_{col}"))
                for col in ("user", "item", "rating", "timestamp", "group")
                if ds.has(f"column_{col}")
            )
            dataset = CsvSource(
                path,
                ds.get("rating_min", float, None),
                ds.get("rating_max", float, None),
                schema,
            )
        else:
            raise ConfigError(f"[dataset] unknown source {source!r}")

        sp = sections["split"]
        scheme_name = sp.get("scheme", str, "temporal_holdout")
        if scheme_name == "temporal_holdout":
            scheme = TemporalHoldout(sp.get("fraction", float, 0.2))
        elif scheme_name == "leave_last_k":
            scheme = LeaveLastK(sp.get("k", int, 1))
        else:
            raise ConfigError(f"[split] unknown scheme {scheme_name!r}")
        split_seed = sp.get("seed", int, 0)

        models: dict[str, ModelConfig] = {}
        for name, sec in sections.items():
            if name.startswith("model."):
                kind = sec.get("kind", str, required=True)
                params = {k: _number(v) for k, v in sec.rest().items()}
                models[name[len("model."):]] = model_config(kind, params)
        if not models:
            raise ConfigError("missing section [model.<name>]: at least one model is required")

        plans: dict[str, PlanGrid] = {}
        for name, sec in sections.items():
            if not name.startswith("plan."):
                continue
            pname = name[len("plan."):]
            strategy = sec.get("strategy", str, required=True)
            if strategy == "full":
                template, values = MinimisationPlan("full"), ("all",)
            elif strategy == "shuffle":
                values = tuple(sec.get("fractions", _floats, required=True))
                template = MinimisationPlan("shuffle", fraction=values[0] if values else 0.0)
            else:
                values = tuple(sec.get("budgets", _ints, required=True))
                template = MinimisationPlan(strategy, budget=0)
            if not values:
                raise ConfigError(f"[{name}] has no budgets")
            if strategy != "full" and len(set(values)) != len(values):
                raise ConfigError(f"[{name}] repeats a budget")
            then = tuple(
                _plan_spec(t, f"[{name}] then") for t in (sec.get("then", _words, []) or [])
            )
            plans[pname] = PlanGrid(pname, template, values, then)
            plans[pname].expand()  # validates every budget
        if not plans:
            raise ConfigError("missing section [plan.<name>]: at least one plan is required")

        msec = sections["metrics"]
        n_negatives = msec.get("n_negatives", int, DEFAULT_NEGATIVES)
        if n_negatives < 1:
            raise ConfigError("[metrics] n_negatives must be >= 1")
        metrics = []
        for key, value in msec.rest().items():
            metric = MetricKind.parse(key)
            aggs = _words(value) or ["global_mean"]
            for agg in aggs:
                if agg not in AGGREGATIONS:
                    raise ConfigError(f"[metrics] unknown aggregation {agg!r}")
                metrics.append((metric, agg))
        if not metrics:
            raise ConfigError("[metrics] section lists no metrics")

        stopping = None
        if "stopping" in sections:
            st = sections["stopping"]
            grid = st.get("grid", _ints, None)
            if grid is None:
                budgets = sorted({v for g in plans.values() if g.is_curve for v in g.values})
                grid = budgets
            stopping = StoppingRule(st.get("epsilon", float, required=True), tuple(grid))

        compat = None
        if "analysis.compatibility" in sections:
            sec = sections["analysis.compatibility"]
            where = "[analysis.compatibility]"
            direction = sec.get("direction", str, "remove")
            compat = CompatibilitySpec(
                _task(sec.get("task_a", str, required=True), models, where),
                _task(sec.get("task_b", str, required=True), models, where),
                tuple(Perturbation(f, direction) for f in sec.get("fractions", _floats, required=True)),
                tuple(sec.get("seeds", _ints, seeds)),
                sec.get("r_min", float, DEFAULT_R_MIN),
                sec.get("p_max", float, DEFAULT_P_MAX),
                sec.get("permutations", int, DEFAULT_PERMUTATIONS),
                sec.get("permutation_seed", int, 0),
            )
            if len(compat.schedule) * len(compat.seeds) < 8:
                raise ConfigError(f"{where} needs fractions x seeds >= 8 samples")

        disparity = None
        if "analysis.disparity" in sections:
            sec = sections["analysis.disparity"]
            where = "[analysis.disparity]"
            model = sec.get("model", str, required=True)
            if model not in models:
                raise ConfigError(f"{where}: unknown model {model!r}")
            disparity = DisparitySpec(
                model,
                MetricKind.parse(sec.get("metric", str, required=True)),
                _plan_spec(sec.get("plan", str, required=True), where),
                tuple(sec.get("seeds", _ints, seeds)),
            )

        cross = None
        if "analysis.cross_user" in sections:
            sec = sections["analysis.cross_user"]
            where = "[analysis.cross_user]"
            model = sec.get("model", str, required=True)
            if model not in models:
                raise ConfigError(f"{where}: unknown model {model!r}")
            cross = CrossUserSpec(
                model,
                MetricKind.parse(sec.get("metric", str, required=True)),
                tuple(sec.get("users", _words, required=True)),
                sec.get("seed", int, seeds[0]),
            )

        weights = CostWeights()
        if "unlearning" in sections:
            w = sections["unlearning"].get("weights", _floats, None)
            if w is not None:
                if len(w) != 3:
                    raise ConfigError("[unlearning] weights needs three values")
                weights = CostWeights(*w)

        for sec in sections.values():
            if sec.name.startswith("model."):
                continue
            sec.finish()
    except ConfigError:
        raise
    except HarnessError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return ExperimentConfig(
        dataset=dataset,
        split_scheme=scheme,
        split_seed=split_seed,
        models=models,
        plans=plans,
        metrics=metrics,
        seeds=seeds,
        output_dir=output_dir,
        n_negatives=n_negatives,
        workers=workers,
        stopping=stopping,
        compatibility=compat,
        disparity=disparity,
        cross_user=cross,
        cost_weights=weights,
        source_text=text,
        source_path=source_path,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent, source_path=path)
