"""Command-line entry point.

Subcommands: anova, fit, ppc, mix, calibrate, power, sweep, demo.  One
JSON config file describes the run; ``--seed``, ``--out`` and
``--threads`` override or supplement it.  Every subcommand writes a
canonical ``report.json`` (sorted keys, fixed float formatting, no
timestamps) plus CSV side files where tabular output is useful, and the
report embeds the resolved configuration, the root seed, and a config
hash so results are attributable and byte-reproducible.  One root seed
governs everything; task seeds are derived by counter splitting keyed on
the subcommand and task index, so the thread count never changes any
number in any report.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__, seeds
from .anova import anova_table
from .design import Dataset, FactorDecl, Observation, build_layout, is_balanced
from .errors import ConfigError, IngestError, VclabError
from .lab import (
    NestedCounts,
    StudyConfig,
    calibration_study,
    generate_nested_demo,
    power_study,
    sensitivity_sweep,
)
from .model import (
    DirichletRelative,
    IndependentUniform,
    IntegrationConfig,
    ModelMixing,
    PriorSpec,
    resolve_prior,
    submodel_posterior,
)
from .ppc import SCHEMES, STATISTIC_NAMES, run_ppc
from .report import config_hash, to_jsonable, write_report
from .sampler import SamplerConfig, fit

COMMANDS = ("anova", "fit", "ppc", "mix", "calibrate", "power", "sweep", "demo")


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation: subcommand, config payload, seed, output paths."""

    command: str
    config: Mapping[str, Any]
    seed: int
    out_dir: Path
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown subcommand {self.command!r}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("thread count must be >= 1")


# ---------------------------------------------------------------------------
# CSV ingestion


def ingest_csv(
    path: Path | str,
    response: str = "y",
    factors: Sequence[FactorDecl] | None = None,
    interactions: Sequence[Sequence[str]] | None = None,
    max_interaction_order: int = 2,
) -> Dataset:
    """Read a long-format CSV into a Dataset.

    Header row required; one numeric response column, every other used
    column is a factor label.  Non-numeric or non-finite responses and
    empty labels are rejected with their row number (header is row 1).
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"input file {path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise IngestError(
                f"response column {response!r} not found; header is {header}"
            )
        if factors is None:
            decls = [FactorDecl(h) for h in header if h != response]
        else:
            decls = list(factors)
            for d in decls:
                if d.name not in header:
                    raise IngestError(
                        f"factor column {d.name!r} not found; header is {header}"
                    )
        if not decls:
            raise IngestError("no factor columns: cannot define variance sources")
        col = {name: header.index(name) for name in header}
        observations: list[Observation] = []
        rows: list[int] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise IngestError(f"row {lineno}: expected {len(header)} fields")
            raw = rec[col[response]].strip()
            try:
                value = float(raw)
            except ValueError:
                raise IngestError(
                    f"row {lineno}: non-numeric response {raw!r}"
                ) from None
            if not np.isfinite(value):
                raise IngestError(f"row {lineno}: non-finite response {raw!r}")
            labels = {}
            for d in decls:
                lab = rec[col[d.name]].strip()
                if not lab:
                    raise IngestError(
                        f"row {lineno}: empty label in factor column {d.name!r}"
                    )
                labels[d.name] = lab
            observations.append(Observation(value, labels))
            rows.append(lineno)
    if not observations:
        raise IngestError(f"{path} contains a header but no data rows")
    layout = build_layout(
        decls,
        observations,
        max_interaction_order=max_interaction_order,
        interactions=interactions,
    )
    return Dataset(tuple(observations), layout, source_rows=tuple(rows))


# ---------------------------------------------------------------------------
# config parsing helpers


def _parse_factors(data_cfg: Mapping) -> list[FactorDecl] | None:
    raw = data_cfg.get("factors")
    if raw is None:
        return None
    decls = []
    for item in raw:
        if isinstance(item, str):
            decls.append(FactorDecl(item))
        else:
            decls.append(FactorDecl(item["name"], item.get("nested_in")))
    return decls


def _load_dataset(config: Mapping, base_dir: Path) -> Dataset:
    data_cfg = config.get("data")
    if not data_cfg:
        raise ConfigError('config is missing the "data" section')
    raw_path = Path(data_cfg["path"])
    path = raw_path if raw_path.is_absolute() else base_dir / raw_path
    inter = data_cfg.get("interactions")
    if inter is not None:
        inter = [tuple(c) for c in inter]
    return ingest_csv(
        path,
        response=data_cfg.get("response", "y"),
        factors=_parse_factors(data_cfg),
        interactions=inter,
        max_interaction_order=int(data_cfg.get("max_interaction_order", 2)),
    )


def parse_prior(cfg: Mapping | None) -> PriorSpec:
    cfg = dict(cfg or {"kind": "dirichlet_relative"})
    kind = cfg.pop("kind", "dirichlet_relative")
    common = {k: cfg.pop(k, None) for k in ("mu_mean", "mu_sd")}
    if kind == "independent_uniform":
        prior: PriorSpec = IndependentUniform(
            sd_upper=cfg.pop("sd_upper", None), **common
        )
    elif kind == "dirichlet_relative":
        prior = DirichletRelative(
            delta=cfg.pop("delta", 1.0), t_max=cfg.pop("t_max", None), **common
        )
    elif kind == "model_mixing":
        prior = ModelMixing(
            null_prob=cfg.pop("null_prob", 0.5),
            delta=cfg.pop("delta", 1.0),
            t_max=cfg.pop("t_max", None),
            **common,
        )
    else:
        raise ConfigError(f"unknown prior kind {kind!r}")
    if cfg:
        raise ConfigError(f"unknown prior settings {sorted(cfg)} for kind {kind!r}")
    return prior


def _sampler_config(config: Mapping, run: RunConfig, *labels) -> SamplerConfig:
    cfg = dict(config.get("sampler") or {})
    allowed = {
        "chains", "iterations", "burnin", "thin", "step_log_t",
        "step_logit_phi", "interweave", "adapt_window", "stall_window",
    }
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown sampler settings {sorted(unknown)}")
    return SamplerConfig(
        seed=seeds.derive_seed(run.seed, run.command, *labels),
        threads=run.threads,
        **cfg,
    )


def _prior_payload(prior: PriorSpec) -> dict:
    kind = {
        IndependentUniform: "independent_uniform",
        DirichletRelative: "dirichlet_relative",
        ModelMixing: "model_mixing",
    }[type(prior)]
    return {"kind": kind, **to_jsonable(prior)}


def _sampler_payload(cfg: SamplerConfig) -> dict:
    payload = to_jsonable(cfg)
    payload.pop("threads")  # execution detail; never affects results
    return payload


# ---------------------------------------------------------------------------
# report assembly


def _finish(
    run: RunConfig, resolved_config: dict, result: Any, extra_files: dict | None = None
) -> Path:
    payload = {
        "command": run.command,
        "config": resolved_config,
        "provenance": {
            "config_sha256": config_hash({"command": run.command, **resolved_config}),
            "seed": run.seed,
            "version": __version__,
        },
        "result": to_jsonable(result),
    }
    if extra_files:
        payload["files"] = extra_files
    run.out_dir.mkdir(parents=True, exist_ok=True)
    path = run.out_dir / "report.json"
    write_report(path, payload)
    return path


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_anova(run: RunConfig, base_dir: Path) -> None:
    dataset = _load_dataset(run.config, base_dir)
    table = anova_table(dataset)
    result = {
        "sources": [
            {"name": r.name, "df": r.df, "ss": r.ss, "ms": r.ms} for r in table.rows
        ],
        "ems": table.ems,
        "mom": {"raw": table.mom.raw, "truncated": table.mom.truncated},
        "balanced": table.balanced,
        "ems_heuristic": table.ems_heuristic,
        "total_ss": table.total_ss,
    }
    print(f"{'source':<16}{'df':>6}{'ss':>14}{'ms':>14}")
    for r in table.rows:
        print(f"{r.name:<16}{r.df:>6}{r.ss:>14.6g}{r.ms:>14.6g}")
    print("mom raw:      ", {k: round(v, 6) for k, v in table.mom.raw.items()})
    print("mom truncated:", {k: round(v, 6) for k, v in table.mom.truncated.items()})
    _finish(run, _echo_config(run, {"data": dict(run.config["data"])}), result)


def _echo_config(run: RunConfig, sections: dict) -> dict:
    return {"seed": run.seed, **sections}


def _cmd_fit(run: RunConfig, base_dir: Path) -> None:
    dataset = _load_dataset(run.config, base_dir)
    prior = parse_prior(run.config.get("prior"))
    if isinstance(prior, ModelMixing):
        raise ConfigError("fit uses the non-mixing priors; run `mix` instead")
    prior = resolve_prior(prior, dataset)
    smp = _sampler_config(run.config, run, "sampler")
    draws = fit(dataset, prior, smp)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    names = list(draws.source_names)
    header = (
        ["mu"]
        + [f"sigma2.{s}" for s in names]
        + [f"s.{s}" for s in names]
        + [f"phi.{s}" for s in names]
        + ["T"]
    )
    cols = (
        [draws.mu]
        + [draws.sigma2_for(s) for s in names]
        + [draws.finite_sd[s] for s in names]
        + [draws.phi_for(s) for s in names]
        + [draws.total]
    )
    rows = list(zip(*[c.tolist() for c in cols]))
    _write_csv(run.out_dir / "draws.csv", header, rows)
    result = {
        "posterior": draws.summary(),
        "acceptance": draws.acceptance,
        "diagnostics": to_jsonable(draws.diagnostics) if draws.diagnostics else None,
        "chains": draws.chain_count,
        "retained_draws": draws.draw_count,
        "balanced": bool(is_balanced(dataset)),
    }
    print(f"retained {draws.draw_count} draws over {draws.chain_count} chains")
    for name, s in draws.summary().items():
        print(f"  {name:<20} mean={s['mean']:.5g} sd={s['sd']:.5g}")
    resolved = _echo_config(
        run,
        {
            "data": dict(run.config["data"]),
            "prior": _prior_payload(prior),
            "sampler": _sampler_payload(smp),
        },
    )
    _finish(run, resolved, result, extra_files={"draws": "draws.csv"})


def _cmd_ppc(run: RunConfig, base_dir: Path) -> None:
    dataset = _load_dataset(run.config, base_dir)
    ppc_cfg = dict(run.config.get("ppc") or {})
    source = ppc_cfg.get("source")
    if not source:
        raise ConfigError('ppc requires "source" (via config or --source)')
    stat = ppc_cfg.get("stat", "ss")
    scheme = ppc_cfg.get("scheme", "marginal")
    replicates = int(ppc_cfg.get("replicates", 200))
    save_replicates = bool(ppc_cfg.get("save_replicates", False))
    prior = resolve_prior(parse_prior(run.config.get("prior")), dataset)
    if isinstance(prior, ModelMixing):
        raise ConfigError("ppc uses the non-mixing priors for the constrained fit")
    smp = _sampler_config(run.config, run, "sampler")
    rep = run_ppc(
        dataset, prior, source, smp, stat=stat, scheme=scheme, replicates=replicates
    )
    result = to_jsonable(rep)
    if not save_replicates:
        result.pop("replicated")
    files = {}
    if save_replicates:
        run.out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(
            run.out_dir / "replicates.csv",
            ["replicate", "value"],
            list(enumerate(rep.replicated.tolist())),
        )
        files["replicates"] = "replicates.csv"
        result.pop("replicated")
    print(
        f"ppc source={source} stat={stat} scheme={scheme}: "
        f"observed={rep.observed:.6g} p={rep.p_value:.4f} (R={rep.replicate_count})"
    )
    resolved = _echo_config(
        run,
        {
            "data": dict(run.config["data"]),
            "prior": _prior_payload(prior),
            "sampler": _sampler_payload(smp),
            "ppc": {
                "source": source,
                "stat": stat,
                "scheme": scheme,
                "replicates": replicates,
                "save_replicates": save_replicates,
            },
        },
    )
    _finish(run, resolved, result, extra_files=files or None)


def _cmd_mix(run: RunConfig, base_dir: Path) -> None:
    dataset = _load_dataset(run.config, base_dir)
    prior = parse_prior(run.config.get("prior"))
    if not isinstance(prior, ModelMixing):
        raise ConfigError('mix requires a prior of kind "model_mixing"')
    prior = resolve_prior(prior, dataset)
    mix_cfg = dict(run.config.get("mix") or {})
    integ = IntegrationConfig(
        draws=int(mix_cfg.get("draws", 8192)),
        seed=seeds.derive_seed(run.seed, "mix", "integration"),
        stratify_total=bool(mix_cfg.get("stratify_total", True)),
    )
    post = submodel_posterior(dataset, prior, integ)
    for row in sorted(post.rows, key=lambda r: -r.posterior_prob)[:8]:
        inc = "+".join(row.included) if row.included else "(residual only)"
        print(f"  P[{inc}] = {row.posterior_prob:.4f} (se {row.posterior_se:.4f})")
    resolved = _echo_config(
        run,
        {
            "data": dict(run.config["data"]),
            "prior": _prior_payload(prior),
            "mix": {"draws": integ.draws, "stratify_total": integ.stratify_total},
        },
    )
    _finish(run, resolved, post)


def _study_config(run: RunConfig) -> StudyConfig:
    cfg = dict(run.config.get("study") or {})
    if "group_sizes" not in cfg:
        raise ConfigError('study config requires "group_sizes"')
    prior = parse_prior(run.config.get("prior") or {"kind": "independent_uniform"})
    if isinstance(prior, ModelMixing):
        raise ConfigError("studies use the non-mixing priors")
    sampler_cfg = dict(run.config.get("sampler") or {})
    sampler = SamplerConfig(
        **{"chains": 1, "iterations": 1500, "burnin": 500, "thin": 5, **sampler_cfg},
        threads=run.threads,
    )
    return StudyConfig(
        group_sizes=tuple(int(g) for g in cfg["group_sizes"]),
        sigma_grid=tuple(float(s) for s in cfg.get("sigma_grid", (0.0,))),
        statistics=tuple(cfg.get("statistics", ["ss"])),
        sigma_e=float(cfg.get("sigma_e", 1.0)),
        mu=float(cfg.get("mu", 0.0)),
        ppc_replicates=int(cfg.get("ppc_replicates", 200)),
        datasets_per_point=int(cfg.get("datasets_per_point", 200)),
        alpha=float(cfg.get("alpha", 0.05)),
        scheme=cfg.get("scheme", "marginal"),
        prior=prior,
        sampler=sampler,
        seed=seeds.derive_seed(run.seed, run.command),
    )


def _study_payload(study: StudyConfig) -> dict:
    return {
        "group_sizes": list(study.group_sizes),
        "sigma_grid": list(study.sigma_grid),
        "statistics": list(study.statistics),
        "sigma_e": study.sigma_e,
        "mu": study.mu,
        "ppc_replicates": study.ppc_replicates,
        "datasets_per_point": study.datasets_per_point,
        "alpha": study.alpha,
        "scheme": study.scheme,
        "prior": _prior_payload(study.prior),
        "sampler": _sampler_payload(study.sampler),
    }


def _cmd_calibrate(run: RunConfig, base_dir: Path) -> None:
    study = _study_config(run)
    res = calibration_study(study)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for stat in res.statistics:
        for i, p in enumerate(res.p_values[stat].tolist()):
            rows.append([stat, i, p])
    _write_csv(run.out_dir / "calibration.csv", ["statistic", "dataset", "p_value"], rows)
    for stat in res.statistics:
        print(
            f"  {stat}: frac(p<{res.alpha}) = {res.fraction_below[stat]:.4f} "
            f"(se {res.standard_error[stat]:.4f}) "
            f"{'conservative/ok' if res.conservative[stat] else 'ANTICONSERVATIVE'}"
        )
    _finish(
        run,
        _echo_config(run, {"study": _study_payload(study)}),
        res,
        extra_files={"calibration": "calibration.csv"},
    )


def _cmd_power(run: RunConfig, base_dir: Path) -> None:
    study = _study_config(run)
    table = power_study(study)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, stat in enumerate(table.statistics):
        for j, sigma in enumerate(table.sigma_grid):
            rows.append(
                [
                    stat,
                    sigma,
                    float(table.rates[i, j]),
                    float(table.standard_errors[i, j]),
                    float(table.size_adjusted[i, j]),
                    table.dataset_count,
                ]
            )
    _write_csv(
        run.out_dir / "power.csv",
        ["statistic", "sigma", "rate", "se", "size_adjusted", "datasets"],
        rows,
    )
    for sigma in table.sigma_grid:
        ranking = ", ".join(f"{s}={v:.3f}" for s, v in table.ranking(sigma))
        print(f"  sigma={sigma}: {ranking}")
    payload = {
        "sigma_grid": list(table.sigma_grid),
        "statistics": list(table.statistics),
        "alpha": table.alpha,
        "rates": table.rates,
        "standard_errors": table.standard_errors,
        "size_adjusted": table.size_adjusted,
        "null_thresholds": table.null_thresholds,
        "dataset_count": table.dataset_count,
        "criterion": "size-adjusted power at empirically fixed null rejection rate",
    }
    _finish(
        run,
        _echo_config(run, {"study": _study_payload(study)}),
        payload,
        extra_files={"power": "power.csv"},
    )


def _cmd_sweep(run: RunConfig, base_dir: Path) -> None:
    dataset = _load_dataset(run.config, base_dir)
    sweep_cfg = dict(run.config.get("sweep") or {})
    grid = [float(d) for d in sweep_cfg.get("delta_grid", [0.1, 0.5, 1.0, 4.0, 16.0])]
    prior = parse_prior(run.config.get("prior") or {"kind": "dirichlet_relative"})
    if not isinstance(prior, DirichletRelative):
        raise ConfigError("sweep varies delta of a dirichlet_relative prior")
    smp = _sampler_config(run.config, run, "sweep")
    res = sensitivity_sweep(dataset, grid, smp, prior)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for point in res.points:
        for param, summ in point.summaries.items():
            rows.append(
                [point.delta, param]
                + [summ[k] for k in ("mean", "sd", "q025", "q250", "q500", "q750", "q975")]
            )
    _write_csv(
        run.out_dir / "sweep.csv",
        ["delta", "parameter", "mean", "sd", "q025", "q250", "q500", "q750", "q975"],
        rows,
    )
    flag = {True: "SENSITIVE", False: "stable", None: "n/a (single delta)"}[res.sensitive]
    print(f"  delta grid {grid}: prior sensitivity {flag}")
    resolved = _echo_config(
        run,
        {
            "data": dict(run.config["data"]),
            "prior": _prior_payload(prior),
            "sampler": _sampler_payload(smp),
            "sweep": {"delta_grid": grid},
        },
    )
    _finish(run, resolved, res, extra_files={"sweep": "sweep.csv"})


def _cmd_demo(run: RunConfig, base_dir: Path) -> None:
    demo_cfg = dict(run.config.get("demo") or {})
    variances = demo_cfg.get(
        "variances",
        {"region": 0.25, "state": 0.25, "msa": 0.25, "plan": 1.0, "residual": 4.0},
    )
    counts = NestedCounts(**demo_cfg.get("counts", {}))
    mu = float(demo_cfg.get("mu", 0.0))
    demo = generate_nested_demo(
        variances, counts, seed=seeds.derive_seed(run.seed, "demo"), mu=mu
    )
    run.out_dir.mkdir(parents=True, exist_ok=True)
    factors = list(demo.dataset.layout.factors)
    rows = [
        [obs.labels[f] for f in factors] + [obs.response]
        for obs in demo.dataset.observations
    ]
    _write_csv(run.out_dir / "demo_data.csv", factors + ["y"], rows)
    result = {
        "observations": demo.dataset.n,
        "sources": list(demo.dataset.layout.source_names()),
        "truth": dict(demo.truth),
        "counts": to_jsonable(counts),
        "mu": mu,
    }
    print(
        f"  wrote {demo.dataset.n} observations, sources "
        f"{demo.dataset.layout.source_names()}"
    )
    resolved = _echo_config(
        run, {"demo": {"variances": dict(variances), "counts": to_jsonable(counts), "mu": mu}}
    )
    _finish(run, resolved, result, extra_files={"data": "demo_data.csv"})


_HANDLERS = {
    "anova": _cmd_anova,
    "fit": _cmd_fit,
    "ppc": _cmd_ppc,
    "mix": _cmd_mix,
    "calibrate": _cmd_calibrate,
    "power": _cmd_power,
    "sweep": _cmd_sweep,
    "demo": _cmd_demo,
}


def run(run_config: RunConfig, base_dir: Path | None = None) -> int:
    """Dispatch a validated run; returns the process exit status."""
    base = base_dir if base_dir is not None else Path.cwd()
    try:
        _HANDLERS[run_config.command](run_config, base)
    except VclabError as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return 1
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vclab",
        description="Variance-components modeling laboratory",
    )
    parser.add_argument("--config", type=Path, help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker threads (speed only; never changes results)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "ppc":
            p.add_argument("--source", help="variance source under test")
            p.add_argument("--stat", choices=STATISTIC_NAMES)
            p.add_argument("--scheme", choices=SCHEMES)
            p.add_argument("--replicates", type=int)
            p.add_argument(
                "--save-replicates", action="store_true",
                help="also write replicate statistics to replicates.csv",
            )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    config: dict[str, Any] = {}
    base_dir = Path.cwd()
    if args.config is not None:
        if not args.config.exists():
            print(
                json.dumps({"error": {"type": "ConfigError",
                                      "message": f"config file {args.config} not found"}},
                           sort_keys=True),
                file=sys.stderr,
            )
            return 1
        config = json.loads(args.config.read_text(encoding="utf-8"))
        base_dir = args.config.resolve().parent
    if args.command == "ppc":
        ppc_cfg = dict(config.get("ppc") or {})
        for key in ("source", "stat", "scheme", "replicates"):
            val = getattr(args, key)
            if val is not None:
                ppc_cfg[key] = val
        if args.save_replicates:
            ppc_cfg["save_replicates"] = True
        config["ppc"] = ppc_cfg
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    try:
        run_config = RunConfig(
            command=args.command,
            config=config,
            seed=seed,
            out_dir=args.out,
            threads=args.threads,
        )
    except VclabError as exc:
        print(
            json.dumps(
                {"error": {"type": type(exc).__name__, "message": str(exc)}},
                sort_keys=True,
            ),
            file=sys.stderr,
        )
        return 1
    return run(run_config, base_dir)


if __name__ == "__main__":
    sys.exit(main())
