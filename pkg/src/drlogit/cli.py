"""Command-line interface: fit estimators on CSV data, run simulation
studies, and compare instrument choices.

Configuration comes from a JSON file; command-line flags override config
fields, and the environment variable DRLOGIT_SEED is the seed of last
resort.  All outputs are reproducible byte for byte for a fixed
(config, seed): floats are serialized with repr and no timestamps are
written.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .estimators import assemble_influence, closed_form_binary, solve_dr, solve_dr_y1
from .model import Basis, BasisTerm, Dataset, EstimationError, InstrumentSpec
from .nuisance import fit_covariate, fit_covariate_y1, fit_outcome_mle
from .simulate import (
    KNOWN_ESTIMATORS,
    MonteCarloSummary,
    run_scenario,
    scenario_catalog,
    summary_rows,
    with_size,
    write_summary_csv,
    write_summary_json,
)

__all__ = ["main", "RunConfig", "read_dataset_csv", "basis_from_terms"]

_PHI_CHOICES = ("identity", "simple", "optimal")


class CliError(Exception):
    """User-facing configuration or input error (exit code 2)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    data: Path | None = None
    basis_terms: list[dict] = field(default_factory=list)
    z_families: list[str] = field(default_factory=list)
    estimators: list[str] = field(default_factory=list)
    scenarios: list[str] = field(default_factory=list)
    level: float = 0.95
    seed: int | None = None
    out_dir: Path = Path(".")
    workers: int = 1
    n: int | None = None
    replications: int | None = None
    phis: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise CliError(f"confidence level must be inside (0, 1), got {self.level}")
        if self.data is not None and not self.data.exists():
            raise CliError(f"data file does not exist: {self.data}")
        for name in self.estimators:
            if name not in KNOWN_ESTIMATORS:
                raise CliError(f"unknown estimator {name!r}; known: {KNOWN_ESTIMATORS}")
        for phi in self.phis:
            if phi not in _PHI_CHOICES:
                raise CliError(f"unknown phi variant {phi!r}; choices: {_PHI_CHOICES}")
        if self.workers < 1:
            raise CliError("workers must be at least 1")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file does not exist: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {p} is not valid JSON: {exc}") from exc


def _resolve_seed(flag_seed, cfg: dict):
    if flag_seed is not None:
        return int(flag_seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("DRLOGIT_SEED")
    if env is not None:
        return int(env)
    return None


def basis_from_terms(terms: list[dict]) -> Basis:
    """Build a Basis from config entries like {"kind": "linear", "j": 0}."""
    if not terms:
        raise CliError("config needs a nonempty 'basis' list of terms")
    built = []
    for t in terms:
        kind = t.get("kind")
        if kind not in ("intercept", "linear", "square", "interaction"):
            raise CliError(f"unknown basis term kind {kind!r} in config")
        built.append(BasisTerm(kind, int(t.get("j", 0)), int(t.get("k", 0))))
    try:
        return Basis(tuple(built))
    except ValueError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def read_dataset_csv(path) -> Dataset:
    """Read a dataset with header y,z1..zp,x1..xq (column order free,
    numbering dense from 1).  Raises CliError naming the offending
    column, row or cell on malformed input."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty file, expected a header row") from None
        rows = list(reader)
    cols = {name: i for i, name in enumerate(header)}
    if len(cols) != len(header):
        raise CliError(f"{path}: duplicate column names in header")
    if "y" not in cols:
        raise CliError(f"{path}: missing required column 'y'")

    def numbered(prefix: str) -> list[str]:
        found = {}
        for c in cols:
            if c.startswith(prefix) and c[len(prefix):].isdigit():
                found[int(c[len(prefix):])] = c
        count = len(found)
        if count == 0 or sorted(found) != list(range(1, count + 1)):
            raise CliError(f"{path}: expected columns {prefix}1..{prefix}{max(count, 1)}, "
                           f"found {sorted(found.values()) or 'none'}")
        return [found[j] for j in range(1, count + 1)]

    z_names = numbered("z")
    x_names = numbered("x")
    p, q = len(z_names), len(x_names)
    extra = set(cols) - {"y", *z_names, *x_names}
    if extra:
        raise CliError(f"{path}: unexpected columns {sorted(extra)}")

    n = len(rows)
    if n == 0:
        raise CliError(f"{path}: no data rows")
    y = np.empty(n, dtype=np.int64)
    z = np.empty((n, p))
    x = np.empty((n, q))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise CliError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        try:
            yv = float(row[cols["y"]])
            for j, name in enumerate(z_names):
                z[i, j] = float(row[cols[name]])
            for j, name in enumerate(x_names):
                x[i, j] = float(row[cols[name]])
        except ValueError as exc:
            raise CliError(f"{path}: non-numeric cell in row {i + 2}: {exc}") from exc
        if yv not in (0.0, 1.0):
            raise CliError(f"{path}: row {i + 2} has y={row[cols['y']]!r}, must be 0 or 1")
        y[i] = int(yv)
    return Dataset(y, z, x)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _fit_one(name: str, data: Dataset, basis: Basis, z_families, level: float,
             fits: dict) -> dict:
    if "outcome" not in fits:
        fits["outcome"] = fit_outcome_mle(data, basis)
    outcome = fits["outcome"]
    if name == "mle":
        cov = outcome.s1.T @ outcome.s1 / data.n**2
        se = np.sqrt(np.diag(cov)[:data.p])
        beta = outcome.params.beta
        zq = NormalDist().inv_cdf(0.5 + level / 2.0)
        ci = np.column_stack([beta - zq * se, beta + zq * se])
        return {"beta": beta.tolist(), "se": se.tolist(), "ci": ci.tolist(),
                "diagnostics": {"iterations": outcome.iterations}}
    if name == "closed_form":
        if "covar" not in fits:
            fits["covar"] = fit_covariate(data, basis, z_families)
        beta = closed_form_binary(data, outcome, fits["covar"])
        pieces = assemble_influence(data, np.array([beta]), outcome, fits["covar"],
                                    InstrumentSpec("simple"), basis)
        se = float(math.sqrt(pieces.covariance[0, 0]))
        zq = NormalDist().inv_cdf(0.5 + level / 2.0)
        return {"beta": [beta], "se": [se], "ci": [[beta - zq * se, beta + zq * se]],
                "diagnostics": {}}
    if name.startswith("dr_y1_"):
        if "covar1" not in fits:
            fits["covar1"] = fit_covariate_y1(data, basis, z_families)
        rep = solve_dr_y1(data, outcome, fits["covar1"],
                          InstrumentSpec(name.removeprefix("dr_y1_")), basis, level=level)
    else:
        if "covar" not in fits:
            fits["covar"] = fit_covariate(data, basis, z_families)
        rep = solve_dr(data, outcome, fits["covar"],
                       InstrumentSpec(name.removeprefix("dr_")), basis, level=level)
    return {
        "beta": rep.beta_hat.tolist(),
        "se": rep.std_errors.tolist(),
        "ci": rep.wald_ci.tolist(),
        "diagnostics": {
            "iterations": rep.diagnostics.iterations,
            "final_eq_norm": rep.diagnostics.final_eq_norm,
            "jacobian_condition": rep.diagnostics.jacobian_condition,
            "step_halvings": rep.diagnostics.step_halvings,
        },
    }


def cmd_fit(rc: RunConfig) -> int:
    if rc.data is None:
        raise CliError("fit needs --data FILE")
    if not rc.basis_terms:
        raise CliError("fit needs a config with a 'basis' term list")
    data = read_dataset_csv(rc.data)
    basis = basis_from_terms(rc.basis_terms)
    z_families = rc.z_families or ["gaussian"] * data.p
    if len(z_families) != data.p:
        raise CliError(f"config lists {len(z_families)} z_families but data has p={data.p}")
    estimators = rc.estimators or ["mle", "dr_simple"]

    results = {}
    fits: dict = {}
    for name in estimators:
        try:
            results[name] = _fit_one(name, data, basis, z_families, rc.level, fits)
        except (EstimationError, ValueError) as exc:
            raise CliError(f"estimator {name!r} failed: {exc}") from exc

    rc.out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"n": data.n, "p": data.p, "q": data.q, "level": rc.level,
               "estimators": results}
    out_path = rc.out_dir / "estimates.json"
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"{'estimator':<16}{'beta':>12}{'se':>12}{'ci_low':>12}{'ci_high':>12}")
    for name, res in results.items():
        for a in range(len(res["beta"])):
            lab = name if len(res["beta"]) == 1 else f"{name}[{a}]"
            print(f"{lab:<16}{res['beta'][a]:>12.6g}{res['se'][a]:>12.6g}"
                  f"{res['ci'][a][0]:>12.6g}{res['ci'][a][1]:>12.6g}")
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# simulate / compare
# ---------------------------------------------------------------------------


def _select_scenarios(requested: list[str]):
    catalog = scenario_catalog()
    if not requested:
        return list(catalog)
    by_name = {sc.name: sc for sc in catalog}
    families: dict[str, list] = {}
    for sc in catalog:
        families.setdefault(sc.family, []).append(sc)
    out = []
    for name in requested:
        if name in by_name:
            out.append(by_name[name])
        elif name in families:
            out.extend(families[name])
        else:
            valid = sorted(by_name) + sorted(families)
            raise CliError(f"unknown scenario {name!r}; valid names: {', '.join(valid)}")
    return out


def _apply_overrides(sc, rc: RunConfig, index: int):
    # a user-supplied seed replaces the catalog seeds, offset per scenario
    seed = rc.seed + 1009 * index if rc.seed is not None else None
    return with_size(sc, n=rc.n, replications=rc.replications, seed=seed)


def markdown_table(summaries: list[MonteCarloSummary]) -> str:
    head = ("| scenario | estimator | bias | sd | mean_se | rmse | coverage | mcse | n_fail |\n"
            "|---|---|---|---|---|---|---|---|---|\n")
    body = []
    for s in summaries:
        for row in summary_rows(s):
            body.append("| " + " | ".join([
                row["scenario"], row["estimator"],
                f"{row['bias']:.6g}", f"{row['sd']:.6g}", f"{row['mean_se']:.6g}",
                f"{row['rmse']:.6g}", f"{row['coverage']:.6g}", f"{row['mcse']:.6g}",
                str(row["n_fail"]),
            ]) + " |")
    return head + "\n".join(body) + "\n"


def cmd_simulate(rc: RunConfig) -> int:
    scenarios = _select_scenarios(rc.scenarios)
    estimators = rc.estimators or list(
        ("mle", "dr_identity", "dr_simple", "dr_optimal"))
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for i, sc in enumerate(scenarios):
        sc = _apply_overrides(sc, rc, i)
        menu = estimators
        if "closed_form" in menu and sc.z_families[0] != "bernoulli":
            menu = [e for e in menu if e != "closed_form"]
        summary = run_scenario(sc, menu, level=rc.level, workers=rc.workers)
        summaries.append(summary)
        write_summary_json([summary], rc.out_dir / f"{sc.name}_summary.json")
        write_summary_csv([summary], rc.out_dir / f"{sc.name}_summary.csv")
        print(f"finished {sc.name} (n={sc.n}, R={sc.replications})")
    (rc.out_dir / "summary.md").write_text(markdown_table(summaries))
    write_summary_json(summaries, rc.out_dir / "summary.json")
    print(f"wrote {rc.out_dir / 'summary.md'}")
    return 0


def cmd_compare(rc: RunConfig) -> int:
    if len(rc.phis) < 2:
        raise CliError("compare needs at least 2 phi variants (config 'phis' or --phi, repeated)")
    if len(rc.scenarios) != 1:
        raise CliError("compare needs exactly one scenario name")
    scenarios = _select_scenarios(rc.scenarios)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, sc in enumerate(scenarios):
        sc = _apply_overrides(sc, rc, i)
        menu = [f"dr_{phi}" for phi in rc.phis]
        summary = run_scenario(sc, menu, level=rc.level, workers=rc.workers)
        variances = {e.estimator: e.sd**2 for e in summary.estimators}
        base = variances[menu[0]]
        for name in menu:
            rows.append({
                "scenario": sc.name,
                "estimator": name,
                "variance": variances[name],
                "ratio_to_first": variances[name] / base if base > 0 else float("nan"),
            })
    payload = {"comparison": rows}
    with open(rc.out_dir / "compare.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'scenario':<16}{'estimator':<16}{'variance':>14}{'ratio':>10}")
    for row in rows:
        print(f"{row['scenario']:<16}{row['estimator']:<16}"
              f"{row['variance']:>14.6g}{row['ratio_to_first']:>10.6g}")
    print(f"wrote {rc.out_dir / 'compare.json'}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drlogit",
        description="Doubly robust estimation for logistic partially linear models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit estimators on a CSV dataset")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--phi", choices=_PHI_CHOICES)
    p_fit.add_argument("--level", type=float)
    p_fit.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--scenarios", default=None,
                       help="comma-separated scenario or family names (e.g. S1,S2)")
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)

    p_cmp = sub.add_parser("compare", help="compare instrument choices on one scenario")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--workers", type=int, default=None)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--out", default=None)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = _load_config(getattr(args, "config", None))
    rc = RunConfig(command=args.command)
    rc.data = Path(args.data) if getattr(args, "data", None) else (
        Path(cfg["data"]) if "data" in cfg else None)
    rc.basis_terms = cfg.get("basis", [])
    rc.z_families = list(cfg.get("z_families", []))
    rc.estimators = list(cfg.get("estimators", []))
    rc.level = float(args.level) if getattr(args, "level", None) else float(cfg.get("level", 0.95))
    rc.seed = _resolve_seed(getattr(args, "seed", None), cfg)
    out_flag = getattr(args, "out", None)
    rc.out_dir = Path(out_flag) if out_flag else Path(cfg.get("out", "."))
    rc.workers = int(getattr(args, "workers", None) or cfg.get("workers", 1))
    rc.n = int(cfg["n"]) if "n" in cfg else None
    rc.replications = int(cfg["replications"]) if "replications" in cfg else None
    scen_flag = getattr(args, "scenarios", None)
    if scen_flag:
        rc.scenarios = [s.strip() for s in scen_flag.split(",") if s.strip()]
    else:
        rc.scenarios = list(cfg.get("scenarios", []))
    phi_flag = getattr(args, "phi", None)
    rc.phis = [phi_flag] if phi_flag else list(cfg.get("phis", []))
    if args.command == "fit" and phi_flag:
        rc.estimators = [e for e in rc.estimators if not e.startswith("dr_")]
        rc.estimators.append(f"dr_{phi_flag}")
    rc.validate()
    return rc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = _config_from_args(args)
        if rc.command == "fit":
            return cmd_fit(rc)
        if rc.command == "simulate":
            return cmd_simulate(rc)
        return cmd_compare(rc)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
