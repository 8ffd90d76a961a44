"""Command-line front end.

Subcommands: simulate, estimate, diagnose, effect-curve, oracle, bootstrap.
Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure, 4 I/O error.  Every run writes ``manifest.json`` to the output
directory (config hash, seed, library versions, output hashes).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__, glm
from .config import ConfigError, RunConfig, load_config
from .data import PanelError, PanelSchema, write_panel
from .effects import effect_curve, write_effect_curve
from .estimators import EstimateReport, SingularSystemError
from .inference import BootstrapError, bootstrap
from .pipeline import agreement, estimator_closure, fit_treatment, load_data, run_estimator, settings_from_config
from .simulation import OracleRequest, oracle_beta, simulate_panel
from .treatment import compute_weights, eta_diagnostic, fit_g

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_IO"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Run:
    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.outputs: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_text(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.outputs.append(name)

    def register(self, name: str) -> None:
        self.outputs.append(name)

    def manifest(self) -> None:
        files = {}
        for name in self.outputs:
            files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.digest,
            "seed": self.cfg.seed,
            "threads_independent": True,
            "versions": {
                "hrmsm": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "outputs": files,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _oracle(cfg: RunConfig, run: _Run) -> None:
    if cfg.dgp is None:
        raise ConfigError("dgp: the oracle needs a data-generating process")
    spec = cfg.msm(cfg.dgp.K)
    grid = None
    if cfg.grid is not None:
        grid = [[cfg.dgp.levels.code(a) for a in r] for r in cfg.grid]
    req = OracleRequest(
        cfg.dgp, spec.window, spec.term_names, spec.link, spec.mode, spec.vspec, grid, cfg.M_oracle, cfg.seed
    )
    rep = oracle_beta(req, threads=cfg.threads)
    run.write_json("oracle.json", rep.to_dict())
    lines = [f"oracle: M={rep.M}, seed {rep.seed}, {rep.batches} batches"]
    if rep.mode == "pooled":
        for name, b, se in zip(rep.term_names, rep.beta, rep.se):
            lines.append(f"  {name:<20} {b: .6f}  (MC se {se:.6f})")
    else:
        for t, row, se in zip(rep.times, rep.beta, rep.se):
            lines.append(f"  t={t}: " + ", ".join(f"{b:.5f}+/-{e:.5f}" for b, e in zip(row, se)))
    run.write_text("oracle.txt", "\n".join(lines) + "\n")


def cmd_simulate(cfg: RunConfig, run: _Run) -> None:
    if cfg.dgp is None or not cfg.simulate_n:
        raise ConfigError("simulate.n: simulate needs dgp and simulate.n")
    data = simulate_panel(cfg.dgp, cfg.simulate_n, cfg.seed)
    schema = write_panel(data, run.out / "panel.csv")
    run.register("panel.csv")
    run.write_text("schema.yaml", _schema_yaml(schema))
    if cfg.oracle_enabled:
        _oracle(cfg, run)


def _schema_yaml(schema: PanelSchema) -> str:
    import yaml

    d = {
        "id": schema.id,
        "time": schema.time,
        "treatment": schema.treatment,
        "outcome": schema.outcome,
        "covariates": list(schema.covariates),
        "outcome_kind": schema.outcome_kind,
    }
    if schema.trials:
        d["trials"] = schema.trials
    if schema.treatment_levels:
        d["treatment_levels"] = {str(k): float(v) for k, v in schema.treatment_levels.items()}
    return yaml.safe_dump(d, sort_keys=False)


def cmd_estimate(cfg: RunConfig, run: _Run) -> None:
    data = load_data(cfg)
    st = settings_from_config(cfg, data.K)
    st.spec.validate(data)
    reports = []
    for name in cfg.estimators:
        rep = run_estimator(name, data, st, cfg.seed)
        reports.append(rep)
        run.write_json(f"report_{name}.json", rep.to_dict())
        run.write_text(f"report_{name}.txt", rep.to_text())
    if any(n in ("iptw", "dr") for n in cfg.estimators):
        g = fit_treatment(data, st)
        wr = compute_weights(g, data, st.spec.window, st.style, st.truncation)
        wr.to_csv(run.out / "weights.csv", cfg.eta_threshold)
        run.register("weights.csv")
    if len(reports) > 1:
        run.write_json("agreement.json", agreement(reports))
    if cfg.raw.get("bootstrap", {}).get("enabled", False):
        _bootstrap(cfg, run, data, st)


def _bootstrap(cfg, run, data, st) -> None:
    name = cfg.bootstrap_estimator
    res = bootstrap(estimator_closure(name, st), data, cfg.B, cfg.alpha, cfg.seed, threads=cfg.threads)
    run.write_json(f"bootstrap_{name}.json", res.to_dict())
    run.write_text(f"bootstrap_{name}.txt", res.to_text())


def cmd_bootstrap(cfg: RunConfig, run: _Run) -> None:
    data = load_data(cfg)
    _bootstrap(cfg, run, data, settings_from_config(cfg, data.K))


def cmd_diagnose(cfg: RunConfig, run: _Run) -> None:
    data = load_data(cfg)
    rows = []
    for s in cfg.s_values:
        if not 1 <= s <= data.K + 1:
            raise ConfigError(f"diagnose.s_values: s={s} outside 1..{data.K + 1}")
    if cfg.g_spec is None:
        raise ConfigError("treatment.terms: diagnose needs a treatment model specification")
    g = fit_g(data, cfg.g_spec, registry=cfg.registry)
    for s in cfg.s_values:
        # the weights depend on s only through the window, not on the MSM terms
        wr = compute_weights(g, data, cfg.window(data.K, s), "unstabilized", cfg.truncation)
        diag = eta_diagnostic(wr, cfg.eta_threshold)
        w = wr.flat
        rows.append(
            {
                "s": s,
                "n_weights": int(w.size),
                "mean": float(w.mean()),
                "variance": float(w.var()),
                "max": float(w.max()),
                "effective_sample_size": diag.effective_sample_size,
                "ess_fraction": diag.effective_sample_size / w.size,
                "n_flagged": diag.n_flagged,
                "flagged_mass": diag.mass_fraction,
            }
        )
    run.write_json("diagnose.json", {"threshold": cfg.eta_threshold, "sweep": rows})
    lines = ["   s  n_weights        mean      variance         max        ESS  ESS/n  flagged"]
    for r in rows:
        lines.append(
            f"{r['s']:>4}  {r['n_weights']:>9}  {r['mean']:>10.4f}  {r['variance']:>12.4f}  {r['max']:>10.3f}"
            f"  {r['effective_sample_size']:>9.1f}  {r['ess_fraction']:.3f}  {r['n_flagged']:>7}"
        )
    run.write_text("diagnose.txt", "\n".join(lines) + "\n")


def cmd_oracle(cfg: RunConfig, run: _Run) -> None:
    _oracle(cfg, run)


def cmd_effect_curve(cfg: RunConfig, run: _Run, report_path: Path, exposure: str) -> None:
    rep = EstimateReport.from_json(report_path)
    if rep.mode != "pooled":
        raise ConfigError("report: effect curves need a pooled report")
    values = effect_curve(rep.term_names, rep.beta, rep.times, cfg.registry, exposure)
    write_effect_curve(run.out / "effect_curve.csv", rep.times, values)
    run.register("effect_curve.csv")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "diagnose": cmd_diagnose,
    "oracle": cmd_oracle,
    "bootstrap": cmd_bootstrap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrmsm", description="History-restricted MSM estimation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "diagnose", "effect-curve", "oracle", "bootstrap"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        if name == "effect-curve":
            p.add_argument("--report", required=True, type=Path, help="pooled estimate report (JSON)")
            p.add_argument("--exposure", default="a_mean", help="exposure atom to differentiate by")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "threads": args.threads})
        run = _Run(args.command, cfg, args.out)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", glm.GlmWarning)
            if args.command == "effect-curve":
                cmd_effect_curve(cfg, run, args.report, args.exposure)
            else:
                COMMANDS[args.command](cfg, run)
        run.manifest()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (glm.GlmError, ArithmeticError, SingularSystemError, BootstrapError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PanelError, KeyError, TypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
