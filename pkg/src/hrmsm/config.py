"""Run configuration: a versioned YAML document validated into typed settings.

Validation errors carry the dotted path of the offending key, e.g.
``msm.terms[2]: cannot parse MSM atom 'a_lag:x'``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .data import PanelError, PanelSchema, VAtom, VSpec, WindowSpec
from .design import MsmSpec, TimeFnRegistry
from .estimators.qmodel import QSpec
from .treatment import GFeatureSpec, Truncation

__all__ = ["CONFIG_VERSION", "ConfigError", "RunConfig", "load_config", "ESTIMATORS"]

CONFIG_VERSION = 1
ESTIMATORS = ("iptw", "gcomp", "dr", "naive")

_TOP_KEYS = {
    "config_version", "seed", "dgp", "simulate", "data", "window", "vspec", "msm",
    "time_functions", "treatment", "q", "estimators", "monte_carlo", "bootstrap",
    "diagnose", "oracle", "grid", "output", "threads",
}


class ConfigError(PanelError):
    """Invalid configuration; the message starts with the key path."""


def _get(d: dict, key: str, path: str, default=Ellipsis):
    if key in d:
        return d[key]
    if default is Ellipsis:
        raise ConfigError(f"{path}.{key}: required key is missing" if path else f"{key}: required key is missing")
    return default


def _section(d: dict, key: str) -> dict:
    val = d.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return val


def _wrap(path: str, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (PanelError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class RunConfig:
    """Validated run settings.  ``raw`` keeps the parsed document; ``base_dir`` resolves paths."""

    raw: dict
    base_dir: Path
    seed: int
    registry: TimeFnRegistry
    window_cfg: dict
    vspec: VSpec
    msm_mode: str
    msm_link: str
    msm_terms: tuple[str, ...]
    g_spec: GFeatureSpec | None
    numerator: GFeatureSpec | None
    weight_style: str
    truncation: Truncation | None
    q_spec: QSpec | None
    estimators: tuple[str, ...]
    M: int
    M_aug: int
    M_oracle: int
    B: int
    alpha: float
    bootstrap_estimator: str
    s_values: tuple[int, ...]
    eta_threshold: float
    dgp: Any = None
    simulate_n: int | None = None
    data_path: Path | None = None
    schema: PanelSchema | None = None
    grid: list | None = None
    oracle_enabled: bool = False
    threads: int = 1
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def window(self, K: int, s: int | None = None) -> WindowSpec:
        """Window for a dataset with last treatment index ``K`` (``s`` overrides the config)."""
        cfg = self.window_cfg
        s = int(_get(cfg, "s", "window")) if s is None else int(s)
        targets = cfg.get("targets", "all") if s == int(cfg.get("s", s)) else "all"
        if targets == "all" or targets is None:
            win = _wrap("window", WindowSpec.full, s, K)
        elif isinstance(targets, dict):
            lo = int(targets.get("from", s - 1))
            hi = int(targets.get("to", K))
            win = _wrap("window.targets", WindowSpec, s, tuple(range(lo, hi + 1)))
        else:
            win = _wrap("window.targets", WindowSpec, s, tuple(int(t) for t in targets))
        return _wrap("window", win.validate, K)

    def msm(self, K: int, s: int | None = None) -> MsmSpec:
        return _wrap(
            "msm", MsmSpec, self.msm_mode, self.msm_link, self.msm_terms, self.window(K, s), self.vspec, self.registry
        )


def _feature_spec(value, path) -> GFeatureSpec | None:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of feature terms")
    return _wrap(path, GFeatureSpec, tuple(str(v) for v in value))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a run configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return parse_config(raw, path.parent, text, overrides)


def parse_config(raw: dict, base_dir: Path, text: str = "", overrides: dict | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown top-level key")
    version = raw.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config_version: expected {CONFIG_VERSION}, got {version!r}")
    overrides = overrides or {}
    seed = overrides.get("seed")
    if seed is None:
        seed = _get(raw, "seed", "")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")

    registry = _wrap("time_functions", TimeFnRegistry.from_config, raw.get("time_functions") or {"year": {}, "season": {}})
    window_cfg = _section(raw, "window")
    _get(window_cfg, "s", "window")

    atoms = []
    for k, a in enumerate(raw.get("vspec") or []):
        if not isinstance(a, dict):
            raise ConfigError(f"vspec[{k}]: expected a mapping with name and anchor")
        atoms.append(_wrap(f"vspec[{k}]", VAtom, str(_get(a, "name", f"vspec[{k}]")), a.get("anchor", "window_start")))
    vspec = VSpec(tuple(atoms))

    msm = _section(raw, "msm")
    terms = _get(msm, "terms", "msm")
    if not isinstance(terms, list) or not terms:
        raise ConfigError("msm.terms: expected a nonempty list")
    from .design import parse_term

    for k, term in enumerate(terms):
        _wrap(f"msm.terms[{k}]", parse_term, str(term))

    treat = _section(raw, "treatment")
    g_spec = _feature_spec(treat.get("terms"), "treatment.terms")
    numerator = _feature_spec(treat.get("numerator"), "treatment.numerator")
    style = treat.get("style", "unstabilized")
    if style not in ("unstabilized", "stabilized"):
        raise ConfigError("treatment.style: must be 'unstabilized' or 'stabilized'")
    if style == "stabilized" and numerator is None:
        raise ConfigError("treatment.numerator: required for stabilized weights")
    truncation = _wrap("treatment.truncation", Truncation.parse, treat.get("truncation"))

    q_spec = None
    if raw.get("q"):
        channels = _get(_section(raw, "q"), "channels", "q")
        if not isinstance(channels, list):
            raise ConfigError("q.channels: expected a list")
        for k, ch in enumerate(channels):
            if not isinstance(ch, dict) or "name" not in ch:
                raise ConfigError(f"q.channels[{k}]: expected a mapping with a name")
        q_spec = _wrap("q.channels", QSpec.from_dict, channels)

    est = raw.get("estimators", ["iptw"])
    if isinstance(est, str):
        est = [est]
    for k, e in enumerate(est):
        if e not in ESTIMATORS:
            raise ConfigError(f"estimators[{k}]: unknown estimator {e!r}")
    if any(e in ("iptw", "dr") for e in est) and g_spec is None:
        raise ConfigError("treatment.terms: required by the selected estimators")
    if any(e in ("gcomp", "dr") for e in est) and q_spec is None:
        raise ConfigError("q: required by the selected estimators")

    mc = _section(raw, "monte_carlo")
    boot = _section(raw, "bootstrap")
    diag = _section(raw, "diagnose")
    ints = {}
    for key, sec, default, name in (
        ("M", mc, 10_000, "monte_carlo.M"),
        ("M_aug", mc, 100, "monte_carlo.M_aug"),
        ("M_oracle", mc, 100_000, "monte_carlo.M_oracle"),
        ("B", boot, 200, "bootstrap.B"),
    ):
        val = sec.get(key, default)
        if not isinstance(val, int) or val < 1:
            raise ConfigError(f"{name}: must be a positive integer")
        ints[key] = val
    alpha = boot.get("alpha", 0.05)
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise ConfigError("bootstrap.alpha: must be in (0, 1)")
    boot_est = boot.get("estimator", est[0])
    if boot_est not in ESTIMATORS:
        raise ConfigError(f"bootstrap.estimator: unknown estimator {boot_est!r}")
    s_values = tuple(int(s) for s in diag.get("s_values", [window_cfg["s"]]))
    eta = float(diag.get("eta_threshold", 50.0))

    dgp = None
    if raw.get("dgp") is not None:
        from .simulation import load_dgp

        src = raw["dgp"]
        if isinstance(src, str) and (base_dir / src).exists():
            src = base_dir / src
        dgp = _wrap("dgp", load_dgp, src)
    sim = _section(raw, "simulate")
    simulate_n = sim.get("n")
    if simulate_n is not None and (not isinstance(simulate_n, int) or simulate_n < 1):
        raise ConfigError("simulate.n: must be a positive integer")

    data_path = schema = None
    if raw.get("data"):
        data = _section(raw, "data")
        data_path = base_dir / str(_get(data, "path", "data"))
        sch = dict(_get(data, "schema", "data"))
        if "covariates" in sch:
            sch["covariates"] = tuple(sch["covariates"])
        schema = _wrap("data.schema", lambda: PanelSchema(**sch))
    threads = overrides.get("threads") or raw.get("threads", 1)
    oracle = _section(raw, "oracle")
    return RunConfig(
        raw=raw,
        base_dir=base_dir,
        seed=seed,
        registry=registry,
        window_cfg=window_cfg,
        vspec=vspec,
        msm_mode=str(msm.get("mode", "pooled")),
        msm_link=str(msm.get("link", "identity")),
        msm_terms=tuple(str(t) for t in terms),
        g_spec=g_spec,
        numerator=numerator,
        weight_style=style,
        truncation=truncation,
        q_spec=q_spec,
        estimators=tuple(est),
        M=ints["M"],
        M_aug=ints["M_aug"],
        M_oracle=ints["M_oracle"],
        B=ints["B"],
        alpha=float(alpha),
        bootstrap_estimator=boot_est,
        s_values=s_values,
        eta_threshold=eta,
        dgp=dgp,
        simulate_n=simulate_n,
        data_path=data_path,
        schema=schema,
        grid=raw.get("grid"),
        oracle_enabled=bool(oracle.get("enabled", False)),
        threads=int(threads),
        text=text,
    )
