"""Command-line interface: ``geemort {fit,compare,forecast,simulate}``.

Exit codes: 0 success, 1 data or model error (one ``E_CODE: message`` line
on stderr), 2 usage error. Settings resolve as flags > ``--config`` file >
built-in defaults; every run writes ``run_manifest.json`` holding the
resolved settings and input hashes, and ``--config run_manifest.json``
replays it.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .dataio import load_csv, load_mx, write_records_csv
from .design import ModelSpec
from .errors import GeeMortError, InputIOError
from .forecast import COV_SOURCES, INTERVAL_MODES, write_kt_csv
from .gee import KINDS, fit
from .pipeline import CORSTR_LABELS, forecast, prepare
from .selection import ComparisonTable, compare, failed_row, qic

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class RunConfig:
    subcommand: str = "fit"
    input: str | None = None
    layout: str = "long"
    columns: dict = field(default_factory=dict)
    country: str | None = None
    sexes: list = field(default_factory=lambda: ["Female", "Male"])
    exposure_file: str | None = None
    population_mode: str = "single"
    corstr: list = field(default_factory=lambda: ["exchangeable"])
    weighted: bool = False
    ages: list = field(default_factory=lambda: [20, 80])
    train: list = field(default_factory=lambda: [1991, 2010])
    horizon: int = 9
    interval: str = "prediction"
    interval_cov: str = "max"
    drift_uncertainty: bool = False
    cohort_center: str = "auto"
    cohort: bool = True
    tol: float = 1e-8
    max_iter: int = 50
    corr_ddof: str = "params"
    jobs: int = 1
    out: str = "out"
    seed: int | None = None
    # simulate only
    rho: float = 0.5
    sim_corstr: str = "exchangeable"
    countries: list = field(default_factory=lambda: ["AAA", "BBB"])
    genders: list = field(default_factory=lambda: ["m"])
    years: list = field(default_factory=lambda: [1991, 2019])
    noise_sd: float = 0.05

    def model_spec(self, correlation: str) -> ModelSpec:
        center = None if str(self.cohort_center) == "auto" else float(self.cohort_center)
        return ModelSpec(
            population_mode=self.population_mode,
            correlation=correlation,
            weighted=self.weighted,
            age_range=tuple(self.ages),
            train_years=tuple(self.train),
            cohort_centering=center,
            cohort=self.cohort,
        )


class UsageError(Exception):
    pass


def _range(text: str) -> list:
    try:
        lo, hi = (int(v) for v in str(text).split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"range {text!r} is not ordered")
    return [lo, hi]


def _column(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected FIELD=NAME, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _center(text: str) -> str:
    if text != "auto":
        try:
            float(text)
        except ValueError:
            raise argparse.ArgumentTypeError("--cohort-center takes a number or 'auto'") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geemort", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geemort {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file or a previous run_manifest.json")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--input")
    model.add_argument("--layout", choices=["long", "mx"])
    model.add_argument("--column", dest="columns", action="append", type=_column, metavar="FIELD=NAME",
                       help="map a logical field to a CSV column (long layout)")
    model.add_argument("--country", help="country label for --layout mx (default: file-name prefix)")
    model.add_argument("--sexes", nargs="+", choices=["Female", "Male", "Total"])
    model.add_argument("--exposure-file", help="exposure table in the mx layout (for --weighted)")
    model.add_argument("--population-mode", choices=["single", "multi"])
    model.add_argument("--corstr", action="append", choices=list(KINDS))
    model.add_argument("--weighted", action="store_true", default=None)
    model.add_argument("--ages", type=_range, metavar="A:B")
    model.add_argument("--train", type=_range, metavar="Y0:Y1")
    model.add_argument("--cohort-center", type=_center, metavar="C|auto")
    model.add_argument("--no-cohort", dest="cohort", action="store_false", default=None)
    model.add_argument("--tol", type=float)
    model.add_argument("--max-iter", type=int)
    model.add_argument("--corr-ddof", choices=["params", "none"])
    model.add_argument("--jobs", type=int)

    sub.add_parser("fit", parents=[common, model], help="fit one model, write coefficients")
    sub.add_parser("compare", parents=[common, model], help="QIC table over correlation structures")
    p = sub.add_parser("forecast", parents=[common, model], help="forecast with k_t random walk")
    p.add_argument("--horizon", type=int)
    p.add_argument("--interval", choices=list(INTERVAL_MODES))
    p.add_argument("--interval-cov", choices=list(COV_SOURCES))
    p.add_argument("--drift-uncertainty", action="store_true", default=None)
    s = sub.add_parser("simulate", parents=[common], help="write a synthetic panel")
    s.add_argument("--rho", type=float)
    s.add_argument("--sim-corstr", choices=["independence", "exchangeable", "ar1"])
    s.add_argument("--countries", nargs="+")
    s.add_argument("--genders", nargs="+")
    s.add_argument("--ages", type=_range, metavar="A:B")
    s.add_argument("--years", type=_range, metavar="Y0:Y1")
    s.add_argument("--noise-sd", type=float)
    return parser


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputIOError(str(p))
    if p.suffix == ".json":
        data = json.loads(p.read_text(encoding="utf-8"))
        data = data.get("config", data)
    else:
        with p.open("rb") as handle:
            data = tomllib.load(handle)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(_load_config_file(args.config))
    for k, v in vars(args).items():
        if k in values and v is not None:
            values[k] = dict(v) if k == "columns" else v
    values["subcommand"] = args.subcommand
    cfg = RunConfig(**values)
    if cfg.subcommand == "forecast" and int(cfg.horizon) < 1:
        raise UsageError("--horizon must be >= 1")
    if cfg.subcommand == "simulate" and cfg.seed is None:
        raise UsageError("simulate requires --seed")
    if cfg.subcommand != "simulate" and not cfg.input:
        raise UsageError("--input is required")
    deduped = list(dict.fromkeys(cfg.corstr))
    if len(deduped) < len(cfg.corstr):
        print(f"warning: duplicate --corstr values dropped: {cfg.corstr} -> {deduped}", file=sys.stderr)
    cfg.corstr = deduped
    if cfg.subcommand == "compare" and len(cfg.corstr) < 2:
        raise UsageError("compare needs at least two distinct --corstr values")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(cfg: RunConfig, out: Path, outputs: list[str]) -> None:
    inputs = {}
    for name in ("input", "exposure_file"):
        path = getattr(cfg, name)
        if path:
            inputs[name] = {"path": path, "sha256": _sha256(path)}
    manifest = {
        "tool": "geemort",
        "version": __version__,
        "config": asdict(cfg),
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _load_records(cfg: RunConfig):
    if cfg.layout == "mx":
        return load_mx(
            cfg.input, country=cfg.country, sexes=cfg.sexes, exposure_path=cfg.exposure_file,
            ages=tuple(cfg.ages), years=tuple(cfg.train),
        )
    return load_csv(cfg.input, cfg.columns or None)


def _fit_options(cfg: RunConfig) -> dict:
    return {"tol": cfg.tol, "max_iter": cfg.max_iter, "corr_ddof": cfg.corr_ddof}


def _rho_json(f):
    rho = f.rho
    return rho.tolist() if hasattr(rho, "tolist") else rho


def _write_fit(f, out: Path, prepared) -> list[str]:
    with (out / "coefficients.csv").open("w", encoding="utf-8", newline="") as handle:
        handle.write("term,estimate,se_naive,se_robust\n")
        for name, b, sn, sr in zip(f.column_names, f.beta, f.se_naive, f.se_robust):
            handle.write(f"{name},{_fmt(b)},{_fmt(sn)},{_fmt(sr)}\n")
    stats = {
        "corstr": f.kind,
        "phi": f.phi,
        "rho": _rho_json(f),
        "iterations": f.iterations,
        "converged": f.converged,
        "n_obs": f.n_obs,
        "n_params": f.n_params,
        "n_clusters": f.n_clusters,
        "quasi_lik": f.quasi_lik,
        "cohort_center": prepared.design.cohort_center,
    }
    (out / "fitstats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ["coefficients.csv", "fitstats.json"]


def cmd_fit(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.corstr[0]
    prepared = prepare(_load_records(cfg), cfg.model_spec(kind))
    print(f"design: {prepared.design.n_obs} rows x {prepared.design.n_params} columns, "
          f"{prepared.panel.n_clusters} clusters")
    f = fit(prepared.design, kind, strict=True, **_fit_options(cfg))
    outputs = _write_fit(f, out, prepared)
    _write_manifest(cfg, out, outputs)
    print(f"{CORSTR_LABELS[kind]}: phi={f.phi:.6g} iterations={f.iterations} converged={str(f.converged).lower()}")
    return 0


def _fit_many(cfg: RunConfig, prepared):
    def one(kind):
        try:
            return kind, fit(prepared.design, kind, **_fit_options(cfg)), None
        except GeeMortError as exc:
            return kind, None, exc

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(one, cfg.corstr))
    return [one(k) for k in cfg.corstr]


def _comparison(cfg: RunConfig, prepared):
    results = _fit_many(cfg, prepared)
    design = prepared.design
    ok = [(CORSTR_LABELS[k], f) for k, f, e in results if f is not None]
    table = compare(ok, design)
    for k, f, e in results:
        if e is not None:
            table.rows.append(failed_row(CORSTR_LABELS[k], design.n_params, e.code))
    return table, {k: f for k, f, _ in results if f is not None}


def cmd_compare(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(_load_records(cfg), cfg.model_spec(cfg.corstr[0]))
    print(f"design: {prepared.design.n_obs} rows x {prepared.design.n_params} columns, "
          f"{prepared.panel.n_clusters} clusters")
    table, _ = _comparison(cfg, prepared)
    (out / "criteria.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "criteria.txt").write_text(table.to_text(), encoding="utf-8")
    _write_manifest(cfg, out, ["criteria.csv", "criteria.txt"])
    sys.stdout.write(table.to_text())
    print(f"selected: {table.selected}")
    return 0 if table.selected else 1


def cmd_forecast(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(_load_records(cfg), cfg.model_spec(cfg.corstr[0]))
    if len(cfg.corstr) > 1:
        table, fits = _comparison(cfg, prepared)
        if table.selected is None:
            raise GeeMortError("no correlation structure converged")
        label = table.selected
        kind = next(k for k, v in CORSTR_LABELS.items() if v == label)
        chosen = fits[kind]
        print(f"selected by QIC: {label}")
    else:
        kind = cfg.corstr[0]
        chosen = fit(prepared.design, kind, strict=True, **_fit_options(cfg))
    fc = forecast(
        chosen, prepared, int(cfg.horizon), mode=cfg.interval, cov=cfg.interval_cov,
        drift_uncertainty=cfg.drift_uncertainty,
    )
    fc.table.write_csv(out / "forecast.csv")
    write_kt_csv(prepared.kt, fc.kt_forecast, out / "kt.csv")
    outputs = ["forecast.csv", "kt.csv"] + _write_fit(chosen, out, prepared)
    _write_manifest(cfg, out, outputs)
    pops = sorted(set(zip(fc.design.country, fc.design.gender)))
    print(f"forecast: {len(fc.table)} rows, {len(pops)} population(s), years "
          f"{int(fc.kt_forecast.years[0])}-{int(fc.kt_forecast.years[-1])}, "
          f"drift={fc.rw.drift:.6g} sigma={fc.rw.sigma:.6g}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    from .simulate import simulate_panel

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = simulate_panel(
        seed=int(cfg.seed),
        countries=tuple(cfg.countries),
        genders=tuple(cfg.genders),
        ages=range(cfg.ages[0], cfg.ages[1] + 1),
        years=range(cfg.years[0], cfg.years[1] + 1),
        rho=cfg.rho,
        kind=cfg.sim_corstr,
        noise_sd=cfg.noise_sd,
    )
    write_records_csv(sim.records, out / "simulated.csv")
    _write_manifest(cfg, out, ["simulated.csv"])
    print(f"simulated: {len(sim.records)} rows -> {out / 'simulated.csv'}")
    return 0


COMMANDS = {"fit": cmd_fit, "compare": cmd_compare, "forecast": cmd_forecast, "simulate": cmd_simulate}


def _one_line_warning(message, category, filename, lineno, line=None):
    return f"warning: {message}\n"


def main(argv=None) -> int:
    warnings.formatwarning = _one_line_warning
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        parser.error(str(exc))
    except GeeMortError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except GeeMortError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"E_VALUE: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
