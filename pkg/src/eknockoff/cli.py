"""
Command-line front end.

Commands
--------
select     run split -> fit -> knockoff -> statistic -> selection on a CSV
simulate   run seeded synthetic experiments from a config file
knockoffs  write a Gaussian knockoff copy of a CSV

Exit codes: 0 success, 2 user/config error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .errors import EKnockoffError, InvalidInputError, NumericalError
from .gaussian_knockoffs import CovarianceModel, estimate_covariance, fit_sampler, sample_knockoffs
from .knockoff_stats import TieRule, error_importance, lcd_importance, pvalues
from .predictors import PredictorSpec, fit_predictor
from .selection import select_fdp, select_fdr, select_kfwer
from .sim_bench import ExperimentConfig, histogram, run_experiment

logger = logging.getLogger("eknockoff")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3

REPORT_FIELDS = ("index", "label", "W", "p_value", "selected")

_SELECT_KEYS = {
    "method", "q", "alpha", "k", "n1", "response", "covariance", "predictor",
    "tie_rule", "paper_literal", "one_sided", "seed", "min_eig_floor",
}
_SWEEP_KEYS = {"n1_values", "n2_values", "histogram_bins"}
_SIM_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} | _SWEEP_KEYS | {
    "seed", "one_sided", "paper_literal"
}


class ConfigError(InvalidInputError):
    pass


class DataParseError(InvalidInputError):
    pass


# -- parsing helpers -----------------------------------------------------------


def parse_predictor(text: str) -> PredictorSpec:
    """``lasso-cv`` | ``lasso:<lambda>`` | ``krr:<ridge>``."""
    text = str(text).strip()
    kind, _, arg = text.partition(":")
    try:
        if kind == "lasso-cv" and not arg:
            return PredictorSpec(kind="lasso_cv")
        if kind == "lasso" and arg:
            return PredictorSpec(kind="lasso_fixed", lam=float(arg))
        if kind == "krr":
            return PredictorSpec(kind="kernel_ridge_sigmoid", ridge=float(arg) if arg else 1.0)
    except ValueError as exc:
        raise ConfigError(f"bad predictor argument in {text!r}") from exc
    raise ConfigError(f"unknown predictor {text!r}; use lasso-cv, lasso:<lambda> or krr:<ridge>")


def _method_name(text: str) -> str:
    name = str(text).replace("-", "_")
    if name not in ("fdr", "kfwer", "fdp", "lcd_fdr"):
        raise ConfigError(f"unknown method {text!r}")
    return name


def read_csv_table(path) -> tuple[list[str], np.ndarray]:
    """Header row plus a numeric body; errors name the offending line."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataParseError(f"cannot open {path}: {exc.strerror}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataParseError(f"{path}: line 1: empty file, header row required") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise DataParseError(f"{path}: line 1: {exc}") from exc
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise DataParseError(f"{path}: line 1: header has empty column names")
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(c.strip() == "" for c in row):
                    continue
                if len(row) != len(header):
                    raise DataParseError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
                try:
                    values = [float(c) for c in row]
                except ValueError as exc:
                    raise DataParseError(f"{path}: line {line}: {exc}") from exc
                if not all(math.isfinite(v) for v in values):
                    raise DataParseError(f"{path}: line {line}: non-finite value")
                rows.append(values)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise DataParseError(f"{path}: line {reader.line_num}: {exc}") from exc
    if not rows:
        raise DataParseError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, fieldnames, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow(["" if row[k] is None else _fmt(row[k]) for k in fieldnames])


def write_json(path_or_stream, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        Path(path_or_stream).write_text(text, encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def read_report_csv(path) -> list[dict]:
    """Inverse of the per-feature report writer."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        records = []
        for row in csv.DictReader(handle):
            records.append({
                "index": int(row["index"]),
                "label": row["label"],
                "W": float(row["W"]),
                "p_value": float(row["p_value"]) if row["p_value"] != "" else None,
                "selected": row["selected"] == "1",
            })
    return records


def load_config(path, allowed: set[str]) -> dict:
    """Flat ``key: value`` YAML mapping restricted to ``allowed`` keys."""
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of flat keys")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(map(str, unknown))}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r} must not be nested")
    return dict(data)


def _overrides(args, names) -> dict:
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _streams(seed: int, count: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# -- select --------------------------------------------------------------------


def _resolve_select_options(args) -> dict:
    opts = {
        "method": "fdr", "q": 0.2, "alpha": 0.2, "k": 2, "n1": None, "response": None,
        "covariance": "estimated", "predictor": "lasso-cv", "tie_rule": "randomized",
        "paper_literal": False, "one_sided": False, "seed": 0, "min_eig_floor": 1e-6,
    }
    opts.update(load_config(args.config, _SELECT_KEYS))
    opts.update(_overrides(args, ["method", "q", "alpha", "k", "n1", "response", "covariance",
                                  "predictor", "tie_rule", "seed"]))
    if args.paper_literal:
        opts["paper_literal"] = True
    if args.one_sided:
        opts["one_sided"] = True
    opts["method"] = _method_name(opts["method"])
    if opts["paper_literal"]:
        opts["tie_rule"] = "strict"
        opts["one_sided"] = False
    if opts["response"] is None:
        raise ConfigError("--response is required")
    return opts


def _load_known_sigma(spec: str, labels: list[str]) -> np.ndarray:
    path = spec.split(":", 1)[1]
    if not path:
        raise ConfigError("--covariance known:<path> needs a path")
    header, sigma = read_csv_table(path)
    if sigma.shape != (len(labels), len(labels)):
        raise ConfigError(f"covariance file {path} has shape {sigma.shape}, expected {(len(labels),) * 2}")
    return 0.5 * (sigma + sigma.T)


def _covariance_model(spec: str, X_fit: np.ndarray, labels, floor: float) -> CovarianceModel:
    if spec == "estimated":
        return estimate_covariance(X_fit, floor)
    if spec.startswith("known:"):
        # known covariance; location still comes from the fitting rows
        return CovarianceModel(mean=X_fit.mean(axis=0), sigma=_load_known_sigma(spec, labels))
    raise ConfigError(f"unknown covariance mode {spec!r}; use estimated or known:<path>")


def run_select(header: list[str], data: np.ndarray, opts: dict) -> dict:
    """Execute the selection pipeline and build the report payload."""
    response = opts["response"]
    if response not in header:
        raise ConfigError(f"response column {response!r} not found in header")
    col = header.index(response)
    labels = [h for i, h in enumerate(header) if i != col]
    if not labels:
        raise ConfigError("dataset has no feature columns")
    X = np.delete(data, col, axis=1)
    y = data[:, col]
    n, p = X.shape
    spec = parse_predictor(opts["predictor"])
    tie_rule = TieRule(mode=opts["tie_rule"])
    split_rng, fit_rng, knock_rng, tie_rng = _streams(int(opts["seed"]), 4)
    method = opts["method"]

    if method == "lcd_fdr":
        if not spec.is_lasso:
            raise ConfigError("lcd-fdr requires a lasso predictor")
        model = _covariance_model(opts["covariance"], X, labels, opts["min_eig_floor"])
        X_knock = sample_knockoffs(fit_sampler(model), X, knock_rng)
        W = lcd_importance(X, X_knock, y, spec, fit_rng)
        P = None
        n1, n2 = n, 0
    else:
        n1 = int(opts["n1"]) if opts["n1"] is not None else n // 2
        if not 1 <= n1 < n:
            raise ConfigError(f"n1 must lie in [1, {n - 1}], got {n1}")
        n2 = n - n1
        order = split_rng.permutation(n)
        first, second = order[:n1], order[n1:]
        f = fit_predictor(spec, X[first], y[first], fit_rng)
        model = _covariance_model(opts["covariance"], X[first], labels, opts["min_eig_floor"])
        X2_knock = sample_knockoffs(fit_sampler(model), X[second], knock_rng)
        W = error_importance(f, X[second], y[second], X2_knock, tie_rule, tie_rng)
        P = pvalues(W, two_sided=not opts["one_sided"])

    if method in ("fdr", "lcd_fdr"):
        result = select_fdr(W, opts["q"])
    elif method == "kfwer":
        result = select_kfwer(P, int(opts["k"]), opts["alpha"])
    else:
        result = select_fdp(P, opts["q"], opts["alpha"])

    chosen = set(result.selected)
    features = [
        {
            "index": j + 1,
            "label": labels[j],
            "W": float(W.values[j]),
            "p_value": None if P is None else float(P.values[j]),
            "selected": j in chosen,
        }
        for j in range(p)
    ]
    tau = result.threshold_tau
    return {
        "command": "select",
        "config": opts,
        "seed": int(opts["seed"]),
        "n": n, "p": p, "n1": n1, "n2": n2,
        "procedure": {
            "name": result.procedure,
            "threshold_tau": None if tau is None or math.isinf(tau) else tau,
            "threshold_infinite": tau is not None and math.isinf(tau),
            "stepdown_m": result.stepdown_m,
            "targets": result.targets,
        },
        "selected": [j + 1 for j in result.selected],
        "features": features,
    }


def cmd_select(args) -> int:
    started = time.perf_counter()
    opts = _resolve_select_options(args)
    header, data = read_csv_table(args.dataset)
    report = run_select(header, data, opts)
    if args.timing:
        report["timing_seconds"] = time.perf_counter() - started
    _emit(args.out, report, REPORT_FIELDS, report["features"])
    return EXIT_OK


def _emit(out, payload, fields, rows) -> None:
    if out is None:
        write_json(sys.stdout, payload)
        return
    out = Path(out)
    write_csv(out, fields, rows)
    write_json(out.with_suffix(".json"), payload)


# -- simulate ------------------------------------------------------------------

SUMMARY_FIELDS = (
    "row", "method", "n", "p", "s0_size", "split_n1", "split_n2", "covariance_mode", "predictor",
    "response", "q", "alpha", "k", "trials", "seed",
    "fdr", "fdp_max", "fd_max", "power", "exceed_prob", "kfwer",
)


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def build_sim_configs(raw: dict) -> tuple[list[tuple[ExperimentConfig, str]], int | None]:
    """Expand a flat simulate config into one ExperimentConfig per output row."""
    raw = dict(raw)
    bins = raw.pop("histogram_bins", None)
    n1_values = raw.pop("n1_values", None)
    n2_values = raw.pop("n2_values", None)
    if n1_values is not None and n2_values is not None:
        raise ConfigError("give at most one of n1_values and n2_values")
    if "seed" in raw:
        raw["master_seed"] = raw.pop("seed")
    one_sided = bool(raw.pop("one_sided", False))
    paper_literal = bool(raw.pop("paper_literal", False))
    predictor_text = str(raw.pop("predictor", "lasso-cv"))
    tie_mode = str(raw.pop("tie_rule", "randomized"))
    if paper_literal:
        tie_mode, one_sided = "strict", False
    raw["two_sided"] = bool(raw.get("two_sided", True)) and not one_sided
    methods = [_method_name(m) for m in _as_list(raw.pop("method", "fdr"))]
    raw["predictor"] = parse_predictor(predictor_text)
    raw["tie_rule"] = TieRule(mode=tie_mode)

    n, n1, n2 = raw.get("n"), raw.get("split_n1"), raw.get("split_n2")
    if n is None:
        n1 = 1000 if n1 is None else int(n1)
        n2 = 1000 if n2 is None else int(n2)
        n = n1 + n2
    elif n1 is None and n2 is None:
        n1 = int(n) // 2
        n2 = int(n) - n1
    elif n1 is None:
        n1 = int(n) - int(n2)
    elif n2 is None:
        n2 = int(n) - int(n1)
    raw.update(n=int(n), split_n1=int(n1), split_n2=int(n2))
    try:
        base = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    configs = []
    for method in methods:
        cfg = base.replace(method=method)
        if n1_values is not None:
            cfg = cfg.replace(covariance_mode="estimated") if cfg.covariance_mode != "estimated" else cfg
            configs += [(cfg.with_split(int(v), cfg.split_n2), predictor_text) for v in _as_list(n1_values)]
        elif n2_values is not None:
            configs += [(cfg.with_split(cfg.split_n1, int(v)), predictor_text) for v in _as_list(n2_values)]
        else:
            configs.append((cfg, predictor_text))
    if bins is not None and int(bins) < 1:
        raise ConfigError("histogram_bins must be >= 1")
    return configs, None if bins is None else int(bins)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    raw = load_config(args.config, _SIM_KEYS)
    if args.seed is not None:
        raw["seed"] = args.seed
    for name in ("q", "alpha", "k", "trials"):
        if getattr(args, name) is not None:
            raw[name] = getattr(args, name)
    if args.method is not None:
        raw["method"] = args.method
    if args.predictor is not None:
        raw["predictor"] = args.predictor
    if args.tie_rule is not None:
        raw["tie_rule"] = args.tie_rule
    if args.covariance is not None:
        raw["covariance_mode"] = args.covariance
    if args.paper_literal:
        raw["paper_literal"] = True
    if args.one_sided:
        raw["one_sided"] = True
    if args.histogram_bins is not None:
        raw["histogram_bins"] = args.histogram_bins
    if args.n1 is not None:
        n2 = int(raw.get("split_n2", 1000))
        raw.update(split_n1=args.n1, n=args.n1 + n2, split_n2=n2)

    configs, bins = build_sim_configs(raw)
    rows, payload_rows, hist_rows = [], [], []
    for i, (cfg, predictor_text) in enumerate(configs):
        summary = run_experiment(cfg, threads=args.threads)
        rows.append({
            "row": i, "method": cfg.method, "n": cfg.n, "p": cfg.p, "s0_size": cfg.s0_size,
            "split_n1": cfg.split_n1, "split_n2": cfg.split_n2, "covariance_mode": cfg.covariance_mode,
            "predictor": predictor_text, "response": cfg.response, "q": cfg.q, "alpha": cfg.alpha,
            "k": cfg.k, "trials": cfg.trials, "seed": cfg.master_seed,
            "fdr": summary.fdr_hat, "fdp_max": summary.fdp_max, "fd_max": summary.fd_max,
            "power": summary.power_mean, "exceed_prob": summary.exceed_prob, "kfwer": summary.kfwer_hat,
        })
        payload_rows.append({
            "config": _config_dict(cfg, predictor_text),
            "metrics": {k: rows[-1][k] for k in ("fdr", "fdp_max", "fd_max", "power", "exceed_prob", "kfwer")},
            "trials": [dataclasses.asdict(t) for t in summary.trial_outcomes],
        })
        if bins is not None and cfg.method in ("fdr", "lcd_fdr"):
            edges, counts = histogram(summary.fdps, bins)
            hist_rows += [
                {"row": i, "bin_start": float(edges[b]), "bin_end": float(edges[b + 1]), "count": int(counts[b])}
                for b in range(bins)
            ]
    payload = {"command": "simulate", "seed": configs[0][0].master_seed, "rows": payload_rows}
    if args.timing:
        payload["timing_seconds"] = time.perf_counter() - started
    _emit(args.out, payload, SUMMARY_FIELDS, rows)
    if bins is not None and args.out is not None:
        out = Path(args.out)
        write_csv(out.with_name(out.stem + "_histogram.csv"), ("row", "bin_start", "bin_end", "count"), hist_rows)
    return EXIT_OK


def _config_dict(cfg: ExperimentConfig, predictor_text: str) -> dict:
    d = dataclasses.asdict(cfg)
    d["predictor"] = predictor_text
    d["tie_rule"] = cfg.tie_rule.mode
    return d


# -- knockoffs -----------------------------------------------------------------


def cmd_knockoffs(args) -> int:
    header, data = read_csv_table(args.dataset)
    keep = None
    if args.response is not None:
        if args.response not in header:
            raise ConfigError(f"response column {args.response!r} not found in header")
        keep = header.index(args.response)
    feat_idx = [i for i in range(len(header)) if i != keep]
    if not feat_idx:
        raise ConfigError("dataset has no feature columns")
    labels = [header[i] for i in feat_idx]
    X = data[:, feat_idx]
    seed = 0 if args.seed is None else args.seed
    spec = args.covariance or "estimated"
    model = _covariance_model(spec, X, labels, 1e-6)
    sampler = fit_sampler(model)
    (knock_rng,) = _streams(seed, 1)
    X_knock = sample_knockoffs(sampler, X, knock_rng)

    out_header = [h if i == keep else f"{h}_knockoff" for i, h in enumerate(header)]
    out = data.copy()
    out[:, feat_idx] = X_knock
    rows = [dict(zip(out_header, r)) for r in out.tolist()]
    meta = {"command": "knockoffs", "seed": seed, "covariance": spec, "s": sampler.s,
            "n": int(X.shape[0]), "p": int(X.shape[1]), "columns": out_header}
    if args.out is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(out_header)
        for r in rows:
            writer.writerow([_fmt(r[h]) for h in out_header])
    else:
        _emit(args.out, meta, out_header, rows)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="master random seed (default 0)")
    parser.add_argument("--config", help="flat YAML config file; flags override its values")
    parser.add_argument("--out", help="output CSV path; a .json report is written alongside")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    parser.add_argument("--method", choices=["fdr", "kfwer", "fdp", "lcd-fdr"])
    parser.add_argument("--q", type=float, help="target FDR / FDP level")
    parser.add_argument("--alpha", type=float, help="k-FWER or FDP exceedance level")
    parser.add_argument("--k", type=int, help="k of k-FWER")
    parser.add_argument("--n1", type=int, help="size of the fitting split")
    parser.add_argument("--response", help="name of the response column")
    parser.add_argument("--covariance", help="estimated | known:<path> (simulate: estimated | known)")
    parser.add_argument("--predictor", help="lasso-cv | lasso:<lambda> | krr:<ridge>")
    parser.add_argument("--tie-rule", dest="tie_rule", choices=["randomized", "strict"])
    parser.add_argument("--paper-literal", dest="paper_literal", action="store_true",
                        help="strict ties and two-sided p-values")
    parser.add_argument("--one-sided", dest="one_sided", action="store_true",
                        help="one-sided binomial p-values")
    parser.add_argument("--timing", action="store_true", help="record wall time in the JSON report")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eknockoff", description="Error-based knockoff feature selection")
    sub = parser.add_subparsers(dest="command", required=True)
    p_sel = sub.add_parser("select", help="select features from a CSV dataset")
    p_sel.add_argument("dataset")
    _add_shared(p_sel)
    p_sim = sub.add_parser("simulate", help="run synthetic benchmark experiments")
    _add_shared(p_sim)
    p_sim.add_argument("--trials", type=int)
    p_sim.add_argument("--histogram-bins", dest="histogram_bins", type=int)
    p_ko = sub.add_parser("knockoffs", help="write a knockoff copy of a CSV dataset")
    p_ko.add_argument("dataset")
    _add_shared(p_ko)
    return parser


_COMMANDS = {"select": cmd_select, "simulate": cmd_simulate, "knockoffs": cmd_knockoffs}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USER
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EKnockoffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
