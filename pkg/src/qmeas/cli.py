"""Command-line front end: ``qmeas verify``, ``qmeas sweep``, ``qmeas selftest``.

Exit codes: 0 when every check matches its expectation, 2 on a certified
condition or tolerance failure, 1 on an internal error, 64 on a malformed
config or usage.  ``QMEAS_THREADS`` caps how many parameter points run
concurrently; rows and reports are always written in config order.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import config as cfgmod
from . import pipeline
from .errors import InvalidModelError, ParameterRangeError
from .serialize import REPORT_SCHEMA, csv_text, dumps, report_to_dict

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONDITION = 2
EXIT_USAGE = 64

SWEEP_COLUMNS = (
    "model",
    "param_name",
    "param_value",
    "state_pair",
    "lhs_nats",
    "d_pre_nats",
    "d_post_avg_nats",
    "residual_nats",
    "shannon_deficit_nats",
    "ban_ok",
    "cert_residual",
)
OUTCOME_COLUMNS = ("model", "param_name", "param_value", "state_pair", "y_label", "p_y_rho", "d_post_nats")


class UsageError(Exception):
    pass


def thread_count() -> int:
    raw = os.environ.get("QMEAS_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"QMEAS_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"QMEAS_THREADS must be a positive integer, got {raw!r}")
    return n


def run_points(cfg: cfgmod.RunConfig) -> list[pipeline.PointResult]:
    """Evaluate every sweep point; results come back in config order."""
    points = cfg.points()
    workers = min(thread_count(), len(points))

    def one(p):
        return pipeline.evaluate_point(cfg, *p)

    if workers <= 1:
        return [one(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, points))


def _fmt_param(v) -> str:
    if v == "":
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def summary_rows(cfg, results):
    for pt in results:
        for pr in pt.pairs:
            rep, bal = pr.report, pr.balance
            yield (
                cfg.model,
                pt.param_name,
                _fmt_param(pt.param_value),
                pr.state_pair,
                rep.lhs,
                rep.d_pre,
                rep.d_post_avg,
                rep.residual,
                float("nan") if bal is None else bal.deficit,
                "" if pt.certificate.ban is None else bool(pt.certificate.ban),
                pt.certificate.residual,
            )


def outcome_rows(cfg, results):
    for pt in results:
        for pr in pt.pairs:
            for label, p, d in pr.report.per_outcome:
                yield (cfg.model, pt.param_name, _fmt_param(pt.param_value), pr.state_pair, label, p, d)


def report_document(cfg: cfgmod.RunConfig, results, failures: list[str]) -> dict:
    points = []
    for pt in results:
        pairs = []
        for pr in pt.pairs:
            body = report_to_dict(pr.report, pr.balance, meta={"state_pair": pr.state_pair})
            body["checks"] = pipeline.observed_checks(pt, pr)
            if pr.shannon_note:
                body["shannon_note"] = pr.shannon_note
            pairs.append(body)
        points.append({
            "param_name": pt.param_name,
            "param_value": pt.param_value,
            "params": pt.params,
            "tolerances": pt.tolerances,
            "certificate": pt.certificate.document,
            "notes": pt.notes,
            "pairs": pairs,
        })
    return {
        "schema": REPORT_SCHEMA,
        "model": cfg.model,
        "expect": cfg.expect,
        "states": [{"name": s.name, "kind": s.kind, **_state_fields(s)} for s in cfg.states],
        "points": points,
        "failures": failures,
        "status": "pass" if not failures else "fail",
    }


def _state_fields(s):
    out = {}
    for k, v in s.fields.items():
        out[k] = [v.real, v.imag] if isinstance(v, complex) else v
    return out


def _base_path(path: str) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".csv"):
        p = p.with_suffix("")
    return p


def _write(path: Path, text: str) -> None:
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def collect_failures(cfg, results) -> list[str]:
    out = []
    for pt in results:
        for pr in pt.pairs:
            out.extend(pipeline.failures(pt, pr, cfg.expect))
    return out


def cmd_verify(cfg: cfgmod.RunConfig, out=None) -> int:
    out = out or sys.stdout
    results = run_points(cfg)
    fails = collect_failures(cfg, results)
    if cfg.output.path:
        base = _base_path(cfg.output.path)
        if cfg.output.format == "json":
            _write(base.with_suffix(".json"), dumps(report_document(cfg, results, fails)))
        else:
            _write(base.with_suffix(".csv"), csv_text(SWEEP_COLUMNS, summary_rows(cfg, results)))
        _write(base.parent / (base.name + ".outcomes.csv"), csv_text(OUTCOME_COLUMNS, outcome_rows(cfg, results)))
    for pt in results:
        for pr in pt.pairs:
            checks = pipeline.observed_checks(pt, pr)
            where = f"{pt.param_name}={_fmt_param(pt.param_value)} " if pt.param_name else ""
            shown = " ".join(f"{k}={v}" for k, v in checks.items() if v is not None)
            print(f"{cfg.model} {where}{pr.state_pair}: residual={pr.report.residual:.3e} {shown}", file=out)
    for msg in fails:
        print(f"FAIL {msg}", file=out)
    print("verify: " + ("ok" if not fails else f"{len(fails)} failure(s)"), file=out)
    return EXIT_OK if not fails else EXIT_CONDITION


def cmd_sweep(cfg: cfgmod.RunConfig, output: str | None, out=None) -> int:
    out = out or sys.stdout
    results = run_points(cfg)
    fails = collect_failures(cfg, results)
    text = csv_text(SWEEP_COLUMNS, summary_rows(cfg, results))
    target = output or (str(_base_path(cfg.output.path).with_suffix(".csv")) if cfg.output.path else None)
    if target:
        _write(Path(target), text)
    else:
        out.write(text)
    for msg in fails:
        print(f"FAIL {msg}", file=sys.stderr)
    return EXIT_OK if not fails else EXIT_CONDITION


def _load_config(args) -> cfgmod.RunConfig:
    if args.config and args.model:
        raise UsageError("give either -c/--config or --model, not both")
    if args.config:
        cfg = cfgmod.load(args.config)
    elif args.model:
        if args.model not in cfgmod.MODEL_PARAMS:
            raise UsageError(f"unknown model {args.model!r}; choose from {sorted(cfgmod.MODEL_PARAMS)}")
        cfg = cfgmod.default_config(args.model)
    else:
        raise UsageError("a config (-c) or --model is required")
    return cfgmod.with_overrides(cfg, expect=args.expect, sweep=args.sweep,
                                 output_path=getattr(args, "report", None))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qmeas", description="Verify relative-entropy conservation for quantum measurement models.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("-c", "--config", help="TOML run configuration")
        sp.add_argument("--model", help="use the built-in default config for this model")
        sp.add_argument("--expect", help="comma list such as ban=fail,conservation=pass")
        sp.add_argument("--sweep", help="one-parameter sweep such as gamma_t=0.5,1,2")

    v = sub.add_parser("verify", help="certify and check conservation at every point")
    common(v)
    v.add_argument("-o", "--report", help="report base path (overrides output.path)")
    s = sub.add_parser("sweep", help="tabulate conservation terms as CSV")
    common(s)
    s.add_argument("-o", "--output", help="CSV path (stdout if omitted)")
    t = sub.add_parser("selftest", help="run the invariant suites at small sizes")
    t.add_argument("--report", help="write the deterministic JSON report here")
    t.add_argument("--inject-fault", choices=("completeness",), help="corrupt a model to exercise failure paths")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: verify, sweep or selftest")
        if args.command == "selftest":
            from .selftest import run_selftest

            return run_selftest(report=args.report, inject_fault=args.inject_fault)
        cfg = _load_config(args)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_sweep(cfg, args.output)
    except (UsageError, cfgmod.ConfigError, InvalidModelError, ParameterRangeError) as exc:
        print(f"qmeas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # noqa: BLE001 - exit-code contract
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
