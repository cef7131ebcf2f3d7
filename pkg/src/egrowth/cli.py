"""Command-line front end: argument parsing, dispatch, report serialization.

Reports are JSON with a stable schema (version field "v": 1), canonical key
order, and floats at 17 significant digits, so identical configurations and
seeds produce byte-identical files.  Time series additionally go to CSV.
All randomness enters through the --seed flag; nothing reads the clock or
OS entropy.  Output files are written atomically (temp file + rename).

Exit codes: 0 success, 2 validation error, 3 solver nonconvergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import epower, gallery, processes, seqtest, verify
from .measures import (
    NullInstance,
    RngStream,
    instance_to_dict,
    load_instance,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _canonical(obj):
    """Normalize a report tree: sorted keys, floats as 17-digit strings-safe values."""
    if isinstance(obj, dict):
        return {str(k): _canonical(obj[k]) for k in sorted(obj, key=str)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(format(x, ".17g"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, indent=2) + "\n"


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".egrowth-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(report: dict, out: str | None) -> None:
    text = canonical_json(report)
    if out:
        _atomic_write(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Process configuration documents
# ---------------------------------------------------------------------------

_SCHEDULE_KEYS = {
    "fixed": {"kind", "m"},
    "geometric": {"kind", "m1", "ratio"},
    "squares": {"kind"},
    "explicit": {"kind", "times"},
}


def _schedule_from_config(doc: dict) -> processes.BlockSchedule:
    kind = doc.get("kind")
    if kind not in _SCHEDULE_KEYS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    unknown = set(doc) - _SCHEDULE_KEYS[kind]
    if unknown:
        raise ValueError(f"schedule has unknown keys {sorted(unknown)}")
    if kind == "fixed":
        return processes.BlockSchedule.fixed(int(doc["m"]))
    if kind == "geometric":
        return processes.BlockSchedule.geometric(int(doc["m1"]), int(doc.get("ratio", 2)))
    if kind == "squares":
        return processes.BlockSchedule.squares()
    return processes.BlockSchedule.explicit([int(t) for t in doc["times"]])


def _region_from_config(instance: NullInstance, doc: dict) -> processes.Region:
    kind = doc.get("type")
    if kind == "tv_ball":
        allowed = {"type", "center_alt", "radius"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"region has unknown keys {sorted(unknown)}")
        center = instance.alternative(str(doc["center_alt"]))
        return processes.TvBall(center, float(doc["radius"]))
    if kind == "half_space":
        allowed = {"type", "coeffs", "threshold"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"region has unknown keys {sorted(unknown)}")
        return processes.HalfSpace(
            instance.alphabet, np.asarray(doc["coeffs"], dtype=float),
            float(doc["threshold"]),
        )
    raise ValueError(f"unknown region type {kind!r}")


_PROCESS_KEYS = {
    "repeated_gro": {"kind", "alt", "m"},
    "z_lambda": {"kind", "alt", "k", "lambda"},
    "typical_set": {"kind", "alt", "d", "schedule"},
    "fixed_region": {"kind", "region", "rate", "schedule"},
    "cover_and_mix": {"kind", "alts", "eps", "schedule"},
}


def build_process_from_config(
    instance: NullInstance, doc: dict
) -> processes.BlockEProcess:
    """Instantiate a block process from its JSON description; unknown keys rejected."""
    kind = doc.get("kind")
    if kind not in _PROCESS_KEYS:
        raise ValueError(f"unknown process kind {kind!r}; have {sorted(_PROCESS_KEYS)}")
    unknown = set(doc) - _PROCESS_KEYS[kind]
    if unknown:
        raise ValueError(f"process config has unknown keys {sorted(unknown)}")
    if kind == "repeated_gro":
        m = int(doc["m"])
        report = epower.ripr_solve(instance, str(doc["alt"]), m)
        if not report.converged():
            raise NonconvergenceError(f"projection solve did not converge: {report.status}")
        evar = epower.gro_evariable(instance, str(doc["alt"]), m, report)
        return processes.repeated_block_process(evar)
    if kind == "z_lambda":
        k = int(doc["k"])
        alt = str(doc["alt"])
        report = epower.ripr_solve(instance, alt, k)
        if report.status == "Infinite":
            evar = seqtest._separating_evariable(instance, alt, k)
        else:
            if not report.converged():
                raise NonconvergenceError(
                    f"projection solve did not converge: {report.status}"
                )
            evar = epower.gro_evariable(instance, alt, k, report)
        lam = doc.get("lambda")
        return processes.z_lambda_process(
            instance, evar, float(lam) if lam is not None else None, alt_label=alt
        )
    if kind == "typical_set":
        cfg = processes.TypicalSetConfig(
            schedule=_schedule_from_config(doc["schedule"]) if "schedule" in doc else None
        )
        d = doc.get("d")
        return processes.typical_set_process(
            instance, alt_label=doc.get("alt"), d=float(d) if d is not None else None,
            cfg=cfg,
        )
    if kind == "fixed_region":
        schedule = _schedule_from_config(doc["schedule"]) if "schedule" in doc else None
        region = _region_from_config(instance, doc["region"])
        return processes.fixed_region_process(
            instance, region, float(doc["rate"]), schedule=schedule
        )
    schedule = _schedule_from_config(doc["schedule"]) if "schedule" in doc else None
    return processes.cover_and_mix_process(
        instance, [str(a) for a in doc["alts"]], float(doc["eps"]), schedule=schedule
    )


class NonconvergenceError(RuntimeError):
    """Solver hit its iteration cap without meeting the gap tolerance."""


# ---------------------------------------------------------------------------
# Subcommand implementations (pure: config dict in, report dict out)
# ---------------------------------------------------------------------------

def _solve_report_dict(report: epower.SolveReport) -> dict:
    return {
        "value": report.value,
        "weights": None if report.weights is None else list(report.weights),
        "dualBound": report.dual_bound,
        "dualityGap": report.duality_gap,
        "iterations": report.iterations,
        "status": report.status,
    }


def run_epower(config: dict) -> dict:
    instance = load_instance(config["instance"])
    report = epower.ripr_solve(
        instance, config["alt"], int(config["n"]),
        tol=float(config["tol"]), max_iter=int(config["max_iter"]),
    )
    result = _solve_report_dict(report)
    if report.status == "IterationCap":
        raise NonconvergenceError(canonical_json(result))
    return result


def run_grow(config: dict) -> dict:
    instance = load_instance(config["instance"])
    labels = [s for s in str(config["alt"]).split(",") if s]
    report = epower.grow_solve(
        instance, labels, int(config["n"]),
        tol=float(config["tol"]), max_iter=int(config["max_iter"]),
    )
    result = {
        "value": report.value,
        "weights": None if report.weights is None else list(report.weights),
        "altWeights": None if report.alt_weights is None else list(report.alt_weights),
        "altLabels": list(report.alt_labels),
        "dualBound": report.dual_bound,
        "dualityGap": report.duality_gap,
        "iterations": report.iterations,
        "status": report.status,
    }
    if report.status == "IterationCap":
        raise NonconvergenceError(canonical_json(result))
    return result


def run_rates(config: dict) -> dict:
    instance = load_instance(config["instance"])
    report = epower.rate_table(
        instance, config["alt"], int(config["n_max"]), tol=float(config["tol"])
    )
    return {
        "perHorizon": [
            {"n": n, "value": v, "rate": r} for n, v, r in report.per_horizon
        ],
        "dStarLowerBound": report.d_star_lower_bound,
        "superadditivityOk": report.superadditivity_ok,
        "ceilingOk": report.ceiling_ok,
        "violations": list(report.violations),
    }


def run_simulate(config: dict) -> dict:
    instance = load_instance(config["instance"])
    with open(config["process"], "r", encoding="utf-8") as fh:
        proc_doc = json.load(fh)
    proc = build_process_from_config(instance, proc_doc)
    source_label = config.get("source") or next(iter(instance.alternatives))
    if source_label.startswith("null["):
        source = instance.null[int(source_label[5:-1])]
    else:
        source = instance.alternative(source_label)
    traj = processes.simulate(
        proc, source, int(config["horizon"]), RngStream(int(config["seed"]), 0)
    )
    target_rate = proc_doc.get("rate", proc_doc.get("d"))
    if target_rate is None and proc_doc.get("kind") == "typical_set" and "alt" in proc_doc:
        target_rate, _ = epower.klinf(instance, str(proc_doc["alt"]))
    result = {
        "times": list(traj.times),
        "logWealth": list(traj.log_wealth),
        "finalSlope": traj.final_slope(),
        "blockCount": traj.block_count,
        "targetRate": target_rate,
        "source": source_label,
        "processKind": proc.kind,
    }
    out = config.get("out")
    if out:
        csv_lines = ["time,logWealth"] + [
            f"{t},{format(float(v), '.17g')}" for t, v in zip(traj.times, traj.log_wealth)
        ]
        _atomic_write(os.path.splitext(out)[0] + ".csv", "\n".join(csv_lines) + "\n")
    return result


def run_test(config: dict) -> dict:
    instance = load_instance(config["instance"])
    with open(config["process"], "r", encoding="utf-8") as fh:
        proc_doc = json.load(fh)
    proc = build_process_from_config(instance, proc_doc)
    test = seqtest.ville_test(proc, float(config["alpha"]))
    rows = seqtest.estimate_level_power(
        test, instance, int(config["horizon"]), int(config["trials"]),
        RngStream(int(config["seed"]), 0),
    )
    result = {
        "alpha": float(config["alpha"]),
        "horizon": int(config["horizon"]),
        "rows": [
            {
                "label": r.label,
                "stopFrequency": r.stop_frequency,
                "meanStopTime": r.mean_stop_time,
                "standardError": r.standard_error,
                "trials": r.trials,
            }
            for r in rows
        ],
    }
    out = config.get("out")
    if out:
        csv_lines = ["label,stopFrequency,meanStopTime,standardError,trials"] + [
            ",".join([
                r.label,
                format(r.stop_frequency, ".17g"),
                "" if r.mean_stop_time is None else format(r.mean_stop_time, ".17g"),
                format(r.standard_error, ".17g"),
                str(r.trials),
            ])
            for r in rows
        ]
        _atomic_write(os.path.splitext(out)[0] + ".csv", "\n".join(csv_lines) + "\n")
    return result


def run_certify(config: dict) -> dict:
    instance = load_instance(config["instance"])
    cert = seqtest.testability_certificate(
        instance, config["alt"], int(config["n_max"]),
        cert_tol=float(config["cert_tol"]),
    )
    return {
        "firstPositiveHorizon": cert.first_positive_horizon,
        "aValues": list(cert.a_values),
        "verdict": cert.verdict,
        "consistent": cert.consistent,
    }


def run_gallery(config: dict) -> dict:
    name = str(config["name"])
    params = {}
    if ":" in name:
        name, _, raw = name.partition(":")
        for piece in raw.split(","):
            key, _, value = piece.partition("=")
            params[key] = value
    entry = gallery.gallery_entry(name, **params)
    instance_out = config.get("instance_out")
    if instance_out:
        _atomic_write(
            instance_out,
            canonical_json(instance_to_dict(entry.instance)),
        )
    result: dict = {
        "name": entry.name,
        "instance": instance_to_dict(entry.instance),
        "closedForms": dict(entry.closed_forms),
        "notes": list(entry.notes),
    }
    if config.get("report"):
        comparison = []
        for label in entry.instance.alt_labels():
            kv, _ = epower.klinf(entry.instance, label)
            comparison.append({"quantity": f"klinf[{label}]", "computed": kv})
            rep = epower.ripr_solve(entry.instance, label, 1)
            comparison.append({"quantity": f"a1[{label}]", "computed": rep.value})
            rep2 = epower.ripr_solve(entry.instance, label, 2)
            comparison.append({
                "quantity": f"a2[{label}]",
                "computed": rep2.value if rep2.status != "Infinite" else "inf",
            })
        result["computed"] = comparison
    return result


def run_verify(config: dict) -> dict:
    rows = verify.run_suite(str(config["suite"]), int(config["seed"]))
    return {
        "suite": config["suite"],
        "seed": int(config["seed"]),
        "checks": [
            {"name": r.name, "passed": r.passed, "slack": r.slack} for r in rows
        ],
        "allPassed": all(r.passed for r in rows),
    }


_COMMANDS = {
    "epower": run_epower,
    "grow": run_grow,
    "rates": run_rates,
    "simulate": run_simulate,
    "test": run_test,
    "certify": run_certify,
    "gallery": run_gallery,
    "verify": run_verify,
}


def run(command: str, config: dict) -> dict:
    """Dispatch a resolved configuration and wrap the result in a manifest.

    The output path is not part of the echoed configuration: identical
    computational configs must produce byte-identical reports wherever they
    are written.
    """
    result = _COMMANDS[command](config)
    manifest = {k: v for k, v in config.items() if k != "out"}
    return {"v": SCHEMA_VERSION, "command": command, "config": _canonical(manifest),
            "result": result}


def rerun_report(report: dict) -> dict:
    """Re-execute the configuration embedded in a report (manifest round-trip)."""
    return run(report["command"], dict(report["config"]))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egrowth",
        description="Evidence-growth values, block supermartingales, and sequential tests "
                    "for finite-alphabet i.i.d. composite nulls.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, instance=True, out=True):
        if instance:
            p.add_argument("--instance", required=True, help="instance JSON path")
        if out:
            p.add_argument("--out", default=None, help="report output path")

    p = sub.add_parser("epower", help="n-sample projection value and weights")
    common(p)
    p.add_argument("--alt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = sub.add_parser("grow", help="robust growth value for an alternative family")
    common(p)
    p.add_argument("--alt", required=True, help="comma-separated alternative labels")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = sub.add_parser("rates", help="per-horizon value table with checks")
    common(p)
    p.add_argument("--alt", required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("simulate", help="simulate a block process (CSV + summary)")
    common(p)
    p.add_argument("--process", required=True, help="process config JSON path")
    p.add_argument("--source", default=None, help="law to draw from (alt label or null[j])")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("test", help="Monte Carlo level/power table for a Ville test")
    common(p)
    p.add_argument("--process", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("certify", help="testability certificate over horizons")
    common(p)
    p.add_argument("--alt", required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--cert-tol", type=float, default=seqtest.CERT_TOL_DEFAULT)

    p = sub.add_parser("gallery", help="named instance with closed forms")
    common(p, instance=False)
    p.add_argument("--name", required=True, help="entry name, optionally name:K=8")
    p.add_argument("--report", action="store_true")
    p.add_argument(
        "--instance-out", default=None,
        help="also write the bare instance document, loadable via --instance",
    )

    p = sub.add_parser("verify", help="run invariant suites")
    common(p, instance=False)
    p.add_argument("--suite", default="all")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    config = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "out") and value is not None
    }
    if args.out is not None:
        config["out"] = args.out
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    config = _config_from_args(args)
    try:
        report = run(args.command, config)
    except NonconvergenceError as exc:
        sys.stderr.write(f"solver did not converge: {exc}\n")
        return EXIT_NONCONVERGENCE
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_VALIDATION
    _emit(report, config.get("out"))
    if args.command == "verify" and not report["result"]["allPassed"]:
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
