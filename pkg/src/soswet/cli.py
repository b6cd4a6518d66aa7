"""Command-line entry point: ``soswet <subcommand> [options]``.

Every JSON output embeds the resolved configuration and a format-version
string.  A ``--config`` file holds ``key = value`` lines (``#`` starts a
comment); its keys are the long option names of the subcommand, and flags
given on the command line win.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from typing import Any

from . import __version__

FORMAT_VERSION = "soswet-output/1"


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def _to_json_text(obj: Any) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ", ".join(f"{json.dumps(k)}: {_to_json_text(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_to_json_text(v) for v in obj) + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return _to_json_text(obj.item())
    if hasattr(obj, "to_json"):
        return _to_json_text(obj.to_json())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else format(v, ".17g")
    if hasattr(v, "item"):
        return _csv_cell(v.item())
    text = str(v)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def emit(results: Any, fmt: str = "json") -> bytes:
    """Serialise a record (json) or a table ``{"columns": [...], "rows": [...]}`` (csv)."""
    if fmt == "json":
        return (_to_json_text(results) + "\n").encode("utf-8")
    if fmt == "csv":
        columns = list(results["columns"])
        out = io.StringIO()
        out.write(",".join(columns) + "\n")
        for row in results.get("rows", []):
            out.write(",".join(_csv_cell(row.get(c)) for c in columns) + "\n")
        return out.getvalue().encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


class ConfigError(ValueError):
    pass


def read_config(path: str) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    defaults = {}
    for key, value in values.items():
        if key not in actions:
            raise ConfigError(f"unknown configuration key {key!r}")
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(value)
        else:
            defaults[key] = value  # argparse converts string defaults with the action's type
    parser.set_defaults(**defaults)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _u_grid(text: str) -> list[float]:
    a, b, n = str(text).split(":")
    n = int(n)
    if n < 2:
        return [float(a)]
    return [float(a) + (float(b) - float(a)) * i / (n - 1) for i in range(n)]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--config", default=None, help="file of 'key = value' lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soswet", description="2D SOS wetting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("formulas", help="closed-form constants and the layering function")
    _common(p)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--u", type=float, default=None, help="u = h - h_w for the layering function")
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=1.0)
    p.add_argument("--convention", choices=("printed", "derived"), default="printed")
    p.add_argument("--breakpoints", type=int, default=5)

    p = sub.add_parser("exact", help="exact sums on small boxes")
    _common(p)
    p.add_argument("--nx", type=int, default=2)
    p.add_argument("--ny", type=int, default=2)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--ensemble", choices=("free", "positive", "wetting"), default="free")
    p.add_argument("--n", type=int, default=1, help="level for tail and cluster quantities")
    p.add_argument("--quantity", default="log_partition",
                   choices=("log_partition", "wetting_identity", "contact_fraction", "tail", "clusters",
                            "intensity_law"))
    p.add_argument("--hmax", type=int, default=None, help="fixed height cap (default: adaptive)")

    p = sub.add_parser("contours", help="cylinder decomposition and contour enumeration")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--decompose", default=None, help="height-field JSON file")
    g.add_argument("--enumerate", type=int, default=None, metavar="L", help="maximal contour length")
    p.add_argument("--beta", type=float, default=1.0)

    p = sub.add_parser("sample", help="heat-bath Monte Carlo")
    _common(p)
    p.add_argument("--nx", type=int, default=8)
    p.add_argument("--ny", type=int, default=8)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--ensemble", choices=("free", "wetting"), default="free")
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--n-levels", type=_int_list, default=[1, 2])
    p.add_argument("--sweeps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--trace", default=None, help="optional CSV trace file")
    p.add_argument("--ci", action="store_true", help="require an explicit --seed")

    p = sub.add_parser("freeenergy", help="strip transfer operators")
    _common(p)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--width", type=int, default=2)
    p.add_argument("--hmax", type=int, default=10)
    p.add_argument("--h", type=float, default=None, help="single wetting reward")
    p.add_argument("--u-grid", type=_u_grid, default=None, help="a:b:n")
    p.add_argument("--compare", action="store_true", help="add the layering function columns")
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=1.0)
    p.add_argument("--one-d", action="store_true", help="locate the 1D chain wetting point")

    p = sub.add_parser("verify", help="run the verification battery")
    _common(p)
    p.add_argument("--suite", choices=("identities", "contours", "peierls", "sampler", "freeenergy", "all"),
                   default="identities")
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config_values",)}


def _record(args, provenance: str, results: Any) -> dict:
    return {"format_version": FORMAT_VERSION, "version": __version__, "command": args.command,
            "config": _resolved(args), "provenance": provenance, "results": results}


def _table(columns, rows) -> dict:
    return {"columns": list(columns), "rows": list(rows)}


def cmd_formulas(args):
    from .formulas import DenominatorConvention, LayeringCoefficients, ModelParams, formulas_record, layering_record
    rec = formulas_record(args.beta)
    if args.u is not None:
        coeffs = LayeringCoefficients(args.alpha1, args.alpha2, DenominatorConvention(args.convention))
        rec["layering"] = layering_record(ModelParams.from_u(args.beta, args.u), coeffs, args.breakpoints)
    row = {k: v for k, v in rec.items() if k not in ("chalker", "layering")}
    row["chalker_lower"], row["chalker_upper"] = rec["chalker"]
    if "layering" in rec:
        row.update({"u": rec["layering"]["u"], "F": rec["layering"]["F"], "n_star": rec["layering"]["n_star"]})
    row["provenance"] = "closed_form"
    return _record(args, "closed_form", rec), _table(row.keys(), [row])


def cmd_exact(args):
    from . import exact
    from .formulas import ModelParams
    from .lattice import build_rect_region
    region = build_rect_region(args.nx, args.ny)
    params = ModelParams(args.beta, args.h)
    trunc = exact.default_truncation(args.beta)
    if args.hmax is not None:
        trunc = trunc.fixed(args.hmax)
    ens = {"free": exact.FREE, "positive": exact.POSITIVE, "wetting": exact.wetting(args.h)}[args.ensemble]
    q = args.quantity
    if q == "log_partition":
        res = {"log_partition": exact.log_partition(region, params, ens, trunc)}
    elif q == "wetting_identity":
        r = exact.wetting_identity_check(region, params, trunc)
        res = {"lhs": r.lhs, "rhs": r.rhs, "gap": r.gap}
    elif q == "contact_fraction":
        res = {"contact_fraction": exact.contact_fraction(region, params, trunc)}
    elif q == "tail":
        site = region.sites[len(region.sites) // 2]
        res = {"site": list(site), "n": args.n, "tail": exact.site_tail_prob(region, params, [site], args.n, trunc, ens)}
    elif q == "clusters":
        stats = exact.cluster_statistics(region, params, args.n, trunc, ens)
        res = {f"{s[0]},{s[1]}": v for s, v in stats.items()}
    else:
        law = exact.unit_contour_intensity_law(args.beta)
        res = {"presence": law.presence, "bound": law.bound, "tv_worst_conditional": law.tv_worst_conditional,
               "conditional": list(law.conditional), "geometric": list(law.geometric)}
    flat = {k: v for k, v in res.items() if isinstance(v, (int, float))}
    flat["provenance"] = "exact"
    return _record(args, "exact", res), _table(flat.keys(), [flat])


def cmd_contours(args):
    from . import contours
    from .lattice import HeightField
    if args.decompose:
        with open(args.decompose, encoding="utf-8") as fh:
            field = HeightField.from_json(json.load(fh))
        cs = contours.decompose(field)
        res = {"cylinders": cs.to_json(), "energy": contours.contour_energy(cs)}
        rows = [{"index": i, "length": c.contour.length, "sign": c.sign, "intensity": c.intensity}
                for i, c in enumerate(cs)]
        return _record(args, "exact", res), _table(["index", "length", "sign", "intensity"], rows)
    if args.enumerate is None:
        raise SystemExit("contours: give --decompose FILE or --enumerate L")
    ps = contours.peierls_sum(args.beta, args.enumerate)
    res = {"counts": {str(k): v for k, v in ps.counts.items()}, "partial_sum": ps.partial_sum,
           "growth_rate": ps.growth_rate, "table": ps.rows()}
    return _record(args, "exact", res), _table(["length", "count", "weight"], ps.rows())


def cmd_sample(args):
    from . import sampler
    from .exact import FREE, wetting
    from .formulas import ModelParams
    if args.seed is None:
        if args.ci:
            raise SystemExit("sample: --seed is required with --ci")
        args.seed = 0
    ens = FREE if args.ensemble == "free" else wetting(args.h)
    params = ModelParams(args.beta, args.h)
    cfg = sampler.ChainConfig(args.nx, args.ny, params, ens, args.seed, args.sweeps, args.burn_in,
                              args.thin, args.chains, tuple(args.n_levels))
    result = sampler.run_chain(cfg, args.trace)
    summaries = {k: v.to_json() for k, v in result.summaries().items()}
    res = {"chain": cfg.to_json(), "estimates": summaries}
    if args.ensemble == "free":
        res["peaks"] = [p.to_json() for p in sampler.peak_amplitudes(result, args.n_levels)]
    rows = [{"observable": k, "mean": v["mean"], "stderr": v["stderr"], "n_batches": v["n_batches"],
             "provenance": "mcmc"} for k, v in summaries.items()]
    return _record(args, "mcmc", res), _table(["observable", "mean", "stderr", "n_batches", "provenance"], rows)


def cmd_freeenergy(args):
    from . import freeenergy
    from .exact import wetting
    from .formulas import DenominatorConvention, LayeringCoefficients, ModelParams, layering_F
    if args.one_d:
        br = freeenergy.one_dimensional_wetting_check(args.beta)
        res = {"lower": br.lower, "upper": br.upper, "threshold": br.threshold, "h_max": br.h_max}
        return _record(args, "transfer", res), _table(list(res) + ["provenance"], [{**res, "provenance": "transfer"}])
    if args.h is not None:
        spec = freeenergy.TransferSpec(args.width, args.hmax, ModelParams(args.beta, args.h), wetting(args.h))
        res = {"f_wet": freeenergy.strip_free_energy(spec), "contact_fraction": freeenergy.strip_contact_fraction(spec)}
        return _record(args, "transfer", res), _table(list(res) + ["provenance"], [{**res, "provenance": "transfer"}])
    grid = args.u_grid or [0.0, 0.1, 0.2, 0.3]
    rows = freeenergy.baseline_subtracted(args.beta, grid, args.width, args.hmax)
    columns = ["u", "f_wet", "f_free", "fbar"]
    out = []
    for r in rows:
        row = {"u": r["u"], "f_wet": r["f_wet"], "f_free": r["f_free"], "fbar": r["fbar_sub"], "provenance": "transfer"}
        if args.compare:
            for conv, col in ((DenominatorConvention.AS_PRINTED, "F_printed"), (DenominatorConvention.AS_DERIVED, "F_derived")):
                coeffs = LayeringCoefficients(args.alpha1, args.alpha2, conv)
                row[col] = layering_F(ModelParams.from_u(args.beta, r["u"]), coeffs)[0] if r["u"] > 0 else 0.0
        out.append(row)
    if args.compare:
        columns += ["F_printed", "F_derived"]
    res = {"rows": out, "baseline": "fbar at u=0 subtracted; finite-width offset"}
    return _record(args, "transfer", res), _table(columns + ["provenance"], out)


def cmd_verify(args):
    from . import checks
    results = checks.run_suite(args.suite)
    failures = [r.name for r in results if not r.passed]
    report = {"format_version": FORMAT_VERSION, "suite": args.suite, "passed": not failures,
              "checks": [r.to_json() for r in results], "failures": failures, "config": _resolved(args)}
    rows = [{"name": r.name, "anchor": r.anchor, "passed": r.passed} for r in results]
    return report, _table(["name", "anchor", "passed"], rows)


COMMANDS = {"formulas": cmd_formulas, "exact": cmd_exact, "contours": cmd_contours, "sample": cmd_sample,
            "freeenergy": cmd_freeenergy, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    first, _ = parser.parse_known_args(argv)
    if getattr(first, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[first.command]
        try:
            _apply_config(subparser, read_config(first.config))
        except ConfigError as exc:
            parser.error(str(exc))
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(args.threads))
    try:
        record, table = COMMANDS[args.command](args)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"soswet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    payload = emit(record if args.format == "json" else table, args.format)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
    if args.command == "verify":
        if not record["passed"]:
            print("failed checks: " + ", ".join(record["failures"]), file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
