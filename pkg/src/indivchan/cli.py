"""Command line harness: simulations, redundancy estimates, theorem constants, compression."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Any, Sequence

import numpy as np

from . import analysis, coding, compress, mimo, ratefn
from .core import (
    Channel,
    InvalidInput,
    InvalidParameter,
    OverheadReport,
    Prior,
    ResourceLimit,
    SharedRandomness,
    SymbolSequence,
    apply_channel,
)

OUTPUT_ENV = "INDIVCHAN_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_GUARD = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 already; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _encode(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_encode(u) for u in v.tolist()]
    if isinstance(v, dict):
        return {str(k): _encode(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_encode(u) for u in v]
    return v


def _decode_float(v: Any) -> float:
    if isinstance(v, str):
        return float(v)  # float() reads "nan", "inf", "-inf"
    return float(v)


def emit_report(report: OverheadReport, fmt: str = "json") -> str:
    """Serialize every scalar of a report at full precision."""
    if fmt == "json":
        body = {
            name: {
                "value": e.value,
                "formula": e.formula,
                "method": e.method,
                "inputs": e.inputs,
                "ci": list(e.ci) if e.ci is not None else None,
            }
            for name, e in report.entries.items()
        }
        return json.dumps(_encode(body), sort_keys=True, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "formula", "method", "ci_low", "ci_high"])
        for name, e in report.entries.items():
            lo, hi = e.ci if e.ci is not None else ("", "")
            w.writerow([name, repr(float(e.value)), e.formula, e.method,
                        repr(float(lo)) if lo != "" else "", repr(float(hi)) if hi != "" else ""])
        return buf.getvalue()
    raise InvalidParameter(f"unknown format {fmt!r}")


def load_report(text: str, fmt: str = "json") -> OverheadReport:
    rep = OverheadReport()
    if fmt == "json":
        for name, e in json.loads(text).items():
            ci = tuple(_decode_float(c) for c in e["ci"]) if e.get("ci") else None
            rep.add(name, _decode_float(e["value"]), e["formula"], e["method"], e.get("inputs") or {}, ci)
        return rep
    if fmt == "csv":
        for row in csv.DictReader(io.StringIO(text)):
            ci = (float(row["ci_low"]), float(row["ci_high"])) if row["ci_low"] else None
            rep.add(row["name"], float(row["value"]), row["formula"], row["method"], None, ci)
        return rep
    raise InvalidParameter(f"unknown format {fmt!r}")


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------


def parse_prior(spec: str, size: int = 2) -> Prior:
    if spec == "uniform":
        return Prior.uniform(size)
    if spec.startswith("iid:"):
        return Prior.iid([float(v) for v in spec[4:].split(",")])
    raise InvalidParameter(f"unknown prior spec {spec!r}")


def parse_channel(spec: str, n: int, rand: SharedRandomness, size: int = 2) -> Channel:
    """noiseless | bsc:P | errors:FRAC | delay | onoff:P | dmc:a,b;c,d"""
    kind, _, arg = spec.partition(":")
    if kind == "noiseless":
        return Channel.modulo_additive(size, errors=np.zeros(n, dtype=np.int64))
    if kind == "bsc":
        return Channel.bsc(float(arg))
    if kind == "errors":
        frac = float(arg)
        if not 0 <= frac <= 1:
            raise InvalidParameter("error fraction must lie in [0, 1]")
        e = np.zeros(n, dtype=np.int64)
        rng = rand.derive("errors").generator()
        e[rng.choice(n, size=int(round(frac * n)), replace=False)] = 1
        return Channel.modulo_additive(size, errors=e)
    if kind == "delay":
        return Channel.delay(size)
    if kind == "onoff":
        return Channel.onoff_binary(float(arg or 0.5))
    if kind == "dmc":
        rows = [[float(v) for v in r.split(",")] for r in arg.split(";")]
        return Channel.dmc(rows)
    raise InvalidParameter(f"unknown channel spec {spec!r}")


def _seeds(args: argparse.Namespace) -> list[int]:
    if args.seed_list is not None:
        seeds = [int(s) for s in str(args.seed_list).split(",") if s.strip()]
    else:
        count = int(args.seeds)
        base = SharedRandomness(int(args.master_seed)).generator()
        seeds = [int(s) for s in base.integers(0, 2**31 - 1, size=count)] if count > 0 else []
    if not seeds:
        raise InvalidParameter("seed list is empty")
    return seeds


def _summary(rows: list[dict], rate_key: str) -> dict:
    errs = sum(bool(r["error"]) for r in rows)
    lo, hi = analysis.wilson_interval(errs, len(rows))
    return {
        "summary": True,
        "runs": len(rows),
        f"mean_{rate_key}": float(np.mean([r[rate_key] for r in rows])),
        "mean_R_emp": float(np.nanmean([r["R_emp"] for r in rows])),
        "error_fraction": errs / len(rows),
        "error_ci": [lo, hi],
    }


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate_fixed(args: argparse.Namespace) -> list[str]:
    prior = parse_prior(args.prior, args.size)
    rf = ratefn.get_rate_function(args.rate_fn, size=args.size)
    rows = []
    for seed in _seeds(args):
        rand = SharedRandomness(seed)
        code = coding.FixedRateCode(args.n, args.rate, prior, rf, rand.derive("codebook"), args.decoder)
        msg = int(rand.derive("message").generator().integers(1, code.M + 1))
        x = coding.fixed_encode(code, msg)
        ch = parse_channel(args.channel, args.n, rand, args.size)
        y = apply_channel(ch, x, rand.derive("channel"))
        got = coding.fixed_decode(code, y.data, rand.derive("tie"))
        rows.append({"seed": seed, "n": args.n, "R": args.rate, "M": code.M, "R_emp": rf(x.data, y.data),
                     "error": got != msg})
    return [json.dumps(_encode(r), sort_keys=True) for r in rows] + [json.dumps(_encode(_summary(rows, "R")), sort_keys=True)]


def _metric(args: argparse.Namespace) -> coding.DecodingMetric:
    rf = ratefn.get_rate_function(args.metric, size=args.size)
    if not rf.adaptive:
        raise InvalidParameter(f"rate function {args.metric!r} has no sequential metric")
    kw = {"n": args.n} if args.metric in ("lz", "clz") else {}
    return rf.metric(**kw)


def cmd_simulate_adaptive(args: argparse.Namespace) -> list[str]:
    metric = _metric(args)
    K = args.K or coding.choose_block_bits(metric, args.n, args.eps, args.d_fb)
    fp = coding.framework_for(metric, args.n, K, args.d_fb, args.eps)
    rows = []
    for seed in _seeds(args):
        rand = SharedRandomness(seed)
        ch = parse_channel(args.channel, args.n, rand, args.size)
        sess = coding.AdaptiveSession(args.n, K, args.d_fb, args.eps, metric, args.mode)
        tr = coding.run_adaptive(sess, ch, rand)
        row = tr.to_dict()
        row["seed"] = seed
        row["F_n"] = fp.F(tr.R_emp)
        row["guarantee_met"] = bool(tr.prefix_correct() and tr.R_act >= fp.F(tr.R_emp))
        rows.append(row)
    return [json.dumps(_encode(r), sort_keys=True) for r in rows] + [json.dumps(_encode(_summary(rows, "R_act")), sort_keys=True)]


def _wire(x: Any, y: Any) -> float:
    return 1.0 if np.array_equal(np.asarray(x), np.asarray(y)) else 0.0


def cmd_redundancy(args: argparse.Namespace) -> list[str]:
    prior = parse_prior(args.prior, args.size)
    rf = ratefn.get_rate_function(args.rate_fn, size=args.size)
    res = analysis.intrinsic_redundancy(rf, prior, args.n, args.method, trials=args.trials,
                                        rand=SharedRandomness(args.master_seed), guard=args.guard)
    rep = OverheadReport()
    ci = res.ci if res.method == "monte_carlo" else None
    label = "sup of (1/n) log2 Q{R_emp >= R} + R" + (" (sampled, lower bound)" if res.lower_bound else "")
    rep.add("mu_Q", res.value, label, res.method, {"rate_fn": args.rate_fn, "n": args.n, "R": res.R}, ci)
    return [emit_report(rep, args.format)]


def cmd_params(args: argparse.Namespace) -> list[str]:
    metric = _metric(args)
    K = args.K or coding.choose_block_bits(metric, args.n, args.eps, args.d_fb)
    rep = coding.framework_for(metric, args.n, K, args.d_fb, args.eps).report()
    rep.add("K", K, "ceil(sqrt(n R_max (c_n + b1 f0)))", inputs={"n": args.n})
    return [emit_report(rep, args.format)]


def cmd_mimo_params(args: argparse.Namespace) -> list[str]:
    cov = np.loadtxt(args.cov, delimiter=",", ndmin=2) if args.cov else None
    cfg = mimo.MimoConfig(t=args.t, r=args.r, d=args.d, u=args.u, cov=cov, omega=args.omega, n=args.n, eps=args.eps,
                          d_fb=args.d_fb, K=args.K, gamma=args.gamma)
    return [emit_report(mimo.gaussian_theorem_params(cfg, args.R0).report(), args.format)]


def _read_symbols(path: str) -> np.ndarray:
    with open(path) as fh:
        vals = [int(line) for line in fh if line.strip()]
    return np.asarray(vals, dtype=np.int64)


def cmd_compress(args: argparse.Namespace) -> list[str]:
    x = _read_symbols(args.input)
    size = args.size
    if args.side:
        y = _read_symbols(args.side)
        if args.coder == "clz":
            st = compress.conditional_lz_stats(x, y, size, args.size_y or size)
            phrases, ls, lt, cplx = st.phrases, st.L_S, st.L_T, st.complexity
        else:
            z = compress.modulo_noise(x, y, size)
            ls, lt = compress.lz78_lengths(z, size)
            phrases = compress.lz78_parse(z).count
            cplx = compress.conditional_lz_complexity(z, np.zeros_like(z))
    else:
        ls, lt = compress.lz78_lengths(x, size)
        phrases = compress.lz78_parse(x).count
        cplx = compress.conditional_lz_complexity(x, np.zeros_like(x))
    out = {"n": len(x), "phrases": phrases, "L_S": ls, "L_T": lt, "C_LZ": cplx}
    return [json.dumps(_encode(out), sort_keys=True)]


def cmd_list(args: argparse.Namespace) -> list[str]:
    return [json.dumps({"id": e.id, "adaptive": e.adaptive, "description": e.description}, sort_keys=True)
            for e in ratefn.list_registry(args.filter)]


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plain-text key=value file; flags win")
    p.add_argument("--output", help="output file; defaults to $%s/<command>.out or stdout" % OUTPUT_ENV)
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--size", type=int, default=2, help="input alphabet size")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--guard", type=int, default=analysis.GUARD, help="exhaustive enumeration guard")


def _runs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seeds", type=int, default=10, help="number of seeds derived from the master seed")
    p.add_argument("--seed-list", help="comma separated explicit seeds")
    p.add_argument("--channel", default="noiseless")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="indivchan", description="Individual-channel coding experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-fixed", help="fixed-rate random code over a channel")
    _common(p)
    _runs(p)
    p.add_argument("--rate-fn", default="emi")
    p.add_argument("--rate", type=float, default=0.25)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--decoder", default="max_metric", choices=["max_metric", "randomized_tie"])
    p.set_defaults(func=cmd_simulate_fixed)

    p = sub.add_parser("simulate-adaptive", help="iterated rateless scheme with feedback")
    _common(p)
    _runs(p)
    p.add_argument("--metric", default="modadd")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--d-fb", type=int, default=1)
    p.add_argument("--mode", default="auto", choices=["auto", "explicit", "implicit"])
    p.set_defaults(func=cmd_simulate_adaptive)

    p = sub.add_parser("redundancy", help="intrinsic redundancy of a rate function")
    _common(p)
    p.add_argument("--rate-fn", default="emi")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--method", default="exhaustive", choices=["exhaustive", "monte_carlo"])
    p.add_argument("--trials", type=int, default=2000)
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("params", help="constants of the adaptive guarantee")
    _common(p)
    p.add_argument("--metric", default="modadd")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--d-fb", type=int, default=1)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("mimo-params", help="constants of the gaussian MIMO scheme")
    _common(p)
    for name, typ, default in [("t", int, 2), ("r", int, 2), ("d", int, 2), ("u", int, 0), ("omega", float, 5.0),
                               ("n", int, 10**6), ("eps", float, 1e-3), ("d-fb", int, 1), ("K", float, None),
                               ("gamma", float, None), ("R0", float, 10.0)]:
        p.add_argument(f"--{name}", type=typ, default=default)
    p.add_argument("--cov", help="CSV file holding the t x t input covariance (identity if omitted)")
    p.set_defaults(func=cmd_mimo_params)

    p = sub.add_parser("compress", help="LZ78 / conditional LZ code lengths of a symbol file")
    _common(p)
    p.add_argument("--input", required=True, help="one integer per line")
    p.add_argument("--side", help="side-information file for conditional coding")
    p.add_argument("--coder", default="clz", choices=["clz", "modulo"])
    p.add_argument("--size-y", type=int, default=None)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("list", help="rate function registry")
    _common(p)
    p.add_argument("--filter", default=None)
    p.set_defaults(func=cmd_list)
    return parser


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise InvalidParameter(f"config line without '=': {line!r}")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
        known = {a.dest: a for a in sub._actions}
        unknown = set(cfg) - set(known)
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        # config values become defaults, so explicit flags still win
        sub.set_defaults(**{k: (known[k].type(v) if known[k].type else v) for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def _write(lines: list[str], args: argparse.Namespace) -> None:
    text = "\n".join(lines) + "\n"
    path = args.output
    if path is None and os.environ.get(OUTPUT_ENV):
        path = os.path.join(os.environ[OUTPUT_ENV], f"{args.command}.out")
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise InvalidParameter(f"cannot write {path}: {exc}") from exc


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parse(argv)
        _write(args.func(args), args)
    except SystemExit as exc:  # argparse: usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    except ResourceLimit as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InvalidInput, InvalidParameter, ValueError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
