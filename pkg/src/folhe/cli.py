"""``folhe`` command line.

Exit codes: 0 on success, 2 when the verdict is UNSUPPORTED or INCONCLUSIVE,
1 on any error (bad flags, malformed configuration, failed acceptance case).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import reports
from .config import ConfigError, RunConfig, load

EXIT_OK, EXIT_ERROR, EXIT_UNDECIDED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    paths = list(args.config or [])
    for extra in ("model", "bundle"):
        p = getattr(args, extra, None)
        if p:
            paths.append(p)
    cfg = load(paths) if paths else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _emit(args, cfg: RunConfig, command: str, verdicts: dict, tables: dict, t0: float):
    rep = reports.make_report(command, cfg.echo(), verdicts=verdicts, tables=tables,
                              wall_clock=time.perf_counter() - t0)
    out = args.out or (cfg.output_dir / cfg.json_name if cfg.json_name else None)
    if out:
        reports.write_json(rep, out)
        print(f"report written to {out}")
    return rep


def _fmt(x: float) -> str:
    x = float(x)
    if abs(x) < 1e-12:
        x = 0.0
    return f"{x:.12g}"


def _model_bundle(cfg: RunConfig):
    model = cfg.build_model()
    return model, cfg.build_bundle(model)


# -- subcommands --------------------------------------------------------------------


def cmd_kernel_check(args, cfg, t0):
    from .kernel import FoliatedTorusModel, exactness_suite

    model = cfg.build_model() if cfg.model else FoliatedTorusModel.product(2, N=8)
    res = exactness_suite(model, count=args.count, seed=cfg.seed, rank=args.rank)
    ok = res["d_squared"] < 1e-12 and res["stokes"] < 1e-13 and res["adjointness"] < 1e-11
    for k in ("d_squared", "stokes", "adjointness"):
        print(f"{k:12s} {res[k]:.3e}")
    _emit(args, cfg, "kernel-check", {"exactness": "PASS" if ok else "FAIL"},
          {"exactness": {**res, "d": model.d, "N": model.N}}, t0)
    return EXIT_OK if ok else EXIT_ERROR


def cmd_degree(args, cfg, t0):
    from .bundles import degree, slope

    _, spec = _model_bundle(cfg)
    deg, mu = degree(spec), slope(spec)
    print(_fmt(deg))
    _emit(args, cfg, "degree", {}, {"degree": deg, "slope": mu, "rank": spec.rank,
                                    "closed_form_degree": spec.closed_form_degree(),
                                    "factor_degrees": spec.degrees}, t0)
    return EXIT_OK


def _history_csv(args, cfg, records):
    path = args.csv or (cfg.output_dir / cfg.csv_name if cfg.csv_name else None)
    if path:
        reports.write_history_csv(records, path)
        print(f"history written to {path}")


def cmd_solve_he(args, cfg, t0):
    from .he_solver import BLOWUP, CONVERGED, extract_destabilizer, trace_path

    _, spec = _model_bundle(cfg)
    kw = cfg.solver.kwargs()
    if args.eps_min is not None:
        kw["eps_min"] = args.eps_min
    if args.tol is not None:
        kw["tol"] = args.tol
    res = trace_path(spec, **kw)
    records = res.records()
    tables = {"history": records, "message": res.message, "he_residual": res.he_residual}
    if res.verdict == CONVERGED:
        h = res.metric().grid_values(spec)
        tables["final_metric"] = {"shape": list(h.shape), "real": h.real, "imag": h.imag}
    if res.verdict == BLOWUP:
        tables["destabilizer"] = extract_destabilizer(res).summary()
    print(f"{res.verdict}: {res.message}")
    _history_csv(args, cfg, records)
    _emit(args, cfg, "solve-he", {"solver": res.verdict}, tables, t0)
    return EXIT_OK if res.verdict in (CONVERGED, BLOWUP) else EXIT_UNDECIDED


def cmd_verdict(args, cfg, t0):
    from .stability import UNSUPPORTED, stability_verdict

    _, spec = _model_bundle(cfg)
    rep = stability_verdict(spec)
    print(rep.verdict if not rep.message else f"{rep.verdict}: {rep.message}")
    _emit(args, cfg, "verdict", {"stability": rep.verdict}, {"stability": rep.to_dict()}, t0)
    return EXIT_UNDECIDED if rep.verdict == UNSUPPORTED else EXIT_OK


def cmd_hn(args, cfg, t0):
    from .stability import SEMISTABLE, POLYSTABLE, STABLE, Unsupported, harder_narasimhan, \
        jordan_holder, stability_verdict

    _, spec = _model_bundle(cfg)
    try:
        hn = harder_narasimhan(spec)
    except Unsupported as exc:
        print(f"UNSUPPORTED: {exc}")
        _emit(args, cfg, "hn", {"filtration": "UNSUPPORTED"}, {"message": str(exc)}, t0)
        return EXIT_UNDECIDED
    tables = {"harder_narasimhan": hn.to_dict()}
    if stability_verdict(spec).verdict in (STABLE, POLYSTABLE, SEMISTABLE):
        tables["jordan_holder"] = jordan_holder(spec).to_dict()
    for s in hn.to_dict()["steps"]:
        print(f"rank {s['rank']}  degree {_fmt(s['degree'])}  slope {_fmt(s['slope'])}")
    _emit(args, cfg, "hn", {"filtration": hn.kind}, tables, t0)
    return EXIT_OK


def cmd_moduli_t3(args, cfg, t0):
    from .moduli import noncompactness_certificate, transverse_moduli

    m = dict(cfg.moduli or {})
    if args.xi:
        m["xi"] = args.xi
    if args.count is not None:
        m["count"] = args.count
    if args.base:
        m["base"] = args.base
    if not m.get("xi"):
        raise ConfigError("moduli.xi: give --xi or a [moduli] section")
    topo = transverse_moduli(m["xi"])
    if topo["lattice_rank"]:
        raise ValueError(f"xi = {m['xi']} is rationally dependent (moduli {topo['moduli']}); "
                         "the certificate needs independent components")
    cert = noncompactness_certificate(m["xi"], count=m.get("count", 10),
                                      base=m.get("base", "0,0,0"))
    print(cert["conclusion"])
    _emit(args, cfg, "moduli-t3", {"certificate": cert["certificate"]},
          {"moduli": topo, "certificate": cert}, t0)
    return EXIT_OK


def cmd_instanton_check(args, cfg, t0):
    from .he_solver import CONVERGED, trace_path
    from .instanton import he_defect, instanton_residual, yang_mills_residual

    _, spec = _model_bundle(cfg)
    tables = {"standard_metric": {"instanton": instanton_residual(spec),
                                  "yang_mills": yang_mills_residual(spec), **he_defect(spec)}}
    verdicts = {}
    if not args.no_solve:
        res = trace_path(spec, **cfg.solver.kwargs())
        verdicts["solver"] = res.verdict
        if res.verdict == CONVERGED:
            f = res.metric()
            tables["he_metric"] = {"instanton": instanton_residual(spec, f),
                                   "yang_mills": yang_mills_residual(spec, f),
                                   **he_defect(spec, f)}
    for name, row in tables.items():
        print(f"{name:16s} instanton {row['instanton']:.3e}  yang-mills {row['yang_mills']:.3e}")
    last = tables.get("he_metric", tables["standard_metric"])
    verdicts["instanton"] = bool(last["instanton"] < args.tol)
    _emit(args, cfg, "instanton-check", verdicts, tables, t0)
    if not args.no_solve and verdicts["solver"] != CONVERGED:
        return EXIT_UNDECIDED
    return EXIT_OK


def cmd_reproduce_all(args, cfg, t0):
    from .reproduce import reproduce_all

    out_dir = Path(args.out_dir or cfg.output_dir)
    status = {}

    def progress(key, res):
        ok = bool(res["passed"])
        status[key] = "PASS" if ok else "FAIL"
        print(f"criterion {key:>2s} {status[key]}  {res['title']}", flush=True)
        rep = reports.make_report("reproduce-all", {"criterion": int(key)},
                                  verdicts={"criterion": status[key]}, tables=res,
                                  wall_clock=time.perf_counter() - t0)
        reports.write_json(rep, out_dir / f"criterion_{int(key):02d}.json")

    reproduce_all(progress)
    _emit(args, cfg, "reproduce-all", status, {"criteria": sorted(status, key=int)}, t0)
    return EXIT_OK if all(v == "PASS" for v in status.values()) else EXIT_ERROR


def cmd_plot(args, cfg, t0):
    import json

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rep = json.loads(Path(args.report).read_text())
    hist = rep.get("tables", {}).get("history")
    if not hist:
        raise ValueError(f"{args.report} has no per-eps history to plot")
    eps = np.array([float(r["eps"]) for r in hist])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("m_eps", "M_eps", "log_l2"):
        ax.loglog(eps, np.maximum([float(r[key]) for r in hist], 1e-300), "o-", label=key)
    ax.set_xlabel("eps")
    ax.invert_xaxis()
    ax.legend()
    ax.set_title(f"{rep['command']}: {rep['verdicts'].get('solver', '')}")
    out = Path(args.output or Path(args.report).with_suffix(".png"))
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"plot written to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="folhe", description="Transverse Hermitian-Einstein computations on "
                                         "flat foliated tori.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, *, config=True, bundle=True):
        s = sub.add_parser(name, help=help_)
        s.set_defaults(fn=fn)
        if config:
            s.add_argument("--config", action="append", metavar="CFG",
                           help="configuration file; may be repeated, later files win")
            s.add_argument("--model", metavar="CFG", help="model configuration file")
            if bundle:
                s.add_argument("--bundle", metavar="CFG", help="bundle configuration file")
            s.add_argument("--out", metavar="JSON", help="write the JSON report here")
            s.add_argument("--seed", type=int, help="seed for randomized suites")
        return s

    s = add("kernel-check", cmd_kernel_check, "operator identities on random forms",
            bundle=False)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--rank", type=int, default=2)
    add("degree", cmd_degree, "Chern-Weil degree of a bundle")
    s = add("solve-he", cmd_solve_he, "continuity path to a Hermitian-Einstein metric")
    s.add_argument("--eps-min", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--csv", metavar="CSV", help="write the per-eps history here")
    add("verdict", cmd_verdict, "algebraic stability verdict")
    add("hn", cmd_hn, "Harder-Narasimhan (and Jordan-Holder) filtration")
    s = add("moduli-t3", cmd_moduli_t3, "non-compactness certificate on T^3", bundle=False)
    s.add_argument("--xi", help='normal covector, e.g. "1,sqrt2,sqrt3"')
    s.add_argument("--count", type=int)
    s.add_argument("--base", help="base point of the sequence")
    s = add("instanton-check", cmd_instanton_check, "Omega-instanton and Yang-Mills residuals")
    s.add_argument("--no-solve", action="store_true", help="check the standard metric only")
    s.add_argument("--tol", type=float, default=1e-8)
    s = add("reproduce-all", cmd_reproduce_all, "run every acceptance case", bundle=False)
    s.add_argument("--out-dir", metavar="DIR", help="directory for per-case reports")
    s = sub.add_parser("plot", help="static plot of a solve-he report")
    s.set_defaults(fn=cmd_plot)
    s.add_argument("report", help="JSON report from solve-he")
    s.add_argument("-o", "--output", help="image path (default: report name with .png)")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = _config(args) if hasattr(args, "config") else RunConfig()
        return args.fn(args, cfg, t0)
    except ConfigError as exc:
        print(f"folhe: configuration error: {exc}", file=sys.stderr)
    except (ValueError, OSError) as exc:
        print(f"folhe: error: {exc}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    sys.exit(run())
