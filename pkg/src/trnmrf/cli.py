"""Command-line front end.

    trnmrf generate matching --n 9 --sigma 0.5 --k 40 --out m.mrf
    trnmrf solve m.mrf --solver trn --trace t.csv --report r.json
    trnmrf evaluate m.mrf labels.txt
    trnmrf compare m.mrf --solvers trn,qn,fista

Exit codes: 0 success, 1 other failures, 2 usage errors, 3 numerical aborts.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from .baseline import fista_solve
from .errors import InvalidInputError, MrfError, NumericalError, ParseError, SolverAbort
from .generators import gen_grid_curvature, gen_point_matching, random_tree_model
from .model import (
    build_chain_decomposition,
    build_clique_decomposition,
    energy,
    greedy_chain_decomposition,
    load_model,
    save_model,
)
from .qn import qn_solve
from .trace import write_report, write_trace
from .trn import TrnConfig, solve

__all__ = ["RunConfig", "run", "main"]

SOLVERS = {"trn": solve, "qn": qn_solve, "fista": fista_solve}
TABLE_ROWS = (
    ("time (s)", "wall_time_s"),
    ("oracle calls", "oracle_calls"),
    ("non-smooth dual", "nonsmooth_dual"),
    ("non-smooth primal", "nonsmooth_primal"),
    ("integer primal", "integer_primal"),
)

# CLI flag -> TrnConfig field
_CONFIG_FLAGS = {
    "lambda0": float,
    "alpha": float,
    "beta": float,
    "eps_rho": float,
    "zeta": float,
    "tau0": float,
    "tau_max": float,
    "cg_max": int,
    "memory": int,
    "pd_gap_every": int,
    "pd_gap_tol": float,
    "max_outer": int,
    "max_oracle_calls": int,
}


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    solver: str = "trn"
    solvers: tuple = ("trn", "fista")
    decomposition: str = "cliques"
    chains: str = "greedy"
    trn: TrnConfig = field(default_factory=TrnConfig)
    seed: int = 0
    threads: int = 1
    trace: str | None = None
    report: str | None = None
    out: str | None = None
    labeling: str | None = None
    kind: str | None = None
    params: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


def _read_chains(model, source):
    if source == "greedy":
        return greedy_chain_decomposition(model)
    chains = []
    with open(source) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                chains.append([int(v) for v in line.replace(",", " ").split()])
            except ValueError:
                raise ParseError("chain lines hold clique ids", n) from None
    return build_chain_decomposition(model, chains)


def _decomposition(model, kind, chains):
    if kind == "cliques":
        return build_clique_decomposition(model)
    return _read_chains(model, chains)


def _read_labeling(path):
    with open(path) as fh:
        text = fh.read().replace(",", " ").split()
    try:
        return np.array([int(v) for v in text], dtype=np.intp)
    except ValueError:
        raise ParseError("labeling files hold whitespace-separated integers") from None


def _run_solver(name, model, decomposition, cfg: TrnConfig):
    return SOLVERS[name](model, decomposition, cfg)


def _table(results):
    names = list(results)
    width = max(len(label) for label, _ in TABLE_ROWS)
    lines = [" " * width + "".join(f"{n:>16}" for n in names)]
    for label, key in TABLE_ROWS:
        cells = []
        for n in names:
            v = results[n].get(key)
            cells.append(f"{'-':>16}" if v is None else (f"{v:>16d}" if isinstance(v, int) else f"{v:>16.6f}"))
        lines.append(f"{label:<{width}}" + "".join(cells))
    return "\n".join(lines)


def _solve(cfg: RunConfig):
    model = load_model(cfg.model)
    decomposition = _decomposition(model, cfg.decomposition, cfg.chains)
    try:
        result = _run_solver(cfg.solver, model, decomposition, cfg.trn)
    except SolverAbort as exc:
        if exc.result is not None:
            if cfg.trace:
                write_trace(exc.result.trace, cfg.trace)
            if cfg.report:
                write_report(exc.result.report, cfg.report)
        raise
    if cfg.trace:
        write_trace(result.trace, cfg.trace)
    report = dict(result.report, model=cfg.model, decomposition=cfg.decomposition, threads=cfg.threads, seed=cfg.seed)
    if cfg.report:
        write_report(report, cfg.report)
    print(_table({cfg.solver: report}))
    return 0


def _compare(cfg: RunConfig):
    model = load_model(cfg.model)
    results = {}
    for name in cfg.solvers:
        if name not in SOLVERS:
            raise UsageError(f"unknown solver {name!r}")
        if name == "trn":
            decomposition = build_clique_decomposition(model)
        elif name == "qn":
            decomposition = _read_chains(model, cfg.chains)
        else:
            decomposition = _decomposition(model, cfg.decomposition, cfg.chains)
        result = _run_solver(name, model, decomposition, cfg.trn)
        results[name] = result.report
        if cfg.trace:
            write_trace(result.trace, f"{cfg.trace}.{name}.csv")
    print(_table(results))
    if cfg.report:
        rows = {label: {n: results[n].get(key) for n in results} for label, key in TABLE_ROWS}
        write_report({"trace_version": 1, "table": rows, "runs": results}, cfg.report)
    return 0


def _generate(cfg: RunConfig):
    p = cfg.params
    if cfg.kind == "matching":
        model = gen_point_matching(p["n"], p["sigma"], p["k"], seed=cfg.seed, unaries=p["unaries"])
    elif cfg.kind == "curvature":
        model = gen_grid_curvature(p["width"], p["height"], p["labels"], p["trunc"], seed=cfg.seed)
    elif cfg.kind == "tree":
        model = random_tree_model(cfg.seed, n_nodes=p["nodes"], max_labels=p["labels"])
    else:
        raise UsageError(f"unknown generator {cfg.kind!r}")
    save_model(model, cfg.out)
    print(f"wrote {cfg.out}: {model.node_count} nodes, {model.clique_count} cliques")
    return 0


def _evaluate(cfg: RunConfig):
    model = load_model(cfg.model)
    x = _read_labeling(cfg.labeling)
    print(repr(energy(model, x)))
    return 0


def run(config: RunConfig) -> int:
    """Execute one command and return its exit status."""
    handlers = {"solve": _solve, "compare": _compare, "generate": _generate, "evaluate": _evaluate}
    try:
        return handlers[config.command](config)
    except (UsageError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (MrfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _config_args(p):
    g = p.add_argument_group("solver parameters")
    defaults = TrnConfig()
    for name, typ in _CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=getattr(defaults, name))
    g.add_argument("--no-precondition", action="store_true", help="plain CG for the exact Newton system")
    g.add_argument("--wall-time", action="store_true", help="record wall-clock times in the trace (breaks byte-identical reruns)")
    g.add_argument("--track-bounds", action="store_true", help="evaluate the non-smooth dual and rounded energy at every trace row")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)


def _parser():
    p = argparse.ArgumentParser(prog="trnmrf", description="MAP inference for higher-order MRFs by smoothed dual minimization")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one model")
    s.add_argument("model")
    s.add_argument("--solver", choices=sorted(SOLVERS), default="trn")
    s.add_argument("--decomposition", choices=["cliques", "chains"], default="cliques")
    s.add_argument("--chains", default="greedy", help="chain file (one chain of clique ids per line) or 'greedy'")
    s.add_argument("--trace")
    s.add_argument("--report")
    _config_args(s)

    c = sub.add_parser("compare", help="run several solvers and tabulate the results")
    c.add_argument("model")
    c.add_argument("--solvers", default="trn,fista")
    c.add_argument("--decomposition", choices=["cliques", "chains"], default="cliques")
    c.add_argument("--chains", default="greedy")
    c.add_argument("--trace", help="prefix for per-solver trace files")
    c.add_argument("--report")
    _config_args(c)

    g = sub.add_parser("generate", help="write a synthetic model")
    g.add_argument("kind", choices=["matching", "curvature", "tree"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=9, help="matching: number of points (a perfect square)")
    g.add_argument("--sigma", type=float, default=0.5, help="matching: target noise")
    g.add_argument("--k", type=int, default=40, help="matching: pattern entries per clique")
    g.add_argument("--unaries", choices=["index", "zero"], default="index")
    g.add_argument("--width", type=int, default=6)
    g.add_argument("--height", type=int, default=6)
    g.add_argument("--labels", type=int, default=4)
    g.add_argument("--trunc", type=float, default=2.0)
    g.add_argument("--nodes", type=int, default=8)

    e = sub.add_parser("evaluate", help="energy of a labeling")
    e.add_argument("model")
    e.add_argument("labeling")
    return p


def _to_config(ns) -> RunConfig:
    cfg = RunConfig(ns.command)
    if ns.command == "generate":
        cfg.kind, cfg.out, cfg.seed = ns.kind, ns.out, ns.seed
        cfg.params = {k: getattr(ns, k) for k in ("n", "sigma", "k", "unaries", "width", "height", "labels", "trunc", "nodes")}
        return cfg
    cfg.model = ns.model
    if ns.command == "evaluate":
        cfg.labeling = ns.labeling
        return cfg
    values = {name: getattr(ns, name) for name in _CONFIG_FLAGS}
    cfg.trn = TrnConfig(
        **values,
        precondition=not ns.no_precondition,
        record_wall_time=ns.wall_time,
        track_bounds=ns.track_bounds,
        threads=ns.threads,
    )
    cfg.threads, cfg.seed = ns.threads, ns.seed
    cfg.decomposition, cfg.chains = ns.decomposition, ns.chains
    cfg.trace, cfg.report = ns.trace, ns.report
    if ns.command == "solve":
        cfg.solver = ns.solver
    else:
        cfg.solvers = tuple(s.strip() for s in ns.solvers.split(",") if s.strip())
    return cfg


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    try:
        cfg = _to_config(ns)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
