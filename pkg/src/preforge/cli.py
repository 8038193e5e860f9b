"""Command-line front end: analyze, search, verify, scheme, simulate, scan,
plotdata, catalog.

Model spec files are JSON documents (see :mod:`preforge.mespec` for the
schema); bare names resolve against the built-in catalog.  Results are
written as deterministic JSON bundles that embed the full configuration, so
re-running a bundle's command reproduces it bit for bit.  Exit codes:
0 success, 1 failed check or nothing found, 2 usage error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .algebra import eig_full
from .constraints import (
    Ensemble,
    build_full,
    build_subspace_reduced,
    heuristic_min_k,
    transition_edges,
    verify,
)
from .errors import PreForgeError, ConvergenceError, SteadyStateError
from .errors import RealizationError, SynthesisError
from .measurement import synthesize
from .mespec import MESpecError, UnboundParameterError, catalog_names, load_catalog, load_me_spec
from .model import vectorize
from .solver import (
    SolverConfig,
    analytic_k2,
    ensemble_distance,
    family_equivalent,
    scan_existence,
    solve_numeric,
    solve_wigner_family,
)
from .symmetry import find_invariant_subspaces, find_wigner_symmetries
from .trajectory import TrajectoryConfig, simulate, unconditional_check

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _parse_params(pairs):
    params = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise MESpecError(f"--param expects NAME=VALUE, got '{pair}'")
        name, _, value = pair.partition("=")
        try:
            params[name.strip()] = float(value)
        except ValueError as exc:
            raise MESpecError(f"--param {name}: '{value}' is not a number") from exc
    return params


def _load_model(spec, params):
    if os.path.exists(spec):
        return load_me_spec(spec, params)
    if spec in catalog_names():
        return load_catalog(spec, params)
    raise MESpecError(
        f"'{spec}' is neither a file nor a catalog entry (catalog: {', '.join(catalog_names())})"
    )


def _ensemble_to_doc(ens: Ensemble) -> dict:
    return {
        "dim": ens.dim,
        "states": ens.states.tolist(),
        "kappa": ens.kappa.tolist(),
        "occupations": ens.occupations.tolist(),
    }


def _ensemble_from_doc(doc: dict) -> Ensemble:
    return Ensemble.from_states_kappa(
        int(doc["dim"]), np.asarray(doc["states"], float), np.asarray(doc["kappa"], float)
    )


def _load_ensemble(path) -> Ensemble:
    with open(path, "r", encoding="utf-8") as fh:
        return _ensemble_from_doc(json.load(fh))


def _bundle(command, config, results) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "pre-forge", "version": __version__},
        "command": command,
        "config": config,
        "results": results,
    }


def _emit(doc, path):
    payload = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)


def _model_summary(bm) -> dict:
    spectrum = eig_full(bm.l0)
    clusters = [
        {
            "eigenvalue": [c.value.real, c.value.imag],
            "algebraic": c.algebraic,
            "geometric": c.geometric,
            "defective": c.defective,
            "vectors": np.round(c.vectors.real, 12).tolist()
            if np.max(np.abs(c.vectors.imag)) < 1e-12
            else [
                [[v.real, v.imag] for v in c.vectors[:, i]]
                for i in range(c.vectors.shape[1])
            ],
            "jordan_chain_lengths": [len(ch) for ch in c.jordan_chains],
        }
        for c in spectrum.clusters
    ]
    return {
        "dim": bm.dim,
        "l0": bm.l0.tolist(),
        "b": bm.b.tolist(),
        "x_ss": bm.x_ss.tolist(),
        "defective": spectrum.defective,
        "eigen_clusters": clusters,
    }


def cmd_analyze(args) -> int:
    me = _load_model(args.spec, _parse_params(args.param))
    bm = vectorize(me)
    summary = _model_summary(bm)
    print(f"dim = {bm.dim}")
    print("l0 =")
    for row in bm.l0:
        print("   [" + "  ".join(f"{v: .6g}" for v in row) + "]")
    print("b  = [" + "  ".join(f"{v: .6g}" for v in bm.b) + "]")
    print("x_ss = [" + "  ".join(f"{v: .6g}" for v in bm.x_ss) + "]")
    print(f"defective generator: {summary['defective']}")
    for c in summary["eigen_clusters"]:
        re, im = c["eigenvalue"]
        lam = f"{re:.6g}" + (f"{im:+.6g}i" if abs(im) > 1e-12 else "")
        print(
            f"eigenvalue {lam}: algebraic {c['algebraic']}, geometric {c['geometric']}"
            + (", defective" if c["defective"] else "")
        )
    bundle = _bundle(
        "analyze", {"spec": args.spec, "params": _parse_params(args.param)}, {"model": summary}
    )
    if args.output:
        _emit(bundle, args.output)
    return EXIT_OK


def _subspace_doc(sub) -> dict:
    return {
        "dim": sub.n,
        "basis": sub.basis_i0.tolist(),
        "certificate": sub.certificate,
        "family": sub.family.kind if sub.family else None,
        "tags": list(sub.tags),
    }


def cmd_search(args) -> int:
    params = _parse_params(args.param)
    me = _load_model(args.spec, params)
    bm = vectorize(me)
    k = args.k
    floor = heuristic_min_k(bm.dim)
    if k < floor:
        print(
            f"warning: K={k} is below the parameter-counting bound {floor} "
            "for this dimension; the search may come up empty",
            file=sys.stderr,
        )
    cfg = SolverConfig(tol=args.tol, seeds=args.seeds, rng_seed=args.rng)
    symmetries = find_wigner_symmetries(bm)
    subspaces = find_invariant_subspaces(bm)

    found = []
    sources = []
    if args.wigner_reduce == "auto":
        family = solve_wigner_family(bm, k)
        for ens, tag in zip(family.ensembles, family.family_tags):
            found.append(ens)
            sources.append({"route": "wigner-family", "rates_out": list(map(float, tag["rates_out"]))})

    searched_subspaces = []
    if args.subspace == "none":
        systems = [("full", build_full(bm, k, args.graph))]
    elif args.subspace == "auto":
        systems = []
        for idx, sub in enumerate(sorted(subspaces, key=lambda s: s.n)):
            if sub.n >= bm.dim - 1:
                systems.append((f"subspace[{idx}] dim {sub.n}", build_subspace_reduced(bm, sub, k, args.graph)))
                searched_subspaces.append(_subspace_doc(sub))
        systems.append(("full", build_full(bm, k, args.graph)))
    else:
        idx = int(args.subspace)
        if not 0 <= idx < len(subspaces):
            raise ValueError(
                f"--subspace {idx} out of range: {len(subspaces)} subspaces detected"
            )
        sub = subspaces[idx]
        systems = [(f"subspace[{idx}] dim {sub.n}", build_subspace_reduced(bm, sub, k, args.graph))]
        searched_subspaces.append(_subspace_doc(sub))

    if k == 2:
        analytic = analytic_k2(bm)
        for ens, tag in zip(analytic.ensembles, analytic.family_tags):
            found.append(ens)
            sources.append({"route": "analytic-k2", "eigenvalue": tag["eigenvalue"]})

    # Solutions related by a continuous symmetry count once.
    generators = [w.generator for w in symmetries if w.generator is not None]

    def seen(ens):
        for prev in found:
            if ensemble_distance(ens, prev) <= cfg.dedup_eps:
                return True
            if any(family_equivalent(prev, ens, g, cfg.dedup_eps) for g in generators):
                return True
        return False

    for label, system in systems:
        sols = solve_numeric(system, cfg)
        for ens in sols.ensembles:
            if not seen(ens):
                found.append(ens)
                sources.append({"route": label})

    results = {
        "model": _model_summary(bm),
        "symmetries": [
            {
                "t0": w.t0.tolist(),
                "antiunitary": w.antiunitary,
                "generator_tag": w.generator_tag,
            }
            for w in symmetries
        ],
        "subspaces": [_subspace_doc(s) for s in subspaces],
        "searched_subspaces": searched_subspaces,
        "ensembles": [
            dict(_ensemble_to_doc(e), source=src) for e, src in zip(found, sources)
        ],
    }
    bundle = _bundle(
        "search",
        {
            "spec": args.spec,
            "params": params,
            "k": k,
            "graph": args.graph,
            "subspace": args.subspace,
            "wigner_reduce": args.wigner_reduce,
            "seeds": args.seeds,
            "tol": args.tol,
            "rng_seed": args.rng,
        },
        results,
    )
    _emit(bundle, args.output)
    print(f"found {len(found)} ensembles", file=sys.stderr)
    return EXIT_OK if found else EXIT_FAILED_CHECK


def cmd_verify(args) -> int:
    me = _load_model(args.spec, _parse_params(args.param))
    bm = vectorize(me)
    ens = _load_ensemble(args.ensemble)
    report = verify(bm, ens, tol=args.tol)
    print(report)
    for k, r in enumerate(report.residuals):
        print(f"  member {k}: residual {r:.3e}, occupation {report.occupations[k]:.6f}")
    bundle = _bundle(
        "verify",
        {"spec": args.spec, "params": _parse_params(args.param), "ensemble": args.ensemble, "tol": args.tol},
        {
            "passed": report.passed,
            "max_residual": report.max_residual,
            "residuals": report.residuals.tolist(),
            "occupations": report.occupations.tolist(),
            "strongly_connected": report.strongly_connected,
            "ensemble_average_error": report.ensemble_average_error,
        },
    )
    if args.output:
        _emit(bundle, args.output)
    return EXIT_OK if report.passed else EXIT_FAILED_CHECK


def cmd_scheme(args) -> int:
    me = _load_model(args.spec, _parse_params(args.param))
    ens = _load_ensemble(args.ensemble)
    scheme = synthesize(me, ens, m=args.detectors)
    doc = {
        "settings": [
            {
                "member": k,
                "beta": [[b.real, b.imag] for b in setting.beta],
                "s": [[[v.real, v.imag] for v in row] for row in setting.s],
                "routing": scheme.jump_map[k].tolist(),
            }
            for k, setting in enumerate(scheme.settings)
        ]
    }
    for entry in doc["settings"]:
        betas = ", ".join(f"{b[0]:+.6f}{b[1]:+.6f}i" for b in entry["beta"])
        print(f"member {entry['member']}: beta = [{betas}], routing = {entry['routing']}")
    bundle = _bundle(
        "scheme",
        {
            "spec": args.spec,
            "params": _parse_params(args.param),
            "ensemble": args.ensemble,
            "detectors": args.detectors,
        },
        {"scheme": doc, "ensemble": _ensemble_to_doc(ens)},
    )
    if args.output:
        _emit(bundle, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    me = _load_model(args.spec, _parse_params(args.param))
    ens = _load_ensemble(args.ensemble)
    scheme = synthesize(me, ens, m=args.detectors)
    cfg = TrajectoryConfig(n_jumps=args.jumps, rng_seed=args.rng)
    stats = simulate(me, scheme, ens, cfg)
    print(f"jumps recorded: {stats.n_jumps}, total time {stats.total_time:.4g}")
    print("occupancy:", " ".join(f"{v:.6f}" for v in stats.occupancy))
    print("stationary:", " ".join(f"{v:.6f}" for v in ens.occupations))
    print(f"max state drift: {stats.max_state_drift:.3e}")
    results = {
        "occupancy": stats.occupancy.tolist(),
        "stationary": ens.occupations.tolist(),
        "jump_counts": stats.jump_counts.tolist(),
        "self_loop_counts": stats.self_loop_counts.tolist(),
        "max_state_drift": stats.max_state_drift,
        "n_jumps": stats.n_jumps,
        "total_time": stats.total_time,
    }
    if args.unconditional:
        rep = unconditional_check(me, scheme, cfg, n_trajectories=args.trajectories)
        results["unconditional"] = {
            "times": rep.times.tolist(),
            "distances": rep.distances.tolist(),
            "passed": rep.passed,
        }
        print(f"unconditional max distance: {max(rep.distances):.3e} (tol {rep.tol})")
    if args.events:
        with open(args.events, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "channel", "from_label", "to_label"])
            writer.writerows(stats.events)
    bundle = _bundle(
        "simulate",
        {
            "spec": args.spec,
            "params": _parse_params(args.param),
            "ensemble": args.ensemble,
            "jumps": args.jumps,
            "rng_seed": args.rng,
        },
        results,
    )
    if args.output:
        _emit(bundle, args.output)
    return EXIT_OK


def cmd_scan(args) -> int:
    params = _parse_params(args.param)
    start, stop, step = (float(v) for v in args.values.split(":"))
    values = np.arange(start, stop + 0.5 * step, step)

    span = None
    if args.subspace_span:
        rows = [list(map(float, row.split(","))) for row in args.subspace_span.split(";")]
        span = np.asarray(rows, dtype=float).T

    def bm_factory(value):
        bound = dict(params)
        bound[args.scan_param] = float(value)
        return vectorize(_load_model(args.spec, bound))

    def cs_builder(bm):
        if span is not None:
            from .symmetry import subspace_from_span

            sub = subspace_from_span(bm, span)
            return build_subspace_reduced(bm, sub, args.k, args.graph)
        return build_full(bm, args.k, args.graph)

    quotient = None
    if args.quotient == "auto":
        gens = [w.generator for w in find_wigner_symmetries(bm_factory(values[0])) if w.generator is not None]
        quotient = gens[0] if gens else None

    cfg = SolverConfig(tol=args.tol, seeds=args.seeds, rng_seed=args.rng)
    table = scan_existence(
        bm_factory, values, cs_builder, cfg, parameter=args.scan_param, quotient_generator=quotient
    )
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow([args.scan_param, "n_ensembles"])
        for value, count in table.rows():
            writer.writerow([f"{value:.6g}", count])
    finally:
        if args.output:
            out.close()
    for threshold in table.thresholds:
        print(f"count changes near {args.scan_param} = {threshold:.6g}", file=sys.stderr)
    return EXIT_OK


_FIGURES = {
    "fig1a": {"k": 2, "pre_indices": [0]},
    "fig1b": {"k": 2, "pre_indices": [1]},
    "fig1c": {"k": 2, "pre_indices": [2]},
    "fig2": {"k": 3, "pre_indices": None},
    "fig3": {"k": 3, "pre_indices": None, "cycling": True},
    "fig4": {"k": None, "pre_indices": None},
}


def cmd_plotdata(args) -> int:
    if args.figure_id not in _FIGURES:
        print(
            f"unknown figure id '{args.figure_id}' (known: {', '.join(sorted(_FIGURES))})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    with open(args.bundle, "r", encoding="utf-8") as fh:
        bundle = json.load(fh)
    ensembles = bundle.get("results", {}).get("ensembles", [])
    x_ss = bundle.get("results", {}).get("model", {}).get("x_ss")
    layout = _FIGURES[args.figure_id]
    indices = layout["pre_indices"] or range(len(ensembles))
    with_cycling = layout.get("cycling", False)

    header = [
        "record_type",
        "pre_index",
        "member_index",
        "x",
        "y",
        "z",
        "weight",
        "from_index",
        "to_index",
        "rate",
    ]
    if with_cycling:
        header.append("cycle_direction")
    out = sys.stdout if not args.output else open(args.output, "w", newline="")
    writer = csv.writer(out)
    writer.writerow(header)
    for pre_index in indices:
        if pre_index >= len(ensembles):
            continue
        doc = ensembles[pre_index]
        states = np.asarray(doc["states"], float)
        kappa = np.asarray(doc["kappa"], float)
        weights = np.asarray(doc["occupations"], float)
        direction = ""
        if with_cycling and states.shape[0] >= 3:
            direction = "forward" if kappa[1, 0] > 0 else "backward"
        for m, (x, w) in enumerate(zip(states, weights)):
            row = ["member", pre_index, m, *[f"{v:.12g}" for v in x], f"{w:.12g}", "", "", ""]
            writer.writerow(row + ([direction] if with_cycling else []))
        if x_ss is not None:
            row = ["steady", pre_index, "", *[f"{v:.12g}" for v in x_ss], "", "", "", ""]
            writer.writerow(row + ([""] if with_cycling else []))
        for j, k0 in np.argwhere(kappa > 0):
            row = [
                "arrow",
                pre_index,
                "",
                "",
                "",
                "",
                "",
                int(k0),
                int(j),
                f"{kappa[j, k0]:.12g}",
            ]
            writer.writerow(row + ([""] if with_cycling else []))
    if args.output:
        out.close()
    return EXIT_OK


def cmd_catalog(args) -> int:
    for name in catalog_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pre-forge",
        description="Find, verify and physically realize jump ensembles of "
        "Markovian open quantum systems.",
    )
    parser.add_argument("--version", action="version", version=f"pre-forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("spec", help="model spec file or catalog name")
        p.add_argument("--param", action="append", metavar="NAME=VALUE", help="bind a parameter")
        p.add_argument("-o", "--output", help="write a JSON bundle here")

    p = sub.add_parser("analyze", help="coherence-space reduction and eigenstructure")
    add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("search", help="find ensembles")
    add_common(p)
    p.add_argument("--k", type=int, required=True, help="ensemble size")
    p.add_argument("--graph", choices=["cyclic", "full"], default="cyclic")
    p.add_argument("--subspace", default="auto", help="auto | none | index")
    p.add_argument("--wigner-reduce", choices=["auto", "none"], default="auto")
    p.add_argument("--seeds", type=int, default=512)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--rng", type=int, default=0)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("verify", help="check an ensemble file")
    add_common(p)
    p.add_argument("--ensemble", required=True, help="ensemble JSON file")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scheme", help="synthesize an adaptive measurement scheme")
    add_common(p)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--detectors", type=int, default=None)
    p.set_defaults(func=cmd_scheme)

    p = sub.add_parser("simulate", help="jump-trajectory statistics for a scheme")
    add_common(p)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--detectors", type=int, default=None)
    p.add_argument("--jumps", type=int, default=10000)
    p.add_argument("--rng", type=int, default=0)
    p.add_argument("--events", help="write per-jump CSV here")
    p.add_argument("--unconditional", action="store_true")
    p.add_argument("--trajectories", type=int, default=200)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scan", help="existence counts over a parameter grid")
    add_common(p)
    p.add_argument("--scan-param", required=True, help="parameter to sweep")
    p.add_argument("--values", required=True, metavar="START:STOP:STEP")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--graph", choices=["cyclic", "full"], default="cyclic")
    p.add_argument(
        "--subspace-span",
        help="semicolon-separated coordinate rows spanning the subspace, e.g. '1,0,0;0,0,1'",
    )
    p.add_argument("--quotient", choices=["auto", "none"], default="auto")
    p.add_argument("--seeds", type=int, default=192)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--rng", type=int, default=0)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("plotdata", help="figure-layout CSV from a search bundle")
    p.add_argument("bundle", help="bundle JSON from a search run")
    p.add_argument("--figure-id", required=True)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("catalog", help="list built-in model specs")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnboundParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MESpecError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, SteadyStateError, SynthesisError, RealizationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PreForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED_CHECK


if __name__ == "__main__":
    sys.exit(main())
