"""Command-line front end: ``hardycap run <subcommand> --scenario file.toml``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, figures, svg
from .capacity import (CapacityError, CapacityProblem, lipschitz_test_function, radial_condenser_capacity,
                       solve_capacity)
from .geometry import Ball, DomainError, build_domain, export_distance_csv
from .hardy_sobolev import (AscentConfig, applies_check, candidate_sets, divergence_scan, mazya_scan,
                            rayleigh_lower_bound, truncation_chain_check)
from .maximal import Convolver, local_maximal, maximal_bound_check, sample_fields, upper_gradient_check
from .quasiadd import (ball_bounds_scan, equivalence_experiment, example_62_sequence, index_families,
                       quasiadd_candidates, quasiadd_scan, sample_balls, weak_quasiadd_scan)
from .scenario import Scenario, ScenarioError, load_scenario
from .whitney import CoverError, build_cover, build_partition, verify_cover

log = logging.getLogger("hardycap")

SUBCOMMANDS = ("domain", "whitney", "capacity", "hardy", "mazya", "maximal", "convolve", "quasiadd",
               "weak-quasiadd", "ball-bounds", "example62", "equivalence")

EXIT_OK, EXIT_CONSTRAINT, EXIT_SOLVER = 0, 2, 3


def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(payload) -> str:
    return json.dumps(clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


class Run:
    """Per-invocation state: scenario, output directory and artifact list."""

    def __init__(self, scenario: Scenario, out: Path):
        self.sc = scenario
        self.out = out
        self.files: list = []
        self._domain = None
        self._cover = None
        self._condenser = None

    @property
    def domain(self):
        if self._domain is None:
            self._domain = build_domain(self.sc.build_shape(), self.sc.h)
        return self._domain

    @property
    def cover(self):
        if self._cover is None:
            self._cover = build_cover(self.domain, self.sc.c)
        return self._cover

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])

    def heatmap(self, stem: str, values, title: str) -> None:
        svg.write(self.path(stem + ".svg"), svg.heatmap(values, self.domain.inside, title))
        figures.field_png(self.path(stem + ".png"), self.domain, values, title)

    def bars(self, stem: str, labels, values, title: str, log_scale: bool = True) -> None:
        svg.write(self.path(stem + ".svg"), svg.bar_chart(labels, values, title, log=log_scale))
        figures.bars_png(self.path(stem + ".png"), labels, values, title, log=log_scale)

    def condenser(self):
        """Condenser set: scenario ball, or the ball of radius d_max/4 at the deepest cell."""
        if self._condenser is None:
            dom = self.domain
            if self.sc.condenser:
                center, r = self.sc.condenser["center"], self.sc.condenser["radius"]
            else:
                k = np.unravel_index(int(np.argmax(np.where(dom.inside, dom.dist, -1))), dom.shape)
                center, r = [float(v) for v in dom.point_of(k)], 0.25 * float(dom.dist[k])
            self._condenser = (center, r, dom.cells_in_ball(center, r))
        return self._condenser


# ---------------------------------------------------------------------------
# subcommands; each returns a JSON-ready record


def cmd_domain(run: Run) -> dict:
    dom = run.domain
    export_distance_csv(dom, run.path("domain_distance.csv"))
    run.heatmap("domain_distance", dom.dist, "distance to complement")
    return {"operation": "build_domain", "n": dom.n, "h": dom.h, "extent": list(dom.extent),
            "n_inside": dom.n_inside, "max_distance": float(dom.dist[dom.inside].max()),
            "volume": dom.n_inside * dom.cell_measure}


def cmd_whitney(run: Run) -> dict:
    cover = run.cover
    rep = verify_cover(cover)
    part = build_partition(cover)
    sums = part.sums()
    cover.export_csv(run.path("whitney_balls.csv"))
    run.heatmap("whitney_overlap", run.domain.from_compact(cover.overlap_counts(3.0).astype(float)),
                "overlap of 3B_i")
    return {"operation": "verify_cover", "cover": rep.record(),
            "partition": {"operation": "build_partition", "max_sum_error": float(np.max(np.abs(sums - 1))),
                          "nu": part.nu, "K": part.K, "M_obs": part.M_obs, "t": part.t,
                          "nu_at_least_inverse_overlap": bool(part.nu >= 1.0 / part.M_obs)}}


def cmd_capacity(run: Run) -> dict:
    sc = run.sc
    center, r, E = run.condenser()
    prob = CapacityProblem(run.domain, E, p=sc.params.p, beta=sc.params.beta)
    res = solve_capacity(prob, sc.solver)
    out = {"operation": "solve_capacity", "E": {"center": center, "radius": r}, **res.record()}
    shape = run.sc.build_shape()
    if isinstance(shape, Ball) and np.allclose(shape.center, center) and sc.params.beta == 0:
        out["closed_form"] = radial_condenser_capacity(run.domain.n, sc.params.p, r, shape.radius)
        out["relative_error"] = abs(res.value - out["closed_form"]) / out["closed_form"]
    run.heatmap("capacity_minimizer", res.minimizer, "capacity minimizer")
    return out


def cmd_hardy(run: Run) -> dict:
    sc = run.sc
    asc = AscentConfig(seed=sc.seed)
    ray = rayleigh_lower_bound(run.domain, sc.params, asc, sc.mode)
    hs = sc.rayleigh_hs or [4 * sc.h, 2 * sc.h, sc.h]
    div = divergence_scan(sc.build_shape(), sc.params, hs, asc, sc.mode)
    center, r, E = run.condenser()
    u = lipschitz_test_function(CapacityProblem(run.domain, E, p=sc.params.p, beta=sc.params.beta))
    chain = truncation_chain_check(u, sc.params, run.domain, sc.solver, mode=sc.mode)
    run.heatmap("hardy_witness", np.abs(ray.witness), "quotient witness |u|")
    run.write_csv("hardy_divergence.csv", ["h", "quotient_sup"], zip(div.hs, div.values))
    figures.ladder_png(run.path("hardy_divergence.png"), div.hs, {"sup quotient": div.values},
                       "quotient supremum vs grid step", "h", "quotient")
    return {"operation": "rayleigh_lower_bound", "rayleigh": ray.record(),
            "divergence": {"operation": "divergence_scan", **div.record()},
            "truncation_chain": {"operation": "truncation_chain_check", **chain.record()}}


def cmd_mazya(run: Run) -> dict:
    sc = run.sc
    ray = rayleigh_lower_bound(run.domain, sc.params, AscentConfig(seed=sc.seed), sc.mode)
    cands = candidate_sets(run.domain, run.cover, seed=sc.seed, n_balls=sc.samples, n_unions=sc.samples,
                           witness=ray.witness)
    scan = mazya_scan(run.domain, sc.params, cands, sc.solver, mode=sc.mode)
    app = applies_check(ray.witness, cands, sc.params, run.domain, sc.mode)
    run.write_csv("mazya_samples.csv", ["E", "cells", "lhs", "cap", "ratio", "degenerate"],
                  [(s.label, s.n_cells, s.lhs, s.cap, s.ratio, s.degenerate) for s in scan.samples])
    run.bars("mazya_ratios", [s.label for s in scan.samples], [s.ratio for s in scan.samples], "Maz'ya ratios")
    return {"operation": "mazya_scan", "max_ratio": scan.max_ratio, "failure": scan.failure,
            "running_max": scan.running_max, "samples": [s.record() for s in scan.samples],
            "witness_quotient": ray.value,
            "applies": {"operation": "applies_check", **app.__dict__}}


def cmd_maximal(run: Run) -> dict:
    sc = run.sc
    mx = sc.maximal
    beta = sc.params.beta
    rep = maximal_bound_check(run.domain, beta, mx.s, mx.kappa, sc.trials, sc.seed, sc.ceiling)
    f = sample_fields(run.domain, 1, sc.seed)[0]
    run.heatmap("maximal_example", local_maximal(f, run.domain, mx.kappa), "local maximal function")
    run.bars("maximal_ratios", list(range(len(rep.ratios))), rep.ratios, "weighted L^s ratios", log_scale=False)
    return {"operation": "maximal_bound_check", **rep.record()}


def cmd_convolve(run: Run) -> dict:
    sc = run.sc
    cfg = sc.convolution
    conv = Convolver.build(run.domain, cfg)
    center, r, E = run.condenser()
    prob = CapacityProblem(run.domain, E, p=sc.params.p, beta=sc.params.beta)
    witnesses = {"lipschitz_test_function": lipschitz_test_function(prob),
                 "condenser_minimizer": solve_capacity(prob, sc.solver).minimizer}
    out = {"operation": "upper_gradient_check", "c": cfg.c, "witnesses": {}}
    for name, u in witnesses.items():
        out["witnesses"][name] = upper_gradient_check(u, cfg, run.domain, conv).record()
    run.heatmap("convolve_lipschitz", conv(witnesses["lipschitz_test_function"]), "discrete convolution u_t")
    return out


def cmd_quasiadd(run: Run) -> dict:
    sc = run.sc
    fam = quasiadd_candidates(run.cover, sc.samples, sc.seed)
    res = quasiadd_scan(run.domain, sc.params, run.cover, fam, sc.solver, mode=sc.mode)
    run.write_csv("quasiadd_samples.csv", ["E", "cells", "pieces", "cap", "piece_sum", "ratio", "degenerate"],
                  [(s.label, s.n_cells, s.n_pieces, s.cap, s.piece_sum, s.ratio, s.degenerate) for s in res.samples])
    run.bars("quasiadd_ratios", [s.label for s in res.samples], [s.ratio for s in res.samples], "quasiadditivity ratios")
    return {"operation": "quasiadd_scan", **res.record()}


def cmd_weak(run: Run) -> dict:
    sc = run.sc
    fams = index_families(run.cover, sc.samples, sc.seed)
    res = weak_quasiadd_scan(run.domain, sc.params, run.cover, fams, sc.solver, mode=sc.mode)
    run.write_csv("weak_quasiadd_samples.csv", ["indices", "union_cap", "ratio", "subadditive", "degenerate"],
                  [("-".join(map(str, s.indices)), s.union_cap, s.ratio, s.subadditive, s.degenerate)
                   for s in res.samples])
    run.bars("weak_quasiadd_ratios", list(range(len(res.samples))), [s.ratio for s in res.samples],
             "weak quasiadditivity ratios", log_scale=False)
    return {"operation": "weak_quasiadd_scan", "all_subadditive": all(s.subadditive for s in res.samples),
            **res.record()}


def cmd_ball_bounds(run: Run) -> dict:
    sc = run.sc
    balls = sample_balls(run.cover, 2 * sc.samples, sc.seed)
    res = ball_bounds_scan(run.domain, sc.params, run.cover, balls, sc.solver, mode=sc.mode)
    run.write_csv("ball_bounds.csv", ["ball", "radius", "cap", "reference", "lower_ratio", "upper_ratio"],
                  [(r.ball, r.radius, r.cap, r.reference, r.lower_ratio, r.upper_ratio) for r in res.records])
    run.bars("ball_bounds_lower", [r.ball for r in res.records], [r.lower_ratio for r in res.records],
             "cap / reference")
    return {"operation": "ball_bounds_scan", **res.record()}


def cmd_example62(run: Run) -> dict:
    ex = run.sc.example62
    fit = example_62_sequence(ex["p"], ex["beta"], range(ex["j_min"], ex["j_max"] + 1), ex["h"])
    run.write_csv("example62_energies.csv", ["j", "energy"], zip(fit.js, fit.energies))
    figures.decay_png(run.path("example62_decay.png"), fit)
    svg.write(run.path("example62_decay.svg"), svg.bar_chart(fit.js, fit.energies, "energy(u_j)", log=True))
    return {"operation": "example_62_sequence", **fit.record()}


def cmd_equivalence(run: Run) -> dict:
    sc = run.sc
    rep = equivalence_experiment(sc.build_shape(), sc.params, sc.h, sc.c, sc.seed, sc.samples, sc.solver,
                                 AscentConfig(seed=sc.seed), sc.mode)
    r = rep.rayleigh
    figures.ladder_png(run.path("equivalence_quotient.png"), r["hs"], {"sup quotient": r["values"]},
                       "quotient supremum vs grid step", "h", "quotient")
    svg.write(run.path("equivalence_quotient.svg"), svg.bar_chart([f"{h:.4g}" for h in r["hs"]], r["values"],
                                                                 "quotient supremum per grid step"))
    return {"operation": "equivalence_experiment", **rep.record()}


COMMANDS = {"domain": cmd_domain, "whitney": cmd_whitney, "capacity": cmd_capacity, "hardy": cmd_hardy,
            "mazya": cmd_mazya, "maximal": cmd_maximal, "convolve": cmd_convolve, "quasiadd": cmd_quasiadd,
            "weak-quasiadd": cmd_weak, "ball-bounds": cmd_ball_bounds, "example62": cmd_example62,
            "equivalence": cmd_equivalence}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardycap", description="Weighted capacity and Hardy-Sobolev experiments on grids.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment pipeline from a scenario file")
    run.add_argument("subcommand", choices=SUBCOMMANDS + ("all",))
    run.add_argument("--scenario", type=Path, required=True)
    run.add_argument("--out", type=Path, default=None, help="output directory (default: scenario [output] dir or ./out)")
    run.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    run.add_argument("--threads", type=int, default=1, help="recorded only; pipelines run sequentially")
    run.add_argument("--mode", choices=("ambient", "qregular"), default=None)
    run.add_argument("-v", "--verbose", action="store_true")
    chk = sub.add_parser("check", help="parse and validate a scenario file")
    chk.add_argument("scenario", type=Path)
    return ap


def _write_manifest(out: Path, files, complete: bool, failed: str | None) -> None:
    with open(out / "MANIFEST", "w", encoding="utf-8") as fh:
        fh.write(f"status: {'complete' if complete else 'partial'}\n")
        if failed:
            fh.write(f"failed: {failed}\n")
        for name in sorted(set(files)):
            fh.write(name + "\n")


def run_scenario(sc: Scenario, subcommand: str, out: Path, threads: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sc, out)
    names = list(SUBCOMMANDS) if subcommand == "all" else [subcommand]
    results = {}
    timings = {}
    status, failed, error = EXIT_OK, None, None
    started = datetime.now(timezone.utc)
    for name in names:
        t0 = time.perf_counter()
        try:
            results[name] = COMMANDS[name](run)
        except (CapacityError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            status, failed, error = EXIT_SOLVER, name, f"{type(exc).__name__}: {exc}"
        except (DomainError, CoverError, ValueError) as exc:
            status, failed, error = EXIT_CONSTRAINT, name, f"{type(exc).__name__}: {exc}"
        timings[name] = time.perf_counter() - t0
        log.info("%s finished in %.2f s", name, timings[name])
        if failed:
            log.error("%s failed: %s", name, error)
            break
    report = {"subcommand": subcommand, "version": __version__, "seed": sc.seed, "mode": sc.mode,
              "scenario": sc.record(), "warnings": sc.warnings, "results": results,
              "status": "ok" if status == EXIT_OK else "failed", "error": error}
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    run.files.append("report.json")
    prov = {"started": started.isoformat(), "finished": datetime.now(timezone.utc).isoformat(),
            "wall_clock_s": timings, "python": platform.python_version(), "numpy": np.__version__,
            "platform": platform.platform(), "threads": threads, "version": __version__,
            "grid": {"h": sc.h, "n_inside": run._domain.n_inside if run._domain is not None else None}}
    (out / "provenance.json").write_text(dumps(prov), encoding="utf-8")
    run.files.append("provenance.json")
    _write_manifest(out, run.files, status == EXIT_OK, failed)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = args.scenario
    try:
        sc = load_scenario(path)
    except ScenarioError as exc:
        print(f"{path}: invalid scenario", file=sys.stderr)
        for m in exc.messages:
            print(f"  - {m}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except OSError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    for w in sc.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.command == "check":
        print(dumps(sc.record()), end="")
        return EXIT_OK
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.mode is not None:
        sc = replace(sc, mode=args.mode)
        errs = sc.params.validate(sc.build_shape().dim, qregular=sc.mode == "qregular")
        if errs:
            print(f"{path}: invalid scenario for --mode {sc.mode}", file=sys.stderr)
            for m in errs:
                print(f"  - {m}", file=sys.stderr)
            return EXIT_CONSTRAINT
    out = args.out or Path(sc.out or "out")
    status = run_scenario(sc, args.subcommand, out, args.threads)
    print(f"{args.subcommand}: {'ok' if status == EXIT_OK else 'failed'} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
