"""Manifest-driven command line front end.

``lattice-qms run --manifest run.toml --out outdir`` executes the command named
in the manifest and writes ``summary.json`` plus ``table_*.csv``.
``lattice-qms compare DIR_A DIR_B`` diffs the values of two finished runs.

Exit codes: 0 success, 1 bad input, 2 hypothesis violation, 3 numerical failure,
4 when ``compare`` finds a difference outside the summed bounds.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import io
from .algebra import LocalOperator, Volume
from .certificates import bound_curves, derive_parameters, truncation_tail
from .errors import (ConvergenceError, DegenerateKernelError, HypothesisViolation,
                     IllConditionedKernelError, QuadratureBudgetExceeded, SingularRestrictionError)
from .expansion import stationary_expectation
from .finite_volume import relaxation_profile, spectral_gap, stationary_state, truncated_correlation
from .generators import certify_M, check_qms_generator, interaction_norm
from .models import HeatBathChain, currents, fourier_scaling, self_consistent_profile

__all__ = ["main", "run", "compare", "COMMANDS"]

log = logging.getLogger("lattice_qms")

NUMERICAL_ERRORS = (ConvergenceError, DegenerateKernelError, IllConditionedKernelError,
                    SingularRestrictionError, QuadratureBudgetExceeded, np.linalg.LinAlgError,
                    spla.ArpackNoConvergence)


class _Run:
    def __init__(self, manifest: dict, out: Path, threads: int):
        self.manifest = manifest
        self.out = out
        self.threads = threads
        self.digest = io.manifest_hash(manifest)
        self.summary: dict = {"command": manifest.get("command"), "manifest_sha256": self.digest,
                              "manifest": manifest}
        self._model = None

    @property
    def model(self):
        if self._model is None:
            self._model = io.build_model(self.manifest.get("model", {"preset": "ising"}))
        return self._model

    def block(self, name: str) -> dict:
        return self.manifest.get(name, {})

    def observable(self, name="observable") -> LocalOperator:
        return io.observable_from_block(self.block(name))

    def params(self, required: bool = True):
        """Bound parameters from the manifest; model data fills missing entries."""
        blk = self.block("params")
        if not blk and not required:
            return None
        model = self.model
        if "l" in blk:
            l = float(blk["l"])
        elif "inv_l" in blk:
            l = 1.0 / float(blk["inv_l"])
        else:
            l = model.interactions.decay_length_l
        prof = model.profile
        g = float(blk.get("g", prof.gap_g))
        eps = float(blk["epsilon"]) if "epsilon" in blk else interaction_norm(model.interactions, l)
        params = derive_parameters(l, g, float(blk.get("g_prime", g / 2)), eps,
                                   float(blk.get("M", prof.amplitude_M)), blk.get("mode", "theorem"))
        self.summary["params"] = params.as_dict()
        return params

    def table(self, name: str, header: list, rows: list) -> None:
        path = self.out / f"table_{name}.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# manifest_sha256={self.digest}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def write_summary(self) -> None:
        text = json.dumps(io.to_jsonable(self.summary), indent=2, sort_keys=True)
        (self.out / "summary.json").write_text(text + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (complex, np.complexfloating)):
        return io.format_complex(v)
    if v is None:
        return ""
    return v


def _key(a: LocalOperator, name) -> str:
    label = name if isinstance(name, str) else "op"
    return f"{label}@" + ";".join(",".join(map(str, x)) for x in a.support.sites)


def _translate(block: dict, x) -> LocalOperator:
    return LocalOperator(Volume((tuple(x),)), io.matrix_from_text(block.get("matrix", "sz")))


def cmd_validate(run: _Run) -> None:
    model = run.model
    g = model.site_generator(model.volume.sites[0])
    report = check_qms_generator(g)
    prof = model.profile
    blk = run.block("params")
    rate = float(blk.get("rate", prof.gap_g))
    M = certify_M(g, rate, prof.projection_Q, gap=prof.gap_g)
    l = float(blk["l"]) if "l" in blk else model.interactions.decay_length_l
    eps = interaction_norm(model.interactions, l)
    feasible, reason = True, None
    try:
        derive_parameters(l, prof.gap_g, float(blk.get("g_prime", prof.gap_g / 2)), eps, M)
    except HypothesisViolation as exc:
        feasible, reason = False, str(exc)
    run.summary["result"] = {
        "gap": prof.gap_g, "M": M, "rate": rate, "stationary_state": prof.stationary_state,
        "identity_residual": report.identity_residual,
        "hermiticity_residual": report.hermiticity_residual,
        "ccp_min_eigenvalue": report.ccp_min_eigenvalue,
        "verdict": bool(report.verdict), "interaction_norm": eps, "l": l,
        "feasible": feasible, "infeasibility": reason}


def cmd_gap(run: _Run) -> None:
    gen = run.model.generator()
    run.summary["result"] = {"gap": spectral_gap(gen), "dim": gen.dim,
                             "identity_residual": gen.identity_residual}


def cmd_evolve(run: _Run) -> None:
    blk = run.block("evolve")
    times = blk.get("times") or np.linspace(0.0, float(blk.get("t_max", 40.0)),
                                            int(blk.get("n_times", 41))).tolist()
    a = run.observable()
    params = run.params(required=False)
    table = relaxation_profile(run.model.generator(), a, times, params)
    bounds = table.bounds if table.bounds is not None else [None] * len(times)
    run.table("relaxation", ["t", "distance", "bound"], list(zip(table.times, table.distances, bounds)))
    run.summary["result"] = {"fitted_rate": table.fitted_rate, "dominated": table.dominated,
                             "rate_ok": None if params is None else table.fitted_rate >= params.g_prime}


def cmd_stationary(run: _Run) -> None:
    model = run.model
    gen = model.generator()
    state = stationary_state(gen)
    params = run.params(required=False)
    blk = run.block("observable")
    rows, values = [], {}
    for x in model.volume:
        a = _translate(blk, x)
        v = state.expectation(a) if state.kernel_dimension == 1 else complex("nan")
        bound = None
        if params is not None:
            dist = model.volume.distance_to_complement(a.support)
            bound = bound_curves(params, 1, norm_a=a.norm()).volume(dist)
        rows.append([",".join(map(str, x)), v.real, v.imag, bound])
        values[_key(a, blk.get("matrix", "sz"))] = {"value": v, "bound": bound}
    run.table("stationary", ["site", "re", "im", "volume_bound"], rows)
    run.summary["result"] = {"kernel_dimension": state.kernel_dimension, "residual": state.residual,
                             "singular_values": list(state.singular_values)}
    run.summary["values"] = values


def cmd_expand(run: _Run) -> None:
    params = run.params()
    blk = run.block("params")
    a = run.observable()
    cv = stationary_expectation(a, run.model, int(blk.get("n_max", 3)),
                                float(blk.get("weight_floor", 0.0)), params, threads=run.threads)
    run.table("partial_sums", ["order", "re", "im"],
              [[k, p.real, p.imag] for k, p in enumerate(cv.partial_sums)])
    run.summary["result"] = cv.as_dict()
    run.summary["values"] = {_key(a, run.block("observable").get("matrix", "sz")):
                             {"value": cv.value, "bound": cv.truncation_bound}}


def cmd_correlations(run: _Run) -> None:
    model = run.model
    state = stationary_state(model.generator())
    params = run.params(required=False)
    a = run.observable()
    b_blk = run.block("observable_b") or run.block("observable")
    x0 = a.support.sites[0]
    dists = run.block("correlations").get("distances")
    rows = []
    for x in model.volume:
        if x in a.support:
            continue
        b = _translate(b_blk, x)
        d = a.support.distance(b.support)
        if dists is not None and d not in dists:
            continue
        c = truncated_correlation(state, a, b)
        bound = None
        if params is not None:
            bound = bound_curves(params, len(a.support), len(b.support), a.norm(), b.norm()).correlation(d)
        rows.append([d, ",".join(map(str, x)), c.real, c.imag, abs(c), bound])
    rows.sort(key=lambda r: (r[0], r[1]))
    run.table("correlations", ["distance", "site", "re", "im", "abs", "bound"], rows)
    ds = np.array([r[0] for r in rows], float)
    mags = np.array([r[4] for r in rows])
    slope = None
    ok = mags > 1e-300
    if ok.sum() >= 2:
        slope = float(np.polyfit(ds[ok], np.log(mags[ok]), 1)[0])
    run.summary["result"] = {"origin": list(x0), "log_slope": slope,
                             "dominated": None if params is None else
                             bool(all(r[4] <= r[5] for r in rows))}


def cmd_bounds(run: _Run) -> None:
    params = run.params()
    blk = run.block("bounds")
    x_size = int(blk.get("x_size", 1))
    y_size = int(blk.get("y_size", 1))
    curves = bound_curves(params, x_size, y_size)
    ts = blk.get("times", np.linspace(0, 40, 9).tolist())
    ds = blk.get("distances", list(range(0, 8)))
    run.table("relaxation_bound", ["t", "bound"], [[t, curves.relaxation(t)] for t in ts])
    run.table("locality_bound", ["d", "volume", "correlation"],
              [[d, curves.volume(d), curves.correlation(d)] for d in ds])
    n_list = blk.get("n_max", [1, 2, 3, 4, 5])
    run.table("truncation_tail", ["n_max", "tail"],
              [[n, truncation_tail(params, n, x_size)] for n in n_list])
    run.summary["result"] = params.as_dict()


def _chain(run: _Run) -> HeatBathChain:
    model = run.model
    if "chain" not in model.params:
        raise ValueError("transport and scaling need the 'heatbath' preset")
    return model.params["chain"]


def cmd_transport(run: _Run) -> None:
    chain = _chain(run)
    blk = run.block("transport")
    tl, tr = float(blk.get("T_left", 1.0)), float(blk.get("T_right", 0.9))
    if chain.N >= 3:
        temps, j_sc, rep = self_consistent_profile(chain, tl, tr, tol=float(blk.get("tol", 1e-8)),
                                                   threads=run.threads)
    else:
        temps = np.array([tl, tr][: chain.N])
        rep = currents(chain.with_temperatures(temps), stationary_state(
            chain.with_temperatures(temps).generator()))
        j_sc = float(rep.bath_currents[0])
    sites = [x[0] for x in chain.volume]
    run.table("profile", ["site", "T", "bath_current", "residual"],
              [[s, t, c, r] for s, t, c, r in zip(sites, temps, rep.bath_currents,
                                                 rep.conservation_residuals)])
    run.table("currents", ["bond", "current"],
              [[f"{s - 1}-{s}", j] for s, j in zip(sites[1:], rep.bond_currents)])
    run.summary["result"] = {"j_sc": j_sc, "temperatures": temps,
                             "max_bulk_current": float(np.abs(rep.bath_currents[1:-1]).max(initial=0)),
                             "max_residual": float(np.abs(rep.conservation_residuals).max())}


def cmd_scaling(run: _Run) -> None:
    chain = _chain(run)
    blk = run.block("scaling")
    tl, tr = float(blk.get("T_left", 1.0)), float(blk.get("T_right", 0.9))
    rows = fourier_scaling(chain, tl, tr, [int(n) for n in blk.get("N_list", [4, 5, 6])],
                           threads=run.threads)
    run.table("scaling", ["N", "j_sc", "max_dT", "j_sc_N", "max_dT_N", "min_kappa"],
              [[r["N"], r["j_sc"], r["max_dT"], r["j_sc_N"], r["max_dT_N"], min(r["kappa"])]
               for r in rows])
    jn = [r["j_sc_N"] for r in rows]
    spread = (max(jn) - min(jn)) / abs(np.mean(jn)) if jn and np.mean(jn) != 0 else 0.0
    run.summary["result"] = {"rows": rows, "j_sc_N_spread": spread}


COMMANDS = {"validate": cmd_validate, "gap": cmd_gap, "evolve": cmd_evolve,
            "stationary": cmd_stationary, "expand": cmd_expand, "correlations": cmd_correlations,
            "bounds": cmd_bounds, "transport": cmd_transport, "scaling": cmd_scaling}


def run(manifest: dict, out, threads: int = 1, command: str | None = None) -> dict:
    """Execute one manifest and write its artifacts; returns the summary."""
    command = command or manifest.get("command")
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; choose from {sorted(COMMANDS)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    job = _Run(dict(manifest, command=command), out, threads)
    COMMANDS[command](job)
    job.write_summary()
    return job.summary


def _signature(summary: dict) -> dict:
    # chain length and placement may differ between compared runs
    model = dict(summary.get("manifest", {}).get("model", {}))
    for k in ("N", "centered", "temperatures"):
        model.pop(k, None)
    return model


def compare(dir_a, dir_b) -> dict:
    """Differences of shared values, each checked against the sum of both bounds."""
    sums = []
    for d in (dir_a, dir_b):
        path = Path(d) / "summary.json"
        if not path.exists():
            raise FileNotFoundError(f"missing artifact {path}")
        sums.append(json.loads(path.read_text()))
    a, b = sums
    if _signature(a) != _signature(b):
        raise ValueError("structural mismatch: the runs use different models")
    va, vb = a.get("values", {}), b.get("values", {})
    rows = []
    for key in sorted(set(va) & set(vb)):
        x, y = io.parse_complex(va[key]["value"]), io.parse_complex(vb[key]["value"])
        ba, bb = va[key].get("bound"), vb[key].get("bound")
        tol = sum(float(v) for v in (ba, bb) if v is not None)
        diff = abs(x - y)
        rows.append({"key": key, "a": x, "b": y, "difference": diff, "bound_a": ba,
                     "bound_b": bb, "within": bool(diff <= tol)})
    if not rows:
        raise ValueError("the runs share no values")
    return {"rows": rows, "all_within": all(r["within"] for r in rows),
            "manifest_a": a.get("manifest_sha256"), "manifest_b": b.get("manifest_sha256")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # exit code 2 is reserved for hypothesis violations
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lattice-qms", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="execute a manifest")
    r.add_argument("--manifest", required=True, help="TOML or JSON run manifest")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int, default=0, help="recorded only; results are deterministic")
    r.add_argument("--command", choices=sorted(COMMANDS), help="override the manifest command")
    c = sub.add_parser("compare", help="diff two finished runs")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", help="write compare.json here")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.action == "run":
            summary = run(io.load_manifest(args.manifest), args.out, args.threads, args.command)
            print(json.dumps(io.to_jsonable(summary.get("result", {})), sort_keys=True))
        else:
            report = compare(args.dir_a, args.dir_b)
            text = json.dumps(io.to_jsonable(report), indent=2, sort_keys=True)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "compare.json").write_text(text + "\n")
            print(text)
            return 0 if report["all_within"] else 4
    except HypothesisViolation as exc:
        log.error("hypothesis violated (%s): %s", exc.inequality, exc)
        return 2
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
