"""Command-line front end.

Exit codes: 0 ok, 1 invalid model or inputs, 2 failed check or non-converged
optimizer.  Every CSV starts with ``# key=value`` lines carrying the tool
version, a hash of the model file, the seed, ``M`` and ``n``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contract import (ContractionProblem, Settings, contract, flow_rate_closed_form,
                       homogenized_rate)
from .entropy import RELATIONS, MembershipError, gc_check
from .grid import DEFAULT_TOL, flow_to_current, from_csv, lambda_a_membership, \
    lambda_membership, to_csv
from .ldp import rate_I, rate_I_hat
from .model import ProtocolError, load_config, protocol_from_config, validate_protocol
from .sampling import random_lambda
from .simulate import accumulate, conservation_residuals, path_entropy_flows, sample_path
from .steady import accompanying_distribution, oscillatory_state, two_state_pi

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _fmt(x) -> str:
    return format(float(x), ".16e")


class Run:
    """Loaded model plus the shared flags."""

    def __init__(self, args):
        self.args = args
        raw = Path(args.model).read_bytes()
        self.config_hash = hashlib.sha256(raw).hexdigest()[:16]
        self.protocol = protocol_from_config(load_config(args.model), args.bins)
        self.out = Path(args.out)

    def header(self, **extra) -> dict:
        h = {"version": __version__, "config": self.config_hash, "seed": self.args.seed,
             "M": self.protocol.bins, "n": getattr(self.args, "periods", "")}
        h.update(extra)
        return h

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return path

    def write_rows(self, name: str, columns, rows, **extra) -> Path:
        buf = io.StringIO()
        for k, v in self.header(**extra).items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
        return self.write(name, buf.getvalue())


def _common(sp):
    sp.add_argument("model", help="model config (JSON)")
    sp.add_argument("--bins", type=int, default=None, help="time bins M (examples only)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--tol", type=float, default=None, help="pass/fail tolerance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="periodic-ldp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check the standing assumptions of a model")
    _common(sp)

    sp = sub.add_parser("simulate", help="sample paths and write empirical quantities")
    _common(sp)
    sp.add_argument("--periods", type=int, default=100)
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--x0", type=int, default=0, help="initial state index")
    sp.add_argument("--events", action="store_true", help="also write jump lists")

    sp = sub.add_parser("steady", help="oscillatory state, its flow and the accompanying law")
    _common(sp)

    sp = sub.add_parser("rate", help="evaluate the rate functionals on CSV inputs")
    _common(sp)
    sp.add_argument("--mu", required=True, help="density CSV")
    sp.add_argument("--q", help="flow CSV")
    sp.add_argument("--j", help="current CSV")

    sp = sub.add_parser("gc", help="duality checks on random samples and the steady state")
    _common(sp)
    sp.add_argument("--relation", choices=RELATIONS + ("all",), default="all")
    sp.add_argument("--replicas", type=int, default=20)
    sp.add_argument("--modulation", type=float, default=0.01,
                    help="relative time variation of sampled densities")

    sp = sub.add_parser("contract", help="minimize the rate under mean density/flow targets")
    _common(sp)
    sp.add_argument("--mu-bar", help="comma-separated mean density")
    sp.add_argument("--q-bar", help="comma-separated mean flow, one entry per edge")
    sp.add_argument("--max-iter", type=int, default=200)
    return ap


def _check_flags(args) -> str | None:
    if args.bins is not None and args.bins < 2:
        return "--bins must be >= 2"
    if getattr(args, "periods", 1) < 1:
        return "--periods must be >= 1"
    if getattr(args, "replicas", 1) < 1:
        return "--replicas must be >= 1"
    return None


def cmd_validate(run: Run) -> int:
    bad = validate_protocol(run.protocol)
    for v in bad:
        print(v)
    if bad:
        return EXIT_INVALID
    p = run.protocol
    print(f"ok: {p.graph.n_states} states, {p.graph.n_edges} edges, M={p.bins}, T0={p.period}")
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    a, p = run.args, run.protocol
    w = accompanying_distribution(p) if p.graph.is_symmetric() else None
    rows = []
    for i in range(a.replicas):
        path = sample_path(p, a.x0, a.periods, a.seed, i)
        tr = accumulate(path, p)
        hdr = run.header(replica=i)
        run.write(f"mu_r{i}.csv", to_csv(tr.mu, hdr))
        run.write(f"q_r{i}.csv", to_csv(tr.q, hdr))
        run.write(f"j_r{i}.csv", to_csv(tr.j, hdr))
        if a.events:
            run.write(f"events_r{i}.csv", path.to_csv())
        cons = float(np.max(np.abs(conservation_residuals(tr))))
        flows = path_entropy_flows(path, p, w) if w is not None else None
        rows.append([i, path.n_jumps, path.final_state, cons,
                     *(([flows.naive, flows.tot, flows.ex, flows.boundary_ex])
                       if flows else ["", "", "", ""])])
    run.write_rows("paths.csv", ["replica", "jumps", "final_state", "conservation",
                                 "sigma_naive", "sigma_tot", "sigma_ex", "boundary_ex"], rows)
    print(f"wrote {a.replicas} replica(s) to {run.out}")
    return EXIT_OK


def cmd_steady(run: Run) -> int:
    p = run.protocol
    ss = oscillatory_state(p)
    w = accompanying_distribution(p)
    hdr = run.header()
    run.write("pi.csv", to_csv(ss.pi, hdr))
    run.write("q_pi.csv", to_csv(ss.q_pi, hdr))
    run.write("w.csv", to_csv(w, hdr))
    if p.graph.n_states == 2 and p.graph.n_edges == 2:
        cf = two_state_pi(p)
        diff = np.abs(cf.values[0] - ss.pi.values[0])
        rows = [[k, ss.pi.values[0, k], cf.values[0, k], diff[k]] for k in range(p.bins)]
        run.write_rows("pi_compare.csv", ["bin", "pi0_propagated", "pi0_closed_form", "abs_diff"],
                       rows)
        worst = float(diff.max())
        print(f"closed-form comparison: max abs diff {worst:.3e}")
        tol = run.args.tol if run.args.tol is not None else 1e-8
        if worst > tol:
            return EXIT_FAILED
    print(f"wrote pi, q_pi, w to {run.out}")
    return EXIT_OK


def cmd_rate(run: Run) -> int:
    a, p = run.args, run.protocol
    g = p.graph
    mu = from_csv(Path(a.mu).read_text(), "density", g, p.period)
    if a.q is None and a.j is None:
        print("need --q or --j", file=sys.stderr)
        return EXIT_INVALID
    if a.q:
        q = from_csv(Path(a.q).read_text(), "flow", g, p.period)
        mem = lambda_membership(mu, q)
        print(f"Lambda membership: {'ok' if mem.ok else mem.reason} "
              f"(continuity {mem.continuity:.3e}, tol {DEFAULT_TOL.cont(mu.bins):.3e})")
        v = rate_I(mu, q, p)
        print(f"I = {_fmt(v.value)}" + (f"  [{v.reason}]" if v.reason else ""))
        j = flow_to_current(q) if a.j is None else None
    if a.j:
        j = from_csv(Path(a.j).read_text(), "current", g, p.period)
    mem = lambda_a_membership(mu, j)
    print(f"Lambda_a membership: {'ok' if mem.ok else mem.reason}")
    h = rate_I_hat(mu, j, p)
    print(f"I_hat (Phi form) = {_fmt(h.phi_form)}")
    print(f"I_hat (Psi form) = {_fmt(h.psi_form)}")
    print(f"|difference| = {h.difference:.3e}")
    return EXIT_OK


def cmd_gc(run: Run) -> int:
    a, p = run.args, run.protocol
    if not p.graph.is_symmetric():
        print("gc needs a graph with E == E_s", file=sys.stderr)
        return EXIT_INVALID
    tol = a.tol if a.tol is not None else 1e-6
    rels = RELATIONS if a.relation == "all" else (a.relation,)
    w = accompanying_distribution(p)
    rng = np.random.Generator(np.random.Philox(a.seed))
    rows, worst = [], 0.0
    for i in range(a.replicas):
        mu, q = random_lambda(p, rng, modulation=a.modulation)
        j = flow_to_current(q)
        for rel in rels:
            rep = gc_check(rel, mu, q if rel.startswith("uva") else j, p, w)
            rows.append([rel, i, rep.lhs, rep.rhs, rep.residual, p.bins, a.seed])
            worst = max(worst, rep.residual)
    run.write_rows("gc.csv", ["relation", "sample", "lhs", "rhs", "residual", "M", "seed"], rows)
    ss = oscillatory_state(p)
    srows = []
    for rel in rels:
        x = ss.q_pi if rel.startswith("uva") else flow_to_current(ss.q_pi)
        try:
            rep = gc_check(rel, ss.pi, x, p, w)
            srows.append([rel, rep.lhs, rep.rhs, rep.residual, p.bins, ""])
        except MembershipError as exc:
            # rate jumps make the binned steady state miss continuity by O(jump)
            srows.append([rel, "", "", "", p.bins, str(exc)])
    run.write_rows("gc_steady.csv", ["relation", "lhs", "rhs", "residual", "M", "note"], srows)
    print(f"{len(rows)} checks, max residual {worst:.3e} (tol {tol:.1e})")
    return EXIT_OK if worst <= tol else EXIT_FAILED


def _vector(text):
    return None if text is None else np.array([float(x) for x in text.split(",")])


def cmd_contract(run: Run) -> int:
    a, p = run.args, run.protocol
    bar_mu, bar_q = _vector(a.mu_bar), _vector(a.q_bar)
    res = contract(ContractionProblem(p, bar_mu, bar_q, Settings(max_iter=a.max_iter)))
    rows = [["value", res.value.value], ["residual", res.residual],
            ["iterations", res.iterations], ["converged", int(res.converged)],
            ["decrement", res.decrement]]
    sym2 = (p.graph.n_states == 2 and p.graph.n_edges == 2
            and np.allclose(p.rates[0], p.rates[1], rtol=1e-12, atol=0))
    if sym2 and bar_q is not None and bar_q[0] == bar_q[1]:
        r_bar = float(p.rates[0].mean())
        if bar_mu is None:
            rows.append(["closed_form_flow_rate", flow_rate_closed_form(bar_q[0], r_bar)])
        else:
            rows.append(["homogenized_upper_bound", homogenized_rate(bar_mu, bar_q[0], r_bar)])
    run.write_rows("contract.csv", ["quantity", "value"], rows)
    if res.mu is not None:
        run.write("contract_mu.csv", to_csv(res.mu, run.header()))
        run.write("contract_q.csv", to_csv(res.q, run.header()))
    reason = f"  [{res.value.reason}]" if res.value.reason else ""
    print(f"value = {_fmt(res.value.value)}{reason}; residual {res.residual:.2e}; "
          f"converged {res.converged}")
    for name, v in rows[5:]:
        print(f"{name} = {_fmt(v)}")
    return EXIT_OK if res.converged else EXIT_FAILED


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "steady": cmd_steady,
            "rate": cmd_rate, "gc": cmd_gc, "contract": cmd_contract}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    msg = _check_flags(args)
    if msg:
        print(msg, file=sys.stderr)
        return EXIT_INVALID
    try:
        run = Run(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load model: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command != "validate":
        bad = validate_protocol(run.protocol)
        if bad:
            for v in bad:
                print(v, file=sys.stderr)
            return EXIT_INVALID
    try:
        return COMMANDS[args.command](run)
    except (ProtocolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
