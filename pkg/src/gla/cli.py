"""Scenario files, command dispatch and JSON/CSV reporting.

Exit codes: 0 all checks pass, 2 a check failed, 3 configuration error, 4 numerical error.
The scenario schema is documented in docs/scenario_schema.md.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import expr as ex
from . import algebroid as alg
from . import connection as cn
from . import forms
from . import legendre as lg
from . import mechanics as me
from .algebroid import ConfigurationError
from .expr import ExprError, NumericalError
from .report import CheckReport, rng_for, _jsonable

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("validate", "tensors", "identities", "integrate", "legendre", "all")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ConfigurationError):
    """Malformed scenario; ``pointer`` is a JSON pointer to the offending value."""

    def __init__(self, msg: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {msg}")
        self.pointer = pointer


class SuiteError(Exception):
    def __init__(self, suite: str, err: Exception):
        super().__init__(f"[{suite}] {err}")
        self.suite = suite
        self.err = err


# ---------------------------------------------------------------------------
# scenario parsing


def _req(d: dict, key: str, ptr: str):
    if not isinstance(d, dict):
        raise ScenarioError("expected an object", ptr)
    if key not in d:
        raise ScenarioError(f"missing required field {key!r}", ptr)
    return d[key]


def _int(v, ptr, lo=1) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ScenarioError(f"expected an integer >= {lo}", ptr)
    return v


def _num(v, ptr) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError("expected a number", ptr)
    return float(v)


def _expr(text, symbols: ex.SymbolTable, ptr: str) -> ex.Expr:
    if isinstance(text, bool) or not isinstance(text, (str, int, float)):
        raise ScenarioError("expected an expression string or number", ptr)
    try:
        return ex.parse(text, symbols)
    except ex.UndeclaredVariableError as e:
        raise ScenarioError(f"undeclared variable {e}", ptr) from e
    except ExprError as e:
        raise ScenarioError(f"parse error: {e}", ptr) from e


def _vector(v, n: int, symbols, ptr: str) -> list[ex.Expr]:
    if not isinstance(v, list) or len(v) != n:
        raise ScenarioError(f"expected a list of {n} expressions", ptr)
    return [_expr(t, symbols, f"{ptr}/{k}") for k, t in enumerate(v)]


def _matrix(v, rows: int, cols: int, symbols, ptr: str) -> list[list[ex.Expr]]:
    if not isinstance(v, list) or len(v) != rows:
        raise ScenarioError(f"expected {rows} rows", ptr)
    return [_vector(row, cols, symbols, f"{ptr}/{k}") for k, row in enumerate(v)]


def _symmetric(g, ptr):
    n = len(g)
    for i in range(n):
        for j in range(i + 1, n):
            if not ex.structurally_equal(g[i][j], g[j][i]):
                raise ScenarioError("metric not symmetric", f"{ptr}/{i}/{j}")


def _fiber_free(exprs, fiber) -> bool:
    fib = set(fiber)
    return all(not (ex.free_vars(e) & fib) for e in exprs)


@dataclass
class Scenario:
    name: str
    gla: alg.GeneralizedLieAlgebroid
    r: int
    metric: cn.MetricStructure | None = None
    lagrangian: ex.Expr | None = None
    hamiltonian: ex.Expr | None = None
    force: list | None = None
    morphism: list | None = None
    connection: dict = field(default_factory=lambda: {"type": "auto"})
    sampling: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    kappa: float = 1.0
    tolerances: dict = field(default_factory=dict)
    source: str = ""

    @property
    def p(self) -> int:
        return self.gla.p

    @property
    def base_metric(self):
        """g_h when it does not depend on the fiber coordinates (needed for the Levi-Civita connection)."""
        if self.metric is None:
            return None
        flat = [c for row in self.metric.g_h for c in row]
        return self.metric.g_h if _fiber_free(flat, alg.fiber_names(self.r)) else None


def _parse_box(v, names, ptr) -> dict:
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ScenarioError("expected an object of [lo, hi] pairs", ptr)
    box = {}
    for k, iv in v.items():
        if k not in names:
            raise ScenarioError(f"undeclared coordinate {k!r}", f"{ptr}/{k}")
        if not isinstance(iv, list) or len(iv) != 2:
            raise ScenarioError("expected [lo, hi]", f"{ptr}/{k}")
        lo, hi = _num(iv[0], f"{ptr}/{k}/0"), _num(iv[1], f"{ptr}/{k}/1")
        if not lo < hi:
            raise ScenarioError("empty interval", f"{ptr}/{k}")
        box[k] = (lo, hi)
    return box


def _parse_structure(v, p, symbols, ptr) -> dict:
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ScenarioError('expected an object keyed "gamma,alpha,beta"', ptr)
    out = {}
    for key, text in v.items():
        kp = f"{ptr}/{key}"
        try:
            idx = tuple(int(t) - 1 for t in key.split(","))
        except ValueError:
            raise ScenarioError("key must be three 1-based indices", kp) from None
        if len(idx) != 3 or not all(0 <= t < p for t in idx):
            raise ScenarioError(f"indices must lie in 1..{p}", kp)
        out[idx] = _expr(text, symbols, kp)
    for (g, a, b), e in list(out.items()):
        if (g, b, a) not in out:
            out[(g, b, a)] = ex.neg(e)
    return out


def _parse_algebroid(d, m, box, ptr) -> alg.GeneralizedLieAlgebroid:
    kind = d.get("kind", "lie")
    xs = ex.SymbolTable.make(m)
    if kind == "tm_h":
        gmap = _vector(_req(d, "g", ptr), m, xs, f"{ptr}/g")
        hmap = _vector(_req(d, "h", ptr), m, xs, f"{ptr}/h")
        inv = _vector(_req(d, "inverse", ptr), m, xs, f"{ptr}/inverse")
        return alg.tm_h_algebroid(gmap, hmap, inv, m, box)
    if kind not in ("lie", "general"):
        raise ScenarioError(f"unknown algebroid kind {kind!r}", f"{ptr}/kind")
    p = _int(_req(d, "rank", ptr), f"{ptr}/rank")
    n = m
    if kind == "general":
        n = _int(d.get("n", m), f"{ptr}/n")
    ns = xs if n == m else ex.SymbolTable.make(n, base="z")
    anchor = _matrix(_req(d, "anchor", ptr), p, m, ns, f"{ptr}/anchor")
    structure = _parse_structure(d.get("structure"), p, ns, f"{ptr}/structure")
    xv = [ex.var(x) for x in xs.base_coords]
    if kind == "lie":
        return alg.GeneralizedLieAlgebroid(m, m, p, anchor, structure, xv, xv, box)
    hmap = _vector(_req(d, "h", ptr), n, xs, f"{ptr}/h")
    eta = _vector(d.get("eta", [x for x in xs.base_coords] if n == m else None), m, ns, f"{ptr}/eta")
    return alg.GeneralizedLieAlgebroid(m, n, p, anchor, structure, hmap, eta, box, "", xs.base_coords,
                                       ns.base_coords)


def parse_scenario(doc: Any, source: str = "") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", "")
    name = doc.get("name", Path(source).stem if source else "scenario")
    base = _req(doc, "base", "")
    m = _int(_req(base, "dim", "/base"), "/base/dim")
    coords = tuple(f"x[{i}]" for i in range(1, m + 1))
    box = _parse_box(doc.get("domain_box"), coords, "/domain_box")
    gla = _parse_algebroid(_req(doc, "algebroid", ""), m, box, "/algebroid")
    gla.name = name
    r = _int(doc.get("bundle_rank", gla.p), "/bundle_rank")
    fiber_box = _parse_box(doc.get("fiber_box"), alg.fiber_names(r) + alg.fiber_names(r, True), "/fiber_box")
    gla.domain_box.update(fiber_box)
    sy = ex.SymbolTable.make(m, r, "y")
    sp = ex.SymbolTable.make(m, r, "p")
    sc = Scenario(name, gla, r, source=source)

    if "metric" in doc:
        md = doc["metric"]
        g_h = _matrix(_req(md, "g_h", "/metric"), gla.p, gla.p, sy, "/metric/g_h")
        _symmetric(g_h, "/metric/g_h")
        if "g_v" in md:
            g_v = _matrix(md["g_v"], r, r, sy, "/metric/g_v")
            _symmetric(g_v, "/metric/g_v")
        elif r == gla.p:
            g_v = g_h
        else:
            raise ScenarioError("g_v required when bundle_rank differs from the algebroid rank", "/metric")
        sc.metric = cn.MetricStructure(g_h, g_v)
    if "lagrangian" in doc and "hamiltonian" in doc:
        raise ScenarioError("give either a lagrangian or a hamiltonian", "")
    if ("lagrangian" in doc or "hamiltonian" in doc) and r != gla.p:
        raise ScenarioError("mechanical systems need bundle_rank equal to the algebroid rank", "/bundle_rank")
    if "lagrangian" in doc:
        sc.lagrangian = _expr(doc["lagrangian"], sy, "/lagrangian")
    if "hamiltonian" in doc:
        sc.hamiltonian = _expr(doc["hamiltonian"], sp, "/hamiltonian")
    msym = sp if sc.hamiltonian is not None else sy
    if "force" in doc:
        sc.force = _vector(doc["force"], r, msym, "/force")
    if "morphism" in doc:
        sc.morphism = _matrix(doc["morphism"], r, r, ex.SymbolTable.make(m), "/morphism")

    conn = doc.get("connection", {"type": "auto"})
    ctype = _req(conn, "type", "/connection")
    if ctype not in ("auto", "zero", "canonical", "explicit"):
        raise ScenarioError(f"unknown connection type {ctype!r}", "/connection/type")
    if ctype == "explicit":
        sc.connection = {"type": ctype, "Gamma": _matrix(_req(conn, "Gamma", "/connection"), r, gla.p, sy,
                                                         "/connection/Gamma")}
    else:
        sc.connection = {"type": ctype}
    if ctype == "canonical" and (sc.base_metric is None or r != gla.p):
        raise ScenarioError("canonical connection needs a fiber-independent metric and bundle_rank = rank",
                            "/connection/type")

    smp = doc.get("sampling", {})
    if not isinstance(smp, dict):
        raise ScenarioError("expected an object", "/sampling")
    sc.sampling = {"points": _int(smp.get("points", 100), "/sampling/points"),
                   "seed": _int(smp.get("seed", 0), "/sampling/seed", lo=0)}
    if "tol" in smp:
        sc.sampling["tol"] = _num(smp["tol"], "/sampling/tol")
    integ = doc.get("integrator", {})
    if not isinstance(integ, dict):
        raise ScenarioError("expected an object", "/integrator")
    sc.integrator = {"dt": _num(integ.get("dt", 1e-3), "/integrator/dt"),
                     "steps": _int(integ.get("steps", 1000), "/integrator/steps"),
                     "energy_tol": _num(integ.get("energy_tol", 1e-6), "/integrator/energy_tol")}
    if "initial" in integ:
        init = integ["initial"]
        if not isinstance(init, list) or len(init) != m + r:
            raise ScenarioError(f"expected {m + r} numbers", "/integrator/initial")
        sc.integrator["initial"] = [_num(v, f"/integrator/initial/{k}") for k, v in enumerate(init)]
    sc.kappa = _num(doc.get("kappa", 1.0), "/kappa")
    if sc.kappa == 0:
        raise ScenarioError("kappa must be non-zero", "/kappa")
    tols = doc.get("tolerances", {})
    if not isinstance(tols, dict):
        raise ScenarioError("expected an object", "/tolerances")
    sc.tolerances = {k: _num(v, f"/tolerances/{k}") for k, v in tols.items()}
    return sc


def load(path) -> Scenario:
    """Read and shape-check a JSON scenario. Bare names resolve against the shipped scenarios."""
    path = Path(path)
    if not path.exists() and not path.is_absolute():
        for cand in (SCENARIO_DIR / path.name, SCENARIO_DIR / f"{path.name}.json"):
            if cand.exists():
                path = cand
                break
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e.strerror}", "") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", "") from e
    return parse_scenario(doc, str(path))


# ---------------------------------------------------------------------------
# running


@dataclass
class Options:
    points: int | None = None
    seed: int | None = None
    tol: float | None = None
    dt: float | None = None
    steps: int | None = None
    initial: list | None = None
    out: str | None = None
    suites: tuple | None = None


@dataclass
class RunReport:
    scenario: str
    command: str
    tool_version: str
    seed: int
    points: int
    suites: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "command": self.command, "tool_version": self.tool_version,
                "timestamp": self.timestamp, "seed": self.seed, "points": self.points, "passed": self.passed,
                "suites": [s.to_dict() for s in self.suites], "values": _jsonable(self.values),
                "trajectories": self.trajectories, "skipped": self.skipped}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Runner:
    def __init__(self, sc: Scenario, opts: Options):
        self.sc = sc
        self.opts = opts
        self.points = opts.points if opts.points is not None else sc.sampling["points"]
        self.seed = opts.seed if opts.seed is not None else sc.sampling["seed"]
        self._lc = self._conn = None

    def tol(self, key: str, default: float) -> float:
        if self.opts.tol is not None:
            return self.opts.tol
        if key in self.sc.tolerances:
            return self.sc.tolerances[key]
        return self.sc.sampling.get("tol", default)

    def wanted(self, suite: str) -> bool:
        return self.opts.suites is None or suite in self.opts.suites

    @property
    def lc(self):
        if self._lc is None and self.sc.base_metric is not None:
            self._lc = cn.levi_civita_rho(self.sc.gla, self.sc.base_metric)
        return self._lc

    @property
    def conn(self) -> cn.NonlinearConnection:
        if self._conn is None:
            c = self.sc.connection
            t = c["type"]
            if t == "auto":
                t = "canonical" if self.lc is not None and self.sc.r == self.sc.p else "zero"
            if t == "canonical":
                self._conn = cn.canonical_connection(self.lc)
            elif t == "explicit":
                self._conn = cn.NonlinearConnection(self.sc.gla, c["Gamma"])
            else:
                self._conn = cn.zero_connection(self.sc.gla, self.sc.r)
        return self._conn

    def dconn(self):
        if self.sc.metric is not None:
            return cn.metric_d_connection(self.sc.gla, self.conn, self.sc.metric)
        return cn.berwald(self.sc.gla, self.conn)

    def lagrange(self):
        sc = self.sc
        return me.LagrangeSystem(sc.gla, sc.lagrangian, force=sc.force, morphism=sc.morphism,
                                 connection=self.conn, name=sc.name)

    def hamilton(self):
        sc = self.sc
        return me.HamiltonSystem(sc.gla, sc.hamiltonian, force=sc.force, morphism=sc.morphism, name=sc.name)

    # -- commands ---------------------------------------------------------

    def validate(self, rep: RunReport):
        gla = self.sc.gla
        self._suite(rep, "validate", lambda: alg.validate(gla, self.points, self.seed, self.tol("validate", 1e-9)))
        self._suite(rep, "maurer_cartan",
                    lambda: forms.maurer_cartan_residual(gla, self.points, self.seed, self.tol("maurer_cartan", 1e-9)))

    def tensors(self, rep: RunReport):
        sc = self.sc
        if sc.metric is None:
            rep.skipped.append({"suite": "tensors", "reason": "no metric block"})
            return

        def levi_civita():
            lc = self.lc
            out = CheckReport("levi_civita")
            env = self._env(lc.alg.coords)
            ev = ex.Evaluator(env)
            tol = self.tol("levi_civita", 1e-10)
            T = cn.rho_torsion(sc.gla, lc)
            out.add("torsion_zero", [ev.eval(e) for e in cn._flatten(T)], tol)
            out.add("metric_compatibility", [ev.eval(e) for e in cn.metric_compatibility(lc, lc.metric)], tol)
            out.values["christoffel"] = _nonzero_table(lc.Gamma, "Gamma^{}_{}{}")
            sc_vals = ev.eval(cn.scalar_curvature_linear(lc, lc.metric_inverse))
            out.values["scalar_curvature"] = _stats(sc_vals)
            return out

        if self.lc is not None:
            self._suite(rep, "levi_civita", levi_civita)

        def einstein():
            dc = self.dconn()
            res = cn.ricci_einstein(sc.gla, self.conn, dc, sc.metric, sc.kappa)
            out = CheckReport("einstein")
            ev = ex.Evaluator(self.conn.sample(self.points, rng_for(self.seed)))
            out.add("einstein_definitional", [ev.eval(e) for e in res["einstein_residual"]],
                    self.tol("einstein", 1e-12))
            out.values["d_scalar_curvature"] = _stats(ev.eval(res["scalar"]))
            out.values["ricci_R"] = _nonzero_table(res["ricci"]["R"], "R_{}{}")
            return out

        self._suite(rep, "einstein", einstein)

    def identities(self, rep: RunReport):
        sc, gla = self.sc, self.sc.gla
        if self.lc is not None:
            def linear():
                out = cn.linear_suite(gla, self.lc, self.points, self.seed, self.tol("linear", 1e-8))
                ev = ex.Evaluator(self._env(self.lc.alg.coords))
                out.values["scalar_curvature"] = _stats(
                    ev.eval(cn.scalar_curvature_linear(self.lc, self.lc.metric_inverse)))
                return out
            self._suite(rep, "linear", linear)
        else:
            rep.skipped.append({"suite": "linear", "reason": "no fiber-independent metric"})
        self._suite(rep, "nonlinear",
                    lambda: cn.nonlinear_suite(gla, self.conn, self.points, self.seed, self.tol("nonlinear", 1e-9)))
        if sc.r == sc.p:
            g = ginv = None
            if self.lc is not None:
                g, ginv = self.lc.metric, self.lc.metric_inverse
            self._suite(rep, "endomorphisms",
                        lambda: cn.endomorphism_suite(gla, self.conn, self.points, self.seed,
                                                      self.tol("endomorphisms", 1e-12), g=g, ginv=ginv))
        self._suite(rep, "identities_d",
                    lambda: cn.identity_suite_d(gla, self.conn, self.dconn(), self.points, self.seed,
                                                self.tol("identities_d", 1e-8)))
        if sc.metric is not None:
            self._suite(rep, "metric",
                        lambda: cn.metric_suite(gla, self.conn, self.dconn(), sc.metric, self.points, self.seed,
                                                self.tol("metric", 1e-9)))

    def integrate(self, rep: RunReport):
        sc = self.sc
        if sc.lagrangian is None and sc.hamiltonian is None:
            rep.skipped.append({"suite": "integrate", "reason": "no lagrangian or hamiltonian"})
            return
        dt = self.opts.dt if self.opts.dt is not None else sc.integrator["dt"]
        steps = self.opts.steps if self.opts.steps is not None else sc.integrator["steps"]
        initial = self.opts.initial if self.opts.initial is not None else sc.integrator.get("initial")
        if initial is None:
            raise ConfigurationError("integrate needs an initial state (scenario integrator.initial or --initial)")
        if len(initial) != sc.gla.m + sc.r:
            raise ConfigurationError(f"initial state needs {sc.gla.m + sc.r} values, got {len(initial)}")
        if not dt > 0:
            raise ConfigurationError("dt must be positive")

        def run():
            if sc.lagrangian is not None:
                rhs = me.el_rhs(sc.gla, self.lagrange())
            else:
                rhs = me.hj_rhs(sc.gla, self.hamilton())
            traj = me.integrate(rhs, initial, dt, steps)
            out = CheckReport("integrate")
            drift = traj.energy_drift()
            conservative = sc.force is None or all(ex.is_zero(f) for f in sc.force)
            if conservative:
                out.add("energy_drift", [drift], self.tol("energy_drift", sc.integrator["energy_tol"]))
            out.values.update({"dt": dt, "steps": steps, "initial": list(map(float, initial)),
                               "final": traj.final.tolist(), "energy_drift": drift, "label": traj.label})
            if self.opts.out:
                path = Path(self.opts.out)
                traj.to_csv(path)
                rep.trajectories.append({"path": str(path), "rows": len(traj.t), "columns": traj.header()})
            return out

        self._suite(rep, "integrate", run)

    def legendre(self, rep: RunReport):
        sc = self.sc
        if sc.lagrangian is None:
            rep.skipped.append({"suite": "legendre", "reason": "no lagrangian"})
            return
        state = {}

        def pair():
            if "pair" not in state:
                state["pair"] = lg.legendre_pair(me.LagrangeSystem(sc.gla, sc.lagrangian, name=sc.name))
            return state["pair"]

        self._suite(rep, "involution",
                    lambda: lg.involution_check(pair(), self.points, self.seed, self.tol("involution", 1e-9)))

        def duality():
            P = pair()
            if sc.connection["type"] in ("auto", "canonical") and self.lc is not None:
                Gs = cn.canonical_connection(self.lc, dual=True)
            else:
                Gs = lg.dual_connection_from(P, self.conn)
            return lg.duality_checks(P, self.conn, Gs, self.points, self.seed, self.tol("duality", 1e-8),
                                     self.tol("hessian", 1e-9))

        self._suite(rep, "duality", duality)

    # -- helpers ----------------------------------------------------------

    def _env(self, names):
        return cn._env_for(self.sc.gla, names, self.points, rng_for(self.seed))

    def _suite(self, rep: RunReport, name: str, fn):
        if not self.wanted(name):
            return
        try:
            out = fn()
        except (ConfigurationError, ExprError, NumericalError) as e:
            raise SuiteError(name, e) from e
        out.title = name
        rep.suites.append(out)


def _stats(vals) -> dict:
    v = np.asarray(vals, dtype=float)
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def _nonzero_table(arr, fmt: str) -> dict:
    """Symbolic components as DSL text, 1-based indices."""
    out = {}

    def walk(a, idx):
        if isinstance(a, ex.Expr):
            if not ex.is_zero(a):
                out[fmt.format(*(i + 1 for i in idx))] = ex.render(a)
            return
        for k, item in enumerate(a):
            walk(item, idx + (k,))

    walk(arr, ())
    return out


def run(scenario: Scenario, command: str, opts: Options | None = None, timestamp: bool = True) -> RunReport:
    """Dispatch a command; raises ConfigurationError/NumericalError (wrapped in SuiteError) on failure."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    opts = opts or Options()
    runner = _Runner(scenario, opts)
    rep = RunReport(scenario.name, command, __version__, runner.seed, runner.points)
    if timestamp:
        rep.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    steps = COMMANDS[:-1] if command == "all" else (command,)
    for c in steps:
        getattr(runner, c)(rep)
    return rep


# ---------------------------------------------------------------------------
# entry point


def _initial_arg(text: str) -> list[float]:
    try:
        vals = json.loads(text) if text.strip().startswith("[") else [float(t) for t in text.split(",")]
        return [float(v) for v in vals]
    except (ValueError, TypeError):
        raise argparse.ArgumentTypeError("expected comma-separated numbers or a JSON list") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gla", description="Generalized Lie algebroid identity checks and dynamics.")
    ap.add_argument("--version", action="version", version=f"gla {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sp = sub.add_parser(c)
        sp.add_argument("scenario", help="scenario JSON path (or the name of a shipped scenario)")
        sp.add_argument("--points", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float, help="override every check tolerance")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--initial", type=_initial_arg, help="x1,..,xm,y1,..,yr")
        sp.add_argument("--out", help="CSV path for the trajectory")
        sp.add_argument("--report", help="also write the JSON report here")
        sp.add_argument("--suite", action="append", help="run only these suites (repeatable or comma list)")
        sp.add_argument("--no-timestamp", action="store_true", help="leave the timestamp field empty")
    return ap


def _error(kind: str, err: Exception, code: int, suite: str | None = None) -> int:
    payload = {"error": kind, "message": str(err)}
    if suite:
        payload["suite"] = suite
    point = getattr(err, "point", None)
    if point:
        payload["point"] = _jsonable(point)
    pointer = getattr(err, "pointer", None)
    if pointer is not None:
        payload["pointer"] = pointer
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    suites = None
    if args.suite:
        suites = tuple(s.strip() for item in args.suite for s in item.split(",") if s.strip())
    for flag in ("points", "steps"):
        v = getattr(args, flag)
        if v is not None and v < 1:
            return _error("ConfigurationError", ConfigurationError(f"--{flag} must be >= 1"), EXIT_CONFIG)
    opts = Options(args.points, args.seed, args.tol, args.dt, args.steps, args.initial, args.out, suites)
    try:
        sc = load(args.scenario)
        rep = run(sc, args.command, opts, timestamp=not args.no_timestamp)
    except SuiteError as e:
        if isinstance(e.err, NumericalError):
            return _error(type(e.err).__name__, e.err, EXIT_NUMERIC, e.suite)
        return _error(type(e.err).__name__, e.err, EXIT_CONFIG, e.suite)
    except (ConfigurationError, ExprError) as e:
        return _error(type(e).__name__, e, EXIT_CONFIG)
    except NumericalError as e:
        return _error(type(e).__name__, e, EXIT_NUMERIC)
    text = rep.to_json()
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
