"""Residual bookkeeping and seeded sampling shared by every identity suite."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex


@dataclass
class CheckEntry:
    name: str
    samples: int
    max_residual: float
    mean_residual: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.name}: max={self.max_residual:.3e} mean={self.mean_residual:.3e} "
                f"tol={self.tolerance:.1e} n={self.samples}")


@dataclass
class CheckReport:
    """Named residual statistics; a report passes iff every entry does."""

    title: str = ""
    entries: list[CheckEntry] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def add(self, name: str, residuals, tol: float, **detail) -> CheckEntry:
        res = np.abs(np.asarray(residuals, dtype=float)).ravel()
        if res.size == 0:
            res = np.zeros(1)
        if not np.all(np.isfinite(res)):
            mx, mean = float("inf"), float("inf")
        else:
            mx, mean = float(res.max()), float(res.mean())
        entry = CheckEntry(name, int(res.size), mx, mean, float(tol), bool(mx <= tol), dict(detail))
        self.entries.append(entry)
        return entry

    def extend(self, other: "CheckReport", prefix: str = "") -> "CheckReport":
        for e in other.entries:
            self.entries.append(CheckEntry(prefix + e.name, e.samples, e.max_residual, e.mean_residual,
                                           e.tolerance, e.passed, dict(e.detail)))
        for k, v in other.values.items():
            self.values[prefix + k] = v
        return self

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> CheckEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    def to_dict(self) -> dict:
        return {"title": self.title, "passed": self.passed,
                "entries": [asdict(e) for e in self.entries],
                "values": _jsonable(self.values)}

    def summary(self) -> str:
        head = f"{self.title}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + ["  " + e.line() for e in self.entries])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# ---------------------------------------------------------------------------
# sampling


def sample_env(box: Mapping[str, Sequence[float]], names: Sequence[str], n: int,
               rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform samples inside the box for the requested coordinates (default [-1, 1])."""
    env = {}
    for name in names:
        lo, hi = box.get(name, (-1.0, 1.0))
        env[name] = rng.uniform(lo, hi, size=n)
    return env


def monomials(names: Sequence[str], degree: int = 2) -> list[ex.Expr]:
    out = [ex.ONE]
    vs = [ex.var(n) for n in names]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(vs, d):
            out.append(ex.mul_all(combo))
    return out


def random_poly(names: Sequence[str], rng: np.random.Generator, degree: int = 2) -> ex.Expr:
    """Polynomial of degree <= ``degree`` with coefficients uniform in [-1, 1]."""
    mons = monomials(names, degree)
    coef = rng.uniform(-1.0, 1.0, size=len(mons))
    return ex.add_all(ex.mul(ex.const(c), m) for c, m in zip(coef, mons))


def random_vector(names: Sequence[str], size: int, rng: np.random.Generator, degree: int = 2) -> list[ex.Expr]:
    return [random_poly(names, rng, degree) for _ in range(size)]


def eval_all(exprs: Iterable[ex.Expr], ev: ex.Evaluator) -> np.ndarray:
    items = list(exprs)
    if not items:
        return np.zeros((0, ev.npts))
    return np.stack([ev.eval(e) for e in items])


def rng_for(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)
