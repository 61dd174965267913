"""Structured experiment reports.

A report records the parameters an experiment chose, the quantities it
measured, and one verdict per inequality checked, with both sides stored
so every verdict can be recomputed from the report alone.  Reports embed
their configuration and are serializable as a JSON tree plus CSV tables.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field as dc_field

__all__ = ["Verdict", "ExperimentReport", "config_hash", "Stopwatch"]


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


@dataclass
class Verdict:
    """One checked inequality with both sides and the outcome."""

    name: str
    inequality: str      # human-readable statement, e.g. "lhs <= rhs"
    lhs: float
    rhs: float
    op: str = "<="       # "<=" or ">"
    passed: bool = False
    margin: float = 0.0

    @classmethod
    def check(cls, name: str, inequality: str, lhs: float, rhs: float,
              op: str = "<="):
        lhs, rhs = float(lhs), float(rhs)
        if op == "<=":
            passed, margin = lhs <= rhs, rhs - lhs
        elif op == ">":
            passed, margin = lhs > rhs, lhs - rhs
        else:
            raise ValueError(f"unsupported op {op!r}")
        return cls(name, inequality, lhs, rhs, op, passed, margin)

    def recompute(self) -> bool:
        return self.lhs <= self.rhs if self.op == "<=" else self.lhs > self.rhs

    def to_dict(self):
        return {"name": self.name, "inequality": self.inequality,
                "lhs": self.lhs, "rhs": self.rhs, "op": self.op,
                "passed": self.passed, "margin": self.margin}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["inequality"], d["lhs"], d["rhs"], d["op"],
                   d["passed"], d["margin"])


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    params_chosen: dict = dc_field(default_factory=dict)
    measured: dict = dc_field(default_factory=dict)
    verdicts: list = dc_field(default_factory=list)
    notes: list = dc_field(default_factory=list)
    tables: dict = dc_field(default_factory=dict)   # name -> list of row dicts
    children: list = dc_field(default_factory=list)
    runtime_s: float = 0.0
    seed: int | None = None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts) and \
            all(c.passed for c in self.children)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def check(self, name, inequality, lhs, rhs, op="<=") -> Verdict:
        v = Verdict.check(name, inequality, lhs, rhs, op)
        self.verdicts.append(v)
        return v

    def recheck(self) -> bool:
        """Recompute every verdict from its stored sides (self-certifying)."""
        ok = all(v.recompute() == v.passed for v in self.verdicts)
        return ok and all(c.recheck() for c in self.children)

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "passed": self.passed,
            "params_chosen": self.params_chosen,
            "measured": self.measured,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "notes": self.notes,
            "tables": self.tables,
            "children": [c.to_dict() for c in self.children],
            "runtime_s": self.runtime_s,
        }

    @classmethod
    def from_dict(cls, d):
        rep = cls(d["experiment"], d["config"], d["params_chosen"],
                  d["measured"],
                  [Verdict.from_dict(v) for v in d["verdicts"]],
                  d["notes"], d["tables"],
                  [cls.from_dict(c) for c in d["children"]],
                  d["runtime_s"], d["seed"])
        return rep

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float, **kw)

    def summary_lines(self):
        lines = [f"[{self.experiment}] {'PASS' if self.passed else 'FAIL'} "
                 f"({self.runtime_s:.1f}s, config {self.config_hash})"]
        for v in self.verdicts:
            lines.append(f"  {'PASS' if v.passed else 'FAIL'} {v.name}: "
                         f"{v.inequality}  [lhs={v.lhs:.6g} {v.op} rhs={v.rhs:.6g}, "
                         f"margin={v.margin:.3g}]")
        for c in self.children:
            lines.extend("  " + ln for ln in c.summary_lines())
        return lines


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
