"""Claim-versus-measurement records for the Monte Carlo suites."""
from __future__ import annotations

import math
from dataclasses import dataclass


def binomial_margin(p: float, trials: int, sigmas: float = 3.0) -> float:
    """``sigmas`` standard deviations of a frequency estimated from ``trials`` draws."""
    p = min(max(p, 0.0), 1.0)
    return sigmas * math.sqrt(p * (1.0 - p) / trials)


@dataclass(frozen=True)
class CheckResult:
    name: str
    claimed: float
    empirical: float
    margin: float
    passed: bool
    direction: str = ">="  # empirical must be >= claimed - margin, or <= claimed + margin

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.name}: empirical={self.empirical:.6g} {self.direction} "
                f"claimed={self.claimed:.6g} (margin {self.margin:.3g})")


def at_least(name: str, claimed: float, hits: int, trials: int) -> CheckResult:
    emp = hits / trials
    m = binomial_margin(claimed, trials)
    return CheckResult(name, claimed, emp, m, emp >= claimed - m, ">=")


def at_most(name: str, claimed: float, hits: int, trials: int) -> CheckResult:
    emp = hits / trials
    m = binomial_margin(claimed, trials)
    return CheckResult(name, claimed, emp, m, emp <= claimed + m, "<=")
