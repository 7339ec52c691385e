"""ALPHA supermartingale test of the null "population mean <= 1/2".

The population is a list of values in ``[0, u_pop]``; draws arrive one at a
time and the measured risk after ``j`` draws is ``min(1, 1 / max_{i<=j} T_i)``,
an anytime-valid p-value by Ville's inequality.

The alternative mean used for each draw comes from the truncated shrinkage
estimator::

    eta_j = min(u_pop - eps, max(mu_j + c / sqrt(d + j), (d * eta0 + S_j) / (d + j)))

where ``S_j`` is the sum of the first ``j`` draws and ``mu_j`` is the mean of
the not-yet-drawn values if the null were exactly true.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from noncesuch.assorters import HALF_TOL

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"
SCHEMES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

OPEN = "open"
NULL_IMPOSSIBLE = "null_impossible"
NULL_CERTAIN = "null_certain"

# slack on the upper bound check, for values computed by a different formula
RANGE_RTOL = 1e-12


class UntestableAssertion(ValueError):
    pass


@dataclass(frozen=True)
class ShrinkTrunc:
    """Parameters of the truncated shrinkage estimator.

    ``eta0=None`` means u_pop / 2, the value every draw takes when the CVRs
    are accurate; ``c=None`` means (eta0 - 1/2) / 2.
    """

    eta0: Optional[float] = None
    d: float = 100
    c: Optional[float] = None
    eps: float = 1e-7

    def resolve(self, u_pop: float) -> "ShrinkTrunc":
        eta0 = u_pop / 2 if self.eta0 is None else self.eta0
        c = (eta0 - 0.5) / 2 if self.c is None else self.c
        if self.d < 1:
            raise ValueError(f"prior weight d must be >= 1, got {self.d}")
        if not c > 0:
            raise ValueError(f"exploration scale c must be positive, got {c}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        return replace(self, eta0=eta0, c=c)

    def to_dict(self) -> dict:
        return {
            "eta0": "auto" if self.eta0 is None else self.eta0,
            "d": self.d,
            "c": "auto" if self.c is None else self.c,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShrinkTrunc":
        def auto(v):
            return None if v in (None, "auto") else float(v)

        return cls(
            eta0=auto(d.get("eta0")),
            d=float(d.get("d", 100)),
            c=auto(d.get("c")),
            eps=float(d.get("eps", 1e-7)),
        )


class RiskTest(Protocol):
    """Interface the audit engine needs from a risk-measuring function."""

    measured_risk: float

    def update(self, x: float) -> "RiskTest": ...


class AlphaMart:
    def __init__(
        self,
        u_pop: float,
        N: Optional[int],
        scheme: str = WITHOUT_REPLACEMENT,
        estimator: Optional[ShrinkTrunc] = None,
    ):
        if not u_pop > 0.5:
            raise UntestableAssertion(f"assertion untestable: upper bound {u_pop} <= 1/2")
        if scheme not in SCHEMES:
            raise ValueError(f"unknown sampling scheme {scheme!r}")
        if scheme == WITHOUT_REPLACEMENT and (N is None or N < 1):
            raise ValueError("sampling without replacement needs a population size N >= 1")
        self.u_pop = u_pop
        self.N = N
        self.scheme = scheme
        self.estimator = (estimator or ShrinkTrunc()).resolve(u_pop)
        self.t = 1.0
        self.max_t = 1.0
        self.running_sum = 0.0
        self.j = 0
        self.status = OPEN
        self.risks: list[float] = []

    @property
    def without_replacement(self) -> bool:
        return self.scheme == WITHOUT_REPLACEMENT

    def null_mean(self) -> float:
        if not self.without_replacement:
            return 0.5
        return (self.N / 2 - self.running_sum) / (self.N - self.j)

    def eta(self, mu: float) -> float:
        e = self.estimator
        return min(
            self.u_pop - e.eps,
            max(mu + e.c / math.sqrt(e.d + self.j), (e.d * e.eta0 + self.running_sum) / (e.d + self.j)),
        )

    def multiplier(self, x: float, mu: float) -> float:
        u = self.u_pop
        eta = self.eta(mu)
        return (x / mu) * (eta - mu) / (u - mu) + (u - eta) / (u - mu)

    def update(self, x: float) -> "AlphaMart":
        if not 0 <= x <= self.u_pop * (1 + RANGE_RTOL):
            raise ValueError(f"observation {x} outside [0, {self.u_pop}]")
        if self.without_replacement and self.j >= self.N:
            raise ValueError("population exhausted")
        if self.status == OPEN:
            mu = self.null_mean()
            if mu >= self.u_pop:
                self.status = NULL_CERTAIN
            elif mu > 0:
                self.t *= self.multiplier(x, mu)
                self.max_t = max(self.max_t, self.t)
        self.running_sum += x
        self.j += 1
        if (
            self.status == OPEN
            and self.without_replacement
            and self.running_sum > self.N * (0.5 + HALF_TOL)
        ):
            self.status = NULL_IMPOSSIBLE
        self.risks.append(self.measured_risk)
        return self

    @property
    def measured_risk(self) -> float:
        if self.status == NULL_IMPOSSIBLE:
            return 0.0
        if self.status == NULL_CERTAIN:
            return 1.0
        return min(1.0, 1.0 / self.max_t)


def init_test(
    u_pop: float, N: Optional[int], scheme: str = WITHOUT_REPLACEMENT, estimator: Optional[ShrinkTrunc] = None
) -> AlphaMart:
    return AlphaMart(u_pop, N, scheme, estimator)


def alpha_risk_paths(
    x: np.ndarray,
    u_pop: float,
    N: Optional[int],
    scheme: str = WITHOUT_REPLACEMENT,
    estimator: Optional[ShrinkTrunc] = None,
) -> np.ndarray:
    """Measured-risk paths for many draw sequences at once.

    ``x`` has shape (reps, n); row r is the r-th sequence of draws.  Returns
    an array of the same shape whose [r, j] entry is the measured risk after
    draw j+1.  Agrees with feeding each row through AlphaMart.update.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    reps, n = x.shape
    if not u_pop > 0.5:
        raise UntestableAssertion(f"assertion untestable: upper bound {u_pop} <= 1/2")
    if np.any(x < 0) or np.any(x > u_pop * (1 + RANGE_RTOL)):
        raise ValueError(f"observations outside [0, {u_pop}]")
    without = scheme == WITHOUT_REPLACEMENT
    if without and n > N:
        raise ValueError("more draws than the population size")
    e = (estimator or ShrinkTrunc()).resolve(u_pop)
    u = u_pop
    t = np.ones(reps)
    max_t = np.ones(reps)
    s = np.zeros(reps)
    status = np.zeros(reps, dtype=np.int8)  # 0 open, 1 impossible, 2 certain
    out = np.empty((reps, n))
    for j in range(n):
        xj = x[:, j]
        open_ = status == 0
        mu = (N / 2 - s) / (N - j) if without else np.full(reps, 0.5)
        certain = open_ & (mu >= u)
        status[certain] = 2
        live = open_ & ~certain & (mu > 0)
        if live.any():
            m = mu[live]
            eta = np.minimum(
                u - e.eps,
                np.maximum(m + e.c / math.sqrt(e.d + j), (e.d * e.eta0 + s[live]) / (e.d + j)),
            )
            t[live] *= (xj[live] / m) * (eta - m) / (u - m) + (u - eta) / (u - m)
            max_t[live] = np.maximum(max_t[live], t[live])
        s += xj
        if without:
            status[(status == 0) & (s > N * (0.5 + HALF_TOL))] = 1
        risk = np.minimum(1.0, 1.0 / max_t)
        risk[status == 1] = 0.0
        risk[status == 2] = 1.0
        out[:, j] = risk
    return out


def first_crossing(risks: Sequence[float], alpha: float) -> Optional[int]:
    """1-based index of the first draw with measured risk <= alpha, or None."""
    for i, r in enumerate(risks):
        if r <= alpha:
            return i + 1
    return None
