"""Monte Carlo replication of audits against honest and adversarial retrievers."""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from noncesuch.engine import ALL_CONFIRMED, FULL_HAND_COUNT, AuditConfig, hand_count_outcome, run_audit
from noncesuch.generate import generate_election
from noncesuch.reconciliation import pre_audit_checks
from noncesuch.retrieval import make_retriever
from noncesuch.risk import WITHOUT_REPLACEMENT, ShrinkTrunc

QUANTILES = (0.5, 0.9, 0.99)


@dataclass(frozen=True)
class Scenario:
    name: str
    election: Mapping[str, Any]
    adversary: Mapping[str, Any] = field(default_factory=lambda: {"kind": "honest"})


@dataclass(frozen=True)
class ExperimentSpec:
    scenarios: tuple[Scenario, ...]
    reps: int = 100
    seed: str = "1"
    alpha: Optional[float] = None
    scheme: str = WITHOUT_REPLACEMENT
    max_draws: Optional[int] = None
    estimator: ShrinkTrunc = field(default_factory=ShrinkTrunc)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not self.scenarios:
            raise ValueError("no scenarios")
        for s in self.scenarios:
            rate = float(s.election.get("error_rate", 0))
            if not 0 <= rate <= 1:
                raise ValueError(f"scenario {s.name!r}: error_rate must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping, reps: Optional[int] = None, seed: Optional[str] = None) -> "ExperimentSpec":
        if "scenarios" in d:
            scenarios = tuple(
                Scenario(s.get("name", f"scenario{i}"), s["election"], s.get("adversary", {"kind": "honest"}))
                for i, s in enumerate(d["scenarios"])
            )
        else:
            scenarios = (Scenario(d.get("name", "default"), d["election"], d.get("adversary", {"kind": "honest"})),)
        md = d.get("max_draws")
        return cls(
            scenarios=scenarios,
            reps=int(reps if reps is not None else d.get("reps", 100)),
            seed=str(seed if seed is not None else d.get("seed", "1")),
            alpha=None if d.get("alpha") is None else float(d["alpha"]),
            scheme=d.get("scheme", WITHOUT_REPLACEMENT),
            max_draws=None if md is None else int(md),
            estimator=ShrinkTrunc.from_dict(d.get("estimator", {})),
        )


def _scenario_election(spec: ExperimentSpec, scenario: Scenario):
    el = dict(scenario.election)
    if spec.alpha is not None:
        el["risk_limit"] = spec.alpha
    return generate_election(el, f"{spec.seed}:{scenario.name}")


def run_replication(spec: ExperimentSpec, scenario: Scenario, election, rep: int, plan=None) -> dict:
    config = AuditConfig(
        seed=spec.seed,
        scheme=spec.scheme,
        max_draws=spec.max_draws,
        estimator=spec.estimator,
        stream=f"rep:{rep}",
    )
    retriever = make_retriever(scenario.adversary, election.cards, election.cvrs)
    audit = run_audit(election, config, retriever, keep_log=False, plan=plan)
    return {
        "scenario": scenario.name,
        "rep": rep,
        "verdict": audit.verdict,
        "reason": audit.reason,
        "draws": audit.draws,
        "risks": audit.measured_risks(),
    }


_WORKER: dict = {}


def _init_worker(spec: ExperimentSpec) -> None:
    _WORKER["spec"] = spec
    _WORKER["elections"] = {s.name: _scenario_election(spec, s) for s in spec.scenarios}
    _WORKER["scenarios"] = {s.name: s for s in spec.scenarios}
    _WORKER["plans"] = {name: pre_audit_checks(el) for name, el in _WORKER["elections"].items()}


def _run_task(task: tuple[str, int]) -> dict:
    name, rep = task
    return run_replication(
        _WORKER["spec"], _WORKER["scenarios"][name], _WORKER["elections"][name], rep, _WORKER["plans"][name]
    )


def scenario_truth(election) -> dict:
    """Whether the reported outcome is actually correct, from the cards."""
    hc = hand_count_outcome(election.contests, election.cards)
    return {cid: v["reported_outcome_correct"] for cid, v in hc.items()}


def run_experiment(spec: ExperimentSpec, jobs: Optional[int] = None) -> list[dict]:
    """All replications of all scenarios, ordered by (scenario, rep) whatever ``jobs`` is."""
    tasks = [(s.name, r) for s in spec.scenarios for r in range(spec.reps)]
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1:
        _init_worker(spec)
        return [_run_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with mp.get_context("spawn").Pool(jobs, initializer=_init_worker, initargs=(spec,)) as pool:
        return pool.map(_run_task, tasks, chunksize=chunk)


def _quantile(sorted_vals: Sequence[int], q: float) -> int:
    # lower empirical quantile: smallest x with F(x) >= q
    k = max(0, math.ceil(q * len(sorted_vals)) - 1)
    return int(sorted_vals[k])


def summarize(records: Iterable[Mapping], truth: Optional[Mapping[str, bool]] = None, alpha: Optional[float] = None) -> list[dict]:
    """Per-scenario rates and draw-count statistics, in first-seen scenario order."""
    groups: dict[str, list[Mapping]] = {}
    for rec in records:
        groups.setdefault(rec["scenario"], []).append(rec)
    rows = []
    for name, recs in groups.items():
        n = len(recs)
        draws = sorted(r["draws"] for r in recs)
        confirmed = sum(1 for r in recs if r["verdict"] == ALL_CONFIRMED)
        full = sum(1 for r in recs if r["verdict"] == FULL_HAND_COUNT)
        row = {
            "scenario": name,
            "reps": n,
            "confirmation_rate": confirmed / n,
            "full_count_rate": full / n,
            "mean_draws": sum(draws) / n,
        }
        for q in QUANTILES:
            row[f"draws_q{int(q * 100)}"] = _quantile(draws, q)
        if truth is not None and name in truth:
            row["outcome_correct"] = truth[name]
        if alpha is not None:
            row["risk_bound"] = alpha + 3 * math.sqrt(alpha * (1 - alpha) / n)
        rows.append(row)
    return rows


def summary_csv(rows: Sequence[Mapping]) -> str:
    if not rows:
        return ""
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return out.getvalue()


def write_experiment(spec: ExperimentSpec, records: Sequence[Mapping], out_dir: Path | str, wall_time: Optional[float] = None) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = {}
    for s in spec.scenarios:
        t = scenario_truth(_scenario_election(spec, s))
        truth[s.name] = all(t.values())
    rows = summarize(records, truth, spec.alpha)
    with open(out / "replications.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps({"scenarios": rows}, indent=1, sort_keys=True) + "\n")
    (out / "summary.csv").write_text(summary_csv(rows))
    if wall_time is not None:
        (out / "timing.json").write_text(json.dumps({"wall_time_s": wall_time}) + "\n")
    return rows


def simulate(spec: ExperimentSpec, out_dir: Path | str | None = None, jobs: Optional[int] = None) -> list[dict]:
    t0 = time.perf_counter()
    records = run_experiment(spec, jobs)
    wall = time.perf_counter() - t0
    if out_dir is None:
        return summarize(records, alpha=spec.alpha)
    return write_experiment(spec, records, out_dir, wall)


def read_replications(path: Path | str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]

