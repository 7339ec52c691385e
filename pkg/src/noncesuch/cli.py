"""Command-line interface: ``gen``, ``audit``, ``simulate`` and ``report``.

Exit codes: 0 confirmed / success, 2 full hand count verdict, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, TextIO

from noncesuch.assorters import load_external_assertions
from noncesuch.election import (
    EXTERNAL_ASSERTIONS,
    NO_VALID_VOTE,
    BallotCard,
    Contest,
    Election,
    ElectionFormatError,
    read_election,
    validate_election,
    write_election,
)
from noncesuch.engine import ALL_CONFIRMED, AuditConfig, MissingMVR, read_card, run_audit
from noncesuch.generate import generate_election
from noncesuch.retrieval import Retriever, load_adversary, make_retriever
from noncesuch.simulate import ExperimentSpec, simulate, summary_csv

log = logging.getLogger("noncesuch")

EXIT_OK, EXIT_ERROR, EXIT_FULL_COUNT = 0, 1, 2


class FileRetriever(Retriever):
    """Live retrieval answered from a file of what came back for each requested id.

    The file maps a requested id to null (no card) or
    ``{"imprinted_id": str | null, "votes": {contest_id: selection}}``;
    ``imprinted_id`` defaults to the requested id.
    """

    kind = "mvr_file"

    def __init__(self, records: Mapping[str, Optional[Mapping]]):
        super().__init__(())
        self.records = dict(records)
        self._issued: dict[tuple, BallotCard] = {}

    @classmethod
    def load(cls, path: Path | str) -> "FileRetriever":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ElectionFormatError(f"{path}: expected an object mapping ids to retrieved cards")
        return cls(data)

    def _card(self, imprinted_id: Optional[str], votes: Mapping[str, str]) -> BallotCard:
        key = (imprinted_id, tuple(sorted(votes.items())))
        if key not in self._issued:
            self._issued[key] = BallotCard(len(self._issued), imprinted_id, dict(votes))
        return self._issued[key]

    def retrieve(self, requested_id: str) -> Optional[BallotCard]:
        if requested_id not in self.records:
            raise MissingMVR(0, requested_id)
        rec = self.records[requested_id]
        if rec is None:
            card = None
        else:
            if "votes" not in rec:
                raise ElectionFormatError(f"MVR file: record for {requested_id!r}: missing field 'votes'")
            card = self._card(rec.get("imprinted_id", requested_id), rec["votes"])
        self.history.append((requested_id, None if card is None else card.card_index))
        return card


class PromptRetriever(Retriever):
    """Asks a person to fetch each requested card and transcribe its votes."""

    kind = "interactive"

    def __init__(self, contests: Sequence[Contest], stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None):
        super().__init__(())
        self.contests = list(contests)
        self.stdin = sys.stdin if stdin is None else stdin
        self.stdout = sys.stderr if stdout is None else stdout
        self._n = 0

    def _ask(self, prompt: str) -> str:
        self.stdout.write(prompt)
        self.stdout.flush()
        line = self.stdin.readline()
        if not line:
            raise EOFError("input ended during manual transcription")
        return line.strip()

    def retrieve(self, requested_id: str) -> Optional[BallotCard]:
        self.stdout.write(f"\nRetrieve the card imprinted with ID {requested_id}.\n")
        found = self._ask("Was a card returned? [y/n] ").lower().startswith("y")
        if not found:
            self.history.append((requested_id, None))
            return None
        imprint = self._ask(f"ID imprinted on the returned card (blank if none) [{requested_id}]: ")
        imprint = requested_id if imprint == "" else (None if imprint == "-" else imprint)
        votes = {}
        for c in self.contests:
            choices = list(c.candidates) + list(NO_VALID_VOTE) + ["absent"]
            while True:
                sel = self._ask(f"  {c.contest_id} {choices}: ")
                if sel in choices:
                    break
                self.stdout.write("  not one of the choices\n")
            if sel != "absent":
                votes[c.contest_id] = sel
        card = BallotCard(self._n, imprint, votes)
        self._n += 1
        self.history.append((requested_id, card.card_index))
        return card


def _load_contest_assertions(election: Election, paths: Sequence[str]) -> Election:
    if not paths:
        return election
    contests = {c.contest_id: c for c in election.contests}
    for p in paths:
        cid, assertions = load_external_assertions(p)
        if cid not in contests:
            raise ElectionFormatError(f"{p}: unknown contest {cid!r}")
        contests[cid] = replace(
            contests[cid], social_choice=EXTERNAL_ASSERTIONS, external_assertions=tuple(assertions)
        )
    return replace(election, contests=tuple(contests[c.contest_id] for c in election.contests))


def cmd_gen(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    el_spec = spec.get("election", spec)
    seed = args.seed or str(spec.get("seed", "1"))
    election = generate_election(el_spec, seed)
    paths = write_election(election, args.out)
    for kind, p in sorted(paths.items()):
        print(f"{kind}: {p}")
    return EXIT_OK


def cmd_audit(args) -> int:
    election = read_election(args.contests, args.cvrs, args.manifest, args.cards)
    election = _load_contest_assertions(election, args.assertions or [])
    findings = [f for f in validate_election(election) if not f.startswith("duplicate CVR id")]
    if findings:
        for f in findings:
            print(f"invalid election: {f}", file=sys.stderr)
        return EXIT_ERROR
    config = AuditConfig.load(args.config) if args.config else AuditConfig(seed=args.seed or "")
    if args.seed:
        config = replace(config, seed=args.seed)

    if args.mvr_file:
        retriever: Retriever = FileRetriever.load(args.mvr_file)
        election = replace(election, cards=None)
    elif args.interactive:
        retriever = PromptRetriever(election.contests)
        election = replace(election, cards=None)
    elif election.cards is not None:
        adversary = load_adversary(args.adversary) if args.adversary else None
        retriever = make_retriever(adversary, election.cards, election.cvrs)
    else:
        print("error: live audits need --mvr-file or --interactive", file=sys.stderr)
        return EXIT_ERROR

    try:
        audit = run_audit(election, config, retriever, read_card)
    except MissingMVR as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    audit.write_log(out / "draws.jsonl")
    report = audit.report()
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"verdict: {audit.verdict}" + (f" ({audit.reason})" if audit.reason else ""))
    print(f"draws: {audit.draws}")
    for label, a in report["assertions"].items():
        print(f"  {label}: risk {a['risk']:.6g} {'confirmed' if a['confirmed'] else 'unconfirmed'}")
    return EXIT_OK if audit.verdict == ALL_CONFIRMED else EXIT_FULL_COUNT


def cmd_simulate(args) -> int:
    raw = json.loads(Path(args.spec).read_text())
    spec = ExperimentSpec.from_dict(raw, reps=args.reps, seed=args.seed)
    t0 = time.perf_counter()
    rows = simulate(spec, args.out, jobs=args.jobs)
    print(format_table(rows), end="")
    print(f"wall time: {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return EXIT_OK


def format_table(rows: Sequence[Mapping]) -> str:
    if not rows:
        return ""
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]

    def fmt(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(k, "")) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    lines = ["  ".join(k.ljust(w) for k, w in zip(keys, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def report_rows(inputs: Sequence[str]) -> list[dict]:
    rows: list[dict] = []
    for item in inputs:
        p = Path(item)
        files = sorted(p.rglob("summary.json")) + sorted(p.rglob("report.json")) if p.is_dir() else [p]
        if p.is_dir() and not files:
            raise FileNotFoundError(f"{p}: no summary.json or report.json found")
        if not p.exists():
            raise FileNotFoundError(f"{p}: no such file or directory")
        for f in files:
            data = json.loads(f.read_text())
            if "scenarios" in data:
                rows += [{"source": str(f.parent), **r} for r in data["scenarios"]]
            else:
                for label, a in data["assertions"].items():
                    rows.append(
                        {
                            "source": str(f.parent),
                            "assertion": label,
                            "verdict": data["verdict"],
                            "draws": data["total_draws"],
                            "risk": a["risk"],
                            "confirmed": a["confirmed"],
                        }
                    )
    return rows


def cmd_report(args) -> int:
    rows = report_rows(args.inputs)
    if not rows:
        print("error: no results found", file=sys.stderr)
        return EXIT_ERROR
    print(format_table(rows), end="")
    if args.out:
        Path(args.out).write_text(summary_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noncesuch",
        description="Ballot-level comparison risk-limiting audits with untrusted imprinting and retrieval.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic election")
    g.add_argument("--spec", required=True, help="JSON generator spec")
    g.add_argument("--seed", help="overrides the seed in the spec")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("audit", help="run an audit")
    a.add_argument("--contests", required=True, help="contest definitions (JSON)")
    a.add_argument("--cvrs", required=True, help="CVR file (JSON)")
    a.add_argument("--manifest", help="CSV contest_id,card_upper_bound")
    a.add_argument("--cards", help="card file, simulation only (JSON)")
    a.add_argument("--assertions", action="append", help="external assertions file (repeatable)")
    a.add_argument("--config", help="audit config (JSON)")
    a.add_argument("--seed", help="overrides the seed in the config")
    a.add_argument("--adversary", help="retriever policy (JSON {kind, params}); simulation only")
    mvr = a.add_mutually_exclusive_group()
    mvr.add_argument("--mvr-file", help="JSON: requested id -> retrieved card {imprinted_id, votes} or null")
    mvr.add_argument("--interactive", action="store_true", help="prompt for each retrieved card")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("simulate", help="Monte Carlo experiment")
    s.add_argument("--spec", required=True, help="JSON experiment spec")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed")
    s.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarize result files")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", help="CSV output")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ElectionFormatError, ValueError, FileNotFoundError, KeyError, EOFError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
