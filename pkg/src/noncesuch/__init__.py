"""Ballot-level comparison risk-limiting audits that stay risk-limiting when the
systems that imprint IDs on ballot cards and retrieve cards by ID are untrusted."""

from noncesuch.assorters import (
    Assorter,
    OverstatementAssorter,
    assertion_set,
    assorter_margin,
    overstatement_value,
    plurality_assorters,
    supermajority_assorter,
)
from noncesuch.election import CVR, BallotCard, Contest, Election, validate_election
from noncesuch.engine import Audit, AuditConfig, run_audit
from noncesuch.prng import derive_prng
from noncesuch.reconciliation import AuditPlan, FullCount, pre_audit_checks
from noncesuch.retrieval import canonical_pi, classify_retrieval, lower_bound_L, make_retriever
from noncesuch.risk import AlphaMart, ShrinkTrunc, init_test

__version__ = "0.1.0"
