"""Static and dynamic separation of duty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, NamedTuple, Optional

from .errors import (
    AdminError,
    RetroactiveStaticViolation,
    UnknownRole,
    UnknownTransaction,
)
from .model import DynamicSoDConstraint, Policy, StaticSoDConstraint

if TYPE_CHECKING:
    from .audit import AuditView

__all__ = [
    "StaticSoDConstraint",
    "DynamicSoDConstraint",
    "StaticViolation",
    "DynamicCheck",
    "check_static",
    "check_dynamic",
    "add_static_constraint",
    "add_dynamic_constraint",
]


class StaticViolation(NamedTuple):
    constraint: str
    user: str
    roles: frozenset


@dataclass(frozen=True)
class DynamicCheck:
    passed: bool
    witness: Optional[int] = None
    prior_transaction: Optional[str] = None

    def __bool__(self) -> bool:
        return self.passed


def _static_violations(policy: Policy, constraints: Iterable[StaticSoDConstraint]):
    out = []
    for c in constraints:
        held: dict[str, set[str]] = {}
        for rid in c.roles:
            role = policy.roles.get(rid)
            if role is None:
                continue
            for u in role.members:
                held.setdefault(u, set()).add(rid)
        for u in sorted(held):
            if len(held[u]) > c.max_memberships:
                out.append(StaticViolation(c.id, u, frozenset(held[u])))
    return out


def check_static(policy: Policy) -> list[StaticViolation]:
    """Exhaustively scan memberships against every static constraint."""
    return _static_violations(policy, policy.static_sod)


def check_dynamic(
    constraint: DynamicSoDConstraint,
    history: "AuditView | Iterable",
    user: str,
    transaction: str,
    operand: Optional[str],
) -> DynamicCheck:
    """Fail iff ``user`` already executed a *different* constrained
    transaction on the same ``operand`` after the constraint was created.

    The witness is the ordinal of the earliest such execution event.
    """
    if transaction not in constraint.transactions:
        return DynamicCheck(True)
    events = history.events if hasattr(history, "events") else history
    for ev in events:
        if ev.kind != "execution" or ev.ordinal <= constraint.since or ev.actor != user:
            continue
        prior = ev.body.get("transaction")
        if (
            prior != transaction
            and prior in constraint.transactions
            and ev.body.get("operand") == operand
        ):
            return DynamicCheck(False, ev.ordinal, prior)
    return DynamicCheck(True)


def _ensure_new_id(policy: Policy, cid: str) -> None:
    taken = {c.id for c in policy.static_sod} | {c.id for c in policy.dynamic_sod}
    if cid in taken:
        raise AdminError(f"constraint {cid} already exists", code="DUPLICATE_CONSTRAINT")


def add_static_constraint(policy: Policy, constraint: StaticSoDConstraint) -> Policy:
    """Record ``constraint``; rejected if current memberships already break it."""
    missing = sorted(constraint.roles - policy.roles.keys())
    if missing:
        raise UnknownRole(f"unknown role(s) {missing}", roles=missing)
    if len(constraint.roles) < 2 or constraint.max_memberships < 1:
        raise AdminError("static constraint needs >= 2 roles and max >= 1", code="BAD_CONSTRAINT")
    _ensure_new_id(policy, constraint.id)
    violators = _static_violations(policy, [constraint])
    if violators:
        users = [v.user for v in violators]
        raise RetroactiveStaticViolation(
            f"constraint {constraint.id} is already violated by {', '.join(users)}",
            violators=users,
        )
    return policy.evolve(static_sod=policy.static_sod + (constraint,))


def add_dynamic_constraint(policy: Policy, constraint: DynamicSoDConstraint) -> Policy:
    missing = sorted(constraint.transactions - policy.transactions.keys())
    if missing:
        raise UnknownTransaction(f"unknown transaction(s) {missing}", transactions=missing)
    if len(constraint.transactions) < 2:
        raise AdminError("dynamic constraint needs >= 2 transactions", code="BAD_CONSTRAINT")
    _ensure_new_id(policy, constraint.id)
    return policy.evolve(dynamic_sod=policy.dynamic_sod + (constraint,))
