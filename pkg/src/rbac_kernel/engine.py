"""Access decisions: role activation and the execution/access rules.

Every function here is pure. Nothing in this module changes a policy;
the administrative surface lives in :mod:`rbac_kernel.admin`.

Rules are evaluated in a fixed order so traces are reproducible:

    R1           the session has at least one active role
    R2           every active role is one the subject is a member of
    R3           the transaction is in the closure of some active role
    RESTRICTION  the subject's restriction set (if any) includes it
    DSOD         no dynamic separation-of-duty constraint objects
    R4           (check_access only) an access entry permits object/mode
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from .errors import (
    ActivationError,
    ModeMismatch,
    NotOneToOne,
    UnknownObject,
    UnknownRole,
    UnknownSessionSubject,
    UnknownTransaction,
    UnknownUser,
)
from .model import RULE4, AccessMode, Policy, Session, reachable_roles
from .sod import check_dynamic

if TYPE_CHECKING:
    from .audit import AuditView

PASS = "pass"
FAIL = "fail"


@dataclass(frozen=True)
class TraceEntry:
    rule: str
    outcome: str
    detail: str
    witness: Optional[int] = None

    def to_json(self) -> dict:
        out = {"rule": self.rule, "outcome": self.outcome, "detail": self.detail}
        if self.witness is not None:
            out["witness"] = self.witness
        return out


@dataclass(frozen=True)
class Decision:
    """Outcome of one evaluation. ``allowed`` iff every trace entry passed."""

    rule_trace: tuple[TraceEntry, ...] = field(default_factory=tuple)

    @property
    def allowed(self) -> bool:
        return bool(self.rule_trace) and all(e.outcome == PASS for e in self.rule_trace)

    @property
    def first_failure(self) -> Optional[TraceEntry]:
        return next((e for e in self.rule_trace if e.outcome != PASS), None)

    def __bool__(self) -> bool:
        return self.allowed

    def to_json(self) -> dict:
        fail = self.first_failure
        return {
            "allowed": self.allowed,
            "failed_rule": fail.rule if fail else None,
            "rule_trace": [e.to_json() for e in self.rule_trace],
        }


def authorized_roles(policy: Policy, user: str) -> frozenset[str]:
    """Roles ``user`` is a direct member of. Containment does not add any."""
    if user not in policy.users:
        raise UnknownUser(f"unknown user {user}", user=user)
    return frozenset(rid for rid, role in policy.roles.items() if user in role.members)


def effective_transactions(policy: Policy, role: str) -> frozenset[str]:
    """Transactions of ``role`` plus those of every role it (transitively) contains."""
    if role not in policy.roles:
        raise UnknownRole(f"unknown role {role}", role=role)
    out: set[str] = set()
    for rid in reachable_roles(policy, role):
        if rid in policy.roles:
            out |= policy.roles[rid].transactions
    return frozenset(out)


def activate_role(policy: Policy, session: Session, role: str) -> Session:
    if session.subject not in policy.users:
        raise UnknownSessionSubject(f"unknown session subject {session.subject}")
    if role not in policy.roles:
        raise UnknownRole(f"unknown role {role}", role=role)
    if role in session.active_roles:
        return session
    if role not in authorized_roles(policy, session.subject):
        raise ActivationError(
            f"{session.subject} is not a member of {role}", code="ROLE_NOT_AUTHORIZED"
        )
    if policy.single_active_role and session.active_roles:
        raise ActivationError(
            "policy allows a single active role per session", code="CAP_EXCEEDED"
        )
    return Session(session.subject, session.active_roles | {role}, session.session_id)


def deactivate_role(session: Session, role: str) -> Session:
    return Session(session.subject, session.active_roles - {role}, session.session_id)


def _entry(rule: str, ok: bool, detail: str, witness: Optional[int] = None) -> TraceEntry:
    return TraceEntry(rule, PASS if ok else FAIL, detail, witness)


def _fmt(names) -> str:
    return "{" + ", ".join(sorted(names)) + "}"


def can_execute(
    policy: Policy,
    session: Session,
    transaction: str,
    operand: Optional[str] = None,
    history: "AuditView | None" = None,
) -> Decision:
    """Evaluate whether the session may execute ``transaction`` now.

    A session whose subject has been offboarded is not an error: it has
    no authorized roles, so any active role fails R2.
    """
    if transaction not in policy.transactions:
        raise UnknownTransaction(f"unknown transaction {transaction}", transaction=transaction)

    active = session.active_roles
    subject = session.subject
    trace = [_entry("R1", bool(active), f"active roles {_fmt(active)}")]

    if subject in policy.users:
        authorized = authorized_roles(policy, subject)
    else:
        authorized = frozenset()
    stale = active - authorized
    trace.append(
        _entry(
            "R2",
            not stale,
            f"not authorized for {_fmt(stale)}" if stale else "active roles authorized",
        )
    )

    reachable: set[str] = set()
    for rid in active & policy.roles.keys():
        reachable |= effective_transactions(policy, rid)
    trace.append(
        _entry(
            "R3",
            transaction in reachable,
            f"{transaction} {'in' if transaction in reachable else 'not in'} "
            f"transactions of {_fmt(active)}",
        )
    )

    restriction = policy.restrictions.get(subject)
    if restriction is None:
        trace.append(_entry("RESTRICTION", True, "unrestricted"))
    else:
        ok = transaction in restriction
        trace.append(
            _entry("RESTRICTION", ok, f"{transaction} {'within' if ok else 'outside'} restriction")
        )

    trace.append(_dynamic_entry(policy, subject, transaction, operand, history))
    return Decision(tuple(trace))


def _dynamic_entry(policy, subject, transaction, operand, history) -> TraceEntry:
    relevant = [c for c in policy.dynamic_sod if transaction in c.transactions]
    if not relevant:
        return _entry("DSOD", True, "no dynamic constraint")
    if operand is None:
        return _entry(
            "DSOD", False, f"MISSING_OPERAND: {transaction} is under {relevant[0].id}"
        )
    events = history.events if history is not None else ()
    for c in relevant:
        result = check_dynamic(c, events, subject, transaction, operand)
        if not result.passed:
            return _entry(
                "DSOD",
                False,
                f"{c.id}: {subject} executed {result.prior_transaction} on {operand} "
                f"at ordinal {result.witness}",
                result.witness,
            )
    return _entry("DSOD", True, f"{_fmt(c.id for c in relevant)} satisfied on {operand}")


def check_access(
    policy: Policy,
    session: Session,
    transaction: str,
    obj: str,
    mode: AccessMode | str,
    operand: Optional[str] = None,
    history: "AuditView | None" = None,
) -> Decision:
    """Rules 1-3 (via :func:`can_execute`) plus the object/mode access table."""
    if policy.mode != RULE4:
        raise ModeMismatch("check_access requires a rule4 policy")
    if obj not in policy.objects:
        raise UnknownObject(f"unknown object {obj}", object=obj)
    mode = AccessMode(mode)
    base = can_execute(policy, session, transaction, operand, history)
    granting = sorted(
        r for r in session.active_roles if (r, transaction, obj, mode) in policy.access_table
    )
    r4 = _entry(
        "R4",
        bool(granting),
        f"{mode.value} on {obj} via {transaction} "
        + (f"granted to {granting[0]}" if granting else "not in access table"),
    )
    return Decision(base.rule_trace + (r4,))


def clark_wilson_check(
    policy: Policy, user: str, transaction: str, obj: str, mode: AccessMode | str
) -> Decision:
    """Access check for a policy where every user holds exactly one role.

    That one-to-one setting is the (user, procedure, data item) triple
    model; the user's role is activated implicitly.
    """
    if policy.mode != RULE4:
        raise ModeMismatch("clark_wilson_check requires a rule4 policy")
    bad = sorted(u for u in policy.users if len(authorized_roles(policy, u)) != 1)
    if bad:
        raise NotOneToOne(f"users without exactly one role: {', '.join(bad)}", users=bad)
    (role,) = authorized_roles(policy, user)
    session = Session(user, frozenset({role}), session_id=f"cw-{user}")
    return check_access(policy, session, transaction, obj, mode)
