"""Central administration: the only way a policy changes.

The module-level functions are pure ``Policy -> Policy`` transformations
that either return a well-formed policy or raise, leaving the input
untouched. :class:`PolicyAdministrator` wraps them with the administrator
capability check, single-writer serialization and audit logging.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import AdminError, CycleError, StaticSoDViolation, UnknownRole, UnknownTransaction, UnknownUser
from .model import (
    DynamicSoDConstraint,
    Policy,
    Role,
    StaticSoDConstraint,
    closure_transactions,
    granted_transactions,
    is_identifier,
    member_roles,
    reachable_roles,
)
from .sod import add_dynamic_constraint, add_static_constraint

VERBS = (
    "grant",
    "revoke",
    "allocate",
    "deallocate",
    "contain",
    "uncontain",
    "onboard",
    "offboard",
    "restrict",
    "unrestrict",
    "change_function",
    "add_constraint",
)


def _need_user(p: Policy, u: str) -> None:
    if u not in p.users:
        raise UnknownUser(f"unknown user {u}", user=u)


def _need_role(p: Policy, r: str) -> Role:
    if r not in p.roles:
        raise UnknownRole(f"unknown role {r}", role=r)
    return p.roles[r]


def _need_tran(p: Policy, t: str) -> None:
    if t not in p.transactions:
        raise UnknownTransaction(f"unknown transaction {t}", transaction=t)


def _narrow_restrictions(p: Policy) -> Policy:
    # a restriction may never exceed what the user's roles grant; intersecting
    # keeps granted-and-restricted exactly as before the change
    narrowed = {}
    changed = False
    for u, allowed in p.restrictions.items():
        keep = allowed & granted_transactions(p, u)
        changed |= keep != allowed
        narrowed[u] = keep
    return p.evolve(restrictions=narrowed) if changed else p


def grant_membership(p: Policy, user: str, role: str) -> Policy:
    _need_user(p, user)
    target = _need_role(p, role)
    if user in target.members:
        return p
    held = member_roles(p, user) | {role}
    for c in p.static_sod:
        if role in c.roles and len(held & c.roles) > c.max_memberships:
            conflicting = sorted((held & c.roles) - {role})
            raise StaticSoDViolation(
                f"granting {role} to {user} violates {c.id} (already holds {', '.join(conflicting)})",
                constraint=c.id,
                conflicting=conflicting,
            )
    return p.with_role(Role(role, target.members | {user}, target.transactions, target.contains))


def revoke_membership(p: Policy, user: str, role: str) -> Policy:
    _need_user(p, user)
    target = _need_role(p, role)
    if user not in target.members:
        return p
    p = p.with_role(Role(role, target.members - {user}, target.transactions, target.contains))
    return _narrow_restrictions(p)


def allocate_transaction(p: Policy, role: str, transaction: str) -> Policy:
    target = _need_role(p, role)
    _need_tran(p, transaction)
    if transaction in target.transactions:
        return p
    return p.with_role(Role(role, target.members, target.transactions | {transaction}, target.contains))


def deallocate_transaction(p: Policy, role: str, transaction: str) -> Policy:
    target = _need_role(p, role)
    _need_tran(p, transaction)
    if transaction not in target.transactions:
        return p
    p = p.with_role(Role(role, target.members, target.transactions - {transaction}, target.contains))
    return _narrow_restrictions(p)


def add_containment(p: Policy, parent: str, child: str) -> Policy:
    """Make ``parent`` contain ``child``; rejected if that closes a cycle."""
    target = _need_role(p, parent)
    _need_role(p, child)
    if child in target.contains:
        return p
    if parent in reachable_roles(p, child):
        raise CycleError([parent] + _path(p, child, parent))
    return p.with_role(Role(parent, target.members, target.transactions, target.contains | {child}))


def _path(p: Policy, start: str, goal: str) -> list[str]:
    prev = {start: None}
    queue = [start]
    while queue:
        cur = queue.pop(0)
        if cur == goal:
            break
        for nxt in sorted(p.roles[cur].contains):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def remove_containment(p: Policy, parent: str, child: str) -> Policy:
    target = _need_role(p, parent)
    _need_role(p, child)
    if child not in target.contains:
        return p
    p = p.with_role(Role(parent, target.members, target.transactions, target.contains - {child}))
    return _narrow_restrictions(p)


def _historical_ids(history) -> set[str]:
    seen = set()
    for ev in history or ():
        seen.add(ev.actor)
        if ev.kind == "admin" and ev.body.get("verb") in ("onboard", "offboard", "grant", "revoke",
                                                          "restrict", "unrestrict", "change_function"):
            args = ev.body.get("args") or []
            if args:
                seen.add(args[0])
    return seen


def onboard_user(p: Policy, user: str, history=None) -> Policy:
    """Add a fresh user with no memberships.

    Ids seen anywhere in ``history`` are refused too: a recycled id would
    inherit someone else's separation-of-duty record.
    """
    if not is_identifier(user):
        raise AdminError(f"invalid user id {user!r}", code="INVALID_ID")
    if user in p.users or user in _historical_ids(history):
        raise AdminError(f"user id {user} is already in use or was used before", code="DUPLICATE_USER")
    return p.evolve(users=p.users | {user})


def offboard_user(p: Policy, user: str) -> Policy:
    _need_user(p, user)
    roles = {
        rid: Role(rid, role.members - {user}, role.transactions, role.contains)
        for rid, role in p.roles.items()
    }
    restrictions = {u: ts for u, ts in p.restrictions.items() if u != user}
    return p.evolve(users=p.users - {user}, roles=roles, restrictions=restrictions)


def set_restriction(p: Policy, user: str, allowed: Iterable[str]) -> Policy:
    """Limit ``user`` to a subset of what their roles grant. Empty means deny all."""
    _need_user(p, user)
    allowed = frozenset(allowed)
    for t in sorted(allowed):
        _need_tran(p, t)
    wider = allowed - granted_transactions(p, user)
    if wider:
        raise AdminError(
            f"restriction for {user} would add {sorted(wider)}", code="RESTRICTION_WIDENS"
        )
    restrictions = dict(p.restrictions)
    restrictions[user] = allowed
    return p.evolve(restrictions=restrictions)


def clear_restriction(p: Policy, user: str) -> Policy:
    _need_user(p, user)
    if user not in p.restrictions:
        return p
    return p.evolve(restrictions={u: ts for u, ts in p.restrictions.items() if u != user})


def change_function(p: Policy, user: str, roles: Iterable[str]) -> Policy:
    """Atomically replace all of ``user``'s memberships with ``roles``."""
    _need_user(p, user)
    roles = sorted(set(roles))
    for r in roles:
        _need_role(p, r)
    for r in sorted(member_roles(p, user)):
        p = revoke_membership(p, user, r)
    for r in roles:
        p = grant_membership(p, user, r)
    return p


def apply_action(
    p: Policy,
    verb: str,
    args: Sequence,
    ordinal: Optional[int] = None,
    history=None,
) -> Policy:
    """Dispatch one administrative verb. Used both live and for log replay.

    ``add_constraint`` takes ``["static", id, roles, max]`` or
    ``["dynamic", id, transactions, since]``.
    """
    a = list(args)
    if verb == "grant":
        return grant_membership(p, a[0], a[1])
    if verb == "revoke":
        return revoke_membership(p, a[0], a[1])
    if verb == "allocate":
        return allocate_transaction(p, a[0], a[1])
    if verb == "deallocate":
        return deallocate_transaction(p, a[0], a[1])
    if verb == "contain":
        return add_containment(p, a[0], a[1])
    if verb == "uncontain":
        return remove_containment(p, a[0], a[1])
    if verb == "onboard":
        return onboard_user(p, a[0], history)
    if verb == "offboard":
        return offboard_user(p, a[0])
    if verb == "restrict":
        return set_restriction(p, a[0], a[1])
    if verb == "unrestrict":
        return clear_restriction(p, a[0])
    if verb == "change_function":
        return change_function(p, a[0], a[1])
    if verb == "add_constraint":
        kind, cid, members = a[0], a[1], a[2]
        if kind == "static":
            k = int(a[3]) if len(a) > 3 else 1
            return add_static_constraint(p, StaticSoDConstraint(cid, frozenset(members), k))
        if kind == "dynamic":
            if len(a) > 3:
                since = int(a[3])
            else:
                since = ordinal - 1 if ordinal else 0
            return add_dynamic_constraint(p, DynamicSoDConstraint(cid, frozenset(members), since))
        raise AdminError(f"unknown constraint kind {kind!r}", code="BAD_CONSTRAINT")
    raise AdminError(f"unknown administrative verb {verb!r}", code="UNKNOWN_VERB")


def _jsonable(args: Sequence) -> list:
    return [sorted(x) if isinstance(x, (set, frozenset, list, tuple)) else x for x in args]


class PolicyAdministrator:
    """Single writer for one policy.

    Only principals listed in ``administrators`` may act. Each successful
    action is appended to the audit store before the new policy snapshot
    becomes visible through :attr:`policy`.
    """

    def __init__(self, policy: Policy, store, administrators: Iterable[str]):
        self._policy = policy
        self.store = store
        self.administrators = frozenset(administrators)
        self._lock = threading.Lock()

    @property
    def policy(self) -> Policy:
        return self._policy

    def perform(self, actor: str, verb: str, *args) -> Policy:
        if actor not in self.administrators:
            raise AdminError(f"{actor} does not hold the administrator capability",
                             code="NOT_ADMINISTRATOR")
        with self._lock:
            args = _jsonable(args)
            view = self.store.view()
            if verb == "add_constraint" and args and args[0] == "dynamic" and len(args) < 4:
                args.append(view.high_water)
            updated = apply_action(self._policy, verb, args, history=view)
            self.store.append("admin", actor, {"verb": verb, "args": args})
            self._policy = updated
            return updated

    def __getattr__(self, name):
        # admin.grant("root", "alice", "Doctor") etc.
        if name in VERBS:
            return lambda actor, *args: self.perform(actor, name, *args)
        raise AttributeError(name)


@dataclass(frozen=True)
class PrivilegeReport:
    user: str
    granted: frozenset[str]
    exercised: frozenset[str]
    surplus: frozenset[str]

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "granted": sorted(self.granted),
            "exercised": sorted(self.exercised),
            "surplus": sorted(self.surplus),
        }


def least_privilege_report(
    p: Policy,
    history,
    window: Optional[tuple[Optional[int], Optional[int]]] = None,
) -> list[PrivilegeReport]:
    """Granted-versus-exercised differential for every current user.

    ``window`` is an inclusive ordinal range; ``None`` on either side is
    open. Rows are ordered by surplus size (largest first), then user id.
    """
    lo, hi = window if window is not None else (None, None)
    exercised: dict[str, set[str]] = {}
    for ev in history or ():
        if ev.kind != "execution":
            continue
        if (lo is not None and ev.ordinal < lo) or (hi is not None and ev.ordinal > hi):
            continue
        exercised.setdefault(ev.actor, set()).add(ev.body["transaction"])
    rows = []
    for u in p.users:
        granted = closure_transactions(p, member_roles(p, u))
        if u in p.restrictions:
            granted &= p.restrictions[u]
        used = frozenset(exercised.get(u, ()))
        rows.append(PrivilegeReport(u, frozenset(granted), used, frozenset(granted - used)))
    rows.sort(key=lambda r: (-len(r.surplus), r.user))
    return rows
