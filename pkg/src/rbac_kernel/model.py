"""Domain vocabulary: identifiers, transactions, roles, sessions and policies.

All values here are immutable snapshots. Mutation goes through
:mod:`rbac_kernel.admin`, which always returns a new :class:`Policy`.
"""

from __future__ import annotations

import enum
import re
import uuid
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

ID_PATTERN = re.compile(r"[A-Za-z0-9_-]{1,128}")

BOUND = "bound"
RULE4 = "rule4"
POLICY_MODES = (BOUND, RULE4)


def is_identifier(value: object) -> bool:
    return isinstance(value, str) and ID_PATTERN.fullmatch(value) is not None


class AccessMode(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    APPEND = "append"
    EXECUTE = "execute"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Binding:
    """One data item a transaction touches, with the modes it uses."""

    object: str
    modes: frozenset[AccessMode]

    def __post_init__(self):
        object.__setattr__(self, "modes", frozenset(AccessMode(m) for m in self.modes))


@dataclass(frozen=True)
class Transaction:
    """A transformation procedure bound to the data items it accesses.

    Bindings are kept as a sorted tuple rather than a mapping so that a
    duplicated object (an invariant violation) stays representable and
    can be reported by :func:`validate_policy`.
    """

    id: str
    procedure: str
    bindings: tuple[Binding, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.bindings, key=lambda b: (b.object, sorted(b.modes))))
        object.__setattr__(self, "bindings", ordered)


@dataclass(frozen=True)
class Role:
    id: str
    members: frozenset[str] = frozenset()
    transactions: frozenset[str] = frozenset()
    contains: frozenset[str] = frozenset()

    def __post_init__(self):
        for name in ("members", "transactions", "contains"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))


@dataclass(frozen=True)
class StaticSoDConstraint:
    """No user may be a member of more than ``max_memberships`` of ``roles``."""

    id: str
    roles: frozenset[str]
    max_memberships: int = 1

    def __post_init__(self):
        object.__setattr__(self, "roles", frozenset(self.roles))


@dataclass(frozen=True)
class DynamicSoDConstraint:
    """No user may execute two distinct ``transactions`` on the same operand.

    Only execution events with an ordinal strictly greater than ``since``
    are consulted, so adding a constraint never punishes earlier history.
    """

    id: str
    transactions: frozenset[str]
    since: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transactions", frozenset(self.transactions))


AccessEntry = tuple  # (role, transaction, object, AccessMode)


@dataclass(frozen=True)
class Policy:
    """The complete relation set of one RBAC policy.

    ``roles``, ``transactions`` and ``restrictions`` are plain dicts that
    are never mutated after construction; treat them as read-only.
    """

    name: str = "policy"
    mode: str = BOUND
    single_active_role: bool = False
    users: frozenset[str] = frozenset()
    objects: frozenset[str] = frozenset()
    transactions: Mapping[str, Transaction] = field(default_factory=dict)
    roles: Mapping[str, Role] = field(default_factory=dict)
    access_table: frozenset[AccessEntry] = frozenset()
    restrictions: Mapping[str, frozenset[str]] = field(default_factory=dict)
    static_sod: tuple[StaticSoDConstraint, ...] = ()
    dynamic_sod: tuple[DynamicSoDConstraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "users", frozenset(self.users))
        object.__setattr__(self, "objects", frozenset(self.objects))
        object.__setattr__(
            self,
            "access_table",
            frozenset((r, t, o, AccessMode(x)) for r, t, o, x in self.access_table),
        )
        object.__setattr__(
            self,
            "restrictions",
            {u: frozenset(ts) for u, ts in self.restrictions.items()},
        )
        object.__setattr__(self, "transactions", dict(self.transactions))
        object.__setattr__(self, "roles", dict(self.roles))
        object.__setattr__(self, "static_sod", tuple(sorted(self.static_sod, key=lambda c: c.id)))
        object.__setattr__(self, "dynamic_sod", tuple(sorted(self.dynamic_sod, key=lambda c: c.id)))

    def evolve(self, **changes) -> "Policy":
        return replace(self, **changes)

    def with_role(self, role: Role) -> "Policy":
        roles = dict(self.roles)
        roles[role.id] = role
        return replace(self, roles=roles)


@dataclass(frozen=True)
class Session:
    """One subject's live context: the set of currently active roles."""

    subject: str
    active_roles: frozenset[str] = frozenset()
    session_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        object.__setattr__(self, "active_roles", frozenset(self.active_roles))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def new_policy(name: str = "policy", mode: str = BOUND) -> Policy:
    """Return an empty policy (bound-transaction mode unless told otherwise)."""
    return Policy(name=name, mode=mode)


def reachable_roles(policy: Policy, role: str) -> set[str]:
    """Reflexive-transitive closure of ``contains`` starting at ``role``.

    Edges pointing at undeclared roles are followed no further.
    """
    seen = {role}
    stack = [role]
    while stack:
        current = policy.roles.get(stack.pop())
        if current is None:
            continue
        for child in current.contains:
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return seen


def closure_transactions(policy: Policy, roles: Iterable[str]) -> set[str]:
    found: set[str] = set()
    for start in roles:
        for rid in reachable_roles(policy, start):
            role = policy.roles.get(rid)
            if role is not None:
                found |= role.transactions
    return found


def member_roles(policy: Policy, user: str) -> set[str]:
    return {rid for rid, role in policy.roles.items() if user in role.members}


def granted_transactions(policy: Policy, user: str) -> set[str]:
    """Transactions reachable through ``user``'s memberships, ignoring restrictions."""
    return closure_transactions(policy, member_roles(policy, user))


def find_cycle(policy: Policy) -> list[str] | None:
    """Return one containment cycle as a closed path ``[a, b, ..., a]`` or None."""
    white, grey, black = 0, 1, 2
    colour = {rid: white for rid in policy.roles}
    for root in sorted(policy.roles):
        if colour[root] != white:
            continue
        path = [root]
        iters = [iter(sorted(policy.roles[root].contains))]
        colour[root] = grey
        while iters:
            child = next(iters[-1], None)
            if child is None:
                colour[path.pop()] = black
                iters.pop()
                continue
            if child not in colour:
                continue
            if colour[child] == grey:
                return path[path.index(child):] + [child]
            if colour[child] == white:
                colour[child] = grey
                path.append(child)
                iters.append(iter(sorted(policy.roles[child].contains)))
    return None


def validate_policy(policy: Policy) -> list[Violation]:
    """Return every structural invariant violation; ``[]`` iff well-formed."""
    from .sod import check_static

    out: list[Violation] = []

    def add(code: str, message: str) -> None:
        out.append(Violation(code, message))

    if not is_identifier(policy.name):
        add("INVALID_ID", f"policy name {policy.name!r} is not a valid identifier")
    if policy.mode not in POLICY_MODES:
        add("MODE_CONFLICT", f"unknown policy mode {policy.mode!r}")
    for kind, ids in (
        ("user", policy.users),
        ("object", policy.objects),
        ("transaction", policy.transactions),
        ("role", policy.roles),
    ):
        for ident in sorted(ids):
            if not is_identifier(ident):
                add("INVALID_ID", f"{kind} id {ident!r} is not a valid identifier")

    for tid in sorted(policy.transactions):
        tran = policy.transactions[tid]
        seen: set[str] = set()
        for b in tran.bindings:
            if b.object in seen:
                add("DUP_BINDING", f"transaction {tid} binds object {b.object} twice")
            seen.add(b.object)
            if b.object not in policy.objects:
                add("DANGLING_OBJECT", f"transaction {tid} binds undeclared object {b.object}")
        if policy.mode == BOUND and not tran.bindings:
            add("UNBOUND_TRANSACTION", f"transaction {tid} has no data bindings in bound mode")

    for rid in sorted(policy.roles):
        role = policy.roles[rid]
        for u in sorted(role.members - policy.users):
            add("DANGLING_USER", f"role {rid} lists undeclared member {u}")
        for t in sorted(role.transactions - policy.transactions.keys()):
            add("DANGLING_TRAN", f"role {rid} allocates undeclared transaction {t}")
        for c in sorted(role.contains - policy.roles.keys()):
            add("DANGLING_ROLE", f"role {rid} contains undeclared role {c}")

    cycle = find_cycle(policy)
    if cycle is not None:
        add("CYCLE", "containment cycle " + " -> ".join(cycle))

    if policy.mode == BOUND and policy.access_table:
        add("MODE_CONFLICT", "access entries are only allowed in rule4 mode")
    for r, t, o, x in sorted(policy.access_table, key=lambda e: (e[0], e[1], e[2], e[3].value)):
        if r not in policy.roles:
            add("DANGLING_ROLE", f"access entry names undeclared role {r}")
        if t not in policy.transactions:
            add("DANGLING_TRAN", f"access entry names undeclared transaction {t}")
        if o not in policy.objects:
            add("DANGLING_OBJECT", f"access entry names undeclared object {o}")

    for u in sorted(policy.restrictions):
        allowed = policy.restrictions[u]
        if u not in policy.users:
            add("DANGLING_USER", f"restriction for undeclared user {u}")
            continue
        unknown = allowed - policy.transactions.keys()
        if unknown:
            add("DANGLING_TRAN", f"restriction for {u} names undeclared {sorted(unknown)}")
        wider = (allowed & policy.transactions.keys()) - granted_transactions(policy, u)
        if wider:
            add("RESTRICTION_WIDENS", f"restriction for {u} adds {sorted(wider)} beyond its roles")

    ids: set[str] = set()
    for c in policy.static_sod:
        if c.id in ids or not is_identifier(c.id):
            add("BAD_CONSTRAINT", f"constraint id {c.id!r} is invalid or duplicated")
        ids.add(c.id)
        if len(c.roles) < 2 or c.max_memberships < 1:
            add("BAD_CONSTRAINT", f"static constraint {c.id} needs >= 2 roles and max >= 1")
        for r in sorted(c.roles - policy.roles.keys()):
            add("DANGLING_ROLE", f"static constraint {c.id} names undeclared role {r}")
    for c in policy.dynamic_sod:
        if c.id in ids or not is_identifier(c.id):
            add("BAD_CONSTRAINT", f"constraint id {c.id!r} is invalid or duplicated")
        ids.add(c.id)
        if len(c.transactions) < 2 or c.since < 0:
            add("BAD_CONSTRAINT", f"dynamic constraint {c.id} needs >= 2 transactions")
        for t in sorted(c.transactions - policy.transactions.keys()):
            add("DANGLING_TRAN", f"dynamic constraint {c.id} names undeclared transaction {t}")

    for cid, user, roles in check_static(policy):
        add("STATIC_SOD", f"user {user} holds {sorted(roles)} under constraint {cid}")
    return out
