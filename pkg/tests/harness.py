"""Drive a generated scenario through the real engine and audit store."""

from __future__ import annotations

from rbac_kernel.admin import apply_action
from rbac_kernel.audit import AuditStore
from rbac_kernel.engine import activate_role, can_execute, deactivate_role
from rbac_kernel.errors import RBACError
from rbac_kernel.model import Session


def run_engine(scn, store=None):
    """Return (verdicts, decisions, final policy, store) for every exec step."""
    store = store if store is not None else AuditStore(None)
    p = scn.policy
    sessions = {}
    verdicts, decisions = [], []
    for step in scn.trace:
        kind = step[0]
        if kind in ("activate", "deactivate"):
            _, u, r = step
            s = sessions.get(u, Session(u, session_id=u))
            if kind == "deactivate":
                sessions[u] = deactivate_role(s, r)
                continue
            try:
                sessions[u] = activate_role(p, s, r)
            except RBACError:
                pass
        elif kind == "exec":
            _, u, t, op = step
            s = sessions.get(u, Session(u, session_id=u))
            d = can_execute(p, s, t, op, store.view())
            verdicts.append(d.allowed)
            decisions.append((s, t, op, d))
            if d.allowed:
                store.append("execution", u, {"transaction": t, "operand": op,
                                              "active_roles": sorted(s.active_roles)})
        else:
            _, verb, args = step
            args = list(args)
            if verb == "add_constraint" and args[0] == "dynamic":
                args.append(store.high_water)
            try:
                p = apply_action(p, verb, args)
            except RBACError:
                pass
    return verdicts, decisions, p, store
