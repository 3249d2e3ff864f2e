"""Command-line front end (``rbac``).

Exit codes: 0 success/allow, 1 deny or violations found, 2 usage error,
3 policy or parse error, 4 I/O error. Data goes to stdout, diagnostics
to stderr. ``--format json`` output is stable: keys sorted, no
wall-clock fields except in ``audit query``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from . import admin as adm
from .audit import KINDS, AuditStore, query
from .dsl import PolicyParseError, parse_policy_file, serialize_policy
from .engine import activate_role, can_execute, check_access, deactivate_role
from .errors import AdminError, AuditError, IllFormedPolicy, RBACError
from .model import Session, validate_policy

EXIT_OK, EXIT_DENY, EXIT_USAGE, EXIT_POLICY, EXIT_IO = 0, 1, 2, 3, 4

CLI_VERBS = {
    "grant": "grant",
    "revoke": "revoke",
    "allocate": "allocate",
    "deallocate": "deallocate",
    "contain": "contain",
    "uncontain": "uncontain",
    "onboard": "onboard",
    "offboard": "offboard",
    "restrict": "restrict",
    "unrestrict": "unrestrict",
    "change-function": "change_function",
    "add-sod": "add_constraint",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _split(value: str) -> list[str]:
    return [v for v in value.split(",") if v]


def _emit(args, payload, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(text)


def _audit_path(args) -> Optional[str]:
    return args.audit or os.environ.get("AUDIT_PATH") or None


def _open_store(args, required: bool) -> AuditStore:
    path = _audit_path(args)
    if path is None:
        if required:
            raise UsageError(f"{args.command}: an audit log is required (--audit or AUDIT_PATH)")
        return AuditStore(None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        store = AuditStore(path)
    for msg in store.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return store


def _load_policy(args):
    if not args.policy:
        raise UsageError(f"{args.command}: --policy is required")
    return parse_policy_file(args.policy)


def _decision_text(decision) -> str:
    fail = decision.first_failure
    head = "allow" if decision.allowed else f"deny {fail.rule}: {fail.detail}"
    body = [f"  {e.rule:<11} {e.outcome:<4} {e.detail}" for e in decision.rule_trace]
    return "\n".join([head] + body)


# -- subcommands -------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        policy = _load_policy(args)
    except PolicyParseError as exc:
        if args.format == "json":
            print(json.dumps({"ok": False, "errors": [e.to_json() for e in exc.errors]},
                             sort_keys=True, indent=2))
        for e in exc.errors:
            print(f"{args.policy}:{e}", file=sys.stderr)
        return EXIT_POLICY
    problems = validate_policy(policy)
    _emit(
        args,
        {"ok": not problems, "violations": [{"code": v.code, "message": v.message} for v in problems]},
        "ok" if not problems else "\n".join(f"{v.code}: {v.message}" for v in problems),
    )
    return EXIT_OK if not problems else EXIT_DENY


def cmd_check(args) -> int:
    policy = _load_policy(args)
    store = _open_store(args, required=args.record)
    session = Session(args.user, session_id=args.session_id or f"check-{args.user}")
    try:
        for role in args.activate or ():
            session = activate_role(policy, session, role)
    except RBACError as exc:
        _emit(args, {"allowed": False, "error": exc.code, "message": exc.args[0]},
              f"deny {exc.code}: {exc.args[0]}")
        return EXIT_DENY
    if args.object or args.mode:
        if not (args.object and args.mode):
            raise UsageError("check: --object and --mode go together")
        if args.record:
            raise UsageError("check: --record applies to transaction execution only")
        decision = check_access(policy, session, args.tran, args.object, args.mode,
                                args.operand, store.view())
    elif args.record:
        decision = store.record_execution(policy, session, args.tran, args.operand)
    else:
        decision = can_execute(policy, session, args.tran, args.operand, store.view())
    payload = {
        "user": args.user,
        "active_roles": sorted(session.active_roles),
        "transaction": args.tran,
        "operand": args.operand,
        **decision.to_json(),
    }
    _emit(args, payload, _decision_text(decision))
    return EXIT_OK if decision.allowed else EXIT_DENY


def _parse_trace(path: str) -> list[tuple[int, list[str]]]:
    steps = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            words = line.split()
            if not words or words[0].startswith("#"):
                continue
            steps.append((number, words))
    return steps


def _admin_args(verb: str, rest: list[str]) -> list:
    if verb in ("restrict",):
        return [rest[0], _split(rest[1]) if len(rest) > 1 else []]
    if verb == "change_function":
        return [rest[0], _split(rest[1]) if len(rest) > 1 else []]
    if verb == "add_constraint":
        kind, cid, members = rest[0], rest[1], _split(rest[2])
        out = [kind, cid, members]
        if kind == "static":
            out.append(int(rest[3]) if len(rest) > 3 else 1)
        return out
    return list(rest)


_ARITY = {"grant": 2, "revoke": 2, "allocate": 2, "deallocate": 2, "contain": 2,
          "uncontain": 2, "onboard": 1, "offboard": 1, "unrestrict": 1}


def cmd_simulate(args) -> int:
    policy = _load_policy(args)
    if not args.trace:
        raise UsageError("simulate: --trace is required")
    store = _open_store(args, required=False)
    admin = adm.PolicyAdministrator(policy, store, {args.actor})
    sessions: dict[str, Session] = {}
    results = []
    denied = 0

    def session_for(user: str) -> Session:
        return sessions.setdefault(user, Session(user, session_id=f"sim-{user}"))

    for number, words in _parse_trace(args.trace):
        step = {"line": number, "step": " ".join(words)}
        try:
            head = words[0]
            if head == "session" and len(words) == 4 and words[2] in ("activate", "deactivate"):
                user, action, role = words[1], words[2], words[3]
                if action == "activate":
                    sessions[user] = activate_role(admin.policy, session_for(user), role)
                else:
                    sessions[user] = deactivate_role(session_for(user), role)
                step.update(ok=True, active_roles=sorted(sessions[user].active_roles))
            elif head == "exec" and len(words) in (3, 5) and (len(words) == 3 or words[3] == "operand"):
                user, tran = words[1], words[2]
                operand = words[4] if len(words) == 5 else None
                decision = store.record_execution(admin.policy, session_for(user), tran, operand)
                step.update(ok=decision.allowed, **decision.to_json())
            elif head == "admin" and len(words) >= 2 and words[1] in CLI_VERBS:
                verb = CLI_VERBS[words[1]]
                rest = words[2:]
                if (verb in _ARITY and len(rest) != _ARITY[verb]) or (verb not in _ARITY and not rest):
                    raise UsageError(f"wrong number of arguments for admin {words[1]}")
                admin.perform(args.actor, verb, *_admin_args(verb, rest))
                step.update(ok=True)
            else:
                raise UsageError(f"unrecognised trace step {' '.join(words)!r}")
        except (UsageError, ValueError, IndexError) as exc:
            print(f"{args.trace}:{number}: {exc}", file=sys.stderr)
            return EXIT_POLICY
        except AuditError:
            raise
        except RBACError as exc:
            step.update(ok=False, error=exc.code, message=exc.args[0])
        if not step["ok"]:
            denied += 1
        results.append(step)

    lines = []
    for s in results:
        if s["ok"]:
            status = "ok" if "allowed" not in s else "allow"
        elif "error" in s:
            status = f"error {s['error']}: {s['message']}"
        else:
            status = f"deny {s['failed_rule']}: " + next(
                e["detail"] for e in s["rule_trace"] if e["outcome"] != "pass")
        lines.append(f"{s['line']:>4}  {s['step']}  -> {status}")
    _emit(args, {"steps": results, "denied": denied}, "\n".join(lines))
    return EXIT_DENY if denied else EXIT_OK


def cmd_admin(args) -> int:
    policy = _load_policy(args)
    store = _open_store(args, required=True)
    verb = CLI_VERBS[args.verb]
    if verb == "restrict" and args.clear:
        verb, rest = "unrestrict", [args.args[0]]
    else:
        rest = args.args
    if verb == "add_constraint" and args.max is not None:
        rest = rest + [str(args.max)]
    arity = _ARITY.get(verb)
    if (arity is not None and len(rest) != arity) or (arity is None and not rest):
        raise UsageError(f"admin {args.verb}: wrong number of arguments")
    if verb == "add_constraint" and (len(rest) < 3 or rest[0] not in ("static", "dynamic")):
        raise UsageError("admin add-sod: expected static|dynamic ID MEMBERS")
    admin = adm.PolicyAdministrator(policy, store, {args.actor})
    try:
        updated = admin.perform(args.actor, verb, *_admin_args(verb, rest))
    except AdminError as exc:
        _emit(args, {"ok": False, "error": exc.code, "message": exc.args[0]},
              f"rejected {exc.code}: {exc.args[0]}")
        return EXIT_DENY
    text = serialize_policy(updated)
    out = args.output or args.policy
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
        _emit(args, {"ok": True, "verb": verb, "args": rest, "written": out},
              f"ok: {args.verb} {' '.join(rest)} -> {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    store = _open_store(args, required=True)
    events = query(store.view(), actor=args.actor, kind=args.kind, transaction=args.tran,
                   operand=args.operand, ordinals=(args.from_ord, args.to_ord))
    text = "\n".join(
        f"{e.ordinal:>6} {e.kind:<9} {e.actor:<16} {json.dumps(e.body, sort_keys=True)}"
        for e in events
    )
    _emit(args, [e.to_json() for e in events], text)
    return EXIT_OK


def cmd_report(args) -> int:
    policy = _load_policy(args)
    store = _open_store(args, required=False)
    rows = adm.least_privilege_report(policy, store.view(), (args.from_ord, args.to_ord))
    text = "\n".join(
        f"{r.user}: granted {len(r.granted)}, exercised {len(r.exercised)}, "
        f"surplus [{', '.join(sorted(r.surplus))}]"
        for r in rows
    )
    _emit(args, [r.to_json() for r in rows], text)
    return EXIT_OK


def cmd_fmt(args) -> int:
    policy = _load_policy(args)
    text = serialize_policy(policy)
    if args.check:
        current = Path(args.policy).read_text(encoding="utf-8")
        if current != text:
            print(f"{args.policy}: not in canonical form", file=sys.stderr)
            return EXIT_DENY
        return EXIT_OK
    if args.write:
        Path(args.policy).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--policy", help="policy file (.rbac)")
    common.add_argument("--audit", help="audit log path (overrides AUDIT_PATH)")
    common.add_argument("--format", choices=("text", "json"), default="text")

    parser = _Parser(prog="rbac", description="Role-based access control kernel")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", parents=[common], help="parse and check a policy")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("check", parents=[common], help="evaluate one execution request")
    p.add_argument("--user", required=True)
    p.add_argument("--activate", action="append", metavar="ROLE")
    p.add_argument("--tran", required=True)
    p.add_argument("--operand")
    p.add_argument("--object")
    p.add_argument("--mode")
    p.add_argument("--session-id")
    p.add_argument("--record", action="store_true", help="log the decision and execution")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", parents=[common], help="run a scripted trace")
    p.add_argument("--trace")
    p.add_argument("--actor", default="admin")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("admin", parents=[common], help="administer the policy")
    p.add_argument("verb", choices=sorted(CLI_VERBS))
    p.add_argument("args", nargs="*")
    p.add_argument("--actor", default="admin")
    p.add_argument("--clear", action="store_true", help="restrict: remove the restriction")
    p.add_argument("--max", type=int, help="add-sod static: max memberships")
    p.add_argument("--output", help="write the new policy here ('-' for stdout)")
    p.set_defaults(func=cmd_admin)

    p = sub.add_parser("audit", help="inspect the audit log")
    asub = p.add_subparsers(dest="audit_command", parser_class=_Parser)
    asub.required = True
    q = asub.add_parser("query", parents=[common])
    q.add_argument("--actor")
    q.add_argument("--kind", choices=KINDS)
    q.add_argument("--tran")
    q.add_argument("--operand")
    q.add_argument("--from", dest="from_ord", type=int)
    q.add_argument("--to", dest="to_ord", type=int)
    q.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="reports")
    rsub = p.add_subparsers(dest="report_command", parser_class=_Parser)
    rsub.required = True
    r = rsub.add_parser("least-privilege", parents=[common])
    r.add_argument("--from", dest="from_ord", type=int)
    r.add_argument("--to", dest="to_ord", type=int)
    r.set_defaults(func=cmd_report)

    p = sub.add_parser("fmt", parents=[common], help="rewrite a policy in canonical form")
    p.add_argument("--write", action="store_true")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_fmt)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except PolicyParseError as exc:
        for e in exc.errors:
            print(e, file=sys.stderr)
        return EXIT_POLICY
    except IllFormedPolicy as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_POLICY
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RBACError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def dispatch(argv: Sequence[str]) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
