"""The ``.rbac`` policy language.

One statement per line, ``#`` starts a comment, keywords are lowercase::

    policy <id> mode (bound|rule4) [single-active-role]
    user <id>
    object <id>
    transaction <id> proc <id> [binds <obj>:<mode>[,<mode>]* ...]
    role <id> [allocates <tran>,...] [contains <role>,...] [members <user>,...]
    static-sod <id> roles <role>,<role>[,...] [max <k>]
    dynamic-sod <id> transactions <tran>,<tran>[,...] [since <ordinal>]
    restrict <user> to [<tran>,...]
    access <role> <tran> <obj> <mode>          (rule4 policies only)

Declarations may appear in any order; references are resolved in a
second pass. Parsing never stops at the first problem: each bad
statement is reported and skipped, and every error found is raised
together in one :class:`PolicyParseError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import IllFormedPolicy, RBACError
from .model import (
    BOUND,
    POLICY_MODES,
    RULE4,
    AccessMode,
    Binding,
    DynamicSoDConstraint,
    Policy,
    Role,
    StaticSoDConstraint,
    Transaction,
    granted_transactions,
    validate_policy,
)

ID_CHARS = frozenset("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-")
MAX_ID = 128
MODES = {m.value: m for m in AccessMode}


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int

    def slice(self, source: str) -> str:
        lines = source.split("\n")
        if not 1 <= self.line <= len(lines):
            return ""
        text = lines[self.line - 1]
        return text[self.column - 1 : self.column - 1 + self.length]


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.span.line}:{self.span.column}: {self.code} {self.message}"

    def to_json(self) -> dict:
        return {
            "line": self.span.line,
            "column": self.span.column,
            "length": self.span.length,
            "code": self.code,
            "message": self.message,
        }


class PolicyParseError(RBACError):
    code = "PARSE"

    def __init__(self, errors: list[ParseError]):
        self.errors = list(errors)
        head = str(self.errors[0]) if self.errors else "no errors"
        more = f" (+{len(self.errors) - 1} more)" if len(self.errors) > 1 else ""
        super().__init__(head + more)


@dataclass(frozen=True)
class Token:
    kind: str  # "id", ",", ":"
    text: str
    span: SourceSpan


class _Abort(Exception):
    """Internal: abandon the current statement."""


# -- lexing -----------------------------------------------------------------


def _split_lines(source: str | bytes, errors: list[ParseError]) -> list[Optional[str]]:
    """Decode to lines. Lines holding invalid UTF-8 become None plus a LEX error."""
    if isinstance(source, str):
        return source.split("\n")
    out: list[Optional[str]] = []
    for number, raw in enumerate(source.split(b"\n"), start=1):
        try:
            out.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            column = len(raw[: exc.start].decode("utf-8")) + 1
            errors.append(
                ParseError(SourceSpan(number, column, 1), "LEX", "invalid UTF-8 byte sequence")
            )
            out.append(None)
    return out


def _tokenize(text: str, number: int, errors: list[ParseError]) -> Optional[list[Token]]:
    tokens: list[Token] = []
    ok = True
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\f\v":
            i += 1
        elif ch == "#":
            break
        elif ch in ",:":
            tokens.append(Token(ch, ch, SourceSpan(number, i + 1, 1)))
            i += 1
        elif ch in ID_CHARS:
            j = i
            while j < n and text[j] in ID_CHARS:
                j += 1
            span = SourceSpan(number, i + 1, j - i)
            if j - i > MAX_ID:
                errors.append(ParseError(span, "LEX", f"identifier longer than {MAX_ID} characters"))
                ok = False
            tokens.append(Token("id", text[i:j], span))
            i = j
        else:
            errors.append(ParseError(SourceSpan(number, i + 1, 1), "LEX", f"unexpected character {ch!r}"))
            ok = False
            i += 1
    return tokens if ok else None


# -- statement parsing -------------------------------------------------------

Ref = tuple  # (identifier, SourceSpan)


@dataclass
class _Decls:
    header: Optional[tuple] = None  # (name, mode, single, span, mode_span)
    users: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict)
    transactions: dict = field(default_factory=dict)  # id -> (span, proc, [(obj_ref, modes)])
    roles: dict = field(default_factory=dict)  # id -> (span, {clause: [refs]})
    access: list = field(default_factory=list)  # (kw_span, role_ref, tran_ref, obj_ref, mode)
    static: dict = field(default_factory=dict)  # id -> (span, [role refs], k)
    dynamic: dict = field(default_factory=dict)  # id -> (span, [tran refs], since)
    restrict: dict = field(default_factory=dict)  # user -> (span, [tran refs])


class _Statement:
    def __init__(self, tokens: list[Token], errors: list[ParseError]):
        self.tokens = tokens
        self.pos = 0
        self.errors = errors

    def fail(self, code: str, message: str, tok: Optional[Token] = None):
        if tok is None:
            tok = self.tokens[self.pos] if self.pos < len(self.tokens) else self.tokens[-1]
        self.errors.append(ParseError(tok.span, code, message))
        raise _Abort

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self) -> Optional[Token]:
        return None if self.at_end() else self.tokens[self.pos]

    def ident(self, what: str) -> Token:
        tok = self.peek()
        if tok is None:
            self.fail("SYNTAX", f"expected {what}, found end of statement")
        if tok.kind != "id":
            self.fail("SYNTAX", f"expected {what}, found {tok.text!r}")
        self.pos += 1
        return tok

    def keyword(self, *words: str) -> Token:
        tok = self.ident(" or ".join(repr(w) for w in words))
        if tok.text not in words:
            self.fail("SYNTAX", f"expected {' or '.join(repr(w) for w in words)}, found {tok.text!r}", tok)
        return tok

    def punct(self, ch: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == ch:
            self.pos += 1
            return True
        return False

    def id_list(self, what: str) -> list[Ref]:
        items = [self.ident(what)]
        while self.punct(","):
            items.append(self.ident(what))
        return [(t.text, t.span) for t in items]

    def number(self, what: str, minimum: int) -> int:
        tok = self.ident(what)
        if not tok.text.isdigit() or int(tok.text) < minimum:
            self.fail("SYNTAX", f"{what} must be an integer >= {minimum}", tok)
        return int(tok.text)

    def end(self) -> None:
        if not self.at_end():
            self.fail("SYNTAX", f"unexpected {self.peek().text!r}")


def _declare(table: dict, key: str, value, tok: Token, errors: list[ParseError], kind: str) -> None:
    if key in table:
        errors.append(ParseError(tok.span, "DUPLICATE_DECL", f"{kind} {key} declared more than once"))
    else:
        table[key] = value


def _statement(st: _Statement, d: _Decls) -> None:
    errors = st.errors
    head = st.ident("statement keyword")
    kw = head.text
    if kw == "policy":
        name = st.ident("policy name")
        st.keyword("mode")
        mode = st.keyword(*POLICY_MODES)
        single = False
        if not st.at_end():
            st.keyword("single-active-role")
            single = True
        st.end()
        if d.header is not None:
            st.fail("DUPLICATE_DECL", "policy header declared more than once", head)
        d.header = (name.text, mode.text, single, head.span, mode.span)
    elif kw in ("user", "object"):
        tok = st.ident(f"{kw} id")
        st.end()
        _declare(d.users if kw == "user" else d.objects, tok.text, tok.span, tok, errors, kw)
    elif kw == "transaction":
        tok = st.ident("transaction id")
        st.keyword("proc")
        proc = st.ident("procedure id")
        bindings = []
        if not st.at_end():
            st.keyword("binds")
            while True:
                obj = st.ident("object id")
                if not st.punct(":"):
                    st.fail("SYNTAX", "expected ':' after bound object")
                modes = []
                while True:
                    m = st.ident("access mode")
                    if m.text not in MODES:
                        st.fail("SYNTAX", f"unknown access mode {m.text!r}", m)
                    modes.append(MODES[m.text])
                    if not st.punct(","):
                        break
                if any(o == obj.text for (o, _), _m in bindings):
                    st.fail("DUPLICATE_DECL", f"object {obj.text} bound twice", obj)
                bindings.append(((obj.text, obj.span), modes))
                if st.at_end():
                    break
        _declare(d.transactions, tok.text, (tok.span, proc.text, bindings), tok, errors, "transaction")
    elif kw == "role":
        tok = st.ident("role id")
        clauses: dict[str, list[Ref]] = {}
        while not st.at_end():
            c = st.keyword("allocates", "contains", "members")
            if c.text in clauses:
                st.fail("SYNTAX", f"clause {c.text!r} repeated", c)
            what = {"allocates": "transaction id", "contains": "role id", "members": "user id"}[c.text]
            clauses[c.text] = st.id_list(what)
        _declare(d.roles, tok.text, (tok.span, clauses), tok, errors, "role")
    elif kw == "static-sod":
        tok = st.ident("constraint id")
        st.keyword("roles")
        roles = st.id_list("role id")
        k = 1
        if not st.at_end():
            st.keyword("max")
            k = st.number("max", 1)
        st.end()
        if len({r for r, _ in roles}) < 2:
            st.fail("SYNTAX", "a static constraint needs at least two distinct roles", tok)
        if tok.text in d.dynamic:
            st.fail("DUPLICATE_DECL", f"constraint {tok.text} declared more than once", tok)
        _declare(d.static, tok.text, (tok.span, roles, k), tok, errors, "constraint")
    elif kw == "dynamic-sod":
        tok = st.ident("constraint id")
        st.keyword("transactions")
        trans = st.id_list("transaction id")
        since = 0
        if not st.at_end():
            st.keyword("since")
            since = st.number("since", 0)
        st.end()
        if len({t for t, _ in trans}) < 2:
            st.fail("SYNTAX", "a dynamic constraint needs at least two distinct transactions", tok)
        if tok.text in d.static:
            st.fail("DUPLICATE_DECL", f"constraint {tok.text} declared more than once", tok)
        _declare(d.dynamic, tok.text, (tok.span, trans, since), tok, errors, "constraint")
    elif kw == "restrict":
        user = st.ident("user id")
        st.keyword("to")
        trans = [] if st.at_end() else st.id_list("transaction id")
        st.end()
        _declare(d.restrict, user.text, (user.span, trans), user, errors, "restriction for")
    elif kw == "access":
        role = st.ident("role id")
        tran = st.ident("transaction id")
        obj = st.ident("object id")
        mode = st.ident("access mode")
        if mode.text not in MODES:
            st.fail("SYNTAX", f"unknown access mode {mode.text!r}", mode)
        st.end()
        d.access.append(
            (head.span, (role.text, role.span), (tran.text, tran.span), (obj.text, obj.span), MODES[mode.text])
        )
    else:
        st.fail("SYNTAX", f"unknown statement {kw!r}", head)


# -- resolution ----------------------------------------------------------------


def _resolve(d: _Decls, errors: list[ParseError]) -> Optional[Policy]:
    def need(ref: Ref, table, kind: str) -> bool:
        if ref[0] in table:
            return True
        errors.append(ParseError(ref[1], "UNKNOWN_REF", f"undeclared {kind} {ref[0]}"))
        return False

    if d.header is None:
        errors.append(ParseError(SourceSpan(1, 1, 0), "SYNTAX", "missing 'policy <id> mode ...' header"))
        mode = BOUND
    else:
        mode = d.header[1]

    transactions = {}
    for tid, (span, proc, bindings) in d.transactions.items():
        for (obj_ref, _modes) in bindings:
            need(obj_ref, d.objects, "object")
        if mode == BOUND and not bindings:
            errors.append(ParseError(span, "MODE_CONFLICT", f"transaction {tid} has no binds in bound mode"))
        transactions[tid] = Transaction(
            tid, proc, tuple(Binding(o, frozenset(ms)) for (o, _), ms in bindings)
        )

    roles = {}
    for rid, (span, clauses) in d.roles.items():
        members = {r for r in clauses.get("members", []) if need(r, d.users, "user")}
        allocs = {r for r in clauses.get("allocates", []) if need(r, d.transactions, "transaction")}
        contains = {r for r in clauses.get("contains", []) if need(r, d.roles, "role")}
        roles[rid] = (
            Role(rid, {m for m, _ in members}, {t for t, _ in allocs}, {c for c, _ in contains}),
            sorted(contains, key=lambda r: (r[1].line, r[1].column)),
        )

    access = set()
    for kw_span, role, tran, obj, m in d.access:
        if mode != RULE4:
            errors.append(ParseError(kw_span, "MODE_CONFLICT", "access entries require mode rule4"))
            continue
        if need(role, d.roles, "role") & need(tran, d.transactions, "transaction") & need(obj, d.objects, "object"):
            access.add((role[0], tran[0], obj[0], m))

    static = []
    for cid, (span, refs, k) in d.static.items():
        ok = all([need(r, d.roles, "role") for r in refs])
        if ok:
            static.append(StaticSoDConstraint(cid, {r for r, _ in refs}, k))
    dynamic = []
    for cid, (span, refs, since) in d.dynamic.items():
        ok = all([need(r, d.transactions, "transaction") for r in refs])
        if ok:
            dynamic.append(DynamicSoDConstraint(cid, {t for t, _ in refs}, since))

    restrictions = {}
    for uid, (span, refs) in d.restrict.items():
        ok = need((uid, span), d.users, "user")
        ok = all([need(r, d.transactions, "transaction") for r in refs]) and ok
        if ok:
            restrictions[uid] = frozenset(t for t, _ in refs)

    _report_cycles(roles, errors)
    if errors:
        return None

    name, _, single, _, _ = d.header
    policy = Policy(
        name=name,
        mode=mode,
        single_active_role=single,
        users=d.users.keys(),
        objects=d.objects.keys(),
        transactions=transactions,
        roles={rid: role for rid, (role, _) in roles.items()},
        access_table=access,
        restrictions=restrictions,
        static_sod=static,
        dynamic_sod=dynamic,
    )

    from .sod import check_static

    for cid, user, held in check_static(policy):
        span = d.static[cid][0]
        errors.append(
            ParseError(span, "INVARIANT", f"STATIC_SOD: user {user} is in {sorted(held)} under {cid}")
        )
    for uid, allowed in sorted(restrictions.items()):
        wider = allowed - granted_transactions(policy, uid)
        if wider:
            errors.append(
                ParseError(d.restrict[uid][0], "INVARIANT",
                           f"RESTRICTION_WIDENS: {sorted(wider)} not granted to {uid} by any role")
            )
    if errors:
        return None
    leftover = validate_policy(policy)
    if leftover:
        errors.extend(
            ParseError(SourceSpan(1, 1, 0), "INVARIANT", f"{v.code}: {v.message}") for v in leftover
        )
        return None
    return policy


def _report_cycles(roles: dict, errors: list[ParseError]) -> None:
    """One CYCLE error per back edge, located at the closing ``contains`` reference."""
    state: dict[str, int] = {}

    def visit(rid: str) -> None:
        stack = [(rid, iter(roles[rid][1]))]
        state[rid] = 1
        while stack:
            cur, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[cur] = 2
                stack.pop()
                continue
            child, span = nxt
            if child not in roles:
                continue
            if state.get(child) == 1:
                path = [r for r, _ in stack]
                loop = path[path.index(child):] + [child]
                errors.append(ParseError(span, "CYCLE", "containment cycle " + " -> ".join(loop)))
            elif child not in state:
                state[child] = 1
                stack.append((child, iter(roles[child][1])))

    for rid in sorted(roles):
        if rid not in state:
            visit(rid)


def parse_policy(source: str | bytes) -> Policy:
    """Parse ``.rbac`` text (or raw bytes) into a well-formed :class:`Policy`.

    Raises :class:`PolicyParseError` carrying every error found.
    """
    errors: list[ParseError] = []
    decls = _Decls()
    for number, text in enumerate(_split_lines(source, errors), start=1):
        if text is None:
            continue
        tokens = _tokenize(text, number, errors)
        if not tokens:
            continue
        try:
            _statement(_Statement(tokens, errors), decls)
        except _Abort:
            pass
    policy = _resolve(decls, errors)
    if errors:
        errors.sort(key=lambda e: (e.span.line, e.span.column))
        raise PolicyParseError(errors)
    return policy


def parse_policy_file(path) -> Policy:
    with open(path, "rb") as fh:
        return parse_policy(fh.read())


# -- serialization -------------------------------------------------------------


def _join(items) -> str:
    return ",".join(sorted(items))


def serialize_policy(policy: Policy) -> str:
    """Canonical text form. ``parse_policy(serialize_policy(p)) == p``."""
    problems = validate_policy(policy)
    if problems:
        raise IllFormedPolicy(
            "; ".join(f"{v.code}: {v.message}" for v in problems), violations=problems
        )
    header = f"policy {policy.name} mode {policy.mode}"
    if policy.single_active_role:
        header += " single-active-role"
    lines = [header, "", "# users"]
    lines += [f"user {u}" for u in sorted(policy.users)]
    lines += ["", "# objects"]
    lines += [f"object {o}" for o in sorted(policy.objects)]
    lines += ["", "# transactions"]
    for tid in sorted(policy.transactions):
        t = policy.transactions[tid]
        line = f"transaction {tid} proc {t.procedure}"
        if t.bindings:
            line += " binds " + " ".join(
                f"{b.object}:" + ",".join(sorted(m.value for m in b.modes)) for b in t.bindings
            )
        lines.append(line)
    lines += ["", "# roles"]
    for rid in sorted(policy.roles):
        r = policy.roles[rid]
        line = f"role {rid}"
        if r.transactions:
            line += f" allocates {_join(r.transactions)}"
        if r.contains:
            line += f" contains {_join(r.contains)}"
        if r.members:
            line += f" members {_join(r.members)}"
        lines.append(line)
    lines += ["", "# access"]
    for r, t, o, x in sorted(policy.access_table, key=lambda e: (e[0], e[1], e[2], e[3].value)):
        lines.append(f"access {r} {t} {o} {x.value}")
    lines += ["", "# constraints"]
    for c in policy.static_sod:
        lines.append(f"static-sod {c.id} roles {_join(c.roles)} max {c.max_memberships}")
    for c in policy.dynamic_sod:
        line = f"dynamic-sod {c.id} transactions {_join(c.transactions)}"
        if c.since:
            line += f" since {c.since}"
        lines.append(line)
    lines += ["", "# restrictions"]
    for u in sorted(policy.restrictions):
        allowed = policy.restrictions[u]
        lines.append(f"restrict {u} to" + (f" {_join(allowed)}" if allowed else ""))
    return "\n".join(lines) + "\n"
