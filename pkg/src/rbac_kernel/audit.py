"""Append-only audit log.

On disk the log is line-delimited JSON. Each line is one record::

    {"ord":1,"kind":"execution","actor":"alice","ts":1700000000.0,"body":{...},"crc32":123}

``crc32`` covers every byte of the line before the digits of the checksum
itself (i.e. up to and including ``"crc32":``). A torn or corrupted tail
is moved to ``<path>.quarantine`` on open and reported as
``OPEN_TRUNCATED``; corruption followed by intact records is refused.

Ordinals are the only ordering authority. ``ts`` is informational.
"""

from __future__ import annotations

import contextlib
import fcntl
import json
import logging
import os
import threading
import time
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from .engine import Decision, can_execute
from .errors import AuditError
from .model import Policy, Session

logger = logging.getLogger(__name__)

ADMIN = "admin"
DECISION = "decision"
EXECUTION = "execution"
KINDS = (ADMIN, DECISION, EXECUTION)

_CRC_KEY = ',"crc32":'


class AuditTruncatedWarning(UserWarning):
    """Emitted when a corrupt tail was quarantined while opening a log."""


@dataclass(frozen=True)
class AuditEvent:
    ordinal: int
    kind: str
    actor: str
    body: dict
    recorded_at: float = 0.0

    @property
    def transaction(self) -> Optional[str]:
        return self.body.get("transaction")

    @property
    def operand(self) -> Optional[str]:
        return self.body.get("operand")

    def to_json(self, with_time: bool = True) -> dict:
        out = {"ord": self.ordinal, "kind": self.kind, "actor": self.actor, "body": self.body}
        if with_time:
            out["ts"] = self.recorded_at
        return out


@dataclass(frozen=True)
class AuditView:
    """Immutable snapshot of every event up to ``high_water``."""

    events: tuple[AuditEvent, ...] = ()

    @property
    def high_water(self) -> int:
        return self.events[-1].ordinal if self.events else 0

    def upto(self, ordinal: int) -> "AuditView":
        return AuditView(tuple(e for e in self.events if e.ordinal <= ordinal))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


EMPTY_VIEW = AuditView()


def encode_record(ordinal: int, kind: str, actor: str, ts: float, body: dict) -> bytes:
    head = json.dumps(
        {"ord": ordinal, "kind": kind, "actor": actor, "ts": ts, "body": body},
        separators=(",", ":"),
        sort_keys=False,
        ensure_ascii=False,
    )
    prefix = head[:-1] + _CRC_KEY
    crc = zlib.crc32(prefix.encode("utf-8"))
    return f"{prefix}{crc}}}\n".encode("utf-8")


def decode_record(raw: bytes) -> AuditEvent:
    """Parse one line (without its newline). Raises ValueError if damaged."""
    text = raw.decode("utf-8")
    cut = text.rfind(_CRC_KEY)
    if cut < 0 or not text.endswith("}"):
        raise ValueError("record has no checksum")
    prefix = text[: cut + len(_CRC_KEY)]
    if str(zlib.crc32(prefix.encode("utf-8"))) != text[len(prefix) : -1]:
        raise ValueError("checksum mismatch")
    rec = json.loads(text)
    if rec.get("kind") not in KINDS or not isinstance(rec.get("ord"), int):
        raise ValueError("malformed record")
    return AuditEvent(rec["ord"], rec["kind"], rec["actor"], rec["body"], rec["ts"])


class AuditStore:
    """Single-writer append-only event log, optionally backed by a file.

    With ``path=None`` the store lives in memory only (used by tests and
    by ``simulate`` when no audit location is configured).
    """

    def __init__(self, path: str | os.PathLike | None = None, clock: Callable[[], float] = time.time):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self.warnings: list[str] = []
        self._events: list[AuditEvent] = []
        self._offset = 0
        self._write_lock = threading.Lock()
        self._operand_guard = threading.Lock()
        self._operand_locks: dict[str, threading.Lock] = {}
        if self.path is not None:
            self._open()

    # -- persistence -------------------------------------------------

    def _open(self) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
            data = self.path.read_bytes()
        except OSError as exc:
            raise AuditError(f"cannot open audit log {self.path}: {exc}", cause=exc) from exc
        good, offset, bad_at = self._scan(data, 0, expected=1)
        self._events = good
        self._offset = offset
        if bad_at is not None:
            self._quarantine(data, bad_at)

    @staticmethod
    def _scan(data: bytes, start: int, expected: int):
        """Parse records from ``data``; stop at the first damaged one.

        Returns (events, end offset of last good record, offset of damage or None).
        """
        events: list[AuditEvent] = []
        pos = 0
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                return events, start + pos, start + pos
            try:
                ev = decode_record(data[pos:nl])
            except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                return events, start + pos, start + pos
            if ev.ordinal != expected:
                return events, start + pos, start + pos
            events.append(ev)
            expected += 1
            pos = nl + 1
        return events, start + pos, None

    def _quarantine(self, data: bytes, bad_at: int) -> None:
        tail = data[bad_at:]
        for line in tail.split(b"\n")[1:]:
            try:
                decode_record(line)
            except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                continue
            raise AuditError(
                f"audit log {self.path} is damaged before intact records (offset {bad_at})",
                code="STORE_CORRUPT",
            )
        qpath = self.path.with_name(self.path.name + ".quarantine")
        try:
            with open(qpath, "ab") as q:
                q.write(tail)
            with open(self.path, "r+b") as f:
                f.truncate(bad_at)
                f.flush()
                os.fsync(f.fileno())
        except OSError as exc:
            raise AuditError(f"cannot quarantine damaged tail: {exc}", cause=exc) from exc
        msg = (
            f"OPEN_TRUNCATED: {len(tail)} damaged byte(s) moved to {qpath}; "
            f"high-water is {self.high_water}"
        )
        self.warnings.append(msg)
        logger.warning(msg)
        warnings.warn(msg, AuditTruncatedWarning, stacklevel=3)

    def _catch_up(self, fh) -> None:
        """Pick up records appended by another process since we last looked."""
        size = os.fstat(fh.fileno()).st_size
        if size == self._offset:
            return
        fh.seek(self._offset)
        data = fh.read(size - self._offset)
        events, end, bad_at = self._scan(data, self._offset, expected=self.high_water + 1)
        if bad_at is not None:
            raise AuditError(f"audit log {self.path} changed underneath us", code="STORE_CORRUPT")
        self._events.extend(events)
        self._offset = end

    # -- public API ----------------------------------------------------

    @property
    def high_water(self) -> int:
        return self._events[-1].ordinal if self._events else 0

    def view(self) -> AuditView:
        return AuditView(tuple(self._events))

    def append(self, kind: str, actor: str, body: dict[str, Any]) -> int:
        """Durably append one event and return its ordinal."""
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._write_lock:
            if self.path is None:
                ordinal = self.high_water + 1
                self._events.append(AuditEvent(ordinal, kind, actor, body, self.clock()))
                return ordinal
            try:
                with open(self.path, "a+b") as fh:
                    fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
                    try:
                        self._catch_up(fh)
                        ordinal = self.high_water + 1
                        ts = self.clock()
                        record = encode_record(ordinal, kind, actor, ts, body)
                        fh.seek(0, os.SEEK_END)
                        fh.write(record)
                        fh.flush()
                        os.fsync(fh.fileno())
                    finally:
                        fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
            except OSError as exc:
                raise AuditError(f"append to {self.path} failed: {exc}", cause=exc) from exc
            # round-trip through JSON so in-memory bodies match what a reopen yields
            self._events.append(AuditEvent(ordinal, kind, actor, json.loads(json.dumps(body)), ts))
            self._offset += len(record)
            return ordinal

    def operand_lock(self, operand: Optional[str]):
        if operand is None:
            return contextlib.nullcontext()
        with self._operand_guard:
            return self._operand_locks.setdefault(operand, threading.Lock())

    def record_execution(
        self,
        policy: Policy,
        session: Session,
        transaction: str,
        operand: Optional[str] = None,
    ) -> Decision:
        """Decide, log the decision, and log the execution iff allowed.

        Check and append are serialized per operand key, so two requests
        that conflict on the same operand cannot both pass.
        """
        with self.operand_lock(operand):
            decision = can_execute(policy, session, transaction, operand, self.view())
            base = {
                "session": session.session_id,
                "transaction": transaction,
                "operand": operand,
                "active_roles": sorted(session.active_roles),
            }
            trace = [[e.rule, e.outcome, e.detail, e.witness] for e in decision.rule_trace]
            self.append(DECISION, session.subject, dict(base, allowed=decision.allowed, trace=trace))
            if decision.allowed:
                self.append(EXECUTION, session.subject, base)
        return decision


def record_execution(store: AuditStore, policy: Policy, session: Session, transaction: str,
                     operand: Optional[str] = None) -> Decision:
    return store.record_execution(policy, session, transaction, operand)


def query(
    view: AuditView | Iterable[AuditEvent],
    actor: Optional[str] = None,
    kind: Optional[str] = None,
    transaction: Optional[str] = None,
    operand: Optional[str] = None,
    ordinals: Optional[tuple[Optional[int], Optional[int]]] = None,
) -> list[AuditEvent]:
    """Events matching every supplied filter, in ascending ordinal order.

    ``ordinals`` is an inclusive ``(low, high)`` pair; either end may be
    None. An inverted range simply matches nothing.
    """
    lo, hi = ordinals if ordinals is not None else (None, None)
    out = []
    for ev in view:
        if actor is not None and ev.actor != actor:
            continue
        if kind is not None and ev.kind != kind:
            continue
        if transaction is not None and ev.body.get("transaction") != transaction:
            continue
        if operand is not None and ev.body.get("operand") != operand:
            continue
        if lo is not None and ev.ordinal < lo:
            continue
        if hi is not None and ev.ordinal > hi:
            continue
        out.append(ev)
    return sorted(out, key=lambda e: e.ordinal)


@dataclass(frozen=True)
class ReplayMismatch:
    ordinal: int
    logged: bool
    replayed: bool
    reason: str


def replay(view: AuditView, initial: Policy) -> list[ReplayMismatch]:
    """Re-run every logged decision against the policy as it stood then.

    Admin events are re-applied in order to reconstruct the policy
    sequence. Returns the list of disagreements (empty when the log is
    fully reproducible).
    """
    from .admin import apply_action

    policy = initial
    mismatches = []
    for ev in view.events:
        if ev.kind == ADMIN:
            policy = apply_action(
                policy, ev.body["verb"], ev.body["args"], ordinal=ev.ordinal,
                history=view.upto(ev.ordinal - 1),
            )
        elif ev.kind == DECISION:
            body = ev.body
            session = Session(ev.actor, frozenset(body["active_roles"]), body["session"])
            again = can_execute(policy, session, body["transaction"], body["operand"],
                                view.upto(ev.ordinal - 1))
            trace = [[e.rule, e.outcome, e.detail, e.witness] for e in again.rule_trace]
            if again.allowed != body["allowed"] or trace != body["trace"]:
                mismatches.append(
                    ReplayMismatch(ev.ordinal, body["allowed"], again.allowed, "verdict or trace differs")
                )
    return mismatches
