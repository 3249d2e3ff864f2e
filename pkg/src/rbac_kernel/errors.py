"""Exception hierarchy shared by every module of the kernel."""

from __future__ import annotations


class RBACError(Exception):
    """Base error. ``code`` is the stable machine-readable identifier."""

    code = "RBAC_ERROR"

    def __init__(self, message: str, code: str | None = None, **details):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = details

    def __str__(self) -> str:
        return f"{self.code}: {self.args[0]}"


class UnknownEntity(RBACError):
    code = "UNKNOWN"


class UnknownUser(UnknownEntity):
    code = "UNKNOWN_USER"


class UnknownRole(UnknownEntity):
    code = "UNKNOWN_ROLE"


class UnknownTransaction(UnknownEntity):
    code = "UNKNOWN_TRAN"


class UnknownObject(UnknownEntity):
    code = "UNKNOWN_OBJECT"


class UnknownSessionSubject(UnknownEntity):
    code = "UNKNOWN_SESSION_SUBJECT"


class ActivationError(RBACError):
    """Raised by role activation (ROLE_NOT_AUTHORIZED, CAP_EXCEEDED)."""


class ModeMismatch(RBACError):
    code = "MODE_MISMATCH"


class NotOneToOne(RBACError):
    code = "NOT_ONE_TO_ONE"


class AdminError(RBACError):
    """Administrative mutation rejected; the policy is left unchanged."""


class StaticSoDViolation(AdminError):
    code = "STATIC_SOD_VIOLATION"


class RetroactiveStaticViolation(AdminError):
    code = "RETROACTIVE_STATIC_VIOLATION"


class CycleError(AdminError):
    code = "CYCLE"

    def __init__(self, path: list[str]):
        super().__init__("containment cycle " + " -> ".join(path), path=list(path))
        self.path = list(path)


class IllFormedPolicy(RBACError):
    code = "ILLFORMED_POLICY"


class AuditError(RBACError):
    code = "STORE_IO"
