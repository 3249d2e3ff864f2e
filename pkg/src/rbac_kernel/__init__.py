"""Role-based access control kernel.

Roles group transactions, users are members of roles, roles may contain
other roles, and separation-of-duty constraints limit what any one user
can hold or do. Policies are written in a small line-oriented language
(see :mod:`rbac_kernel.dsl`) and every decision and administrative change
can be recorded in an append-only audit log.
"""

from .admin import (
    PolicyAdministrator,
    PrivilegeReport,
    add_containment,
    allocate_transaction,
    change_function,
    clear_restriction,
    deallocate_transaction,
    grant_membership,
    least_privilege_report,
    offboard_user,
    onboard_user,
    remove_containment,
    revoke_membership,
    set_restriction,
)
from .audit import AuditEvent, AuditStore, AuditView, query, record_execution, replay
from .dsl import ParseError, PolicyParseError, SourceSpan, parse_policy, parse_policy_file, serialize_policy
from .engine import (
    Decision,
    TraceEntry,
    activate_role,
    authorized_roles,
    can_execute,
    check_access,
    clark_wilson_check,
    deactivate_role,
    effective_transactions,
)
from .errors import RBACError
from .model import (
    AccessMode,
    Binding,
    DynamicSoDConstraint,
    Policy,
    Role,
    Session,
    StaticSoDConstraint,
    Transaction,
    Violation,
    new_policy,
    validate_policy,
)
from .sod import add_dynamic_constraint, add_static_constraint, check_dynamic, check_static

__version__ = "0.1.0"
