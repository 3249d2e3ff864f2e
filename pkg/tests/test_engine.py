import inspect

import pytest
from hypothesis import given, settings, strategies as st

import rbac_kernel.engine as engine
from rbac_kernel import (
    AuditStore,
    Policy,
    Role,
    Session,
    activate_role,
    authorized_roles,
    can_execute,
    check_access,
    clark_wilson_check,
    deactivate_role,
    effective_transactions,
    parse_policy_file,
    revoke_membership,
    set_restriction,
)
from rbac_kernel.errors import (
    ActivationError,
    ModeMismatch,
    NotOneToOne,
    UnknownObject,
    UnknownRole,
    UnknownTransaction,
    UnknownUser,
)

from harness import run_engine
from oracle import generate, oracle_ta, run_oracle


def session(p, user, *roles):
    s = Session(user, session_id=f"s-{user}")
    for r in roles:
        s = activate_role(p, s, r)
    return s


@pytest.fixture
def rule4(fixtures):
    return parse_policy_file(fixtures / "hospital-rule4.rbac")


# -- authorized_roles / effective_transactions ---------------------------------


def test_authorized_roles(hospital, bank):
    assert authorized_roles(hospital, "alice") == {"Doctor"}
    assert authorized_roles(bank, "alice") == {"PaymentInitiator", "PaymentAuthorizer"}
    with pytest.raises(UnknownUser):
        authorized_roles(hospital, "mallory")


def test_authorized_roles_empty_membership(hospital):
    from rbac_kernel import onboard_user

    p = onboard_user(hospital, "erin")
    assert authorized_roles(p, "erin") == frozenset()


def test_containment_grants_transactions_not_membership(hospital):
    assert "Intern" not in authorized_roles(hospital, "alice")
    assert effective_transactions(hospital, "Doctor") == {
        "enter-diagnosis", "prescribe-medication", "add-treatment-entry", "record-vitals"
    }
    assert effective_transactions(hospital, "Healer") == {"record-vitals"}
    assert effective_transactions(hospital, "Pharmacist") == {"dispense-drug"}
    with pytest.raises(UnknownRole):
        effective_transactions(hospital, "Surgeon")


# -- activation ----------------------------------------------------------------


def test_activate_and_deactivate(hospital):
    s = session(hospital, "alice", "Doctor")
    assert s.active_roles == {"Doctor"}
    assert activate_role(hospital, s, "Doctor") == s
    assert deactivate_role(s, "Doctor").active_roles == frozenset()
    assert deactivate_role(Session("alice"), "Doctor").active_roles == frozenset()


def test_deactivate_leaves_other_roles(bank):
    s = Session("alice", frozenset({"PaymentInitiator", "PaymentAuthorizer"}))
    assert deactivate_role(s, "PaymentInitiator").active_roles == {"PaymentAuthorizer"}


def test_activation_requires_membership(hospital):
    with pytest.raises(ActivationError) as err:
        activate_role(hospital, Session("alice"), "Pharmacist")
    assert err.value.code == "ROLE_NOT_AUTHORIZED"
    with pytest.raises(UnknownRole):
        activate_role(hospital, Session("alice"), "Surgeon")


def test_single_active_role_cap(bank):
    p = bank.evolve(single_active_role=True)
    s = session(p, "alice", "PaymentInitiator")
    with pytest.raises(ActivationError) as err:
        activate_role(p, s, "PaymentAuthorizer")
    assert err.value.code == "CAP_EXCEEDED"


def test_activation_does_not_touch_original(hospital):
    s = Session("alice")
    activate_role(hospital, s, "Doctor")
    assert s.active_roles == frozenset()


# -- can_execute -----------------------------------------------------------------


def test_no_active_role_denies_at_r1(hospital):
    d = can_execute(hospital, Session("alice"), "prescribe-medication")
    assert not d.allowed and d.first_failure.rule == "R1"


def test_doctor_prescribes(hospital):
    d = can_execute(hospital, session(hospital, "alice", "Doctor"), "prescribe-medication")
    assert d.allowed
    assert [e.rule for e in d.rule_trace] == ["R1", "R2", "R3", "RESTRICTION", "DSOD"]


def test_pharmacist_cannot_prescribe(hospital):
    d = can_execute(hospital, session(hospital, "bob", "Pharmacist"), "prescribe-medication")
    assert not d.allowed and d.first_failure.rule == "R3"


def test_trainee_restriction(hospital):
    p = set_restriction(hospital, "alice", {"record-vitals", "enter-diagnosis"})
    s = session(p, "alice", "Doctor")
    d = can_execute(p, s, "prescribe-medication")
    assert not d.allowed and d.first_failure.rule == "RESTRICTION"
    assert can_execute(p, s, "record-vitals").allowed


def test_unknown_transaction_raises(hospital):
    with pytest.raises(UnknownTransaction):
        can_execute(hospital, Session("alice"), "amputate")


def test_stale_session_denies_at_r2(hospital):
    s = session(hospital, "alice", "Doctor")
    p = revoke_membership(hospital, "alice", "Doctor")
    d = can_execute(p, s, "prescribe-medication")
    assert not d.allowed and d.first_failure.rule == "R2"


def test_missing_operand_on_constrained_transaction(bank):
    d = can_execute(bank, session(bank, "alice", "PaymentInitiator"), "initiate-payment")
    assert not d.allowed and d.first_failure.rule == "DSOD"
    assert "MISSING_OPERAND" in d.first_failure.detail


def test_decision_invariants(hospital):
    for user, role in (("alice", "Doctor"), ("bob", "Pharmacist")):
        s = session(hospital, user, role)
        for t in hospital.transactions:
            d = can_execute(hospital, s, t)
            assert d.rule_trace
            assert d.allowed == all(e.outcome == "pass" for e in d.rule_trace)


# -- rule 4 and the Clark-Wilson reduction ----------------------------------------


def test_rule4_doctor_writes_pharmacist_reads(rule4):
    doc = session(rule4, "alice", "Doctor")
    pharm = session(rule4, "bob", "Pharmacist")
    assert check_access(rule4, doc, "update-prescription", "prescription-file", "write").allowed
    d = check_access(rule4, pharm, "view-prescription", "prescription-file", "write")
    assert not d.allowed and d.first_failure.rule == "R4"
    assert check_access(rule4, pharm, "view-prescription", "prescription-file", "read").allowed


def test_rule4_empty_table_denies(rule4):
    p = rule4.evolve(access_table=frozenset())
    d = check_access(p, session(p, "alice", "Doctor"), "update-prescription", "prescription-file", "read")
    assert not d.allowed and d.first_failure.rule == "R4"


def test_rule4_mode_and_object_errors(hospital, rule4):
    with pytest.raises(ModeMismatch):
        check_access(hospital, Session("alice"), "prescribe-medication", "patient-record", "read")
    with pytest.raises(UnknownObject):
        check_access(rule4, Session("alice"), "update-prescription", "nowhere", "read")


def test_clark_wilson_matches_check_access(rule4):
    for u in rule4.users:
        (role,) = authorized_roles(rule4, u)
        s = session(rule4, u, role)
        for t in rule4.transactions:
            for o in rule4.objects:
                for x in ("read", "write", "append", "execute"):
                    assert clark_wilson_check(rule4, u, t, o, x) == check_access(rule4, s, t, o, x)


def test_clark_wilson_needs_one_to_one(rule4):
    from rbac_kernel import grant_membership

    p = grant_membership(rule4, "alice", "Pharmacist")
    with pytest.raises(NotOneToOne):
        clark_wilson_check(p, "bob", "view-prescription", "prescription-file", "read")


# -- properties --------------------------------------------------------------------


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_engine_matches_oracle(seed):
    scn = generate(seed)
    verdicts, _, _, _ = run_engine(scn)
    assert verdicts == run_oracle(scn)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rule1_never_allows_without_active_role(seed):
    _, decisions, _, _ = run_engine(generate(seed))
    for s, _t, _op, d in decisions:
        if not s.active_roles:
            assert not d.allowed and d.first_failure.rule == "R1"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_allow_implies_transaction_in_closure_of_active_role(seed):
    scn = generate(seed)
    verdicts, decisions, _, _ = run_engine(scn)
    # re-run with the policy captured at each step is what run_engine already
    # does; here only the static policy is checked, so restrict to traces
    # without administrative steps
    if any(step[0] == "admin" for step in scn.trace):
        return
    for s, t, _op, d in decisions:
        if d.allowed:
            assert s.active_roles
            assert any(t in oracle_ta(scn.policy, r) for r in s.active_roles)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_containment_is_monotone(seed):
    p = generate(seed).policy
    for rid, role in p.roles.items():
        for child in role.contains:
            assert effective_transactions(p, child) <= effective_transactions(p, rid)


def test_can_execute_is_pure(bank):
    store = AuditStore(None)
    s = session(bank, "alice", "PaymentInitiator", "PaymentAuthorizer")
    store.record_execution(bank, s, "initiate-payment", "p1")
    view = store.view()
    first = can_execute(bank, s, "authorize-payment", "p1", view)
    second = can_execute(bank, s, "authorize-payment", "p1", view)
    assert first == second and not first.allowed
    assert store.high_water == view.high_water


def test_engine_exposes_no_mutating_operation():
    public = {n for n, obj in vars(engine).items() if inspect.isfunction(obj) and not n.startswith("_")
              and obj.__module__ == engine.__name__}
    assert public == {
        "authorized_roles", "effective_transactions", "activate_role", "deactivate_role",
        "can_execute", "check_access", "clark_wilson_check",
    }
    for name in public:
        ret = inspect.signature(getattr(engine, name)).return_annotation
        assert "Policy" not in str(ret)
