import pytest
from hypothesis import given, settings, strategies as st

from rbac_kernel import (
    Binding,
    Policy,
    Role,
    Session,
    StaticSoDConstraint,
    Transaction,
    can_execute,
    new_policy,
    validate_policy,
)
from rbac_kernel.model import AccessMode, find_cycle, reachable_roles

from oracle import generate


def codes(p):
    return [v.code for v in validate_policy(p)]


def test_new_policy_is_empty_and_valid():
    p = new_policy()
    assert p.users == frozenset() and dict(p.roles) == {}
    assert p.mode == "bound"
    assert validate_policy(p) == []


def test_empty_policy_denies_everything():
    p = new_policy().evolve(
        objects={"o"}, transactions={"t": Transaction("t", "p", (Binding("o", {"read"}),))}
    )
    assert not can_execute(p, Session("nobody"), "t").allowed


def test_hospital_chain_is_well_formed(hospital):
    assert validate_policy(hospital) == []


def test_two_cycle_reported():
    p = new_policy().with_role(Role("A", contains={"B"})).with_role(Role("B", contains={"A"}))
    assert codes(p) == ["CYCLE"]


def test_restriction_outside_roles_widens():
    p = new_policy().evolve(
        users={"u"},
        objects={"o"},
        transactions={"t": Transaction("t", "p", (Binding("o", {"read"}),))},
        restrictions={"u": {"t"}},
    )
    assert codes(p) == ["RESTRICTION_WIDENS"]


def _base():
    return Policy(
        name="base",
        users={"u", "v"},
        objects={"o"},
        transactions={
            "t1": Transaction("t1", "p1", (Binding("o", {"read"}),)),
            "t2": Transaction("t2", "p2", (Binding("o", {"write"}),)),
        },
        roles={
            "A": Role("A", {"u"}, {"t1"}, {"B"}),
            "B": Role("B", {"v"}, {"t2"}),
        },
        restrictions={"u": {"t1"}},
        static_sod=(StaticSoDConstraint("s", {"A", "B"}),),
    )


SINGLE_BREAKS = {
    "DANGLING_USER": lambda p: p.with_role(Role("B", {"v", "ghost"}, {"t2"})),
    "DANGLING_TRAN": lambda p: p.with_role(Role("B", {"v"}, {"t2", "ghost"})),
    "DANGLING_ROLE": lambda p: p.with_role(Role("B", {"v"}, {"t2"}, {"ghost"})),
    "CYCLE": lambda p: p.with_role(Role("B", {"v"}, {"t2"}, {"A"})),
    "RESTRICTION_WIDENS": lambda p: p.evolve(restrictions={"v": {"t1"}}),
    "STATIC_SOD": lambda p: p.with_role(Role("B", {"v", "u"}, {"t2"})),
    "DUP_BINDING": lambda p: p.evolve(
        transactions=dict(p.transactions, t2=Transaction("t2", "p2", (Binding("o", {"read"}), Binding("o", {"write"}))))
    ),
    "UNBOUND_TRANSACTION": lambda p: p.evolve(transactions=dict(p.transactions, t2=Transaction("t2", "p2"))),
    "MODE_CONFLICT": lambda p: p.evolve(access_table={("A", "t1", "o", "read")}),
    "DANGLING_OBJECT": lambda p: p.evolve(
        transactions=dict(p.transactions, t2=Transaction("t2", "p2", (Binding("zz", {"read"}),)))
    ),
    "INVALID_ID": lambda p: p.evolve(users=p.users | {"bad id"}),
    "BAD_CONSTRAINT": lambda p: p.evolve(static_sod=p.static_sod + (StaticSoDConstraint("s2", {"A"}),)),
}


def test_base_is_well_formed():
    assert validate_policy(_base()) == []


@pytest.mark.parametrize("code", sorted(SINGLE_BREAKS))
def test_single_invariant_break_yields_exactly_its_code(code):
    assert codes(SINGLE_BREAKS[code](_base())) == [code]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_policies_have_acyclic_containment(seed):
    p = generate(seed).policy
    assert find_cycle(p) is None
    for rid, role in p.roles.items():
        # r never reaches itself through a non-trivial path
        assert all(rid not in reachable_roles(p, c) for c in role.contains)


def test_access_mode_is_closed():
    assert {m.value for m in AccessMode} == {"read", "write", "append", "execute"}
    with pytest.raises(ValueError):
        AccessMode("delete")


def test_policy_equality_ignores_binding_order():
    a = Transaction("t", "p", (Binding("x", {"read"}), Binding("y", {"write"})))
    b = Transaction("t", "p", (Binding("y", {"write"}), Binding("x", {"read"})))
    assert a == b
