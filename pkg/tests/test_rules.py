from fractions import Fraction

import pytest

from regkit.rules import Rule, generate, node_profile
from regkit.trees import (
    Degree,
    TypeSet,
    leaf,
    monomial,
    noise,
    plant,
    tree_product,
)


def xi(ts):
    return noise(ts, "Xi")


def I(t, edeco=None):  # noqa: E743 - deliberately matches the usual symbol
    return plant(t, "I", edeco=edeco)


class TestRuleTable:
    def test_subset_closure(self, ts, quartic_rule):
        z = ts.zero()
        # the cubic profile admits all its sub-multisets
        assert quartic_rule.admits("I", (("I", z), ("I", z)))
        assert quartic_rule.admits("I", (("I", z),))
        assert quartic_rule.admits("I", ())
        assert not quartic_rule.admits("I", (("I", z),) * 4)
        assert not quartic_rule.admits("I", (("I", z), ("Xi", z)))

    def test_noise_is_leaf(self, ts, quartic_rule):
        assert quartic_rule.profiles("Xi") == ((),)
        z = ts.zero()
        with pytest.raises(ValueError):
            Rule.make(ts, {"Xi": [[("I", z)]]})

    def test_derivative_completion_idempotent(self, ts):
        r = Rule.make(ts, {"I": [[("I", (1, 1))], [("Xi", (0, 2))]]})
        c = r.derivative_completion()
        assert c.admits("I", (("I", (0, 1)),))
        assert c.admits("I", (("I", (1, 0)),))
        assert c.admits("I", (("Xi", (0, 1)),))
        assert not r.admits("I", (("I", (0, 1)),))
        assert c.derivative_completion() == c

    def test_conformity(self, ts, quartic_rule):
        psi = I(xi(ts))
        assert quartic_rule.strongly_conforms(tree_product(psi, psi, psi))
        assert quartic_rule.conforms(tree_product(psi, psi, psi))
        # four factors exceed the cubic profile
        assert not quartic_rule.conforms(tree_product(psi, psi, psi, psi))
        # Xi below Xi is never admissible
        bad = plant(xi(ts), "Xi")
        assert not quartic_rule.conforms(bad)

    def test_node_profile(self, ts):
        t = tree_product(I(xi(ts)), xi(ts))
        prof = node_profile(t, 0)
        assert sorted(a for a, _ in prof) == ["I", "Xi"]


class TestSubcriticality:
    def test_quartic_witness(self, quartic_rule):
        reg = quartic_rule.subcritical_witness()
        assert reg is not None
        ts = quartic_rule.typeset
        # noise: reg below the noise degree
        assert reg["Xi"] <= ts.degree_of("Xi").at(ts.kappa)
        # kernel: strictly better than the worst admissible profile allows
        worst = min(3 * reg["I"], reg["Xi"])
        assert reg["I"] < 2 + worst

    def test_supercritical_refused(self):
        # a very rough noise with a cubic nonlinearity has no witness
        ts = TypeSet.make((2, 1), {"Xi": Degree(Fraction(-4)), "I": Degree(2)})
        z = ts.zero()
        r = Rule.make(ts, {"I": [[("Xi", z)], [("I", z)] * 3]})
        assert r.subcritical_witness() is None
        with pytest.raises(ValueError, match="witness"):
            generate(r, Fraction(2), 4)


class TestGeneration:
    def test_universe_frozen_counts(self, quartic_rule):
        uni = generate(quartic_rule, Fraction(2), 5)
        assert len(uni) == 115
        assert len(uni.negative()) == 13

    def test_membership_and_caps(self, ts, quartic_rule):
        uni = generate(quartic_rule, Fraction(2), 5)
        psi = I(xi(ts))
        assert psi in uni
        assert tree_product(psi, psi) in uni
        # six edges: beyond the edge cap
        assert tree_product(psi, psi, psi) not in uni
        assert all(t.n_edges <= 5 for t in uni)
        assert all(t.degree_value() <= 2 for t in uni)
        assert all(quartic_rule.strongly_conforms(t) for t in uni)

    def test_cubic_power_needs_larger_cap(self, ts, quartic_rule):
        psi = I(xi(ts))
        uni6 = generate(quartic_rule, Fraction(2), 6)
        assert tree_product(psi, psi, psi) in uni6

    def test_deterministic(self, quartic_rule):
        a = generate(quartic_rule, Fraction(2), 5)
        b = generate(quartic_rule, Fraction(2), 5)
        assert a.trees == b.trees

    def test_polynomial_decorations_present(self, ts, quartic_rule):
        uni = generate(quartic_rule, Fraction(2), 5)
        assert monomial(ts, (0, 1)) in uni
        assert monomial(ts, (1, 0)) in uni
        psi = I(xi(ts))
        assert tree_product(psi, monomial(ts, (0, 1))) in uni
        assert leaf(ts) in uni

    def test_by_noise_count(self, quartic_rule):
        uni = generate(quartic_rule, Fraction(2), 5)
        strata = uni.by_noise_count()
        assert sum(len(v) for v in strata.values()) == len(uni)
        assert set(strata) <= {0, 1, 2, 3}
