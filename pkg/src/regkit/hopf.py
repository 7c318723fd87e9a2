"""Coproducts, characters and the antipode for decorated trees.

Three coproducts are implemented on top of a shared cut engine:

* ``delta`` -- the recentering coaction.  The right slot collects the planted
  branches above a cut (projected onto positive-degree products), the left
  slot keeps the root part.
* ``delta_plus`` -- restriction of ``delta`` whose left slot is also projected
  onto positive products; this is the coproduct of the structure-group Hopf
  algebra and the one used by the antipode and character convolution.
* ``delta_r_minus`` -- root extraction.  The left slot is the root part,
  projected onto negative trees (the unit is kept), the right slot is the
  unprojected quotient in which the root part is collapsed to the new root.

On top of these sit the character group (``Character``, ``convolve``,
``character_inverse``, ``gamma_action``) and the jet coproduct
``delta_tilde`` with its non-recursive form and its extension to coloured
trees, plus the derivative-redistribution map ``d_map``.

All coefficients are exact rationals.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product as _iproduct
from typing import Callable, Iterable, Mapping

from .trees import (
    DecoratedTree,
    FormalSum,
    MultiIndex,
    contract,
    cuts,
    mi_add,
    mi_below,
    mi_binom,
    mi_factorial,
    mi_leq_iter,
    mi_sub,
    monomial,
    plant,
    restrict,
    root_part_nodes,
    tree_product,
)

__all__ = [
    "TensorSum",
    "delta",
    "delta_plus",
    "delta_r_minus",
    "delta_r_minus_reduced",
    "counit",
    "antipode",
    "Character",
    "convolve",
    "character_inverse",
    "gamma_action",
    "GammaMap",
    "a_star",
    "gamma_star",
    "m_star",
    "delta_tilde",
    "delta_tilde_explicit",
    "delta_tilde_coloured",
    "d_map",
]


class TensorSum(FormalSum):
    """Formal sum of tensors (tuples of trees) with exact coefficients."""

    @classmethod
    def of(cls, *slots: DecoratedTree, coeff=Fraction(1)) -> "TensorSum":
        return cls({tuple(slots): coeff})

    def apply(self, pos: int, fn: Callable) -> "TensorSum":
        """Apply a linear map to slot ``pos``.

        ``fn`` maps a tree to a FormalSum of trees or to a TensorSum, in which
        case the resulting slots are spliced in place of slot ``pos``.
        """
        acc: list = []
        for key, c in self.items():
            for sub, c2 in fn(key[pos]).items():
                if isinstance(sub, tuple):
                    acc.append((key[:pos] + sub + key[pos + 1:], c * c2))
                else:
                    acc.append((key[:pos] + (sub,) + key[pos + 1:], c * c2))
        return TensorSum(acc)

    def contract_slot(self, pos: int, fn: Callable):
        """Pair slot ``pos`` with a scalar functional.

        Returns a TensorSum on the remaining slots, or a plain scalar if no
        slot remains.
        """
        if all(len(k) == 1 for k in self.keys()):
            total = Fraction(0)
            for key, c in self.items():
                total += c * fn(key[pos])
            return total
        acc = []
        for key, c in self.items():
            acc.append((key[:pos] + key[pos + 1:], c * fn(key[pos])))
        return TensorSum(acc)

    def mul(self, other: "TensorSum") -> "TensorSum":
        """Slotwise tree product."""
        acc = []
        for k1, c1 in self.items():
            for k2, c2 in other.items():
                acc.append((tuple(tree_product(a, b) for a, b in
                            zip(k1, k2, strict=True)), c1 * c2))
        return TensorSum(acc)


# ---------------------------------------------------------------------------
# cut engine


def _planted_factor_degree(tree: DecoratedTree, e: int, extra: MultiIndex | None
                           = None) -> Fraction:
    """Degree of the planted branch above edge e, with `extra` added to the
    trunk decoration."""
    ts = tree.typeset
    deco = tree.edeco[e] if extra is None else mi_add(tree.edeco[e], extra)
    return (tree.branch(e).degree_value()
            + ts.degree_of(tree.etype[e]).at(ts.kappa) - ts.sdeg(deco))


def _quotient(tree: DecoratedTree, cut: Iterable[int], eps: Mapping[int, MultiIndex],
              leftover: MultiIndex) -> DecoratedTree:
    """Product of the planted branches above the cut with X^leftover."""
    ts = tree.typeset
    factors = [monomial(ts, leftover)]
    for e in cut:
        factors.append(plant(tree.branch(e), tree.etype[e],
                             edeco=mi_add(tree.edeco[e], eps[e]),
                             odeco=tree.odeco[e]))
    return tree_product(*factors)


def _node_splits(tree: DecoratedTree, nodes: list[int]):
    """All ways of splitting off part of the node decorations on `nodes`;
    yields (split map, binomial coefficient, leftover total)."""
    options = []
    for v in nodes:
        options.append([(v, n, mi_binom(tree.ndeco[v], n))
                        for n in mi_leq_iter(tree.ndeco[v])])
    for combo in _iproduct(*options):
        n_map = {v: n for (v, n, _b) in combo}
        coeff = 1
        leftover = tree.typeset.zero()
        for (v, n, b) in combo:
            coeff *= b
            leftover = mi_add(leftover, mi_sub(tree.ndeco[v], n))
        yield n_map, coeff, leftover


def _left_tree(tree: DecoratedTree, keep: set[int], n_map: Mapping[int, MultiIndex],
               eps: Mapping[int, MultiIndex]) -> DecoratedTree:
    """Root part of the tree with decorations n + (cut decorations pushed onto
    their lower node)."""
    ndeco = dict(n_map)
    for e, k in eps.items():
        v = tree.parent[e]
        ndeco[v] = mi_add(ndeco[v], k)
    return restrict(tree, keep, ndeco)


def is_positive_product(tree: DecoratedTree) -> bool:
    """Membership in the image of the positive projection: every planted
    factor has positive degree (polynomial factors are unrestricted)."""
    ts = tree.typeset
    for c in tree.children(0):
        deg = (tree.branch(c).degree_value()
               + ts.degree_of(tree.etype[c]).at(ts.kappa) - ts.sdeg(tree.edeco[c]))
        if deg <= 0:
            return False
    return True


@lru_cache(maxsize=None)
def delta(tree: DecoratedTree) -> TensorSum:
    """Recentering coaction: root part tensor positive planted quotient.

    Cuts run over kernel edges only (a planted noise branch can never have
    positive degree, so other cuts are killed by the projection anyway);
    the decoration transfer onto the cut edges is truncated exactly by the
    positivity requirement on each planted factor.
    """
    ts = tree.typeset
    acc: list = []
    for cut in cuts(tree, kernel_only=True):
        keep = root_part_nodes(tree, cut)
        cut_edges = sorted(cut)
        eps_opts = []
        for e in cut_edges:
            bound = _planted_factor_degree(tree, e)
            opts = [(e, k, Fraction(1, mi_factorial(k)))
                    for k in mi_below(ts.scaling, bound)]
            eps_opts.append(opts)
        if any(not o for o in eps_opts):
            continue
        split_data = list(_node_splits(tree, sorted(keep)))
        for combo in _iproduct(*eps_opts):
            eps = {e: k for (e, k, _c) in combo}
            eps_coeff = Fraction(1)
            for (_e, _k, c) in combo:
                eps_coeff *= c
            for n_map, bin_coeff, leftover in split_data:
                left = _left_tree(tree, keep, n_map, eps)
                right = _quotient(tree, cut_edges, eps, leftover)
                acc.append(((left, right), eps_coeff * bin_coeff))
    return TensorSum(acc)


@lru_cache(maxsize=None)
def delta_plus(tree: DecoratedTree) -> TensorSum:
    """Structure-group coproduct: ``delta`` with the left slot also projected
    onto positive products."""
    return TensorSum(delta(tree).filter(lambda k: is_positive_product(k[0])))


def _rminus_terms(tree: DecoratedTree):
    ts = tree.typeset
    d = ts.d
    for cut in cuts(tree):
        keep = root_part_nodes(tree, cut)
        cut_edges = sorted(cut)
        for n_map, bin_coeff, leftover in _node_splits(tree, sorted(keep)):
            zero_eps = {e: ts.zero() for e in cut_edges}
            base = _left_tree(tree, keep, n_map, zero_eps)
            base_deg = base.degree_value()
            eps_choices: list[dict] = []
            if base_deg < 0:
                tiled = ts.scaling * len(cut_edges)
                for flat in mi_below(tiled, -base_deg):
                    eps_choices.append(
                        {e: flat[i * d:(i + 1) * d]
                         for i, e in enumerate(cut_edges)})
            elif base.is_unit:
                eps_choices.append(zero_eps)
            for eps in eps_choices:
                coeff = Fraction(bin_coeff)
                for k in eps.values():
                    coeff /= mi_factorial(k)
                left = base if all(not any(k) for k in eps.values()) \
                    else _left_tree(tree, keep, n_map, eps)
                right = _quotient(tree, cut_edges, eps, leftover)
                yield (left, right), coeff


@lru_cache(maxsize=None)
def delta_r_minus(tree: DecoratedTree) -> TensorSum:
    """Root extraction: negative root part (or the unit) tensor the quotient
    in which the root part is collapsed onto the new root."""
    return TensorSum(_rminus_terms(tree))


@lru_cache(maxsize=None)
def delta_r_minus_reduced(tree: DecoratedTree) -> TensorSum:
    """Root extraction with the two primitive terms (unit in either slot)
    removed."""
    return TensorSum(delta_r_minus(tree).filter(
        lambda k: not k[0].is_unit and not k[1].is_unit))


# ---------------------------------------------------------------------------
# counit, antipode and characters


def counit(arg) -> Fraction:
    """Coefficient of the unit tree."""
    if isinstance(arg, DecoratedTree):
        return Fraction(1) if arg.is_unit else Fraction(0)
    return sum((c for k, c in arg.items()
                if (k.is_unit if isinstance(k, DecoratedTree)
                    else all(t.is_unit for t in k))), Fraction(0))


@lru_cache(maxsize=None)
def antipode(tree: DecoratedTree) -> FormalSum:
    """Antipode of the structure-group Hopf algebra, as a sum of trees.

    Multiplicative over planted factors; on a planted generator it is defined
    by the usual recursion ``A(s) = -s - m(A x id) reduced_coproduct(s)``,
    which terminates because the left slots of the reduced coproduct are
    strictly smaller (fewer edges, or smaller polynomial decoration).
    """
    ts = tree.typeset
    if tree.is_node:
        # (-X)^k = (-1)^{|k|} X^k
        sign = (-1) ** sum(tree.ndeco[0])
        return FormalSum.single(tree, Fraction(sign))
    root_nd, factors = tree.factor()
    if any(root_nd) or len(factors) > 1:
        result = antipode(monomial(ts, root_nd))
        for (et, ed, od, br) in factors:
            result = _sum_product(result, antipode(plant(br, et, ed, od)))
        return result
    reduced = delta_plus(tree).filter(
        lambda k: not k[0].is_unit and not k[1].is_unit)
    result = FormalSum.single(tree, Fraction(-1))
    for (l, r), c in reduced.items():
        for s, c2 in antipode(l).items():
            result = result + FormalSum.single(tree_product(s, r), -c * c2)
    return result


def _sum_product(a: FormalSum, b: FormalSum) -> FormalSum:
    return FormalSum(((tree_product(k1, k2), c1 * c2)
                      for k1, c1 in a.items() for k2, c2 in b.items()))


@dataclass(frozen=True)
class Character:
    """Multiplicative functional determined by its values on generators.

    ``on_planted`` maps a planted tree to a scalar; ``on_x`` gives the value
    on the coordinate polynomials.  Values extend multiplicatively over the
    factors of a tree.
    """

    on_planted: Callable[[DecoratedTree], Fraction]
    on_x: tuple = ()

    @staticmethod
    def from_map(values: Mapping[DecoratedTree, Fraction], x_values=None,
                 default=Fraction(0)) -> "Character":
        return Character(lambda t: values.get(t, default),
                         tuple(x_values) if x_values else ())

    @staticmethod
    def identity_like(ts) -> "Character":
        """The counit: 1 on the unit, 0 on every non-trivial generator."""
        return Character(lambda t: Fraction(0), (Fraction(0),) * ts.d)

    def __call__(self, arg) -> Fraction:
        if isinstance(arg, DecoratedTree):
            return self._value(arg)
        return sum((c * self._value(k) for k, c in arg.items()), Fraction(0))

    def _value(self, tree: DecoratedTree) -> Fraction:
        root_nd, factors = tree.factor()
        out = Fraction(1)
        for i, p in enumerate(root_nd):
            if p:
                if not self.on_x:
                    return Fraction(0)
                out *= self.on_x[i] ** p
        for (et, ed, od, br) in factors:
            out *= self.on_planted(plant(br, et, ed, od))
        return out


def convolve(g: Character, h: Character) -> Character:
    """Convolution product of characters through the structure-group
    coproduct: (g * h)(tree) = sum g(left) h(right)."""
    def on_planted(t: DecoratedTree) -> Fraction:
        total = Fraction(0)
        for (l, r), c in delta_plus(t).items():
            total += c * g(l) * h(r)
        return total

    x_values = tuple(gx + hx for gx, hx in
                     zip(g.on_x, h.on_x, strict=True)) if g.on_x and h.on_x else ()
    return Character(on_planted, x_values)


def character_inverse(g: Character) -> Character:
    """Group inverse: precomposition with the antipode."""
    return Character(lambda t: g(antipode(t)),
                     tuple(-x for x in g.on_x) if g.on_x else ())


def gamma_action(g: Character) -> Callable[[DecoratedTree], FormalSum]:
    """The linear endomorphism (id x g) delta associated to a character."""
    def act(tree: DecoratedTree) -> FormalSum:
        return FormalSum(((l, c * g(r)) for (l, r), c in delta(tree).items()))
    return act


# ---------------------------------------------------------------------------
# regularity bookkeeping for the jet coproduct


@dataclass(frozen=True)
class GammaMap:
    """Recursive regularity exponents used to truncate jets.

    Noises and polynomials get the base exponent; a product of n factors gets
    the minimum of the factor exponents shifted by (n-1) times the sector
    regularity; planting shifts by the edge degree minus the trunk derivative
    weight.  Evaluation refuses exponents outside the positive non-integers.
    """

    gamma0: Fraction
    sector_regularity: Fraction

    def of(self, tree: DecoratedTree) -> Fraction:
        value = self._of(tree)
        if value <= 0 or value.denominator == 1:
            raise ValueError(
                f"inadmissible jet exponent {value} for {tree!r}")
        return value

    def _of(self, tree: DecoratedTree) -> Fraction:
        ts = tree.typeset
        root_nd, factors = tree.factor()
        if not factors:
            return self.gamma0
        atoms = []
        if any(root_nd):
            atoms.append(self.gamma0)
        for (et, ed, od, br) in factors:
            if et in ts.noise_types:
                atoms.append(self.gamma0)
            else:
                atoms.append(self._of(br)
                             + ts.degree_of(et).at(ts.kappa) - ts.sdeg(ed))
        return min(atoms) + (len(atoms) - 1) * self.sector_regularity


def a_star(trees: Iterable[DecoratedTree]) -> Fraction:
    """Sector regularity: the most negative degree among the given trees."""
    return min(t.degree_value() for t in trees)


def gamma_star(gamma: GammaMap, trees: Iterable[DecoratedTree]) -> Fraction:
    return max(gamma.of(t) for t in trees)


def m_star(gamma: GammaMap, trees: Iterable[DecoratedTree]) -> Fraction:
    """Derivative budget for jets: max of (gamma_star - regularity) and the
    degrees of the undecorated planted trees appearing in the family."""
    trees = list(trees)
    best = gamma_star(gamma, trees) - a_star(trees)
    ts = trees[0].typeset
    for t in trees:
        if t.is_planted:
            e = t.children(0)[0]
            if ts.is_kernel(t.etype[e]):
                best = max(best, t.degree_value() + ts.sdeg(t.edeco[e]))
    return best


# ---------------------------------------------------------------------------
# jet coproduct


def _plantk(tree: DecoratedTree, etype: str, edeco: MultiIndex,
            odeco: MultiIndex | None) -> DecoratedTree:
    if odeco is not None and not any(odeco):
        odeco = None
    return plant(tree, etype, edeco=edeco, odeco=odeco)


def delta_tilde(tree: DecoratedTree, gamma: GammaMap,
                m: Fraction) -> TensorSum:
    """Jet coproduct, computed by structural recursion.

    The left slot collects over-decorated trees of degree below the jet
    exponent of the input; the right slot collects products of planted trees
    with positive jet exponent and trunk decoration below the derivative
    budget ``m``.
    """
    ts = tree.typeset
    g = gamma.of(tree)
    root_nd, factors = tree.factor()
    parts: list[TensorSum] = []
    if any(root_nd) or not factors:
        acc = []
        for n in mi_leq_iter(root_nd):
            acc.append(((monomial(ts, n), monomial(ts, mi_sub(root_nd, n))),
                        Fraction(mi_binom(root_nd, n))))
        parts.append(TensorSum(acc))
    for (et, ed, od, br) in factors:
        parts.append(_delta_tilde_atom(plant(br, et, ed, od), gamma, m))
    out = parts[0]
    for p in parts[1:]:
        out = out.mul(p)
    return TensorSum(out.filter(lambda k: k[0].degree_value() < g))


def _delta_tilde_atom(tree: DecoratedTree, gamma: GammaMap,
                      m: Fraction) -> TensorSum:
    ts = tree.typeset
    e = tree.children(0)[0]
    et, j, od = tree.etype[e], tree.edeco[e], tree.odeco[e]
    br = tree.branch(e)
    if et in ts.noise_types:
        # no cut is possible through a noise trunk; only the polynomial
        # decorations get redistributed
        acc = []
        for n_map, coeff, leftover in _node_splits(tree, list(range(tree.n_nodes))):
            acc.append(((restrict(tree, set(range(tree.n_nodes)), n_map),
                         monomial(ts, leftover)), Fraction(coeff)))
        return TensorSum(acc)
    g = gamma.of(tree)
    br_gamma = gamma._of(br)
    acc = []
    inner = delta_tilde(br, gamma, m)
    for l in mi_leq_iter(j):
        jl = mi_sub(j, l)
        for k in mi_below(ts.scaling, m - ts.sdeg(l)):
            kl = mi_add(k, l)
            coeff = Fraction(mi_binom(j, l), mi_factorial(k))
            for (il, ir), c in inner.items():
                left = tree_product(monomial(ts, k), _plantk(il, et, jl, kl))
                acc.append(((left, ir), coeff * c))
    # polynomial part: the branch is frozen into the right slot
    for k in mi_below(ts.scaling, m - ts.sdeg(j)):
        kj = mi_add(k, j)
        if br_gamma + ts.degree_of(et).at(ts.kappa) - ts.sdeg(kj) <= 0:
            continue
        acc.append(((monomial(ts, k), plant(br, et, edeco=kj)),
                    Fraction(1, mi_factorial(k))))
    return TensorSum(TensorSum(acc).filter(lambda t: t[0].degree_value() < g))


def _explicit_terms(tree: DecoratedTree, gamma: GammaMap, m: Fraction,
                    gamma_cut: Fraction, left_degree: Callable):
    """Shared engine for the non-recursive jet coproduct (plain and coloured
    input). Cuts avoid coloured edges; decoration transfer runs over the
    uncoloured kernel edges of the root part."""
    ts = tree.typeset
    for cut in cuts(tree, kernel_only=True):
        keep = root_part_nodes(tree, cut)
        cut_edges = sorted(cut)
        inner_edges = [e for e in sorted(keep - {0})
                       if ts.is_kernel(tree.etype[e]) and not tree.coloured[e]]
        # trailing decoration on the cut edges: bounded by the positivity of
        # the resulting planted factor and by the derivative budget
        eps_opts = []
        for e in cut_edges:
            base_g = (gamma._of(tree.branch(e).strip_odeco())
                      + ts.degree_of(tree.etype[e]).at(ts.kappa))
            opts = []
            for k in mi_below(ts.scaling, base_g - ts.sdeg(tree.edeco[e])):
                if ts.sdeg(mi_add(tree.edeco[e], k)) >= m:
                    continue
                opts.append((e, k, Fraction(1, mi_factorial(k))))
            eps_opts.append(opts)
        if any(not o for o in eps_opts):
            continue
        # lowering/raising on the interior kernel edges of the root part
        edge_opts = []
        for e in inner_edges:
            opts = []
            for low in mi_leq_iter(tree.edeco[e]):
                for k in mi_below(ts.scaling, m - ts.sdeg(low)):
                    opts.append((e, low, k,
                                 Fraction(mi_binom(tree.edeco[e], low),
                                          mi_factorial(k))))
            edge_opts.append(opts)
        split_data = list(_node_splits(tree, sorted(keep)))
        for eps_combo in _iproduct(*eps_opts):
            eps = {e: k for (e, k, _c) in eps_combo}
            c_eps = Fraction(1)
            for (_e, _k, c) in eps_combo:
                c_eps *= c
            for edge_combo in _iproduct(*edge_opts):
                c_edge = Fraction(1)
                for (_e, _l, _k, c) in edge_combo:
                    c_edge *= c
                for n_map, c_bin, leftover in split_data:
                    ndeco = dict(n_map)
                    for e, k in eps.items():
                        ndeco[tree.parent[e]] = mi_add(ndeco[tree.parent[e]], k)
                    for (e, _l, k, _c) in edge_combo:
                        ndeco[tree.parent[e]] = mi_add(ndeco[tree.parent[e]], k)
                    low = {e: l for (e, l, _k, _c) in edge_combo}
                    over = {e: mi_add(k, l)
                            for (e, l, k, _c) in edge_combo}
                    left = _rebuild_left(tree, keep, ndeco, low, over)
                    if left_degree(left) >= gamma_cut:
                        continue
                    right = _quotient(tree, cut_edges, eps, leftover)
                    yield (left, right), c_eps * c_edge * c_bin


def _rebuild_left(tree: DecoratedTree, keep: set[int],
                  ndeco: Mapping[int, MultiIndex],
                  lowered: Mapping[int, MultiIndex],
                  over: Mapping[int, MultiIndex]) -> DecoratedTree:
    def rec(v):
        out = []
        for c in tree.children(v):
            if c not in keep:
                continue
            ed = tree.edeco[c]
            od = tree.odeco[c]
            if c in lowered:
                ed = mi_sub(ed, lowered[c])
                od = over[c] if any(over[c]) else None
            out.append((tree.etype[c], ed, od, tree.coloured[c], rec(c)))
        return (tuple(ndeco[v]), out)

    return DecoratedTree._from_nested(tree.typeset, rec(0))


def delta_tilde_explicit(tree: DecoratedTree, gamma: GammaMap,
                         m: Fraction) -> TensorSum:
    """Non-recursive form of the jet coproduct, as a sum over kernel cuts."""
    g = gamma.of(tree)
    return TensorSum(_explicit_terms(tree, gamma, m, g,
                                     lambda t: t.degree_value()))


def delta_tilde_coloured(tree: DecoratedTree, gamma: GammaMap,
                         m: Fraction) -> TensorSum:
    """Jet coproduct on coloured trees.

    Cuts avoid the coloured subtree, which stays (coloured) in the left slot;
    the degree cutoff is measured after collapsing the colour, with the jet
    exponent of the collapsed input.
    """
    g = gamma.of(contract(tree).strip_odeco())
    return TensorSum(_explicit_terms(
        tree, gamma, m, g, lambda t: contract(t).degree_value()))


# ---------------------------------------------------------------------------
# derivative redistribution


def d_map(tree: DecoratedTree, m: Fraction) -> FormalSum:
    """Redistribute derivative decorations between edges and over-decorations,
    projecting onto negative trees with over-decorations below ``m``.

    Each kernel edge decoration may be lowered (with the difference recorded
    in the over-decoration) and an extra derivative may be pushed onto the
    edge's lower node, weighted by inverse factorials.
    """
    ts = tree.typeset
    if tree.degree_value() >= 0:
        # lowering edge decorations or pushing derivatives onto nodes can only
        # raise the degree, so nothing survives the negativity projection
        return FormalSum.zero()
    headroom = -tree.degree_value()
    edge_opts = []
    for e in tree.kernel_edges():
        opts = []
        for low in mi_leq_iter(tree.edeco[e]):
            for k in mi_below(ts.scaling, headroom - ts.sdeg(low)):
                if ts.sdeg(mi_add(k, low)) >= m:
                    continue
                opts.append((e, low, k,
                             Fraction(mi_binom(tree.edeco[e], low),
                                      mi_factorial(k))))
        edge_opts.append(opts)
    acc = []
    keep = set(range(tree.n_nodes))
    for combo in _iproduct(*edge_opts):
        coeff = Fraction(1)
        ndeco = {v: tree.ndeco[v] for v in keep}
        for (e, _l, k, c) in combo:
            coeff *= c
            ndeco[tree.parent[e]] = mi_add(ndeco[tree.parent[e]], k)
        lowered = {e: l for (e, l, _k, _c) in combo}
        over = {e: mi_add(k, l) for (e, l, k, _c) in combo}
        out = _rebuild_left(tree, keep, ndeco, lowered, over)
        if out.degree_value() < 0:
            acc.append((out, coeff))
    return FormalSum(acc)
