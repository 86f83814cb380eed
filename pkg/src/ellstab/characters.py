"""Virtual torus characters: plethysm, wedge, a-hat, theta lift, chambers.

A Character is a finite integer combination of weight monomials.  Chambers
pair weights against a rational cocharacter; ties (zero pairing) always count
as fixed, even for weights with nontrivial hbar content.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping

from .rings import LaurentExpr, Monomial, var_id, var_name, parse_expr
from .sections import ThetaSection


class Character:
    """weights: Monomial -> integer multiplicity (negatives allowed)."""

    __slots__ = ("weights",)

    def __init__(self, weights: Mapping[Monomial, int] | None = None):
        clean = {}
        for m, k in (weights or {}).items():
            k = int(k)
            if k:
                clean[m] = clean.get(m, 0) + k
                if not clean[m]:
                    del clean[m]
        self.weights = clean

    @staticmethod
    def zero() -> "Character":
        return Character()

    @staticmethod
    def of(m: Monomial, mult: int = 1) -> "Character":
        return Character({m: mult})

    @staticmethod
    def parse(text: str) -> "Character":
        """Integer-combination grammar, e.g. `x1 + hbar^-1*x1^-1 - 2`."""
        expr = parse_expr(text)
        if not expr.is_polynomial():
            raise ValueError("character text must be a Laurent polynomial")
        weights = {}
        for m, c in expr.num.items():
            if c.denominator != 1:
                raise ValueError("character multiplicities must be integers")
            weights[m] = int(c)
        return Character(weights)

    def items(self):
        return sorted(self.weights.items(), key=lambda kv: kv[0].sort_key())

    def rank(self) -> int:
        return sum(self.weights.values())

    def n_weights(self) -> int:
        return sum(abs(k) for k in self.weights.values())

    def __add__(self, other: "Character") -> "Character":
        out = dict(self.weights)
        for m, k in other.weights.items():
            out[m] = out.get(m, 0) + k
        return Character(out)

    def __sub__(self, other: "Character") -> "Character":
        out = dict(self.weights)
        for m, k in other.weights.items():
            out[m] = out.get(m, 0) - k
        return Character(out)

    def __neg__(self) -> "Character":
        return Character({m: -k for m, k in self.weights.items()})

    def __mul__(self, scale) -> "Character":
        if isinstance(scale, Monomial):
            return Character({m * scale: k for m, k in self.weights.items()})
        if isinstance(scale, Character):
            out: dict = {}
            for m1, k1 in self.weights.items():
                for m2, k2 in scale.weights.items():
                    m = m1 * m2
                    out[m] = out.get(m, 0) + k1 * k2
            return Character(out)
        return Character({m: k * int(scale) for m, k in self.weights.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return isinstance(other, Character) and self.weights == other.weights

    def dual(self) -> "Character":
        return Character({m.inv(): k for m, k in self.weights.items()})

    def det(self) -> Monomial:
        out = Monomial.one()
        for m, k in self.weights.items():
            out = out * (m ** k)
        return out

    def substitute(self, bindings) -> "Character":
        out: dict = {}
        for m, k in self.weights.items():
            c, sm = m.substitute(bindings)
            if c != 1:
                raise ValueError("character binding must be monomial")
            out[sm] = out.get(sm, 0) + k
        return Character(out)

    def drop_trivial(self) -> "Character":
        return Character({m: k for m, k in self.weights.items() if not m.is_one()})

    def render(self) -> str:
        if not self.weights:
            return "0"
        parts = []
        for m, k in self.items():
            if m.is_one():
                term = str(k)
            elif k == 1:
                term = m.render()
            elif k == -1:
                term = "-" + m.render()
            else:
                term = "%d*%s" % (k, m.render())
            if parts and not term.startswith("-"):
                parts.append("+" + term)
            else:
                parts.append(term)
        return "".join(parts)

    def __repr__(self):
        return self.render()


class Chamber:
    """Rational cocharacter; weights pair by <weight, sigma>."""

    __slots__ = ("cochar",)

    def __init__(self, cochar: Mapping[int, Fraction]):
        self.cochar = {v: Fraction(c) for v, c in cochar.items() if Fraction(c)}

    @staticmethod
    def from_names(assign: Mapping[str, Fraction]) -> "Chamber":
        return Chamber({var_id(n): Fraction(c) for n, c in assign.items()})

    def pairing(self, m: Monomial) -> Fraction:
        return sum((e * self.cochar.get(v, Fraction(0)) for v, e in m.exps),
                   Fraction(0))

    def opposite(self) -> "Chamber":
        return Chamber({v: -c for v, c in self.cochar.items()})

    def scaled(self, c) -> "Chamber":
        return Chamber({v: Fraction(c) * s for v, s in self.cochar.items()})

    def describe(self) -> dict:
        return {var_name(v): str(c) for v, c in sorted(self.cochar.items())}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def wedge_alt(V: Character) -> LaurentExpr:
    """Alternating wedge sum: prod (1 - w)^m over the weights."""
    out = LaurentExpr.const(1)
    for m, k in V.items():
        out = out * ((LaurentExpr.const(1) - LaurentExpr.from_monomial(m)) ** k)
    return out


def sym_exp(V: Character) -> LaurentExpr:
    """Plethystic exponential; S(V) = wedge_alt(-V) as a character identity."""
    for m, k in V.weights.items():
        if m.is_one() and k > 0:
            raise ZeroDivisionError(
                "sym_exp diverges on trivial weight with positive multiplicity")
    return wedge_alt(-V)


def a_hat(V: Character) -> LaurentExpr:
    """Symmetrized wedge: prod (sqrt(w) - 1/sqrt(w))^m."""
    out = LaurentExpr.const(1)
    half = Fraction(1, 2)
    for m, k in V.items():
        f = LaurentExpr.from_monomial(m ** half) - LaurentExpr.from_monomial(m ** -half)
        out = out * (f ** k)
    return out


def theta_lift(V: Character) -> ThetaSection:
    """prod theta(w)^m over the weights."""
    out = ThetaSection.one()
    for m, k in V.items():
        out = out * ThetaSection.theta(m, 0, k)
    return out


def pleth(op: str, V: Character):
    ops = {"sym_exp": sym_exp, "wedge_alt": wedge_alt,
           "a_hat": a_hat, "theta_lift": theta_lift}
    if op not in ops:
        raise ValueError("unknown plethysm %r" % op)
    return ops[op](V)


def attract_split(V: Character, chamber: Chamber):
    """Partition by the sign of the chamber pairing: (neg, fixed, pos)."""
    neg, fixed, pos = {}, {}, {}
    for m, k in V.weights.items():
        p = chamber.pairing(m)
        (neg if p < 0 else pos if p > 0 else fixed)[m] = k
    return Character(neg), Character(fixed), Character(pos)


def floor_pair(V: Character, w: Mapping[int, Fraction]) -> Fraction:
    """sum_i m_i * floor(<w_i, w>): multiplicity times the floored pairing."""
    import math
    total = Fraction(0)
    for m, k in V.weights.items():
        pairing = sum((e * Fraction(w.get(v, 0)) for v, e in m.exps), Fraction(0))
        total += k * math.floor(pairing)
    return total


def polarization_check(T: Character, half: Character,
                       hbar: Monomial | None = None) -> bool:
    """T == half + hbar^-1 * dual(half); hbar defaults to the registry symbol."""
    if hbar is None:
        hbar = Monomial.var("hbar")
    return T == half + half.dual() * hbar.inv()
