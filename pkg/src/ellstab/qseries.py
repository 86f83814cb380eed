"""Truncated q-series with exact Laurent coefficients, and the theta kernel.

A QSeries stores finitely many terms c_e * q^e with rational exponents e and
LaurentExpr coefficients c_e (q-free), valid for exponents below a truncation
order.  theta_series expands the odd Jacobi theta function

    theta(x) = (x^(1/2) - x^(-1/2)) prod_{i>=1} (1 - q^i x)(1 - q^i / x)

about q = 0, optionally with the argument shifted by a rational power of q.
"""

from __future__ import annotations

import math
from fractions import Fraction

from .rings import LaurentExpr, Monomial, var_id


EXACT_ORDER = Fraction(10**9)  # sentinel order for exactly-known series


class QSeries:
    """Finite q-expansion: terms exponent -> LaurentExpr, exact below order."""

    __slots__ = ("terms", "order")

    def __init__(self, terms: dict, order: Fraction, normalize: bool = True):
        self.order = Fraction(order)
        if normalize:
            self.terms = {Fraction(e): c for e, c in terms.items()
                          if Fraction(e) < self.order and not c.is_zero()}
        else:
            self.terms = terms

    @staticmethod
    def zero(order) -> "QSeries":
        return QSeries({}, order, normalize=False)

    @staticmethod
    def const(c: LaurentExpr, order) -> "QSeries":
        return QSeries({Fraction(0): c}, order)

    @staticmethod
    def qpow(e, order) -> "QSeries":
        return QSeries({Fraction(e): LaurentExpr.const(1)}, order)

    def is_zero(self) -> bool:
        return not self.terms

    def valuation(self) -> Fraction | None:
        """Lowest exponent with nonzero coefficient, None for the zero series."""
        return min(self.terms) if self.terms else None

    def leading(self) -> tuple[Fraction, LaurentExpr]:
        v = self.valuation()
        if v is None:
            raise ValueError("zero series has no leading term")
        return v, self.terms[v]

    def coeff(self, e) -> LaurentExpr:
        return self.terms.get(Fraction(e), LaurentExpr.zero())

    def truncate(self, order) -> "QSeries":
        order = min(self.order, Fraction(order))
        return QSeries({e: c for e, c in self.terms.items() if e < order},
                       order, normalize=False)

    def __add__(self, other: "QSeries") -> "QSeries":
        order = min(self.order, other.order)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            nc = terms.get(e, LaurentExpr.zero()) + c
            if nc.is_zero():
                terms.pop(e, None)
            else:
                terms[e] = nc
        return QSeries(terms, order)

    def __neg__(self) -> "QSeries":
        return QSeries({e: -c for e, c in self.terms.items()}, self.order,
                       normalize=False)

    def __sub__(self, other: "QSeries") -> "QSeries":
        return self + (-other)

    def __mul__(self, other) -> "QSeries":
        if isinstance(other, (LaurentExpr, int, Fraction)):
            other = LaurentExpr._coerce(other)
            return QSeries({e: c * other for e, c in self.terms.items()},
                           self.order)
        va = self.valuation()
        vb = other.valuation()
        va = self.order if va is None else va
        vb = other.order if vb is None else vb
        order = min(self.order + vb, other.order + va)
        terms: dict = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                e = ea + eb
                if e >= order:
                    continue
                nc = terms.get(e, LaurentExpr.zero()) + ca * cb
                if nc.is_zero():
                    terms.pop(e, None)
                else:
                    terms[e] = nc
        return QSeries(terms, order, normalize=False)

    __rmul__ = __mul__

    def shift(self, e) -> "QSeries":
        """Multiply by the pure power q^e."""
        e = Fraction(e)
        return QSeries({ee + e: c for ee, c in self.terms.items()},
                       self.order + e, normalize=False)

    def inv(self) -> "QSeries":
        v, lead = self.leading()
        rel_order = self.order - v
        # write self = lead * q^v * (1 + r) with val(r) > 0
        linv = lead.inv()
        r = QSeries({e - v: c * linv for e, c in self.terms.items() if e != v},
                    rel_order, normalize=False)
        out = QSeries.const(LaurentExpr.const(1), rel_order)
        power = QSeries.const(LaurentExpr.const(1), EXACT_ORDER)
        k = 0
        while not r.is_zero():
            k += 1
            power = power * r
            pv = power.valuation()
            if pv is None or pv >= rel_order:
                break
            out = out + (power if k % 2 == 0 else -power)
        return QSeries({e - v: c * linv for e, c in out.terms.items()},
                       rel_order - v, normalize=False)

    def __pow__(self, k: int) -> "QSeries":
        if k < 0:
            return self.inv() ** (-k)
        out = QSeries.const(LaurentExpr.const(1), EXACT_ORDER)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def agrees_with(self, other: "QSeries", order=None) -> bool:
        """Exact equality of coefficients up to the shared (or given) order."""
        o = min(self.order, other.order)
        if order is not None:
            o = min(o, Fraction(order))
        exps = {e for e in self.terms if e < o} | {e for e in other.terms if e < o}
        return all(self.coeff(e) == other.coeff(e) for e in exps)

    def __repr__(self) -> str:
        if not self.terms:
            return "O(q^%s)" % self.order
        bits = ["(%s)*q^(%s)" % (c.render(), e)
                for e, c in sorted(self.terms.items())]
        return " + ".join(bits) + " + O(q^%s)" % self.order


# ---------------------------------------------------------------------------
# the theta kernel
# ---------------------------------------------------------------------------

def _one_minus(mono: Monomial, qexp: Fraction) -> QSeries:
    """The exact factor 1 - q^qexp * mono."""
    qexp = Fraction(qexp)
    terms = {Fraction(0): LaurentExpr.const(1)}
    add = LaurentExpr.from_monomial(mono, -1)
    terms[qexp] = terms.get(qexp, LaurentExpr.zero()) + add
    if terms[qexp].is_zero():
        del terms[qexp]
    return QSeries(terms, EXACT_ORDER, normalize=False)


def theta_series(arg: Monomial, order, q_shift=0) -> QSeries:
    """Truncated expansion of theta(arg * q^q_shift)."""
    order = Fraction(order)
    s = Fraction(q_shift)
    argi = arg.inv()
    half = Fraction(1, 2)
    # negative-exponent factors appear when |s| >= 1; widen the working order
    # so truncation loses nothing before the final cut
    neg_budget = Fraction(0)
    i = 1
    while i + s < 0 or i - s < 0:
        neg_budget += min(0, i + s) + min(0, i - s)
        i += 1
    work = order - neg_budget + abs(s) / 2
    pre: dict = {s / 2: LaurentExpr.from_monomial(arg ** half)}
    lo = pre.get(-s / 2, LaurentExpr.zero()) + LaurentExpr.from_monomial(argi ** half, -1)
    pre[-s / 2] = lo
    out = QSeries(pre, work, normalize=False)
    i = 1
    while True:
        e1, e2 = i + s, i - s
        if e1 >= work and e2 >= work:
            break
        if e1 < work:
            out = out * _one_minus(arg, e1)
        if e2 < work:
            out = out * _one_minus(argi, e2)
        i += 1
    return out.truncate(order)


def qq(w) -> Fraction:
    """Piecewise-linear exponent floor(w)(floor(w)+1)/2 - w(floor(w)+1/2)."""
    w = Fraction(w)
    f = math.floor(w)
    return Fraction(f * (f + 1), 2) - w * (Fraction(2 * f + 1, 2))


def theta_leading(arg: Monomial, w) -> tuple[Fraction, LaurentExpr]:
    """Leading behavior of theta(arg * q^w) as q -> 0.

    Returns (q_order, leading) with leading a Laurent expression in the
    argument's variables: for non-integer w a single monomial, for integer w
    a monomial times (1 - arg).
    """
    w = Fraction(w)
    f = math.floor(w)
    sign = 1 if (f + 1) % 2 == 0 else -1
    mono = arg ** (-(f + Fraction(1, 2)))
    lead = LaurentExpr.from_monomial(mono, sign)
    if w.denominator == 1:
        lead = lead * (LaurentExpr.const(1) - LaurentExpr.from_monomial(arg))
    return qq(w), lead
