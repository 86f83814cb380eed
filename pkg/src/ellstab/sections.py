"""Symbolic theta sections: products of theta atoms with Laurent prefactors.

A section is a sum of terms; each term is a q-power, a Laurent prefactor and
a product of atoms theta(m * q^s)^e.  The symbolic layer knows the exact
degree quadratic form and quasiperiods; q -> 0 limits under fractional shifts
go through the leading-term formula with a truncated-series fallback when the
leading layer cancels.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Iterable, Mapping

from .rings import LaurentExpr, Monomial, var_id, var_name, _Tokens, _parse_sum
from .qseries import QSeries, theta_series, theta_leading, qq

DEFAULT_ORDER = Fraction(20)
CANCEL_CAP = Fraction(40)


class ThetaAtom:
    """theta(argument * q^q_shift)^exponent with integral argument."""

    __slots__ = ("arg", "q_shift", "exp")

    def __init__(self, arg: Monomial, q_shift=0, exp: int = 1):
        if arg.is_one() and Fraction(q_shift) == 0 and exp < 0:
            raise ZeroDivisionError("1/theta(1) is singular")
        for _, e in arg.exps:
            if e.denominator != 1:
                raise ValueError("theta argument %s must have integer exponents"
                                 % arg.render())
        self.arg = arg
        self.q_shift = Fraction(q_shift)
        self.exp = int(exp)

    def key(self):
        return (self.arg.sort_key(), self.q_shift)

    def oriented(self) -> tuple["ThetaAtom", int]:
        """Canonical orientation: theta(1/m q^-s) = -theta(m q^s)."""
        inv = self.arg.inv()
        if (inv.sort_key(), -self.q_shift) < self.key():
            return ThetaAtom(inv, -self.q_shift, self.exp), (-1) ** (self.exp % 2)
        return self, 1

    def pairing(self, shift: Mapping[int, Fraction]) -> Fraction:
        """q-exponent of the argument after the variable shift."""
        w = self.q_shift
        for v, e in self.arg.exps:
            w += e * shift.get(v, Fraction(0))
        return w

    def render(self) -> str:
        inner = self.arg.render()
        if self.q_shift:
            inner += "*q^(%s)" % self.q_shift if self.q_shift.denominator != 1 \
                else ("*q^%d" % self.q_shift if self.q_shift >= 0
                      else "*q^(%d)" % self.q_shift)
        s = "theta(%s)" % inner
        if self.exp != 1:
            s += "^%d" % self.exp if self.exp > 0 else "^(%d)" % self.exp
        return s

    def __repr__(self):
        return self.render()


def _merge_atoms(atoms: Iterable[ThetaAtom]) -> tuple[list[ThetaAtom], int, bool]:
    """Canonically orient, sort and merge atoms.

    Returns (atoms, sign, vanishes): vanishes marks a positive power of
    theta(1), which kills the whole term.
    """
    acc: dict = {}
    sign = 1
    for a in atoms:
        a, s = a.oriented()
        sign *= s
        k = (a.arg, a.q_shift)
        acc[k] = acc.get(k, 0) + a.exp
    out = []
    vanishes = False
    for (arg, qs), e in acc.items():
        if e == 0:
            continue
        if arg.is_one() and qs == 0:
            if e > 0:
                vanishes = True
                continue
            raise ZeroDivisionError("1/theta(1) is singular")
        out.append(ThetaAtom(arg, qs, e))
    out.sort(key=ThetaAtom.key)
    return out, sign, vanishes


class ThetaSection:
    """Sum of terms (q_power, prefactor, atom product)."""

    __slots__ = ("terms",)

    def __init__(self, terms, merge: bool = True):
        # terms: iterable of (Fraction q_power, LaurentExpr, list[ThetaAtom])
        clean = []
        for qp, pref, atoms in terms:
            if pref.is_zero():
                continue
            atoms, sign, vanishes = _merge_atoms(atoms)
            if vanishes:
                continue
            clean.append((Fraction(qp), pref * sign if sign != 1 else pref,
                          tuple(atoms)))
        if merge:
            clean = self._combine(clean)
        self.terms = tuple(clean)

    @staticmethod
    def _combine(terms):
        grouped: dict = {}
        order = []
        for qp, pref, atoms in terms:
            key = (qp, tuple((a.arg, a.q_shift, a.exp) for a in atoms))
            if key in grouped:
                grouped[key] = (grouped[key][0] + pref, atoms)
            else:
                grouped[key] = (pref, atoms)
                order.append((key, qp))
        out = []
        for key, qp in order:
            pref, atoms = grouped[key]
            if not pref.is_zero():
                out.append((qp, pref, atoms))
        return out

    # -- constructors ---------------------------------------------------------

    @staticmethod
    def theta(arg: Monomial, q_shift=0, exp: int = 1) -> "ThetaSection":
        return ThetaSection([(Fraction(0), LaurentExpr.const(1),
                              [ThetaAtom(arg, q_shift, exp)])])

    @staticmethod
    def scalar(pref) -> "ThetaSection":
        pref = LaurentExpr._coerce(pref)
        return ThetaSection([(Fraction(0), pref, [])])

    @staticmethod
    def one() -> "ThetaSection":
        return ThetaSection.scalar(1)

    @staticmethod
    def zero() -> "ThetaSection":
        return ThetaSection([])

    def is_zero(self) -> bool:
        return not self.terms

    def is_term(self) -> bool:
        return len(self.terms) == 1

    # -- algebra ---------------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "ThetaSection":
        if isinstance(x, ThetaSection):
            return x
        return ThetaSection.scalar(x)

    def __add__(self, other) -> "ThetaSection":
        other = self._coerce(other)
        return ThetaSection(list(self.terms) + list(other.terms))

    __radd__ = __add__

    def __neg__(self) -> "ThetaSection":
        return ThetaSection([(qp, -p, list(a)) for qp, p, a in self.terms],
                            merge=False)

    def __sub__(self, other) -> "ThetaSection":
        return self + (-self._coerce(other))

    def __mul__(self, other) -> "ThetaSection":
        other = self._coerce(other)
        terms = []
        for qp1, p1, a1 in self.terms:
            for qp2, p2, a2 in other.terms:
                terms.append((qp1 + qp2, p1 * p2, list(a1) + list(a2)))
        return ThetaSection(terms)

    __rmul__ = __mul__

    def inv(self) -> "ThetaSection":
        if not self.is_term():
            raise ValueError("can only invert single-term theta sections")
        qp, pref, atoms = self.terms[0]
        return ThetaSection([(-qp, pref.inv(),
                              [ThetaAtom(a.arg, a.q_shift, -a.exp) for a in atoms])])

    def __truediv__(self, other) -> "ThetaSection":
        return self * self._coerce(other).inv()

    def __pow__(self, k: int) -> "ThetaSection":
        if k < 0:
            return self.inv() ** (-k)
        out = ThetaSection.one()
        for _ in range(k):
            out = out * self
        return out

    def substitute(self, bindings: Mapping[int, tuple[Fraction, Monomial]]) -> "ThetaSection":
        """Bind variables to monomials inside prefactors and theta arguments."""
        terms = []
        for qp, pref, atoms in self.terms:
            new_atoms = []
            for a in atoms:
                c, m = a.arg.substitute(bindings)
                if c != 1:
                    raise ValueError("theta argument binding must be monomial")
                new_atoms.append(ThetaAtom(m, a.q_shift, a.exp))
            terms.append((qp, pref.substitute(bindings), new_atoms))
        return ThetaSection(terms)

    # -- quasiperiod / degree data ----------------------------------------------

    def term_degree(self, idx: int) -> "DegreeForm":
        qp, pref, atoms = self.terms[idx]
        quad: dict = {}
        lin: dict = {}
        for a in atoms:
            lam = dict(a.arg.exps)
            for v1, e1 in lam.items():
                lin[v1] = lin.get(v1, Fraction(0)) - a.exp * a.q_shift * e1
                for v2, e2 in lam.items():
                    k = (min(v1, v2), max(v1, v2))
                    quad[k] = quad.get(k, Fraction(0)) - a.exp * e1 * e2
        quad = {k: v for k, v in quad.items() if v}
        lin = {k: v for k, v in lin.items() if v}
        return DegreeForm(quad, lin, qp)

    def term_automorphy(self, idx: int, shift: Mapping[int, int]):
        """Exact transform of one term under an integral shift v -> v*q^n.

        Returns (sign, monomial, q_power) with
        term(a q^shift) = sign * monomial * q^q_power * term(a).
        """
        qp, pref, atoms = self.terms[idx]
        sign = 1
        mono = Monomial.one()
        qpow = Fraction(0)
        for a in atoms:
            n = sum(e * shift.get(v, 0) for v, e in a.arg.exps)
            if Fraction(n).denominator != 1:
                raise ValueError("integral shift required")
            n = int(n)
            if n == 0:
                continue
            # theta(q^n x) = (-1)^n x^-n q^(-n^2/2) theta(x), x = arg*q^s
            sign *= (-1) ** ((n * a.exp) % 2)
            mono = mono * (a.arg ** (-n * a.exp))
            qpow += a.exp * (-a.q_shift * n - Fraction(n * n, 2))
        # prefactor monomials also move: pref(a q^shift) handled separately
        return sign, mono, qpow

    def degree(self) -> "DegreeForm":
        """Shared degree data; error when terms disagree (ill-formed section)."""
        if not self.terms:
            return DegreeForm({}, {}, Fraction(0))
        forms = [self.term_degree(i) for i in range(len(self.terms))]
        base = forms[0]
        for f in forms[1:]:
            if f.quad != base.quad:
                raise ValueError(
                    "terms have mismatched quasiperiods: %s vs %s"
                    % (base.quad, f.quad))
        return base

    # -- limits -----------------------------------------------------------------

    def term_order(self, idx: int, shift: Mapping[int, Fraction]) -> Fraction:
        qp, pref, atoms = self.terms[idx]
        return qp + sum(a.exp * qq(a.pairing(shift)) for a in atoms)

    def term_leading(self, idx: int, shift: Mapping[int, Fraction]) -> LaurentExpr:
        qp, pref, atoms = self.terms[idx]
        out = pref
        for a in atoms:
            _, lead = theta_leading(a.arg, a.pairing(shift))
            out = out * (lead ** a.exp)
        return out

    def term_series(self, idx: int, shift: Mapping[int, Fraction], order) -> QSeries:
        import math
        qp, pref, atoms = self.terms[idx]
        # reduce every pairing to [0,1) through the exact quasiperiod law
        # theta(x q^(n+w)) = (-1)^n x^-n q^(-n^2/2 - n w) theta(x q^w),
        # so the series work happens at tiny valuations
        qpow = qp
        coeff = pref
        reduced = []
        for a in atoms:
            w = a.pairing(shift)
            n = math.floor(w)
            wf = w - n
            if n:
                sign = -1 if (n * a.exp) % 2 else 1
                coeff = coeff * LaurentExpr.from_monomial(a.arg ** (-n * a.exp), sign)
                qpow += a.exp * (Fraction(-n * n, 2) - n * wf)
            reduced.append((a.arg, wf, a.exp))
        base = Fraction(order) - qpow
        vals = [e * qq(w) for (_, w, e) in reduced]
        total_val = sum(vals, Fraction(0))
        out = QSeries.const(coeff, base - total_val + 1)
        for (arg, w, e), v in zip(reduced, vals):
            m = qq(w)
            need = (base - (total_val - v)) - (abs(e) + 1) * m + 1
            ser = theta_series(arg, need, w)
            out = out * (ser ** e)
        return out.truncate(base).shift(qpow)

    def limit_q0(self, shift: Mapping[int, Fraction] | None = None,
                 order_cap=CANCEL_CAP) -> tuple[LaurentExpr, Fraction]:
        """q -> 0 limit after the fractional shift; returns (value, q_order).

        The value is the coefficient of the leading q-power; the power itself
        is reported, not folded in.  Exact cancellation of the leading layer
        falls back to truncated series evaluation.
        """
        shift = dict(shift or {})
        if not self.terms:
            return LaurentExpr.zero(), Fraction(0)
        orders = [self.term_order(i, shift) for i in range(len(self.terms))]
        omin = min(orders)
        lead = LaurentExpr.zero()
        for i, o in enumerate(orders):
            if o == omin:
                lead = lead + self.term_leading(i, shift)
        if not lead.is_zero():
            return lead, omin
        # cancellation: brute-force series with growing order
        extra = Fraction(2)
        while extra <= order_cap - omin:
            target = omin + extra
            total = QSeries.zero(target)
            for i in range(len(self.terms)):
                total = total + self.term_series(i, shift, target)
            v = total.valuation()
            if v is not None:
                return total.terms[v], v
            extra *= 2
        raise ArithmeticError("cancellation beyond cap q^%s in limit" % order_cap)

    def series(self, shift: Mapping[int, Fraction] | None = None,
               order=DEFAULT_ORDER) -> QSeries:
        """Brute-force q-expansion of the shifted section."""
        shift = dict(shift or {})
        total = QSeries.zero(Fraction(order))
        for i in range(len(self.terms)):
            total = total + self.term_series(i, shift, order)
        return total

    # -- balance ------------------------------------------------------------------

    def charge_lattice_samples(self, vids: list[int], max_den: int = 12):
        """Fractional cocharacters probing every kink of the degree data."""
        dens = {1, 2}
        for _, _, atoms in self.terms:
            for a in atoms:
                for v, e in a.arg.exps:
                    if v in vids and e:
                        dens.add(min(abs(int(e)) * 2, max_den))
        dens = sorted(d for d in dens if d <= max_den)
        samples = []
        seen = set()
        for d in dens:
            for k in range(1, d):
                w = Fraction(k, d)
                if w not in seen:
                    seen.add(w)
                    samples.append(w)
        return samples

    def is_balanced(self, vids: list[int], samples=None):
        """Constant-asymptotics test over the given variables.

        Returns (bool, witness); witness names the failing quadratic entry or
        the failing fractional shift with its q-order.
        """
        deg = self.degree()
        for (v1, v2), c in deg.quad.items():
            if v1 in vids and v2 in vids and c:
                return False, "degree form has %s*%s coefficient %s" % (
                    var_name(v1), var_name(v2), c)
        if samples is None:
            samples = self.charge_lattice_samples(vids)
        if not samples:
            raise ValueError("sample list must be nonempty")
        for w in samples:
            for direction in self._sample_directions(vids):
                shift = {v: w * d for v, d in direction.items()}
                omin = min(self.term_order(i, shift)
                           for i in range(len(self.terms)))
                if omin < 0:
                    return False, "shift %s along %s gives q-order %s" % (
                        w, {var_name(v): str(d) for v, d in direction.items()},
                        omin)
        return True, None

    def _sample_directions(self, vids: list[int]):
        """Unit and a few mixed integer directions in the chosen variables."""
        dirs = [{v: Fraction(1)} for v in vids]
        if len(vids) > 1:
            for signs in itertools.product((1, -1), repeat=len(vids) - 1):
                d = {vids[0]: Fraction(1)}
                for v, s in zip(vids[1:], signs):
                    d[v] = Fraction(s)
                dirs.append(d)
        return dirs

    # -- rendering -------------------------------------------------------------

    def render(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for qp, pref, atoms in self.terms:
            factors = []
            mono = pref.as_monomial()
            if qp:
                factors.append("q^(%s)" % qp)
            pos = [a for a in atoms if a.exp > 0]
            neg = [a for a in atoms if a.exp < 0]
            if mono is not None and mono[0] == 1 and mono[1].is_one():
                if not pos and not qp:
                    factors.append("1")
            else:
                pr = pref.render()
                if "+" in pr[1:] or "-" in pr[1:] or "/" in pr:
                    pr = "(%s)" % pr
                factors.append(pr)
            factors.extend(a.render() for a in pos)
            num = "*".join(factors) if factors else "1"
            if neg:
                den = "*".join(
                    ThetaAtom(a.arg, a.q_shift, -a.exp).render() for a in neg)
                num = "%s/(%s)" % (num if "*" not in num and "+" not in num
                                   else "(%s)" % num, den)
            parts.append(num)
        out = parts[0]
        for p in parts[1:]:
            out += " + " + p
        return out

    def __repr__(self):
        return self.render()

    # -- comparison ---------------------------------------------------------------

    def canonical_key(self):
        keyed = []
        for qp, pref, atoms in self.terms:
            keyed.append((qp, tuple((a.arg.sort_key(), a.q_shift, a.exp)
                                    for a in atoms), pref.render()))
        return tuple(sorted(keyed))

    def equals(self, other: "ThetaSection", order=None, sign: int = 1) -> bool:
        """Exact equality via q-expansion (structural fast path first)."""
        other = self._coerce(other)
        diff = self - (other if sign == 1 else -other)
        if not diff.terms:
            return True
        if order is None:
            order = Fraction(6)
        ser = diff.series({}, order)
        return ser.is_zero()

    def equals_up_to_sign(self, other: "ThetaSection", order=None):
        if self.equals(other, order):
            return True, 1
        if self.equals(other, order, sign=-1):
            return True, -1
        return False, None


class DegreeForm:
    """Quadratic-plus-linear q-exponent bookkeeping of a section term.

    quad holds -sum_j e_j lambda_j lambda_j^T as a symmetric sparse matrix
    (pair -> coefficient, no 1/2 normalization: the q-power under an integral
    shift w is (1/2) w^T quad w + <lin, w> + scale).
    """

    __slots__ = ("quad", "lin", "scale")

    def __init__(self, quad: dict, lin: dict, scale: Fraction):
        self.quad = quad
        self.lin = lin
        self.scale = scale

    def quad_entry(self, v1: int, v2: int) -> Fraction:
        return self.quad.get((min(v1, v2), max(v1, v2)), Fraction(0))

    def cross_pairing(self, a_vids: list[int], z_vids: list[int]) -> dict:
        """chi(-,-) block extracted from the mixed part of the degree."""
        out = {}
        for va in a_vids:
            for vz in z_vids:
                c = self.quad_entry(va, vz)
                if c:
                    out[(va, vz)] = c
        return out

    def q_power(self, shift: Mapping[int, Fraction]) -> Fraction:
        tot = self.scale
        for (v1, v2), c in self.quad.items():
            w1 = shift.get(v1, Fraction(0))
            w2 = shift.get(v2, Fraction(0))
            tot += (c * w1 * w2) * (Fraction(1, 2) if v1 == v2 else Fraction(1))
        for v, c in self.lin.items():
            tot += c * shift.get(v, Fraction(0))
        return tot

    def describe(self) -> dict:
        quad = {"%s*%s" % (var_name(v1), var_name(v2)): str(c)
                for (v1, v2), c in sorted(self.quad.items())}
        lin = {var_name(v): str(c) for v, c in sorted(self.lin.items())}
        return {"quadratic": quad, "linear": lin, "scale": str(self.scale)}


# ---------------------------------------------------------------------------
# parsing the theta grammar
# ---------------------------------------------------------------------------

def _parse_theta_arg(toks: _Tokens) -> tuple[Monomial, Fraction]:
    """Monomial-with-q-shift grammar inside theta(...): products/quotients of
    name[^exp] factors; exponents on q may have any denominator."""
    mono = Monomial.one()
    q_shift = Fraction(0)
    op = "*"
    while True:
        tok = toks.next()
        paren = tok == "("
        if paren:
            m, qs = _parse_theta_arg(toks)
            toks.expect(")")
        else:
            if not (tok[0].isalpha() or tok[0] == "_") and tok != "1":
                raise ValueError("theta argument factor %r is not a variable" % tok)
            exp = Fraction(1)
            if toks.peek() == "^":
                toks.next()
                exp = _parse_qexponent(toks)
            if tok == "1":
                m, qs = Monomial.one(), Fraction(0)
            elif tok == "q":
                m, qs = Monomial.one(), exp
            else:
                m, qs = Monomial.var(tok, exp), Fraction(0)
        if op == "*":
            mono, q_shift = mono * m, q_shift + qs
        else:
            mono, q_shift = mono / m, q_shift - qs
        nxt = toks.peek()
        if nxt in ("*", "/"):
            op = toks.next()
            continue
        return mono, q_shift


def _parse_qexponent(toks: _Tokens) -> Fraction:
    neg, paren = False, False
    if toks.peek() == "(":
        toks.next()
        paren = True
    if toks.peek() == "-":
        toks.next()
        neg = True
    num = toks.next()
    if not num.isdigit():
        raise ValueError("bad exponent %r" % num)
    val = Fraction(int(num))
    if paren and toks.peek() == "/":
        toks.next()
        val = Fraction(int(num), int(toks.next()))
    if neg:
        val = -val
    if paren:
        toks.expect(")")
    return val


def parse_section(text: str) -> ThetaSection:
    """Parse `theta(a1^2*z)/(theta(a1)*theta(z))`-style expressions with
    optional q^(p/r) shifts inside theta arguments."""

    def hook(name: str, toks: _Tokens):
        if name != "theta":
            return None
        toks.expect("(")
        mono, qs = _parse_theta_arg(toks)
        toks.expect(")")
        return ThetaSection.theta(mono, qs)

    toks = _Tokens(text)
    val = _parse_sum(toks, hook)
    if toks.peek() is not None:
        raise ValueError("trailing tokens at %r" % toks.peek())
    if isinstance(val, LaurentExpr):
        return ThetaSection.scalar(val)
    return val
