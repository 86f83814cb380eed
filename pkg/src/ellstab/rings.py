"""Exact multivariate Laurent-polynomial and rational-function arithmetic over Q.

Exponents are rationals with denominator dividing 2 (half-integers), which is
all the square roots sqrt(hbar), sqrt(t_i), z^(1/2) ever needed.  Values are
immutable; equality of rational functions is decided by exact
cross-multiplication, never by floating point and never by polynomial gcd.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Union

Scalar = Union[int, Fraction]

# ---------------------------------------------------------------------------
# variable registry (append-only, process global)
# ---------------------------------------------------------------------------

_NAMES: list[str] = []
_IDS: dict[str, int] = {}


def var_id(name: str) -> int:
    """Intern a variable name, returning its registry index."""
    vid = _IDS.get(name)
    if vid is None:
        vid = len(_NAMES)
        _NAMES.append(name)
        _IDS[name] = vid
    return vid


def var_name(vid: int) -> str:
    return _NAMES[vid]


def registered_names() -> list[str]:
    return list(_NAMES)


def _check_half(e: Fraction) -> Fraction:
    if e.denominator not in (1, 2):
        raise ValueError("exponent %s is not a half-integer" % e)
    return e


class Monomial:
    """Product of registry variables with half-integer exponents."""

    __slots__ = ("exps", "_hash", "_key")

    def __init__(self, exps: Mapping[int, Scalar] | Iterable[tuple[int, Scalar]] = ()):
        items = exps.items() if isinstance(exps, Mapping) else exps
        clean = {}
        for vid, e in items:
            e = _check_half(Fraction(e))
            if e:
                clean[vid] = clean.get(vid, Fraction(0)) + e
                if not clean[vid]:
                    del clean[vid]
        self.exps = tuple(sorted(clean.items()))
        self._hash = hash(self.exps)
        self._key = None

    @staticmethod
    def one() -> "Monomial":
        return _ONE_MONO

    @staticmethod
    def var(name: str, exp: Scalar = 1) -> "Monomial":
        return Monomial({var_id(name): Fraction(exp)})

    def is_one(self) -> bool:
        return not self.exps

    def exponent(self, vid: int) -> Fraction:
        for v, e in self.exps:
            if v == vid:
                return e
        return Fraction(0)

    def variables(self) -> list[int]:
        return [v for v, _ in self.exps]

    def __mul__(self, other: "Monomial") -> "Monomial":
        if not isinstance(other, Monomial):
            return NotImplemented
        d = dict(self.exps)
        for v, e in other.exps:
            ne = d.get(v, Fraction(0)) + e
            if ne:
                d[v] = ne
            else:
                d.pop(v, None)
        m = object.__new__(Monomial)
        m.exps = tuple(sorted(d.items()))
        m._hash = hash(m.exps)
        m._key = None
        return m

    def __pow__(self, k: Scalar) -> "Monomial":
        k = Fraction(k)
        return Monomial({v: e * k for v, e in self.exps})

    def inv(self) -> "Monomial":
        return self ** -1

    def __truediv__(self, other: "Monomial") -> "Monomial":
        return self * other.inv()

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self.exps == other.exps

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: "Monomial") -> bool:
        return self.sort_key() < other.sort_key()

    def sort_key(self):
        """Degree-then-lex key; both components add under multiplication, so
        leading terms are multiplicative (needed by exact division)."""
        n = len(_NAMES)
        cached = self._key
        if cached is not None and cached[0] == n:
            return cached[1]
        total = sum(e for _, e in self.exps)
        dense = [Fraction(0)] * n
        for v, e in self.exps:
            dense[v] = e
        key = (total, tuple(dense))
        self._key = (n, key)
        return key

    def substitute(self, bindings: Mapping[int, tuple[Fraction, "Monomial"]]):
        """Return (coefficient, monomial) after substituting variables.

        bindings maps vid -> (rational coefficient, Monomial).  Non-integer
        exponents require the bound coefficient to have an exact rational
        square root.
        """
        coeff = Fraction(1)
        out = _ONE_MONO
        for v, e in self.exps:
            if v in bindings:
                c, m = bindings[v]
                if e.denominator == 1:
                    coeff *= c ** e
                else:
                    r = _sqrt_fraction(c)
                    if r is None:
                        raise ValueError(
                            "cannot take %s^(%s): no exact square root" % (c, e))
                    coeff *= r ** (2 * e)
                out = out * (m ** e)
            else:
                out = out * Monomial({v: e})
        return coeff, out

    def render(self) -> str:
        if not self.exps:
            return "1"
        parts = []
        for v, e in self.exps:
            name = var_name(v)
            if e == 1:
                parts.append(name)
            elif e.denominator == 1:
                parts.append("%s^%d" % (name, e) if e > 0 else "%s^(%d)" % (name, e))
            else:
                parts.append("%s^(%s)" % (name, e))
        return "*".join(parts)

    def __repr__(self) -> str:
        return self.render()


_ONE_MONO = object.__new__(Monomial)
_ONE_MONO.exps = ()
_ONE_MONO._hash = hash(())
_ONE_MONO._key = None


def _sqrt_fraction(c: Fraction) -> Fraction | None:
    if c < 0:
        return None
    from math import isqrt
    pn, pd = isqrt(c.numerator), isqrt(c.denominator)
    if pn * pn == c.numerator and pd * pd == c.denominator:
        return Fraction(pn, pd)
    return None


# ---------------------------------------------------------------------------
# Laurent polynomials as dicts Monomial -> Fraction
# ---------------------------------------------------------------------------

Poly = dict  # Monomial -> Fraction, zero coefficients never stored


def _poly_add(a: Poly, b: Poly) -> Poly:
    out = dict(a)
    for m, c in b.items():
        nc = out.get(m, Fraction(0)) + c
        if nc:
            out[m] = nc
        else:
            out.pop(m, None)
    return out


def _poly_neg(a: Poly) -> Poly:
    return {m: -c for m, c in a.items()}


def _poly_mul(a: Poly, b: Poly) -> Poly:
    if len(a) > len(b):
        a, b = b, a
    out: Poly = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = ma * mb
            nc = out.get(m, Fraction(0)) + ca * cb
            if nc:
                out[m] = nc
            else:
                out.pop(m, None)
    return out


def _poly_scale(a: Poly, c: Fraction) -> Poly:
    if not c:
        return {}
    return {m: c * cm for m, cm in a.items()}


def _poly_leading(a: Poly) -> Monomial:
    return max(a, key=Monomial.sort_key)


def _poly_mono_gcd(polys: Iterable[Poly]) -> Monomial:
    """Exponent-wise minimum over all monomials present (a Laurent unit)."""
    mins: dict[int, Fraction] = {}
    seen: set[int] = set()
    first = True
    for p in polys:
        for m in p:
            d = dict(m.exps)
            if first:
                mins = dict(d)
                seen = set(d)
                first = False
                continue
            for v in list(mins):
                mins[v] = min(mins[v], d.get(v, Fraction(0)))
            for v in d:
                if v not in seen:
                    mins[v] = min(Fraction(0), d[v])
            seen |= set(d)
    return Monomial({v: e for v, e in mins.items() if e})


def _poly_try_div(a: Poly, b: Poly) -> Poly | None:
    """Exact division a/b in the Laurent ring, or None if it does not divide.

    Opportunistic: gives up (returns None) on large inputs; callers only use
    it to cancel common factors, never for correctness."""
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    if not a:
        return {}
    if len(a) * len(b) > 4000:
        return None
    lead_b = _poly_leading(b)
    cb = b[lead_b]
    rem = dict(a)
    quo: Poly = {}
    for _ in range(len(a) * 4 + 8):
        if not rem:
            return quo
        lead_r = _poly_leading(rem)
        qm = lead_r / lead_b
        qc = rem[lead_r] / cb
        quo[qm] = qc
        rem = _poly_add(rem, _poly_mul({qm: -qc}, b))
    return None


class LaurentExpr:
    """Rational function: quotient of Laurent polynomials over Q."""

    __slots__ = ("num", "den")

    def __init__(self, num: Poly, den: Poly | None = None, normalize: bool = True):
        if den is None:
            den = {_ONE_MONO: Fraction(1)}
        if not den:
            raise ZeroDivisionError("zero denominator")
        self.num = num
        self.den = den
        if normalize:
            self._normalize()

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero() -> "LaurentExpr":
        return LaurentExpr({}, None, normalize=False)

    @staticmethod
    def const(c: Scalar) -> "LaurentExpr":
        c = Fraction(c)
        num = {_ONE_MONO: c} if c else {}
        return LaurentExpr(num, None, normalize=False)

    @staticmethod
    def from_monomial(m: Monomial, c: Scalar = 1) -> "LaurentExpr":
        c = Fraction(c)
        return LaurentExpr({m: c} if c else {}, None, normalize=False)

    @staticmethod
    def var(name: str, exp: Scalar = 1) -> "LaurentExpr":
        return LaurentExpr.from_monomial(Monomial.var(name, exp))

    # -- canonical form -----------------------------------------------------

    def _normalize(self) -> None:
        if not self.num:
            self.den = {_ONE_MONO: Fraction(1)}
            return
        g = _poly_mono_gcd([self.num, self.den])
        if not g.is_one():
            gi = g.inv()
            self.num = {m * gi: c for m, c in self.num.items()}
            self.den = {m * gi: c for m, c in self.den.items()}
        if len(self.den) == 1:
            (m, c), = self.den.items()
            mi = m.inv()
            self.num = {mm * mi: cc / c for mm, cc in self.num.items()}
            self.den = {_ONE_MONO: Fraction(1)}
            return
        q = _poly_try_div(self.num, self.den)
        if q is not None:
            self.num = q
            self.den = {_ONE_MONO: Fraction(1)}
            return
        lc = self.den[_poly_leading(self.den)]
        if lc != 1:
            inv = 1 / lc
            self.num = _poly_scale(self.num, inv)
            self.den = _poly_scale(self.den, inv)

    def is_zero(self) -> bool:
        return not self.num

    def is_polynomial(self) -> bool:
        return self.den == {_ONE_MONO: Fraction(1)}

    def as_monomial(self) -> tuple[Fraction, Monomial] | None:
        """If the expression is c*m for a single monomial, return (c, m)."""
        if self.is_polynomial() and len(self.num) == 1:
            (m, c), = self.num.items()
            return c, m
        return None

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "LaurentExpr":
        if isinstance(x, LaurentExpr):
            return x
        if isinstance(x, Monomial):
            return LaurentExpr.from_monomial(x)
        if isinstance(x, (int, Fraction)):
            return LaurentExpr.const(x)
        raise TypeError("cannot coerce %r" % (x,))

    def __add__(self, other) -> "LaurentExpr":
        other = self._coerce(other)
        if self.den == other.den:
            return LaurentExpr(_poly_add(self.num, other.num), dict(self.den))
        num = _poly_add(_poly_mul(self.num, other.den),
                        _poly_mul(other.num, self.den))
        return LaurentExpr(num, _poly_mul(self.den, other.den))

    __radd__ = __add__

    def __neg__(self) -> "LaurentExpr":
        return LaurentExpr(_poly_neg(self.num), dict(self.den), normalize=False)

    def __sub__(self, other) -> "LaurentExpr":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "LaurentExpr":
        return self._coerce(other) - self

    def __mul__(self, other) -> "LaurentExpr":
        other = self._coerce(other)
        qn = _poly_try_div(self.num, other.den)
        if qn is not None:
            return LaurentExpr(_poly_mul(qn, other.num), dict(self.den))
        qm = _poly_try_div(other.num, self.den)
        if qm is not None:
            return LaurentExpr(_poly_mul(self.num, qm), dict(other.den))
        return LaurentExpr(_poly_mul(self.num, other.num),
                           _poly_mul(self.den, other.den))

    __rmul__ = __mul__

    def inv(self) -> "LaurentExpr":
        if self.is_zero():
            raise ZeroDivisionError("division by zero expression")
        return LaurentExpr(dict(self.den), dict(self.num))

    def __truediv__(self, other) -> "LaurentExpr":
        return self * self._coerce(other).inv()

    def __rtruediv__(self, other) -> "LaurentExpr":
        return self._coerce(other) * self.inv()

    def __pow__(self, k: int) -> "LaurentExpr":
        if k < 0:
            return self.inv() ** (-k)
        out = LaurentExpr.const(1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, (LaurentExpr, Monomial, int, Fraction)):
            return NotImplemented
        other = self._coerce(other)
        return _poly_mul(self.num, other.den) == _poly_mul(other.num, self.den)

    def __hash__(self):
        raise TypeError("LaurentExpr is unhashable; compare with ==")

    def __bool__(self) -> bool:
        return not self.is_zero()

    # -- operations of the spec ----------------------------------------------

    def substitute(self, bindings: Mapping[int, tuple[Fraction, Monomial]]) -> "LaurentExpr":
        """Exact simultaneous substitution vid -> coeff * monomial."""
        def sub_poly(p: Poly) -> Poly:
            out: Poly = {}
            for m, c in p.items():
                sc, sm = m.substitute(bindings)
                nc = out.get(sm, Fraction(0)) + c * sc
                if nc:
                    out[sm] = nc
                else:
                    out.pop(sm, None)
            return out

        den = sub_poly(self.den)
        if not den:
            names = ", ".join(
                "%s -> %s%s" % (var_name(v), ("" if c == 1 else str(c) + "*"), m.render())
                for v, (c, m) in bindings.items())
            raise ZeroDivisionError(
                "denominator vanishes identically under substitution {%s}" % names)
        return LaurentExpr(sub_poly(self.num), den)

    def degree_range(self, vid: int) -> tuple[Fraction, Fraction] | None:
        """(min, max) exponent of the variable over numerator monomials, for
        a polynomial expression; None if zero."""
        if not self.num:
            return None
        es = [m.exponent(vid) for m in self.num]
        return min(es), max(es)

    def limit_along(self, vid: int, direction: str) -> "LaurentExpr":
        """Limit as the variable goes to 0 ('to_zero') or infinity
        ('to_infinity'); error if the limit diverges."""
        if self.is_zero():
            return LaurentExpr.zero()
        if direction == "to_zero":
            pick, cmp_word = min, "below"
        elif direction == "to_infinity":
            pick, cmp_word = max, "above"
        else:
            raise ValueError("direction must be to_zero or to_infinity")
        vn = pick(m.exponent(vid) for m in self.num)
        vd = pick(m.exponent(vid) for m in self.den)
        sign = 1 if direction == "to_zero" else -1
        if sign * (vn - vd) < 0:
            raise ArithmeticError(
                "limit of %s along %s diverges: leading degree gap %s (num %s %s den %s)"
                % (self.render(), var_name(vid), vn - vd, cmp_word, "vs", vd))
        if sign * (vn - vd) > 0:
            return LaurentExpr.zero()

        def layer(p: Poly, v: Fraction) -> Poly:
            shift = Monomial({vid: -v})
            return {m * shift: c for m, c in p.items() if m.exponent(vid) == v}

        return LaurentExpr(layer(self.num, vn), layer(self.den, vd))

    # -- rendering ------------------------------------------------------------

    def render(self) -> str:
        num = _render_poly(self.num)
        if self.is_polynomial():
            return num
        den = _render_poly(self.den)
        if len(self.num) > 1 or "/" in num:
            num = "(%s)" % num
        return "%s/(%s)" % (num, den)

    def __repr__(self) -> str:
        return self.render()


def _render_coeff_mono(m: Monomial, c: Fraction) -> str:
    if m.is_one():
        return str(c) if c.denominator == 1 else "%d/%d" % (c.numerator, c.denominator)
    if c == 1:
        return m.render()
    if c == -1:
        return "-" + m.render()
    cs = str(c.numerator) if c.denominator == 1 else "%d/%d" % (c.numerator, c.denominator)
    return "%s*%s" % (cs, m.render())


def _render_poly(p: Poly) -> str:
    if not p:
        return "0"
    parts = []
    for m in sorted(p, key=Monomial.sort_key, reverse=True):
        term = _render_coeff_mono(m, p[m])
        if parts and not term.startswith("-"):
            parts.append("+" + term)
        else:
            parts.append(term)
    return "".join(parts)


# ---------------------------------------------------------------------------
# parser for the canonical text grammar
# ---------------------------------------------------------------------------

class _Tokens:
    def __init__(self, text: str):
        self.toks: list[str] = []
        i, n = 0, len(text)
        while i < n:
            ch = text[i]
            if ch.isspace():
                i += 1
            elif ch.isdigit():
                j = i
                while j < n and text[j].isdigit():
                    j += 1
                self.toks.append(text[i:j])
                i = j
            elif ch.isalpha() or ch == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.toks.append(text[i:j])
                i = j
            elif ch in "+-*/^()":
                self.toks.append(ch)
                i += 1
            else:
                raise ValueError("unexpected character %r in expression" % ch)
        self.pos = 0

    def peek(self) -> str | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ValueError("unexpected end of expression")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise ValueError("expected %r, got %r" % (tok, got))


def parse_expr(text: str, atom_hook=None) -> LaurentExpr:
    """Parse the canonical grammar into a LaurentExpr.

    atom_hook(name, tokens) may intercept function-call atoms such as
    theta(...); it must return an object supporting * / ** with LaurentExpr.
    """
    toks = _Tokens(text)
    val = _parse_sum(toks, atom_hook)
    if toks.peek() is not None:
        raise ValueError("trailing tokens at %r" % toks.peek())
    return val


def _parse_sum(toks, hook):
    val = _parse_product(toks, hook)
    while toks.peek() in ("+", "-"):
        op = toks.next()
        rhs = _parse_product(toks, hook)
        val = val + rhs if op == "+" else val - rhs
    return val


def _parse_product(toks, hook):
    val = _parse_factor(toks, hook)
    while toks.peek() in ("*", "/"):
        op = toks.next()
        rhs = _parse_factor(toks, hook)
        val = val * rhs if op == "*" else val / rhs
    return val


def _parse_factor(toks, hook):
    tok = toks.peek()
    if tok == "-":
        toks.next()
        return -_parse_factor(toks, hook)
    if tok == "+":
        toks.next()
        return _parse_factor(toks, hook)
    base = _parse_atom(toks, hook)
    if toks.peek() == "^":
        toks.next()
        exp = _parse_exponent(toks)
        if exp.denominator == 1:
            return base ** int(exp)
        mono = base.as_monomial() if isinstance(base, LaurentExpr) else None
        if mono is not None and mono[0] == 1:
            return LaurentExpr.from_monomial(mono[1] ** exp)
        raise ValueError("fractional power of a non-monomial")
    return base


def _parse_exponent(toks) -> Fraction:
    neg = False
    paren = False
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
        den = toks.next()
        val = Fraction(int(num), int(den))
    if neg:
        val = -val
    if paren:
        toks.expect(")")
    return val


def _parse_atom(toks, hook):
    tok = toks.next()
    if tok == "(":
        val = _parse_sum(toks, hook)
        toks.expect(")")
        return val
    if tok.isdigit():
        return LaurentExpr.const(int(tok))
    if tok[0].isalpha() or tok[0] == "_":
        if hook is not None and toks.peek() == "(":
            got = hook(tok, toks)
            if got is not None:
                return got
        return LaurentExpr.var(tok)
    raise ValueError("unexpected token %r" % tok)
