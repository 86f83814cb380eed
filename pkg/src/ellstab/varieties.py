"""Fixed-point and tangent data for T*P^(n-1), T*Gr(k,n) and Hilb(C^2, n<=3).

Each variety carries off-shell tangent/polarization characters in Chern roots
x_1..x_k, per-point Chern-root bindings, a chamber, the symplectic weight as
a monomial, and the O(1)-type weights chi_p.  Hilbert-scheme conventions: the
box (i, j) of a partition binds to t1^-i t2^-j, the symplectic weight is
(t1 t2)^-1, and the equivariant direction pairs t1 -> +1, t2 -> -1.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from .rings import Monomial, var_id, var_name
from .characters import Character, Chamber, polarization_check


class FixedPoint:
    __slots__ = ("label", "binding", "flop_binding")

    def __init__(self, label, binding: list[Monomial], flop_binding: list[Monomial]):
        self.label = label
        self.binding = list(binding)
        self.flop_binding = list(flop_binding)

    @property
    def name(self) -> str:
        if isinstance(self.label, frozenset):
            return "{%s}" % ",".join(str(i) for i in sorted(self.label))
        return "[%s]" % ",".join(str(i) for i in self.label)

    def binding_map(self, flop: bool = False) -> dict:
        src = self.flop_binding if flop else self.binding
        return {var_id("x%d" % (i + 1)): (Fraction(1), m)
                for i, m in enumerate(src)}

    def __repr__(self):
        return "FixedPoint(%s)" % self.name


class VarietyData:
    def __init__(self, name, family, points, n_roots, tangent, polarization,
                 chamber, hbar, chi, walls_window, taut_det_sign, meta=None):
        self.name = name
        self.family = family
        self.points = points
        self.n_roots = n_roots
        self.tangent = tangent                # off-shell Character
        self.polarization = polarization      # off-shell Character
        self.chamber = chamber
        self.hbar = hbar                      # symplectic-weight Monomial
        self.chi = chi                        # FixedPoint -> Monomial
        self.walls_window = walls_window      # walls in [0,1)
        self.taut_det_sign = taut_det_sign    # z->qz x-content convention
        self.meta = dict(meta or {})
        self.kahler_rank = 1
        self._validate()

    # -- derived data ----------------------------------------------------------

    def x_vids(self) -> list[int]:
        return [var_id("x%d" % (i + 1)) for i in range(self.n_roots)]

    def point_pairing(self, p: FixedPoint, m: Monomial) -> Fraction:
        c, bound = m.substitute(p.binding_map())
        return self.chamber.pairing(bound)

    def split_offshell(self, p: FixedPoint, V: Character):
        """Partition an off-shell character by the bound chamber pairing."""
        neg, fixed, pos = {}, {}, {}
        for m, k in V.weights.items():
            pr = self.point_pairing(p, m)
            (neg if pr < 0 else pos if pr > 0 else fixed)[m] = k
        return Character(neg), Character(fixed), Character(pos)

    def tangent_at(self, p: FixedPoint) -> Character:
        return self.tangent.substitute(p.binding_map()).drop_trivial()

    def polarization_at(self, p: FixedPoint) -> Character:
        return self.polarization.substitute(p.binding_map())

    def repelling_at(self, p: FixedPoint) -> Character:
        neg, _, _ = attract = self.split_offshell(p, self.tangent_at(p))
        return neg

    def index_at(self, p: FixedPoint) -> Character:
        """ind_p: positive part of the bound polarization (ties are fixed)."""
        _, fixed, pos = self.split_offshell(p, self.polarization_at(p))
        nontrivial_fixed = {m.render(): k for m, k in fixed.weights.items()
                            if not m.is_one()}
        if nontrivial_fixed:
            self.meta.setdefault("zero_pairing_polarization", {})[p.name] = \
                nontrivial_fixed
        return pos

    def chi_pairing(self, p: FixedPoint) -> Fraction:
        return self.chamber.pairing(self.chi(p))

    def a_vids(self) -> list[int]:
        return sorted(self.chamber.cochar)

    def z_vid(self) -> int:
        return var_id("z")

    def a_shift(self, w) -> dict:
        """Fractional shift of the equivariant direction by q^w."""
        w = Fraction(w)
        return {v: w * c for v, c in self.chamber.cochar.items()}

    # -- invariants --------------------------------------------------------------

    def _validate(self) -> None:
        dim = self.tangent_at(self.points[0]).rank()
        for p in self.points:
            T = self.tangent_at(p)
            if T.rank() != dim:
                raise AssertionError("tangent rank varies across points")
            if any(m.is_one() for m in T.weights):
                raise AssertionError("fixed point %s is not isolated" % p.name)
            half = self.polarization_at(p)
            full = half + half.dual() * self.hbar.inv()
            if full.drop_trivial() != T:
                raise AssertionError(
                    "polarization fails at %s: %s vs %s"
                    % (p.name, full.render(), T.render()))
        if not polarization_check(self.tangent, self.polarization, self.hbar):
            raise AssertionError("off-shell polarization identity fails")
        pairs = [self.chi_pairing(p) for p in self.points]
        if pairs != sorted(pairs, reverse=True):
            raise AssertionError("points are not in descending chi order")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "points": [p.name for p in self.points],
            "bindings": {p.name: [m.render() for m in p.binding]
                         for p in self.points},
            "tangent": self.tangent.render(),
            "polarization": self.polarization.render(),
            "tangent_at": {p.name: self.tangent_at(p).render()
                           for p in self.points},
            "chamber": self.chamber.describe(),
            "hbar": self.hbar.render(),
            "chi": {p.name: self.chi(p).render() for p in self.points},
            "walls": [str(w) for w in self.walls_window],
            "meta": {k: v for k, v in self.meta.items()},
        }


# ---------------------------------------------------------------------------
# T*Gr(k, n)
# ---------------------------------------------------------------------------

def build_grassmannian(k: int, n: int) -> VarietyData:
    """Cotangent bundle of the Grassmannian as a quiver variety.

    k = 1 uses the chamber of the thesis's difference-equation matrices
    (a_i -> -i); k >= 2 uses the positive chamber a_i = xi^i of the worked
    Grassmannian example.
    """
    if not (1 <= k <= n <= 4):
        raise ValueError("need 1 <= k <= n <= 4, got (%d, %d)" % (k, n))
    hbar = Monomial.var("hbar")
    xs = [Monomial.var("x%d" % (i + 1)) for i in range(k)]
    As = [Monomial.var("a%d" % (j + 1)) for j in range(n)]
    T = Character.zero()
    half = Character.zero()
    for x in xs:
        for a in As:
            T = T + Character.of(x / a) + Character.of(hbar.inv() * a / x)
            half = half + Character.of(x / a)
        for y in xs:
            T = T - Character.of(x / y) - Character.of(hbar.inv() * x / y)
            half = half - Character.of(x / y)
    sign = -1 if k == 1 else 1
    chamber = Chamber.from_names(
        {"a%d" % (j + 1): Fraction(sign * (j + 1)) for j in range(n)})

    def chi(p: FixedPoint) -> Monomial:
        out = Monomial.one()
        for i in sorted(p.label):
            out = out * Monomial.var("a%d" % i)
        return out

    points = []
    for subset in itertools.combinations(range(1, n + 1), k):
        binding = [Monomial.var("a%d" % j) for j in subset]
        flop = [hbar.inv() * m for m in binding]
        points.append(FixedPoint(frozenset(subset), binding, flop))
    # descending chi pairing, lexicographic tie-break
    points.sort(key=lambda p: (tuple(sorted(p.label))))
    points.sort(key=lambda p: sum(sign * j for j in p.label), reverse=True)
    name = "tp%d" % (n - 1) if k == 1 else "tgr%d%d" % (k, n)
    return VarietyData(name, "grassmannian", points, k, T, half, chamber,
                       hbar, chi, walls_window=[Fraction(0)],
                       taut_det_sign=+1)


# ---------------------------------------------------------------------------
# Hilb(C^2, n)
# ---------------------------------------------------------------------------

def _partitions(n: int):
    if n == 0:
        yield ()
        return
    for first in range(n, 0, -1):
        for rest in _partitions(n - first):
            if not rest or rest[0] <= first:
                yield (first,) + rest


def _boxes(lam) -> list[tuple[int, int]]:
    """(i, j) = (arm-offset, leg-offset), reading order."""
    out = []
    for j, row in enumerate(lam):
        for i in range(row):
            out.append((i, j))
    out.sort(key=lambda b: (b[0] + b[1], b[1]))
    return out


def _transpose(lam) -> tuple:
    if not lam:
        return ()
    return tuple(sum(1 for row in lam if row > i) for i in range(lam[0]))


def hook_lengths(lam) -> list[int]:
    out = []
    for (i, j) in _boxes(lam):
        arm = lam[j] - 1 - i
        leg = sum(1 for jj in range(j + 1, len(lam)) if lam[jj] > i)
        out.append(arm + 1 + leg)
    return out


def arm_leg_tangent(lam) -> Character:
    t1, t2 = Monomial.var("t1"), Monomial.var("t2")
    T = Character.zero()
    for (i, j) in _boxes(lam):
        arm = lam[j] - 1 - i
        leg = sum(1 for jj in range(j + 1, len(lam)) if lam[jj] > i)
        T = T + Character.of(t1 ** (arm + 1) * t2 ** (-leg))
        T = T + Character.of(t1 ** (-arm) * t2 ** (leg + 1))
    return T


def build_hilbert(n: int) -> VarietyData:
    if not (1 <= n <= 3):
        raise ValueError("Hilbert scheme supported for 1 <= n <= 3, got %d" % n)
    t1, t2 = Monomial.var("t1"), Monomial.var("t2")
    xs = [Monomial.var("x%d" % (i + 1)) for i in range(n)]
    V = Character.zero()
    for x in xs:
        V = V + Character.of(x)
    Vd = V.dual()
    # T = V + t1 t2 V* - (1 - t1)(1 - t2) V V*
    T = V + (t1 * t2) * Vd
    VVd = V * Vd
    T = T + t1 * VVd + t2 * VVd - VVd - (t1 * t2) * VVd
    half = V - VVd + t1 * VVd
    hbar = (t1 * t2).inv()
    chamber = Chamber.from_names({"t1": Fraction(1), "t2": Fraction(-1)})

    def binding_of(lam):
        return [t1 ** (-i) * t2 ** (-j) for (i, j) in _boxes(lam)]

    def flop_binding_of(lam):
        return [(t1 * t2) * t1 ** i * t2 ** j for (i, j) in _boxes(_transpose(lam))]

    points = []
    for lam in _partitions(n):
        points.append(FixedPoint(tuple(lam), binding_of(lam), flop_binding_of(lam)))

    def chi(p: FixedPoint) -> Monomial:
        out = Monomial.one()
        for m in p.binding:
            out = out * m
        return out

    points.sort(key=lambda p: p.label)
    points.sort(key=lambda p: chamber.pairing(chi(p)), reverse=True)
    walls = sorted({Fraction(a, b) for b in range(1, n + 1) for a in range(0, b)})
    return VarietyData("hilb%d" % n, "hilbert", points, n, T, half, chamber,
                       hbar, chi, walls_window=walls, taut_det_sign=-1)


def build_variety(name: str) -> VarietyData:
    table = {
        "tp1": lambda: build_grassmannian(1, 2),
        "tp2": lambda: build_grassmannian(1, 3),
        "tgr24": lambda: build_grassmannian(2, 4),
        "hilb1": lambda: build_hilbert(1),
        "hilb2": lambda: build_hilbert(2),
        "hilb3": lambda: build_hilbert(3),
    }
    if name not in table:
        raise ValueError("unknown variety %r (have %s)" % (name, sorted(table)))
    return table[name]()


def enumerate_walls(v: VarietyData) -> list[Fraction]:
    if v.kahler_rank != 1:
        raise ValueError("unsupported: walls need a rank-1 Kaehler torus")
    return list(v.walls_window)
