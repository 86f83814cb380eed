"""Elliptic and K-theoretic stable envelopes and the operators built on them.

Matrix layout follows the thesis displays: entry [p][r] is the envelope of
the p-th fixed point restricted to the r-th, so matrices are upper triangular
in the attraction order (first-listed point on top).
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

from .rings import LaurentExpr, Monomial, var_id, var_name
from .qseries import QSeries, qq
from .sections import ThetaSection, ThetaAtom
from .characters import Character, Chamber, wedge_alt, a_hat, theta_lift
from .varieties import VarietyData, FixedPoint


class OperatorMatrix:
    """Square matrix over ThetaSection or LaurentExpr, indexed by fixed points."""

    def __init__(self, basis: list[str], entries, kind: str, meta=None):
        self.basis = list(basis)
        self.entries = [list(row) for row in entries]
        self.kind = kind  # "theta" | "rational"
        self.meta = dict(meta or {})
        n = len(self.basis)
        if len(self.entries) != n or any(len(r) != n for r in self.entries):
            raise ValueError("entries must be a %dx%d square array" % (n, n))

    def __getitem__(self, pr):
        return self.entries[pr[0]][pr[1]]

    @property
    def n(self) -> int:
        return len(self.basis)

    def map_entries(self, fn, kind=None) -> "OperatorMatrix":
        return OperatorMatrix(self.basis,
                              [[fn(e) for e in row] for row in self.entries],
                              kind or self.kind, self.meta)

    def render(self) -> list[list[str]]:
        return [[e.render() for e in row] for row in self.entries]

    def __repr__(self):
        return "OperatorMatrix(%s, %s)" % (self.kind, self.basis)


# ---------------------------------------------------------------------------
# rational-matrix helpers
# ---------------------------------------------------------------------------

def rational_identity(basis) -> OperatorMatrix:
    n = len(basis)
    return OperatorMatrix(basis, [[LaurentExpr.const(1 if i == j else 0)
                                   for j in range(n)] for i in range(n)],
                          "rational")


def mat_mul(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    n = A.n
    out = [[LaurentExpr.zero() for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for k in range(n):
            a = A.entries[i][k]
            if a.is_zero():
                continue
            for j in range(n):
                b = B.entries[k][j]
                if not b.is_zero():
                    out[i][j] = out[i][j] + a * b
    return OperatorMatrix(A.basis, out, "rational")


def mat_inv(A: OperatorMatrix) -> OperatorMatrix:
    """Exact inverse by Gauss-Jordan over the rational-function field."""
    n = A.n
    M = [[A.entries[i][j] for j in range(n)] +
         [LaurentExpr.const(1 if i == j else 0) for j in range(n)]
         for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if not M[r][col].is_zero()), None)
        if piv is None:
            raise ZeroDivisionError("matrix is singular")
        M[col], M[piv] = M[piv], M[col]
        inv = M[col][col].inv()
        M[col] = [e * inv for e in M[col]]
        for r in range(n):
            if r != col and not M[r][col].is_zero():
                c = M[r][col]
                M[r] = [er - c * ec for er, ec in zip(M[r], M[col])]
    return OperatorMatrix(A.basis, [row[n:] for row in M], "rational")


def mat_sub(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    return OperatorMatrix(A.basis,
                          [[a - b for a, b in zip(ra, rb)]
                           for ra, rb in zip(A.entries, B.entries)], "rational")


def mat_equal(A: OperatorMatrix, B: OperatorMatrix) -> bool:
    return all(a == b for ra, rb in zip(A.entries, B.entries)
               for a, b in zip(ra, rb))


def mat_substitute(A: OperatorMatrix, bindings) -> OperatorMatrix:
    return A.map_entries(lambda e: e.substitute(bindings))


def diag_matrix(basis, diag: list[LaurentExpr]) -> OperatorMatrix:
    n = len(basis)
    return OperatorMatrix(basis, [[diag[i] if i == j else LaurentExpr.zero()
                                   for j in range(n)] for i in range(n)],
                          "rational")


def theta_mat_mul(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    n = A.n
    out = [[ThetaSection.zero() for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for k in range(n):
            a = A.entries[i][k]
            if a.is_zero():
                continue
            for j in range(n):
                b = B.entries[k][j]
                if not b.is_zero():
                    out[i][j] = out[i][j] + a * b
    return OperatorMatrix(A.basis, out, "theta")


def theta_mat_adjugate(A: OperatorMatrix):
    """(adjugate, determinant) for n <= 3 theta matrices."""
    n = A.n
    E = A.entries
    if n == 1:
        return (OperatorMatrix(A.basis, [[ThetaSection.one()]], "theta"), E[0][0])
    if n == 2:
        det = E[0][0] * E[1][1] - E[0][1] * E[1][0]
        adj = [[E[1][1], -E[0][1]], [-E[1][0], E[0][0]]]
        return OperatorMatrix(A.basis, adj, "theta"), det
    if n == 3:
        def minor(i, j):
            rows = [r for r in range(3) if r != i]
            cols = [c for c in range(3) if c != j]
            return (E[rows[0]][cols[0]] * E[rows[1]][cols[1]]
                    - E[rows[0]][cols[1]] * E[rows[1]][cols[0]])
        det = ThetaSection.zero()
        for j in range(3):
            term = E[0][j] * minor(0, j)
            det = det + (term if j % 2 == 0 else -term)
        adj = [[minor(j, i) if (i + j) % 2 == 0 else -minor(j, i)
                for j in range(3)] for i in range(3)]
        return OperatorMatrix(A.basis, adj, "theta"), det
    raise ValueError("adjugate implemented for n <= 3")


# ---------------------------------------------------------------------------
# elliptic stable envelopes
# ---------------------------------------------------------------------------

def shenfeld_character(v: VarietyData, p: FixedPoint) -> Character:
    """Off-shell repelling data: N^(1/2)_<0 + hbar^-1 dual(N^(1/2)_>0)."""
    neg, _, pos = v.split_offshell(p, v.polarization)
    return neg + pos.dual() * v.hbar.inv()


def shenfeld_factor(v: VarietyData, p: FixedPoint) -> ThetaSection:
    return theta_lift(shenfeld_character(v, p))


def root_atoms(v: VarietyData, p: FixedPoint) -> list[Monomial]:
    """Zero-pairing tangent weights that bind to 1 at p, one per hbar-pair."""
    out = []
    bind = p.binding_map()
    for m, k in v.tangent.weights.items():
        if k <= 0 or m.is_one():
            continue
        if v.point_pairing(p, m) != 0:
            continue
        c, bound = m.substitute(bind)
        if c == 1 and bound.is_one():
            out.append(m)
    out.sort(key=Monomial.sort_key)
    if len(out) != v.n_roots:
        raise ValueError("expected %d root atoms at %s, found %s"
                         % (v.n_roots, p.name, [m.render() for m in out]))
    return out


def _solve_integer_system(rows, rhs):
    """Solve an exact linear system; require a unique integral solution."""
    m = [list(map(Fraction, r)) + [Fraction(c)] for r, c in zip(rows, rhs)]
    ncols = len(rows[0])
    pivots = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][c]), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        m[r] = [x / m[r][c] for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c]:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
    for i in range(r, len(m)):
        if m[i][ncols]:
            raise ValueError("constraint system inconsistent: %s" % (rhs,))
    if len(pivots) != ncols:
        raise ValueError("constraint system underdetermined (matrix %s)" % (rows,))
    sol = [Fraction(0)] * ncols
    for i, c in enumerate(pivots):
        sol[c] = m[i][ncols]
    if any(s.denominator != 1 for s in sol):
        raise ValueError("constraint solution is not integral: %s" % (sol,))
    return [int(s) for s in sol]


def root_factor_exponents(v: VarietyData, p: FixedPoint):
    """Solve the quasiperiod constraints for the root-factor exponents.

    Returns (atoms, s1, s2) with the refinement
    Rt = prod_j theta(nu_j z^s1_j u^s2_j)/theta(z^s1_j u^s2_j),
    u the hbar unit (hbar for the Grassmannian family, t1 t2 for Hilbert).
    """
    atoms = root_atoms(v, p)
    k = len(atoms)
    x_vids = v.x_vids()
    sh = shenfeld_character(v, p)
    u = v.hbar.inv() if v.family == "hilbert" else v.hbar

    # z -> qz: x-content of the automorphy factor is det(taut)^sign
    rows = [[nu.exponent(xv) for nu in atoms] for xv in x_vids]
    rhs = [Fraction(-v.taut_det_sign)] * k
    s1 = _solve_integer_system(rows, rhs)

    # hbar coordinates to keep out of the diff-variable quasiperiods
    if v.family == "hilbert":
        coords = [var_id("t1"), var_id("t2")]
    else:
        coords = [var_id("hbar")]
    # differentiation variables: Chern roots, except the Grassmannian worked
    # example (k >= 2) which pins the exponents through the occupied a-slots
    if v.family == "grassmannian" and v.n_roots >= 2:
        dvars = [var_id("a%d" % j) for j in sorted(p.label)]
    else:
        dvars = x_vids
    rows2, rhs2 = [], []
    for dv in dvars:
        for c in coords:
            budget = Fraction(0)
            for m, e in sh.weights.items():
                budget += -e * m.exponent(dv) * m.exponent(c)
            row = []
            rhs_val = budget
            for nu in atoms:
                d = nu.exponent(dv)
                row.append(d * u.exponent(c))
                rhs_val -= d * nu.exponent(c)
            rows2.append(row)
            rhs2.append(rhs_val)
    s2 = _solve_integer_system(rows2, rhs2)
    return atoms, s1, s2


def root_factor_solve(v: VarietyData, p: FixedPoint) -> ThetaSection:
    atoms, s1, s2 = root_factor_exponents(v, p)
    u = v.hbar.inv() if v.family == "hilbert" else v.hbar
    zm = Monomial.var("z")
    out = ThetaSection.one()
    for nu, e1, e2 in zip(atoms, s1, s2):
        shift = (zm ** e1) * (u ** e2)
        out = out * (ThetaSection.theta(nu * shift) / ThetaSection.theta(shift))
    return out


def offshell_stab(v: VarietyData, p: FixedPoint) -> ThetaSection:
    return shenfeld_factor(v, p) * root_factor_solve(v, p)


def restrict_offshell(v: VarietyData, section: ThetaSection, r: FixedPoint,
                      flop: bool = False) -> ThetaSection:
    """Sum of the section over all injective Chern-root assignments at r."""
    src = r.flop_binding if flop else r.binding
    xv = v.x_vids()
    total = ThetaSection.zero()
    for perm in itertools.permutations(src):
        bind = {xv[i]: (Fraction(1), perm[i]) for i in range(len(xv))}
        total = total + section.substitute(bind)
    return total


def elliptic_stab_matrix(v: VarietyData, flop: bool = False) -> OperatorMatrix:
    sections = [offshell_stab(v, p) for p in v.points]
    n = len(v.points)
    entries = [[restrict_offshell(v, sections[i], v.points[j], flop)
                for j in range(n)] for i in range(n)]
    M = OperatorMatrix([p.name for p in v.points], entries, "theta",
                       {"variety": v.name, "kind": "elliptic",
                        "flop": flop, "layout": "rows: envelope point p, "
                        "cols: restriction point r"})
    _check_triangular(v, M, lower=flop)
    return M


def _check_triangular(v: VarietyData, M: OperatorMatrix, lower: bool) -> None:
    for i in range(M.n):
        for j in range(M.n):
            violates = (i > j) if not lower else (i < j)
            if violates and not M.entries[i][j].is_zero():
                raise AssertionError(
                    "triangularity violated at (%s, %s)"
                    % (M.basis[i], M.basis[j]))
        if M.entries[i][i].is_zero():
            raise AssertionError("diagonal vanishes at %s" % M.basis[i])


def normalized_T(M: OperatorMatrix) -> OperatorMatrix:
    """T~[p][r] = Stab(p)|_r / Stab(r)|_r with unit diagonal."""
    n = M.n
    entries = [[M.entries[i][j] / M.entries[j][j] for j in range(n)]
               for i in range(n)]
    meta = dict(M.meta)
    meta["kind"] = "normalized"
    return OperatorMatrix(M.basis, entries, "theta", meta)


def check_balanced_matrix(v: VarietyData, M: OperatorMatrix) -> None:
    """T~ entries must be balanced in the equivariant and Kaehler variables."""
    avids = _equivariant_vids(v)
    zvid = var_id("z")
    for i in range(M.n):
        for j in range(M.n):
            e = M.entries[i][j]
            if e.is_zero():
                continue
            ok, wit = e.is_balanced(avids)
            if not ok:
                raise AssertionError("entry (%d,%d) unbalanced in a: %s"
                                     % (i, j, wit))
            ok, wit = e.is_balanced([zvid])
            if not ok:
                raise AssertionError("entry (%d,%d) unbalanced in z: %s"
                                     % (i, j, wit))


def _equivariant_vids(v: VarietyData) -> list[int]:
    return sorted(v.chamber.cochar)


# ---------------------------------------------------------------------------
# limits and factorization
# ---------------------------------------------------------------------------

def matrix_limit_q0(M: OperatorMatrix, shift) -> OperatorMatrix:
    """Entrywise q->0 limit with the given variable shift; all nonzero
    entries must sit at q-order 0."""
    n = M.n
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            e = M.entries[i][j]
            if e.is_zero():
                out[i][j] = LaurentExpr.zero()
                continue
            val, order = e.limit_q0(shift)
            if order < 0:
                raise ArithmeticError(
                    "entry (%d,%d) diverges at order %s" % (i, j, order))
            out[i][j] = val if order == 0 else LaurentExpr.zero()
    meta = dict(M.meta)
    meta["shift"] = {var_name(k): str(w) for k, w in shift.items()}
    return OperatorMatrix(M.basis, out, "rational", meta)


def limit_matrix(v: VarietyData, M: OperatorMatrix, shift_var: str, w) -> OperatorMatrix:
    w = Fraction(w)
    if shift_var == "z":
        shift = {var_id("z"): w}
    elif shift_var == "a":
        shift = v.a_shift(w)
    else:
        raise ValueError("shift_var must be 'z' or 'a'")
    return matrix_limit_q0(M, shift)


def side_limit(M: OperatorMatrix, direction: str, vid=None) -> OperatorMatrix:
    vid = var_id("z") if vid is None else vid
    return M.map_entries(lambda e: e.limit_along(vid, direction))


def factor_wall_limit(v: VarietyData, L: OperatorMatrix, side: str, w):
    """Split a wall limit as L = Z_part * A_part.

    side z_to_0 isolates the A-part as lim_{z->0} L (the slope w+eps factor);
    z_to_infinity uses z->infinity (slope w-eps).  The mirrored a-sides swap
    the roles of the variables.
    """
    w = Fraction(w)
    if side in ("z_to_0", "z_to_infinity"):
        direction = "to_zero" if side == "z_to_0" else "to_infinity"
        A = side_limit(L, direction, var_id("z"))
        Z = mat_mul(L, mat_inv(A))
        _assert_no_vars(A, [var_id("z")], "A-part")
        _assert_hbar_only(v, Z, w, "Z-part")
        return Z, A
    if side in ("a_to_0", "a_to_infinity"):
        direction = "to_zero" if side == "a_to_0" else "to_infinity"
        ZP = _equivariant_side_limit(v, L, direction)
        A = mat_mul(mat_inv(ZP), L)
        _assert_no_vars(ZP, _equivariant_vids(v), "Z-part")
        return ZP, A
    raise ValueError("unknown side %r" % side)


def _equivariant_side_limit(v: VarietyData, L: OperatorMatrix, direction: str):
    """Limit along the chamber direction a -> 0 or infinity, entrywise."""
    eps = var_id("_eps")
    scale = {vid: (Fraction(1), Monomial({vid: 1}) * Monomial({eps: c}))
             for vid, c in v.chamber.cochar.items()}
    scaled = L.map_entries(lambda e: e.substitute(scale))
    return scaled.map_entries(lambda e: e.limit_along(eps, direction))


def depends_on(e: LaurentExpr, vid: int) -> bool:
    """Exact dependence test: substitute a perfect-square constant and
    compare (a nonconstant rational function never equals one of its values)."""
    sub = e.substitute({vid: (Fraction(4), Monomial.one())})
    return not (e == sub)


def _assert_no_vars(M: OperatorMatrix, vids, label: str) -> None:
    for i in range(M.n):
        for j in range(M.n):
            for vid in vids:
                if depends_on(M.entries[i][j], vid):
                    raise AssertionError("%s entry (%d,%d) depends on %s"
                                         % (label, i, j, var_name(vid)))


def _assert_hbar_only(v: VarietyData, Z: OperatorMatrix, w: Fraction,
                      label: str) -> None:
    """After the fractional chi-twist, the Z-part is a (z, hbar) matrix."""
    twist = [LaurentExpr.from_monomial(v.chi(p) ** w) for p in v.points]
    conj = mat_mul(mat_mul(diag_matrix(Z.basis, [t.inv() for t in twist]), Z),
                   diag_matrix(Z.basis, twist))
    if v.family == "hilbert":
        # function of t1 t2 alone: invariant under t1 -> t1 s, t2 -> t2 / s
        s = Monomial.var("_scl")
        t1, t2 = var_id("t1"), var_id("t2")
        move = {t1: (Fraction(1), Monomial.var("t1") * s),
                t2: (Fraction(1), Monomial.var("t2") * s.inv())}
        for i in range(Z.n):
            for j in range(Z.n):
                e = conj.entries[i][j]
                if not (e == e.substitute(move)):
                    raise AssertionError(
                        "%s entry (%d,%d) is not a (z, hbar) function"
                        % (label, i, j))
    else:
        _assert_no_vars(conj, _equivariant_vids(v), label)


# ---------------------------------------------------------------------------
# K-theoretic stable envelopes
# ---------------------------------------------------------------------------

def kstab_offshell(v: VarietyData, p: FixedPoint, chamber_sign: int = 1) -> LaurentExpr:
    """Symmetrized off-shell K-theory class (off-shell Bethe vector)."""
    if chamber_sign not in (1, -1):
        raise ValueError("chamber_sign must be +-1")
    if chamber_sign == -1:
        if v.family != "hilbert":
            raise ValueError("opposite chamber implemented for Hilbert only")
        swapped = _swap_t(kstab_offshell_kernel(v, _transpose_point(v, p)))
        return _symmetrize(v, swapped)
    return _symmetrize(v, kstab_offshell_kernel(v, p))


def kstab_offshell_kernel(v: VarietyData, p: FixedPoint) -> LaurentExpr:
    """Unsymmetrized kernel: wedge of the dual repelling part, off shell."""
    neg, _, _ = v.split_offshell(p, v.tangent)
    return wedge_alt(neg.dual())


def _symmetrize(v: VarietyData, kernel: LaurentExpr) -> LaurentExpr:
    xv = v.x_vids()
    out = LaurentExpr.zero()
    for perm in itertools.permutations(range(len(xv))):
        bind = {xv[i]: (Fraction(1), Monomial({xv[perm[i]]: 1}))
                for i in range(len(xv))}
        out = out + kernel.substitute(bind)
    return out


def _swap_t(expr: LaurentExpr) -> LaurentExpr:
    t1, t2 = var_id("t1"), var_id("t2")
    bind = {t1: (Fraction(1), Monomial({t2: 1})),
            t2: (Fraction(1), Monomial({t1: 1}))}
    return expr.substitute(bind)


def _transpose_point(v: VarietyData, p: FixedPoint) -> FixedPoint:
    from .varieties import _transpose
    lam = _transpose(p.label)
    for pt in v.points:
        if pt.label == lam:
            return pt
    raise ValueError("transpose point missing")


def kstab_diagonal(v: VarietyData, p: FixedPoint) -> LaurentExpr:
    """Prescribed diagonal sqrt(det N^- / det N^(1/2)) * wedge(dual N^-)."""
    nminus = v.repelling_at(p)
    half = v.polarization_at(p)
    ratio = nminus.det() / half.det()
    root = ratio ** Fraction(1, 2)
    return LaurentExpr.from_monomial(root) * wedge_alt(nminus.dual())


def a_degree_range(v: VarietyData, e: LaurentExpr):
    """Chamber-degree interval of a Laurent polynomial entry."""
    if not e.is_polynomial():
        raise ValueError("entry is not polynomial: %s" % e.render())
    if e.is_zero():
        return None
    degs = [v.chamber.pairing(m) for m in e.num]
    return min(degs), max(degs)


class Slope:
    """Rational slope with an optional infinitesimal side."""

    def __init__(self, value, side: int = 0):
        self.value = Fraction(value)
        self.side = int(side)  # 0 regular, +1/-1 infinitesimal

    @staticmethod
    def parse(text: str) -> "Slope":
        side = 0
        if text.endswith(":+eps"):
            side, text = 1, text[:-5]
        elif text.endswith(":-eps"):
            side, text = -1, text[:-5]
        return Slope(Fraction(text), side)

    def __repr__(self):
        tag = {0: "", 1: "+eps", -1: "-eps"}[self.side]
        return "%s%s" % (self.value, tag)


def _window_allows(v, slope: Slope, lo_ok, hi_ok, chi_p, chi_r, emin, emax,
                   dlo, dhi):
    """Window inclusion with infinitesimal tie-breaking."""
    w = slope.value
    shift = w * (chi_r - chi_p)
    lo, hi = dlo + shift, dhi + shift
    eps = slope.side * (chi_r - chi_p)
    hi_fine = emax < hi or (emax == hi and eps >= 0)
    lo_fine = emin > lo or (emin == lo and eps <= 0)
    return lo_fine and hi_fine


def window_violations(v: VarietyData, M: OperatorMatrix, slope: Slope):
    """Off-diagonal entries whose a-Newton polygon escapes the shifted
    diagonal window."""
    bad = []
    chi = [v.chamber.pairing(v.chi(p)) for p in v.points]
    diag_rng = [a_degree_range(v, M.entries[j][j]) for j in range(M.n)]
    for i in range(M.n):
        for j in range(M.n):
            if i == j or M.entries[i][j].is_zero():
                continue
            rng = a_degree_range(v, M.entries[i][j])
            dlo, dhi = diag_rng[j]
            if not _window_allows(v, slope, None, None, chi[i], chi[j],
                                  rng[0], rng[1], dlo, dhi):
                bad.append((i, j, rng, (dlo, dhi)))
    return bad


def _chamber_layer(v: VarietyData, e: LaurentExpr, top: bool) -> tuple[Fraction, LaurentExpr]:
    degs = {m: v.chamber.pairing(m) for m in e.num}
    extreme = max(degs.values()) if top else min(degs.values())
    layer = {m: c for m, c in e.num.items() if degs[m] == extreme}
    return extreme, LaurentExpr(layer)


def kstab_matrix(v: VarietyData, slope: Slope, chamber_sign: int = 1,
                 max_steps: int = 60) -> OperatorMatrix:
    """Restrict off-shell K classes, normalize diagonals, then reduce rows
    until every off-diagonal entry satisfies the slope window."""
    n = len(v.points)
    order = list(range(n)) if chamber_sign == 1 else list(range(n))[::-1]
    secs = [kstab_offshell(v, p, chamber_sign) for p in v.points]
    raw = [[_restrict_rational(v, secs[i], v.points[j]) for j in range(n)]
           for i in range(n)]
    # normalize rows to the prescribed diagonal
    for i in range(n):
        d = raw[i][i]
        if d.is_zero():
            raise AssertionError("raw diagonal vanishes at %s" % v.points[i].name)
        scale = kstab_diagonal(v, v.points[i]) / d
        mono = scale.as_monomial()
        if mono is None:
            raise AssertionError("diagonal normalization is not monomial: %s"
                                 % scale.render())
        raw[i] = [e * scale for e in raw[i]]
    M = OperatorMatrix([p.name for p in v.points], raw, "rational",
                       {"variety": v.name, "kind": "kstab",
                        "slope": repr(slope), "chamber": chamber_sign})
    _check_triangular_rational(M, lower=(chamber_sign == -1))
    # Gram-Schmidt against the window, columns processed outward from the
    # diagonal so earlier corrections stay valid
    chi = [v.chamber.pairing(v.chi(p)) for p in v.points]
    cols = range(n) if chamber_sign == 1 else range(n - 1, -1, -1)
    for j in cols:
        rows = range(j - 1, -1, -1) if chamber_sign == 1 else range(j + 1, n)
        for i in rows:
            for _ in range(max_steps):
                e = M.entries[i][j]
                if e.is_zero():
                    break
                rng = a_degree_range(v, e)
                dlo, dhi = a_degree_range(v, M.entries[j][j])
                if _window_allows(v, slope, None, None, chi[i], chi[j],
                                  rng[0], rng[1], dlo, dhi):
                    break
                shift = slope.value * (chi[j] - chi[i])
                top_bad = rng[1] > dhi + shift or (
                    rng[1] == dhi + shift
                    and slope.side * (chi[j] - chi[i]) < 0)
                if top_bad:
                    deg_e, layer_e = _chamber_layer(v, e, top=True)
                    deg_d, layer_d = _chamber_layer(v, M.entries[j][j], top=True)
                else:
                    deg_e, layer_e = _chamber_layer(v, e, top=False)
                    deg_d, layer_d = _chamber_layer(v, M.entries[j][j], top=False)
                c = layer_e / layer_d
                if not c.is_polynomial():
                    raise AssertionError(
                        "window unachievable at (%d,%d): non-polynomial "
                        "correction %s" % (i, j, c.render()))
                M.entries[i] = [ei - c * ej for ei, ej in
                                zip(M.entries[i], M.entries[j])]
            else:
                raise AssertionError("window unachievable at (%d,%d)" % (i, j))
    if window_violations(v, M, slope):
        raise AssertionError("window violations remain: %s"
                             % window_violations(v, M, slope))
    return M


def _restrict_rational(v: VarietyData, sym: LaurentExpr, r: FixedPoint) -> LaurentExpr:
    return sym.substitute(r.binding_map())


def _check_triangular_rational(M: OperatorMatrix, lower: bool) -> None:
    for i in range(M.n):
        for j in range(M.n):
            violates = (i > j) if not lower else (i < j)
            if violates and not M.entries[i][j].is_zero():
                raise AssertionError("K-matrix not triangular at (%d,%d)" % (i, j))


def normalized_kstab(M: OperatorMatrix) -> OperatorMatrix:
    n = M.n
    entries = [[M.entries[i][j] / M.entries[j][j] for j in range(n)]
               for i in range(n)]
    return OperatorMatrix(M.basis, entries, "rational", M.meta)


# ---------------------------------------------------------------------------
# monodromy, wall operators, QDE
# ---------------------------------------------------------------------------

def det_half_diag(v: VarietyData) -> list[Monomial]:
    return [v.polarization_at(p).det() for p in v.points]


class MonodromyFraction:
    """Theta-matrix pair (numerator matrix, determinant scalar) standing for
    N * det^-1; limits are taken entrywise as ratios of section limits."""

    def __init__(self, num: OperatorMatrix, det: ThetaSection):
        self.num = num
        self.det = det

    def limit(self, shift) -> OperatorMatrix:
        dval, dorder = self.det.limit_q0(shift)
        n = self.num.n
        out = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                e = self.num.entries[i][j]
                if e.is_zero():
                    out[i][j] = LaurentExpr.zero()
                    continue
                val, order = e.limit_q0(shift)
                rel = order - dorder
                if rel < 0:
                    raise ArithmeticError("monodromy limit diverges at (%d,%d)"
                                          % (i, j))
                out[i][j] = val / dval if rel == 0 else LaurentExpr.zero()
        return OperatorMatrix(self.num.basis, out, "rational")


def monodromy_fraction(v: VarietyData, mode: str) -> MonodromyFraction:
    """Kahler mode: det T^(1/2) Stab^-1 Stab_flop (det T^(1/2))^-1.
    Equivariant mode: Stab_C Stab_-C^-1."""
    if mode == "kahler":
        stab = elliptic_stab_matrix(v, flop=False)
        flop = elliptic_stab_matrix(v, flop=True)
        adj, det = theta_mat_adjugate(stab)
        num = theta_mat_mul(adj, flop)
        d = det_half_diag(v)
        conj = [[num.entries[i][j]
                 * ThetaSection.scalar(LaurentExpr.from_monomial(d[i] / d[j]))
                 for j in range(num.n)] for i in range(num.n)]
        return MonodromyFraction(OperatorMatrix(num.basis, conj, "theta"), det)
    if mode == "equivariant":
        stab = elliptic_stab_matrix(v, flop=False)
        opp = opposite_stab_matrix(v)
        adj, det = theta_mat_adjugate(opp)
        num = theta_mat_mul(stab, adj)
        return MonodromyFraction(num, det)
    raise ValueError("mode must be kahler or equivariant")


_OPP_CACHE: dict = {}


def opposite_stab_matrix(v: VarietyData) -> OperatorMatrix:
    """Elliptic envelopes for the opposite chamber, same point order."""
    from .varieties import build_grassmannian, build_hilbert
    if v.name not in _OPP_CACHE:
        if v.family == "grassmannian":
            n = max(max(p.label) for p in v.points)
            k = len(next(iter(v.points)).label)
            vopp = build_grassmannian(k, n)
        else:
            vopp = build_hilbert(sum(v.points[0].label))
        vopp.chamber = v.chamber.opposite()
        vopp.points = list(reversed(vopp.points))
        _OPP_CACHE[v.name] = vopp
    vopp = _OPP_CACHE[v.name]
    M = elliptic_stab_matrix(vopp, flop=False)
    # reorder back to v's point order
    idx = {name: i for i, name in enumerate(M.basis)}
    perm = [idx[p.name] for p in v.points]
    entries = [[M.entries[pi][pj] for pj in perm] for pi in perm]
    return OperatorMatrix([p.name for p in v.points], entries, "theta",
                          {"variety": v.name, "kind": "elliptic",
                           "chamber": "opposite"})


def monodromy_ops(v: VarietyData, mode: str, walls=None):
    """Monodromy limits at the walls and the wall operators they generate.

    Returns dict with Mon_w, Mon_(w+eps) = lim_{z->0} Mon_w, and
    B_w = Mon_w * Mon_(w+eps)^-1 for each wall w.
    """
    frac = monodromy_fraction(v, mode)
    if walls is None:
        walls = v.walls_window
    zv = var_id("z")
    out = {}
    for w in walls:
        mon = frac.limit({zv: Fraction(w)})
        plus = side_limit(mon, "to_zero")
        minus = side_limit(mon, "to_infinity")
        wall_op = mat_mul(mon, mat_inv(plus))
        out[Fraction(w)] = {"mon": mon, "mon_plus": plus, "mon_minus": minus,
                            "wall": wall_op}
    return out


def classical_multiplication(v: VarietyData) -> OperatorMatrix:
    return diag_matrix([p.name for p in v.points],
                       [LaurentExpr.from_monomial(v.chi(p)) for p in v.points])


def glue_and_qde(v: VarietyData):
    """Gluing matrix and quantum difference operator.

    T*P^1: Glue(z) = 1 + z/(1 - hbar z) Glue_deg1 with the degree-1 block
    extracted from the wall operator at 0; M(z) = Glue(zq) O(1).
    Hilb^2: M(z) = B_0 B_(1/2) O(1) from the monodromy wall operators.
    """
    zv = var_id("z")
    qv = var_id("q")
    if v.name == "tp1":
        ops = monodromy_ops(v, "kahler", walls=[Fraction(0)])
        W = ops[Fraction(0)]["wall"]
        winf = side_limit(W, "to_infinity")
        hbar_inv = LaurentExpr.from_monomial(v.hbar.inv())
        gd1 = mat_sub(winf, rational_identity(W.basis)).map_entries(
            lambda e: e * hbar_inv)
        z = LaurentExpr.var("z")
        hb = LaurentExpr.from_monomial(v.hbar)
        coef = z / (LaurentExpr.const(1) - hb * z)
        glue = mat_sub(rational_identity(W.basis),
                       gd1.map_entries(lambda e: -(e * coef)))
        zq = {zv: (Fraction(1), Monomial.var("z") * Monomial.var("q"))}
        M = mat_mul(mat_substitute(glue, zq), classical_multiplication(v))
        return {"glue_degree1": gd1, "glue": glue, "M": M,
                "wall_fixed_basis": W}
    if v.name == "hilb2":
        ops = monodromy_ops(v, "kahler", walls=[Fraction(0), Fraction(1, 2)])
        W0 = ops[Fraction(0)]["wall"]
        Wh = ops[Fraction(1, 2)]["wall"]
        rootu = (Monomial.var("t1") * Monomial.var("t2")) ** Fraction(1, 2)
        sub0 = {zv: (Fraction(1), Monomial.var("z") * Monomial.var("q") / rootu)}
        subh = {zv: (Fraction(1), Monomial.var("z")
                     * Monomial.var("q") ** Fraction(1, 2) / rootu)}
        B0 = mat_substitute(W0, sub0)
        Bh = mat_substitute(Wh, subh)
        M = mat_mul(mat_mul(B0, Bh), classical_multiplication(v))
        return {"B0": B0, "Bhalf": Bh, "M": M}
    raise ValueError("glue/QDE unsupported for %s" % v.name)


def shift_operator(v: VarietyData, M: OperatorMatrix, shift_var: str = "a2",
                   degree: int = 2):
    """Solve M(z)|_{a->aq} S(z) = S(qz) M(z) for a polynomial-in-z ansatz.

    Uniqueness is up to a scalar in Q(a, hbar, q); the scalar is fixed by the
    displayed T*P1 normalization of the (1,1) entry at z = 0.
    """
    n = M.n
    zv = var_id("z")
    qm = Monomial.var("q")
    av = var_id(shift_var)
    Mshift = mat_substitute(M, {av: (Fraction(1), Monomial.var(shift_var) * qm)})
    # unknown coefficients c[i][j][m] of z^m in S[i][j];
    # residual(i,j) = sum_k Mshift[i][k] S[k][j](z) - S[i][k](qz) M[k][j]
    unknowns = [(i, j, k) for i in range(n) for j in range(n)
                for k in range(degree + 1)]
    pos = {u: t for t, u in enumerate(unknowns)}
    zmono = Monomial.var("z")
    system = []
    for i in range(n):
        for j in range(n):
            coeffs = {}
            for k in range(n):
                a = Mshift.entries[i][k]
                b = M.entries[k][j]
                for m in range(degree + 1):
                    zm = LaurentExpr.from_monomial(zmono ** m)
                    zqm = LaurentExpr.from_monomial(zmono ** m * qm ** m)
                    cu = coeffs.get((k, j, m), LaurentExpr.zero())
                    coeffs[(k, j, m)] = cu + a * zm
                    cu = coeffs.get((i, k, m), LaurentExpr.zero())
                    coeffs[(i, k, m)] = cu - zqm * b
            # clear denominators and split by z-degree
            from .rings import _poly_mul
            common = {Monomial.one(): Fraction(1)}
            for u, expr in coeffs.items():
                if not expr.is_zero() and not expr.is_polynomial():
                    common = _poly_mul(common, expr.den)
            common_expr = LaurentExpr(dict(common), None, normalize=False)
            slots: dict = {}
            for u, expr in coeffs.items():
                if expr.is_zero():
                    continue
                cleared = expr * common_expr
                if not cleared.is_polynomial():
                    cleared = LaurentExpr(
                        _poly_mul(expr.num, _poly_div_exact(common, expr.den)))
                for mono, c in cleared.num.items():
                    zdeg = mono.exponent(zv)
                    rest = mono * (zmono ** -zdeg)
                    slot = slots.setdefault(zdeg, {})
                    slot[u] = slot.get(u, LaurentExpr.zero()) + \
                        LaurentExpr.from_monomial(rest, c)
            system.extend(slots.values())
    sol = _solve_homogeneous(system, unknowns, pos)
    entries = [[LaurentExpr.zero()] * n for _ in range(n)]
    for (i, j, k), t in pos.items():
        entries[i][j] = entries[i][j] + sol[t] * LaurentExpr.from_monomial(zmono ** k)
    return OperatorMatrix(M.basis, entries, "rational",
                          {"ansatz_degree": degree, "shift": shift_var})


def _poly_div_exact(a, b):
    from .rings import _poly_try_div
    q = _poly_try_div(a, b)
    if q is None:
        raise ArithmeticError("expected exact polynomial division")
    return q


def _solve_homogeneous(system, unknowns, pos):
    """Nullspace of a sparse system over the rational-function field; must be
    one-dimensional."""
    nu = len(unknowns)
    rows = []
    for row in system:
        dense = [LaurentExpr.zero()] * nu
        for u, c in row.items():
            dense[pos[u]] = c
        rows.append(dense)
    # Gaussian elimination
    pivots = {}
    r = 0
    for c in range(nu):
        piv = None
        for i in range(r, len(rows)):
            if not rows[i][c].is_zero():
                piv = i
                break
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        inv = rows[r][c].inv()
        rows[r] = [e * inv for e in rows[r]]
        for i in range(len(rows)):
            if i != r and not rows[i][c].is_zero():
                f = rows[i][c]
                rows[i] = [e - f * g for e, g in zip(rows[i], rows[r])]
        pivots[c] = r
        r += 1
    free = [c for c in range(nu) if c not in pivots]
    if len(free) != 1:
        raise ArithmeticError(
            "shift ansatz gives a %d-dimensional solution space; "
            "bump the degree" % len(free))
    f = free[0]
    sol = [LaurentExpr.zero()] * nu
    sol[f] = LaurentExpr.const(1)
    for c, rr in pivots.items():
        sol[c] = -rows[rr][f]
    return sol


# ---------------------------------------------------------------------------
# toy vertex
# ---------------------------------------------------------------------------

def q_pochhammer(x: LaurentExpr, d: int) -> LaurentExpr:
    """(x)_d = (1-x)(1-qx)...(1-q^(d-1)x)."""
    q = LaurentExpr.var("q")
    out = LaurentExpr.const(1)
    p = LaurentExpr.const(1)
    for _ in range(d):
        out = out * (LaurentExpr.const(1) - p * x)
        p = p * q
    return out


def vertex_tp0(stability: str = "x_nonzero", order: int = 8):
    """Toy vertex for T*P^0: z-series coefficients in Q(sqrt(hbar), q).

    x_nonzero: V_0(z) = sum_d (-z/sqrt h)^d (h)_d/(q)_d.
    y_nonzero: the z->infinity-normalized solution, a series in 1/z.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    h = LaurentExpr.var("hbar")
    rooth = LaurentExpr.var("hbar", Fraction(1, 2))
    if stability == "x_nonzero":
        coeffs = []
        for d in range(order + 1):
            c = ((-1) ** d) * q_pochhammer(h, d) / (q_pochhammer(LaurentExpr.var("q"), d) * rooth ** d)
            coeffs.append(c)
        return coeffs
    if stability == "y_nonzero":
        # prod_{i>=1} (1 - q^i sqrt(h)/z)/(1 - q^i/(z sqrt(h))) as a 1/z series
        q = LaurentExpr.var("q")
        coeffs = []
        for n in range(order + 1):
            acc = LaurentExpr.zero()
            for a in range(n + 1):
                b = n - a
                ea = ((-1) ** a) * (q ** Fraction(a * (a + 1), 2)) / q_pochhammer(q, a)
                hb = (q ** b) / q_pochhammer(q, b)
                acc = acc + ea * hb * rooth ** a * rooth ** (-b)
            coeffs.append(acc)
        return coeffs
    raise ValueError("stability must be x_nonzero or y_nonzero")


def vertex_product_form(order: int) -> list[LaurentExpr]:
    """z-coefficients of prod_{i>=0}(1 - q^i z/sqrt h)/(1 - q^i z sqrt h),
    via elementary/complete symmetric functions of {q^i}_{i>=0}."""
    q = LaurentExpr.var("q")
    rooth = LaurentExpr.var("hbar", Fraction(1, 2))
    coeffs = []
    for n in range(order + 1):
        acc = LaurentExpr.zero()
        for a in range(n + 1):
            b = n - a
            ea = ((-1) ** a) * (q ** Fraction(a * (a - 1), 2)) / q_pochhammer(q, a)
            hb = LaurentExpr.const(1) / q_pochhammer(q, b)
            acc = acc + ea * hb * (rooth ** -a) * (rooth ** b)
        coeffs.append(acc)
    return coeffs
