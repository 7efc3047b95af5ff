"""Built-in ensembles: manufactured smooth/layered problems and custom
constant-coefficient families.

Manufactured members are generated symbolically: given an exact solution
u(x, y, t), a positive inverse-diffusion c(x, y) and a velocity field, the
flux q = -(1/c) grad u, source f = u_t + div q + beta . grad u, boundary
datum g = u and initial value u(., 0) are derived with sympy and lambdified
to vectorized numpy callables once at construction time.
"""

import numpy as np
import sympy

from .solver import Member, ProblemSpec

_X, _Y, _T = sympy.symbols("x y t")


class SeparableField:
    """A field sum_i T_i(t) S_i(x, y) with cached spatial factors.

    Time loops evaluate data at the same quadrature-point arrays every
    step; splitting off the time dependence makes each call a handful of
    scalar-times-array updates.  Spatial values are cached by the identity
    of the coordinate arrays, which are treated as immutable.
    """

    MAX_CACHED_GRIDS = 8

    def __init__(self, t_fns, s_fns):
        self._t_fns = t_fns
        self._s_fns = s_fns
        self._cache = {}

    def _spatial(self, x, y):
        key = (id(x), id(y))
        hit = self._cache.get(key)
        if hit is not None and hit[0] is x and hit[1] is y:
            return hit[2]
        shape = np.shape(x)
        svals = [np.broadcast_to(np.asarray(s(x, y), dtype=float), shape)
                 for s in self._s_fns]
        if len(self._cache) >= self.MAX_CACHED_GRIDS:
            self._cache.clear()
        self._cache[key] = (x, y, svals)
        return svals

    def __call__(self, x, y, t):
        svals = self._spatial(x, y)
        out = np.zeros(np.shape(x))
        for tf, sv in zip(self._t_fns, svals):
            out += float(tf(t)) * sv
        return out


def _separate_time(expr):
    """Split an expression into [(T_i(t), S_i(x, y))] groups, or None."""
    groups = {}
    for term in sympy.Add.make_args(expr):
        t_part, xy_part = term.as_independent(_X, _Y)
        if xy_part.has(_T):
            return None  # mixed factor such as sin(t + x)
        key = sympy.srepr(t_part)
        if key in groups:
            groups[key] = (t_part, groups[key][1] + xy_part)
        else:
            groups[key] = (t_part, xy_part)
    if len(groups) > 8:
        return None
    return list(groups.values())


def _scalar_fn(expr):
    expr = sympy.sympify(expr)
    parts = _separate_time(expr)
    if parts is not None:
        t_fns = [sympy.lambdify((_T,), tp, modules="math")
                 for tp, _ in parts]
        s_fns = [sympy.lambdify((_X, _Y), sp, modules="numpy")
                 for _, sp in parts]
        return SeparableField(t_fns, s_fns)
    fn = sympy.lambdify((_X, _Y, _T), expr, modules="numpy")

    def wrapped(x, y, t):
        out = np.asarray(fn(x, y, t), dtype=float)
        if out.shape != np.shape(x):
            out = np.broadcast_to(out, np.shape(x)).copy()
        return out

    return wrapped


class VectorField:
    """Vector field with separately evaluable components."""

    def __init__(self, fx, fy):
        self.fx = fx
        self.fy = fy

    def __call__(self, x, y, t):
        return np.stack([self.fx(x, y, t), self.fy(x, y, t)], axis=-1)


def _vector_fn(expr_x, expr_y):
    return VectorField(_scalar_fn(expr_x), _scalar_fn(expr_y))


def stack_separable_fields(fields, x, y):
    """Joint evaluator for several time-separable fields at fixed points.

    Returns a callable t -> (len(fields), npts) built from one einsum, or
    None when any field is not a SeparableField.  The coordinate arrays
    are bound at stacking time and treated as immutable.
    """
    if not all(isinstance(f, SeparableField) for f in fields):
        return None
    nterm = max(len(f._t_fns) for f in fields)
    npts = np.shape(x)[0]
    S = np.zeros((len(fields), nterm, npts))
    t_fns = []
    for j, f in enumerate(fields):
        svals = f._spatial(x, y)
        for i, sv in enumerate(svals):
            S[j, i] = sv
        t_fns.append(f._t_fns)

    def evaluate(t):
        C = np.zeros((len(fields), nterm))
        for j, fns in enumerate(t_fns):
            for i, tf in enumerate(fns):
                C[j, i] = tf(t)
        return np.einsum("jk,jkp->jp", C, S)

    return evaluate


def _no_time(fn):
    def wrapped(x, y):
        return fn(x, y, 0.0)

    return wrapped


def manufactured_member(c_expr, beta_exprs, u_expr):
    """Build a Member from symbolic (c, beta, u) with induced data.

    beta must be divergence-free; this is asserted symbolically.
    """
    c_expr = sympy.sympify(c_expr)
    bx, by = (sympy.sympify(b) for b in beta_exprs)
    u_expr = sympy.sympify(u_expr)
    div_beta = sympy.simplify(sympy.diff(bx, _X) + sympy.diff(by, _Y))
    if div_beta != 0:
        raise ValueError(f"velocity field is not divergence-free: {div_beta}")
    qx = -sympy.diff(u_expr, _X) / c_expr
    qy = -sympy.diff(u_expr, _Y) / c_expr
    f_expr = (sympy.diff(u_expr, _T) + sympy.diff(qx, _X) +
              sympy.diff(qy, _Y) + bx * sympy.diff(u_expr, _X) +
              by * sympy.diff(u_expr, _Y))
    u_fn = _scalar_fn(u_expr)
    return Member(
        c=_scalar_fn(c_expr),
        beta=_vector_fn(bx, by),
        f=_scalar_fn(f_expr),
        g=u_fn,
        u0=_no_time(_scalar_fn(u_expr.subs(_T, 0))),
        exact_u=u_fn,
        exact_q=_vector_fn(qx, qy),
    )


EXAMPLE1_C = (0.26959, 0.26633, 0.30525)
EXAMPLE1_BETA_SCALE = (1.6797, 1.6551, 1.1626)
EXAMPLE2_C = (1.0e4, 2.0e4, 3.0e4)
EXAMPLE2_BETA = ((2, 3), (3, 4), (4, 5))
EXAMPLE3_C = (60.0, 120.0, 180.0)
EXAMPLE3_F = (2.0, 5.0, 8.0)


def example1():
    """Diffusion-dominated three-member ensemble with smooth solutions.

    Rotational velocity fields a_j (y, x) and exact solutions
    sin(t) sin(x) sin(y) / j on the unit square; runs to T = 1.
    """
    members = []
    for j, (cj, aj) in enumerate(zip(EXAMPLE1_C, EXAMPLE1_BETA_SCALE), 1):
        u = sympy.sin(_T) * sympy.sin(_X) * sympy.sin(_Y) / j
        members.append(manufactured_member(cj, (aj * _Y, aj * _X), u))
    return ProblemSpec(members, autonomous=True, default_T=1.0,
                       name="example1")


def _layer_solution(c, x0, y0, r2):
    bracket = sympy.Rational(1, 2) + sympy.atan(
        2 * sympy.sqrt(c) * (r2 - (_X - x0) ** 2 - (_Y - y0) ** 2)) / sympy.pi
    return (sympy.sin(_T) * _X * (1 - _X) * _Y * (1 - _Y)) * bracket


def example2():
    """Convection-dominated ensemble whose solutions have interior layers.

    Inverse-diffusion constants of order 1e4 place a steep circular layer
    inside the domain for each member; solutions vanish on the boundary.
    Defaults to T = 0.1.
    """
    geom = ((sympy.Rational(1, 3), sympy.Rational(1, 2),
             sympy.Rational(1, 12)),
            (sympy.Rational(1, 2), sympy.Rational(1, 3),
             sympy.Rational(1, 14)),
            (sympy.Rational(1, 2), sympy.Rational(1, 2),
             sympy.Rational(1, 16)))
    members = []
    for cj, (bx, by), (x0, y0, r2) in zip(EXAMPLE2_C, EXAMPLE2_BETA, geom):
        u = _layer_solution(cj, x0, y0, r2)
        members.append(manufactured_member(cj, (bx, by), u))
    return ProblemSpec(members, autonomous=True, default_T=0.1,
                       name="example2")


def example3():
    """Convection-dominated ensemble with boundary layers and no exact
    solution: constant sources, homogeneous Dirichlet data, zero start."""
    return constant_ensemble(EXAMPLE3_C, EXAMPLE2_BETA, EXAMPLE3_F,
                             default_T=0.1, name="example3")


def constant_ensemble(c_values, beta_values, f_values, default_T=0.1,
                      name="custom"):
    """Ensemble with constant coefficients, g = 0 and u0 = 0.

    c_values, f_values are per-member scalars; beta_values per-member
    (bx, by) pairs.  This is the family expressible in config files.
    """
    if not len(c_values) == len(beta_values) == len(f_values):
        raise ValueError("member lists must have equal length")
    members = []
    for cj, (bx, by), fj in zip(c_values, beta_values, f_values):
        cj, bx, by, fj = float(cj), float(bx), float(by), float(fj)
        if cj <= 0:
            raise ValueError("inverse diffusion must be positive")
        members.append(Member(
            c=lambda x, y, t, cj=cj: np.full_like(x, cj),
            beta=lambda x, y, t, bx=bx, by=by: np.stack(
                [np.full_like(x, bx), np.full_like(x, by)], axis=-1),
            f=lambda x, y, t, fj=fj: np.full_like(x, fj),
            g=lambda x, y, t: np.zeros_like(x),
            u0=lambda x, y: np.zeros_like(x),
        ))
    return ProblemSpec(members, autonomous=True, default_T=default_T,
                       name=name)


def get_example(number):
    """Look up a built-in example ensemble by its 1-based number."""
    table = {1: example1, 2: example2, 3: example3}
    if number not in table:
        raise ValueError(f"unknown example {number}; choose 1, 2 or 3")
    return table[number]()
