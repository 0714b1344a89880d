"""Manufactured solutions for the coupled pressure/concentration system.

The exact pressure ``p`` and concentration ``c`` are sympy expressions in
``x, y, t``.  The permeability is ``a(c) Id`` and the dispersion is
``alpha (1 + |zeta|) Id``.  Wells are switched off; the forcings

    g_p = div U,            U = -a(c) grad p
    g_c = Phi c_t - div(alpha (1 + |U|) grad c) + div(c U)

make ``(p, c)`` an exact solution.  Both ``p`` and ``c`` must have zero
normal derivative on the boundary of the unit square.
"""

import numpy as np
import sympy

x, y, t, cs = sympy.symbols("x y t c", real=True)


def _lam(expr):
    f = sympy.lambdify((x, y, t), expr, "numpy")

    def call(pts, tt=0.0):
        pts = np.asarray(pts, dtype=float)
        out = f(pts[:, 0], pts[:, 1], tt)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()

    return call


def _vec(funcs):
    def call(pts, tt=0.0):
        return np.stack([f(pts, tt) for f in funcs], axis=-1)

    return call


class ManufacturedSolution:
    """Callables for an exact ``(p, c)`` pair and the forcings they induce."""

    def __init__(self, pressure, concentration, *, perm_factor=None, alpha=1.0, porosity=1):
        self.alpha = float(alpha)
        a = sympy.Integer(1) if perm_factor is None else perm_factor
        p = sympy.sympify(pressure)
        c = sympy.sympify(concentration)
        phi = sympy.sympify(porosity)
        a_c = a.subs(cs, c) if isinstance(a, sympy.Expr) else a
        U = [-a_c * sympy.diff(p, v) for v in (x, y)]
        divU = sympy.diff(U[0], x) + sympy.diff(U[1], y)
        grad_c = [sympy.diff(c, v) for v in (x, y)]
        lap_c = sympy.diff(c, x, 2) + sympy.diff(c, y, 2)
        conv = U[0] * grad_c[0] + U[1] * grad_c[1] + c * divU

        self.exprs = {"p": p, "c": c, "U": U, "a": a}
        self.p = _lam(p)
        self.c = _lam(c)
        self.grad_p = _vec([_lam(sympy.diff(p, v)) for v in (x, y)])
        self.grad_c = _vec([_lam(g) for g in grad_c])
        self.U = _vec([_lam(u) for u in U])
        self.pressure_forcing = _lam(divU)
        self._phi_ct = _lam(phi * sympy.diff(c, t))
        self._lap_c = _lam(lap_c)
        self._conv = _lam(conv)
        self._jac = [[_lam(sympy.diff(U[i], v)) for v in (x, y)] for i in range(2)]
        self._perm = sympy.lambdify(cs, a, "numpy")
        self.porosity = _lam(phi)

    def permeability(self, pts, c):
        vals = np.broadcast_to(np.asarray(self._perm(np.asarray(c, dtype=float)), dtype=float),
                               (len(pts),))
        return vals[:, None, None] * np.eye(2)[None]

    def dispersion(self, pts, zeta):
        mag = np.sqrt((np.asarray(zeta) ** 2).sum(axis=-1))
        return (self.alpha * (1.0 + mag))[:, None, None] * np.eye(2)[None]

    def conc_forcing(self, pts, tt):
        U = self.U(pts, tt)
        mag = np.sqrt((U ** 2).sum(axis=1))
        gc = self.grad_c(pts, tt)
        J = np.stack([np.stack([f(pts, tt) for f in row], axis=-1) for row in self._jac], axis=1)
        # grad |U| = J^T U / |U|, undefined (and irrelevant, measure zero) where U = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            grad_mag = np.where(mag[:, None] > 1e-14,
                                np.einsum("kij,ki->kj", J, U) / mag[:, None], 0.0)
        div_flux = self.alpha * ((1.0 + mag) * self._lap_c(pts, tt)
                                 + np.einsum("kj,kj->k", grad_mag, gc))
        return self._phi_ct(pts, tt) - div_flux + self._conv(pts, tt)
