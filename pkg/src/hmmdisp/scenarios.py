"""Shipped scenario presets.

``five_spot``
    Injection bump near (0.1, 0.1), production bump near (0.9, 0.9) scaled to
    match the injection, clean initial state, pure injected fluid.
``still``
    No wells, uniform initial concentration 0.5: nothing moves.
``pure_diffusion_mms``
    No flow, ``c = 0.5 + 0.4 exp(-t) cos(pi x) cos(pi y)``.
``coupled_mms``
    ``p = cos(pi x) cos(pi y)``, ``c = 0.5 + 0.3 exp(-t) cos(pi x) cos(2 pi y)``,
    permeability ``(1 + c/2) Id`` and dispersion ``0.1 (1 + |U|) Id``.

All presets live on the unit square.
"""

import numpy as np
import sympy

from .discrete import TimeGrid
from .manufactured import ManufacturedSolution, cs, t, x, y
from .transport import Scenario


def gaussian_bump(center, width, rate=1.0):
    """``rate`` times the normalised 2-D Gaussian density centred at ``center``."""
    cx, cy = center

    def q(pts, tt=0.0):
        r2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
        return rate * np.exp(-r2 / (2.0 * width ** 2)) / (2.0 * np.pi * width ** 2)

    return q


def _const(value):
    return lambda pts, *args: np.full(len(pts), float(value))


def dispersion_linear(alpha):
    """``alpha (1 + |zeta|) Id``."""

    def D(pts, zeta):
        mag = np.sqrt((np.asarray(zeta) ** 2).sum(axis=-1))
        return (alpha * (1.0 + mag))[:, None, None] * np.eye(2)[None]

    return D


def identity_permeability(pts, c):
    return np.broadcast_to(np.eye(2), (len(pts), 2, 2))


def five_spot(T=0.2, N=50, *, porosity=0.2, alpha=0.01, rate=1.0, width=0.1):
    return Scenario(
        name="five_spot",
        porosity=_const(porosity),
        permeability=identity_permeability,
        dispersion=dispersion_linear(alpha),
        injected_conc=_const(1.0),
        initial=_const(0.0),
        q_inj=gaussian_bump((0.1, 0.1), width, rate),
        q_prod=gaussian_bump((0.9, 0.9), width, rate),
        grid=TimeGrid.uniform(T, N),
        phi_min=min(porosity, 1.0 / porosity),
        alpha_D=alpha,
        Lambda_D=alpha,
        match_production=True,
        description="quarter five-spot on the unit square",
    )


def still(T=1.0, N=10, *, level=0.5):
    return Scenario(
        name="still",
        porosity=_const(1.0),
        permeability=identity_permeability,
        dispersion=dispersion_linear(1.0),
        injected_conc=_const(0.0),
        initial=_const(level),
        q_inj=_const(0.0),
        q_prod=_const(0.0),
        grid=TimeGrid.uniform(T, N),
        description="no wells, uniform concentration",
    )


def _mms_scenario(name, sol, T, N, description):
    return Scenario(
        name=name,
        porosity=sol.porosity,
        permeability=sol.permeability,
        dispersion=sol.dispersion,
        injected_conc=_const(0.0),
        initial=lambda pts: sol.c(pts, 0.0),
        q_inj=_const(0.0),
        q_prod=_const(0.0),
        grid=TimeGrid.uniform(T, N),
        phi_min=1.0,
        alpha_D=sol.alpha,
        Lambda_D=sol.alpha,
        pressure_forcing=sol.pressure_forcing,
        conc_forcing=sol.conc_forcing,
        exact=sol,
        description=description,
    )


def pure_diffusion_mms(T=0.5, N=8):
    sol = ManufacturedSolution(
        sympy.Integer(0),
        sympy.Rational(1, 2) + sympy.Rational(2, 5) * sympy.exp(-t)
        * sympy.cos(sympy.pi * x) * sympy.cos(sympy.pi * y),
        alpha=1.0,
    )
    return _mms_scenario("pure_diffusion_mms", sol, T, N, "heat equation, no flow")


def coupled_mms(T=0.5, N=8):
    sol = ManufacturedSolution(
        sympy.cos(sympy.pi * x) * sympy.cos(sympy.pi * y),
        sympy.Rational(1, 2) + sympy.Rational(3, 10) * sympy.exp(-t)
        * sympy.cos(sympy.pi * x) * sympy.cos(2 * sympy.pi * y),
        perm_factor=1 + cs / 2,
        alpha=0.1,
    )
    return _mms_scenario("coupled_mms", sol, T, N, "coupled pressure/concentration")


PRESETS = {
    "five_spot": five_spot,
    "still": still,
    "pure_diffusion_mms": pure_diffusion_mms,
    "coupled_mms": coupled_mms,
}


def preset(name, **kwargs):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)
