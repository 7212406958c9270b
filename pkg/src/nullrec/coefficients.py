"""Coefficient sets for the fast-slow system and a catalog of examples.

All evaluators are vectorised and broadcast over leading axes:

=============  ==========================  =====================
evaluator      arguments                   result
=============  ==========================  =====================
``b1``         ``y[..., d]``               ``[..., d]``
``Db1``        ``y[..., d]``               ``[..., d, d]``
``b2``         ``x[...]``, ``y[..., d]``   ``[..., d]``
``sigma``      ``x[...]``, ``y[..., d]``   ``[..., d, r]``
``psi1``       ``y[..., d]``               ``[...]``
``psi2``       ``x[...]``, ``y[..., d]``   ``[...]``
``b_hat``      ``x[...]``                  ``[...]``
``sigma_hat_sq`` ``x[...]``                ``[...]``
=============  ==========================  =====================

``x`` is the position of the fast motion and ``y`` the slow state.  The
envelopes ``b_hat(x) >= sup_y |b2(x, y)|`` and ``sigma_hat_sq(x) >= sup_y Tr
sigma sigma^T(x, y)`` must be integrable over the real line; catalog entries
declare their L1 norms in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .report import VerificationReport

__all__ = [
    "CoefficientSet",
    "CatalogEntry",
    "NonIntegrableError",
    "build_catalog_entry",
    "register_entry",
    "catalog",
    "check_assumptions",
    "l1_norm_envelope",
]


class NonIntegrableError(ValueError):
    """An envelope's L1 integral does not converge."""


def _bump(x):
    return np.exp(-0.5 * np.square(x))


def _bshape(x, y):
    """Common leading shape of ``x[...]`` and ``y[..., d]``."""
    return np.broadcast_shapes(np.shape(x), np.shape(y)[:-1])


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, diffusion and fast-motion coefficients of the system.

    Only ``dim``, ``b1`` and ``Db1`` are required; the other evaluators
    default to zero perturbation and a unit fast diffusion (``psi1 = 1``,
    ``psi2 = 0``).  ``noise_dim`` is the number of columns of ``sigma``.
    """

    dim: int
    b1: Callable
    Db1: Callable
    b2: Callable | None = None
    sigma: Callable | None = None
    psi1: Callable | None = None
    psi2: Callable | None = None
    b_hat: Callable | None = None
    sigma_hat_sq: Callable | None = None
    noise_dim: int | None = None
    lip_b1: float = math.inf
    lip_b2: float = 0.0
    lip_sigma: float = 0.0
    c1: float = 1.0
    c2: float = 1.0
    b_hat_l1: float | None = None
    sigma_hat_sq_l1: float | None = None
    b1_bounded: bool = False
    b2_zero: bool = False
    sigma_zero: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dim must be >= 1")
        r = d if self.noise_dim is None else int(self.noise_dim)
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("noise_dim", r)
        if self.b2 is None:
            set_("b2", lambda x, y: np.zeros(_bshape(x, y) + (d,)))
            set_("b2_zero", True)
            if self.b_hat is None:
                set_("b_hat_l1", 0.0)
        if self.sigma is None:
            set_("sigma", lambda x, y: np.zeros(_bshape(x, y) + (d, r)))
            set_("sigma_zero", True)
            if self.sigma_hat_sq is None:
                set_("sigma_hat_sq_l1", 0.0)
        if self.psi1 is None:
            set_("psi1", lambda y: np.ones(np.shape(y)[:-1]))
        if self.psi2 is None:
            set_("psi2", lambda x, y: np.zeros(_bshape(x, y)))
        if self.b_hat is None:
            set_("b_hat", lambda x: np.zeros(np.shape(x)))
        if self.sigma_hat_sq is None:
            set_("sigma_hat_sq", lambda x: np.zeros(np.shape(x)))
        if not (self.c1 > 0 and self.c1 <= self.c2 < math.inf):
            raise ValueError(
                f"fast diffusion bounds must satisfy 0 < c1 <= c2 < inf, got c1={self.c1}, c2={self.c2}"
            )

    def fast_diffusion(self, x, y):
        """``psi1(y) + psi2(x, y)``."""
        return self.psi1(y) + self.psi2(x, y)

    def with_params(self, **kw) -> "CoefficientSet":
        return replace(self, **kw)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    builder: Callable[..., CoefficientSet]
    defaults: dict
    description: str = ""

    def build(self, **params) -> CoefficientSet:
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name!r}: {sorted(unknown)}")
        merged = {**self.defaults, **params}
        cs = self.builder(**merged)
        return replace(cs, name=self.name, params={**cs.params, **merged})


_CATALOG: dict[str, CatalogEntry] = {}


def register_entry(name: str, builder, defaults: dict, description: str = "", replace_existing=False):
    """Register a programmatic coefficient family under ``name``."""
    if name in _CATALOG and not replace_existing:
        raise ValueError(f"catalog entry {name!r} already registered")
    _CATALOG[name] = CatalogEntry(name, builder, dict(defaults), description)
    return _CATALOG[name]


def catalog() -> dict[str, CatalogEntry]:
    return dict(sorted(_CATALOG.items()))


def build_catalog_entry(name: str, params: dict | None = None) -> CoefficientSet:
    """Build the coefficient set registered as ``name``.

    Raises
    ------
    KeyError
        Unknown entry.
    ValueError
        Unknown parameter, or parameters violating ``0 < c1 <= psi1 + psi2 <= c2``.
    """
    try:
        entry = _CATALOG[name]
    except KeyError:
        raise KeyError(f"no catalog entry named {name!r}; known: {sorted(_CATALOG)}") from None
    return entry.build(**(params or {}))


# -- catalog ---------------------------------------------------------------

_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def _gaussian_bump(A=1.0, S=1.0, kappa=1.0, p=0.0, d=1):
    """Bounded tanh restoring drift, Gaussian-localised b2 and sigma."""
    d = int(d)
    A, S, kappa, p = float(A), float(S), float(kappa), float(p)
    if p <= -1.0:
        raise ValueError(f"p={p} makes psi1 + psi2 = 1 + p*... non-positive")
    sq = math.sqrt(d)
    eye = np.eye(d)

    def b1(y):
        return -kappa * np.tanh(y)

    def Db1(y):
        return (-kappa / np.cosh(y) ** 2)[..., None] * eye

    def b2(x, y):
        return (A / sq) * _bump(np.asarray(x))[..., None] * np.cos(y)

    def m(y):
        return (2.0 + np.sin(y)) / 3.0

    def sigma(x, y):
        diag = (S / sq) * _bump(np.asarray(x))[..., None] * m(y)
        return diag[..., None] * eye

    def psi2(x, y):
        return p * _bump(np.asarray(x)) * m(np.asarray(y)[..., 0])

    return CoefficientSet(
        dim=d,
        noise_dim=d,
        b1=b1,
        Db1=Db1,
        b2=b2,
        sigma=sigma,
        psi1=lambda y: np.ones(np.shape(y)[:-1]),
        psi2=psi2,
        b_hat=lambda x: abs(A) * _bump(np.asarray(x)),
        sigma_hat_sq=lambda x: S * S * np.exp(-np.square(x)),
        lip_b1=abs(kappa),
        lip_b2=abs(A) * (math.exp(-0.5) + 1.0 / sq),
        lip_sigma=abs(S) * (math.exp(-0.5) + 1.0 / 3.0),
        c1=min(1.0, 1.0 + p),
        c2=max(1.0, 1.0 + p),
        b_hat_l1=abs(A) * math.sqrt(2 * math.pi),
        sigma_hat_sq_l1=S * S * math.sqrt(math.pi),
        b1_bounded=True,
        b2_zero=(A == 0.0),
        sigma_zero=(S == 0.0),
    )


def _oscillator(a=1.0, psi=1.0):
    """Harmonic oscillator driven by a Gaussian-localised noise on the velocity."""
    a, psi = float(a), float(psi)
    if psi <= 0:
        raise ValueError(f"psi={psi} must be positive")

    def sigma(x, y):
        shape = _bshape(x, y)
        out = np.zeros(shape + (2, 1))
        out[..., 0, 0] = a * _bump(np.asarray(x))
        return out

    return CoefficientSet(
        dim=2,
        noise_dim=1,
        b1=lambda y: np.asarray(y) @ _ROT.T,
        Db1=lambda y: np.broadcast_to(_ROT, np.shape(y)[:-1] + (2, 2)),
        sigma=sigma,
        psi1=lambda y: np.full(np.shape(y)[:-1], psi),
        psi2=lambda x, y: np.zeros(_bshape(x, y)),
        sigma_hat_sq=lambda x: a * a * np.exp(-np.square(x)),
        lip_b1=1.0,
        lip_sigma=abs(a) * math.exp(-0.5),
        c1=psi,
        c2=psi,
        sigma_hat_sq_l1=a * a * math.sqrt(math.pi),
        sigma_zero=(a == 0.0),
    )


def _constant_psi(c=2.0, a=1.0):
    return _oscillator(a=a, psi=c)


def _drift_only(c=1.0, d=2, omega=0.0):
    """No diffusion; b2 = c * exp(-x^2/2) * (1, ..., 1)/sqrt(d)."""
    d, c, omega = int(d), float(c), float(omega)
    if omega != 0.0 and d != 2:
        raise ValueError("a rotating b1 (omega != 0) needs d = 2")
    u = np.ones(d) / math.sqrt(d)
    gen = omega * _ROT if d == 2 else np.zeros((d, d))

    def b2(x, y):
        shape = _bshape(x, y)
        return np.broadcast_to(c * _bump(np.asarray(x))[..., None] * u, shape + (d,)).copy()

    return CoefficientSet(
        dim=d,
        noise_dim=d,
        b1=lambda y: np.asarray(y) @ gen.T,
        Db1=lambda y: np.broadcast_to(gen, np.shape(y)[:-1] + (d, d)),
        b2=b2,
        b_hat=lambda x: abs(c) * _bump(np.asarray(x)),
        lip_b1=abs(omega),
        lip_b2=abs(c) * math.exp(-0.5),
        b_hat_l1=abs(c) * math.sqrt(2 * math.pi),
        b1_bounded=(omega == 0.0),
        b2_zero=(c == 0.0),
    )


register_entry(
    "gaussian_bump",
    _gaussian_bump,
    {"A": 1.0, "S": 1.0, "kappa": 1.0, "p": 0.0, "d": 1},
    "b1=-kappa*tanh(y); b2, sigma and psi2 localised by exp(-x^2/2)",
)
register_entry(
    "oscillator",
    _oscillator,
    {"a": 1.0, "psi": 1.0},
    "rotation b1(y)=((0,-1),(1,0))y; sigma=(a*exp(-x^2/2), 0)^T on 1-dim noise",
)
register_entry(
    "constant_psi",
    _constant_psi,
    {"c": 2.0, "a": 1.0},
    "oscillator dynamics with constant fast diffusion psi1=c, psi2=0",
)
register_entry(
    "drift_only",
    _drift_only,
    {"c": 1.0, "d": 2, "omega": 0.0},
    "sigma=0; b2=c*exp(-x^2/2)*(1,..,1)/sqrt(d); b1=omega*rotation (d=2)",
)


# -- checks ----------------------------------------------------------------


def _lipschitz_ratio(f, p, q):
    num = np.linalg.norm((f(p) - f(q)).reshape(len(p), -1), axis=1)
    den = np.linalg.norm((p - q).reshape(len(p), -1), axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


def check_assumptions(
    cs: CoefficientSet,
    probe_box=((-4.0, 4.0), (-2.0, 2.0)),
    n_probes: int = 200,
    seed: int = 0,
    fd_step: float = 1e-5,
) -> VerificationReport:
    """Probe the standing assumptions of ``cs`` at random points.

    ``probe_box`` is ``((x_lo, x_hi), (y_lo, y_hi))``; the y-interval applies
    to every coordinate.  Violations are reported, never raised.
    """
    if n_probes < 2:
        raise ValueError("n_probes must be >= 2")
    rng = np.random.default_rng(seed)
    (xl, xh), (yl, yh) = probe_box
    d = cs.dim
    x = rng.uniform(xl, xh, n_probes)
    y = rng.uniform(yl, yh, (n_probes, d))
    # near and far pairs for the Lipschitz quotients
    dx = rng.normal(scale=1e-3, size=n_probes)
    dy = rng.normal(scale=1e-3, size=(n_probes, d))
    perm = rng.permutation(n_probes)
    tol = 1e-9
    checks, details = {}, {}

    def lip(name, f, pts, declared):
        p, q_near, q_far = pts
        obs = max(_lipschitz_ratio(f, p, q_near), _lipschitz_ratio(f, p, q_far))
        details[name] = {"observed": obs, "declared": declared}
        checks[name] = obs <= declared * (1 + 1e-6) + tol

    lip("lipschitz_b1", cs.b1, (y, y + dy, y[perm]), cs.lip_b1)
    xy = np.column_stack([x, y])
    xy_near = np.column_stack([x + dx, y + dy])
    split = lambda f: (lambda z: f(z[:, 0], z[:, 1:]))  # noqa: E731
    lip("lipschitz_b2", split(cs.b2), (xy, xy_near, xy[perm]), cs.lip_b2)
    lip("lipschitz_sigma", split(cs.sigma), (xy, xy_near, xy[perm]), cs.lip_sigma)

    # derivative tensor against central differences
    J = cs.Db1(y)
    fd = np.empty((n_probes, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = fd_step
        fd[:, :, j] = (cs.b1(y + e) - cs.b1(y - e)) / (2 * fd_step)
    rel = float(np.max(np.abs(fd - J)) / max(1.0, float(np.max(np.abs(J)))))
    details["Db1_finite_difference"] = {"max_rel_error": rel}
    checks["Db1_finite_difference"] = rel <= 1e-6

    b2n = np.linalg.norm(cs.b2(x, y), axis=-1)
    bh = cs.b_hat(x)
    s = cs.sigma(x, y)
    tr = np.einsum("nij,nij->n", s, s)
    sh = cs.sigma_hat_sq(x)
    details["envelope_b_hat"] = {"max_excess": float(np.max(b2n - bh))}
    details["envelope_sigma_hat_sq"] = {"max_excess": float(np.max(tr - sh))}
    checks["envelope_b_hat"] = bool(np.all(b2n <= bh * (1 + 1e-12) + 1e-15))
    checks["envelope_sigma_hat_sq"] = bool(np.all(tr <= sh * (1 + 1e-12) + 1e-15))
    checks["envelopes_nonnegative"] = bool(np.all(bh >= 0) and np.all(sh >= 0))

    phi = cs.fast_diffusion(x, y)
    details["psi_bounds"] = {"min": float(phi.min()), "max": float(phi.max()), "c1": cs.c1, "c2": cs.c2}
    checks["psi_bounds"] = bool(
        cs.c1 > 0 and np.all(phi >= cs.c1 * (1 - 1e-12)) and np.all(phi <= cs.c2 * (1 + 1e-12))
    )
    # transformed diffusion sup_y Tr sigma sigma^T / phi^2 dominated by sigma_hat_sq / c1^2
    checks["transformed_sigma_envelope"] = bool(
        np.all(tr / phi**2 <= sh / cs.c1**2 * (1 + 1e-12) + 1e-15)
    )
    return VerificationReport(
        name="check_assumptions",
        params={"entry": cs.name, "probe_box": probe_box, "n_probes": n_probes, "seed": seed},
        checks=checks,
        details=details,
        provenance={"seed": seed},
    )


def l1_norm_envelope(cs: CoefficientSet, which: str) -> float:
    """L1 norm of ``b_hat`` or ``sigma_hat_sq``.

    Declared (closed-form) norms are returned as is; otherwise the envelope is
    integrated over the real line by adaptive quadrature (relative tolerance
    1e-8).

    Raises
    ------
    NonIntegrableError
        If the quadrature does not converge to a finite value.
    """
    if which not in ("b_hat", "sigma_hat_sq"):
        raise ValueError(f"unknown envelope {which!r}")
    declared = getattr(cs, f"{which}_l1")
    if declared is not None:
        return float(declared)
    f = getattr(cs, which)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(lambda t: float(f(np.float64(t))), -np.inf, np.inf,
                                      epsrel=1e-8, epsabs=0.0, limit=500)
        except integrate.IntegrationWarning as exc:
            raise NonIntegrableError(f"{which} does not appear integrable: {exc}") from None
    if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1.0):
        raise NonIntegrableError(f"{which} integral did not converge (value={val}, err={err})")
    return float(val)
