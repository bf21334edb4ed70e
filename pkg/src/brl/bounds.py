"""Explicit finite-sample deviation bounds and the constants they use.

Everything here is a closed-form calculator: no data passes through,
only the quantities a bound depends on (sample size, class probability,
complexity numbers, confidence level).  Formulas are evaluated verbatim
with their published constants.  When a logarithm's argument drops
below e the bound is outside its calibrated regime; a LogDomainWarning
is emitted and the value is still computed (it may be NaN if a square
root goes negative), with the validity flag carrying the formal
preconditions separately.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln


class LogDomainWarning(UserWarning):
    """A bound was evaluated with a log argument below e."""


def _checked_log(x: float, label: str) -> float:
    if x <= 0:
        raise ValueError(f"log argument {label} must be positive, got {x}")
    if x < math.e:
        warnings.warn(
            f"log argument {label} = {x:.6g} is below e; "
            "the bound is outside its calibrated regime",
            LogDomainWarning,
            stacklevel=3,
        )
    return math.log(x)


def _sqrt_or_nan(x: float) -> float:
    return math.sqrt(x) if x >= 0 else float("nan")


def compute_subroot_constant() -> float:
    """The constant 12 * int_1^inf s^-2 sqrt(1 + log s) ds.

    Substituting s = e^t turns the integrand into e^-t sqrt(1 + t) on
    [0, inf), which is what the quadrature evaluates.  The value lies in
    (12, 18] and is roughly 16.55.
    """
    inner, err = quad(lambda t: math.exp(-t) * math.sqrt(1.0 + t), 0.0, np.inf,
                      epsabs=1e-13, epsrel=1e-13, limit=500)
    if err > 1e-10:
        raise ArithmeticError(f"quadrature error {err:.3e} too large")
    return 12.0 * inner


@dataclass(frozen=True)
class ConstantTable:
    """Numerical constants shared across the fast-rate bounds.

    c1 = 108 * c_subroot^2 comes from the sub-root fixed-point argument;
    c_vc = 12 is the VC covering constant with companions k1 = 5 c_vc
    and k2 = 64 c_vc^2.
    """

    c_subroot: float
    c1: float
    c_vc: float = 12.0
    k1: float = 60.0
    k2: float = 9216.0


@functools.cache
def default_constants() -> ConstantTable:
    c = compute_subroot_constant()
    return ConstantTable(c_subroot=c, c1=108.0 * c * c)


@dataclass(frozen=True)
class BoundInputs:
    """Shared inputs of the deviation bounds.

    ``v`` and ``A`` are the VC dimension and envelope constant of the
    underlying class, ``U`` a uniform bound on the scores, ``B`` the
    Bernstein constant used by the fast rates (which need B >= 2U).
    Class deviation scales ``sigma_pos``/``sigma_neg`` default to U.
    ``q`` defaults to p (balanced weighting at the true prevalence).
    """

    n: int
    p: float
    v: float
    A: float
    U: float
    delta: float
    q: Optional[float] = None
    B: Optional[float] = None
    sigma_pos: Optional[float] = None
    sigma_neg: Optional[float] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.v < 1:
            raise ValueError(f"v must be at least 1, got {self.v}")
        if self.A < 1:
            raise ValueError(f"A must be at least 1, got {self.A}")
        if not (self.U > 0):
            raise ValueError(f"U must be positive, got {self.U}")
        if self.q is not None and not (0.0 < self.q < 1.0):
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.B is not None and not (self.B > 0):
            raise ValueError(f"B must be positive, got {self.B}")
        for name in ("sigma_pos", "sigma_neg"):
            val = getattr(self, name)
            if val is not None and not (val > 0):
                raise ValueError(f"{name} must be positive, got {val}")

    @property
    def q_eff(self) -> float:
        return self.p if self.q is None else self.q

    @property
    def sigma_pos_eff(self) -> float:
        return self.U if self.sigma_pos is None else self.sigma_pos

    @property
    def sigma_neg_eff(self) -> float:
        return self.U if self.sigma_neg is None else self.sigma_neg

    @property
    def sigma_max(self) -> float:
        return max(self.sigma_pos_eff, self.sigma_neg_eff)

    @property
    def sigma_min(self) -> float:
        return min(self.sigma_pos_eff, self.sigma_neg_eff)


@dataclass(frozen=True)
class BoundValue:
    """A bound together with whether its formal preconditions hold."""

    value: float
    valid: bool


def _slow_rate_conditions(inputs: BoundInputs, K: float, sigma: float) -> bool:
    log_term = math.log(
        K * inputs.A * inputs.U / (inputs.delta * sigma * math.sqrt(inputs.p))
    )
    need = max(
        (inputs.U**2 / sigma**2) * inputs.v * log_term,
        8.0 * math.log(1.0 / inputs.delta),
    )
    return inputs.n * inputs.p >= need


def slow_rate_bound(inputs: BoundInputs, K: float = 60.0) -> BoundValue:
    """Deviation bound for the positive-class empirical process:

        K sigma_pos sqrt( (v / (n p)) log( K A U / (delta sigma_pos sqrt(p)) ) ),

    valid once n p >= max( (U/sigma_pos)^2 v log(...), 8 log(1/delta) ).
    """
    if not (K > 0):
        raise ValueError(f"K must be positive, got {K}")
    sigma = inputs.sigma_pos_eff
    log_term = _checked_log(
        K * inputs.A * inputs.U / (inputs.delta * sigma * math.sqrt(inputs.p)),
        "K A U / (delta sigma sqrt(p))",
    )
    inner = inputs.v / (inputs.n * inputs.p) * log_term
    value = K * sigma * _sqrt_or_nan(inner)
    return BoundValue(value, _slow_rate_conditions(inputs, K, sigma))


def slow_rate_erm_bound(inputs: BoundInputs, K: float = 60.0) -> BoundValue:
    """Excess-balanced-risk bound for the ball-constrained minimizer:

        K sigma_max sqrt( (v / (n p)) log( K A U / (delta sigma_min sqrt(p)) ) ).

    Requires p <= 1/2 (the prevalence names the minority class); the
    validity flag additionally evaluates the slow-rate sample-size
    condition at the conservative scale sigma_min.
    """
    if inputs.p > 0.5:
        raise ValueError(f"p must be at most 1/2, got {inputs.p}")
    if not (K > 0):
        raise ValueError(f"K must be positive, got {K}")
    log_term = _checked_log(
        K * inputs.A * inputs.U
        / (inputs.delta * inputs.sigma_min * math.sqrt(inputs.p)),
        "K A U / (delta sigma_min sqrt(p))",
    )
    inner = inputs.v / (inputs.n * inputs.p) * log_term
    value = K * inputs.sigma_max * _sqrt_or_nan(inner)
    return BoundValue(value, _slow_rate_conditions(inputs, K, inputs.sigma_min))


def vc_transform(v: float, A: float) -> tuple[float, float]:
    """Complexity of the weighted-excess-loss class built from a base
    class with VC dimension v and envelope constant A: (4v + 1, 6A)."""
    return 4.0 * v + 1.0, 6.0 * A


def fast_rate_bound(
    n: int,
    q: float,
    B: float,
    v_tilde: float,
    A_tilde: float,
    delta: float,
    K: float,
    constants: Optional[ConstantTable] = None,
) -> float:
    """Fast-rate excess bound c1 B K v~ log(5 A~ sqrt(n) / delta) / (2 n q (1-q)).

    ``v_tilde`` and ``A_tilde`` are the already-transformed complexity
    numbers (see vc_transform); K > 1 is the loss-ratio constant and B
    the Bernstein constant of the weighted excess-loss class.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not (B > 0):
        raise ValueError(f"B must be positive, got {B}")
    if v_tilde < 1 or A_tilde < 1:
        raise ValueError("transformed complexity numbers must be at least 1")
    if not (K > 1):
        raise ValueError(f"K must exceed 1, got {K}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    constants = constants or default_constants()
    log_term = _checked_log(
        5.0 * A_tilde * math.sqrt(n) / delta, "5 A~ sqrt(n) / delta"
    )
    return constants.c1 * B * K * v_tilde * log_term / (2.0 * n * q * (1.0 - q))


def bernstein_constant_linear(
    deriv_bound: float, curvature_min: float, sigma_max: float, sigma_min: float
) -> float:
    """Bernstein constant D^2 sigma_max^2 / (mu sigma_min^2) for margin
    losses of ball-constrained linear scores with |phi'| <= D and
    phi'' >= mu on the realized margin interval."""
    if not (deriv_bound > 0):
        raise ValueError(f"deriv_bound must be positive, got {deriv_bound}")
    if not (curvature_min > 0):
        raise ValueError(
            "curvature_min must be positive; the loss is not strongly convex "
            "on the margin interval"
        )
    if not (0 < sigma_min <= sigma_max):
        raise ValueError(
            f"need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}"
        )
    return deriv_bound**2 * sigma_max**2 / (curvature_min * sigma_min**2)


def constrained_excess_bound(
    n: int,
    p_hat: float,
    d: int,
    deriv_bound: float,
    curvature_min: float,
    sigma_max: float,
    sigma_min: float,
    A: float,
    delta: float,
    constants: Optional[ConstantTable] = None,
) -> float:
    """Excess balanced risk of the ball-constrained minimizer in d
    dimensions:

        c1 (d+1) [D^2 sigma_max^2 / (mu sigma_min^2)]
            log(30 A sqrt(n) / delta) / (n p_hat (1 - p_hat)).
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not (0.0 < p_hat < 1.0):
        raise ValueError(f"p_hat must lie in (0, 1), got {p_hat}")
    if d < 1:
        raise ValueError(f"d must be at least 1, got {d}")
    if A < 1:
        raise ValueError(f"A must be at least 1, got {A}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    constants = constants or default_constants()
    bern = bernstein_constant_linear(deriv_bound, curvature_min, sigma_max, sigma_min)
    log_term = _checked_log(30.0 * A * math.sqrt(n) / delta, "30 A sqrt(n) / delta")
    return (
        constants.c1 * (d + 1.0) * bern * log_term / (n * p_hat * (1.0 - p_hat))
    )


def chernoff_interval(mu: float, delta: float) -> tuple[float, float]:
    """Two-sided multiplicative Chernoff interval for a Binomial count
    with mean mu: each side fails with probability at most delta."""
    if not (mu > 0):
        raise ValueError(f"mu must be positive, got {mu}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_term = _checked_log(1.0 / delta, "1/delta")
    lower = max(0.0, (1.0 - math.sqrt(2.0 * log_term / mu)) * mu)
    upper = (1.0 + math.sqrt(3.0 * log_term / mu)) * mu
    return lower, upper


@dataclass(frozen=True)
class PRatioResult:
    """Relative deviation bound for the empirical class probability."""

    z: float
    ratio_bound: float
    valid: bool
    simple_bound: float
    simple_valid: bool


def p_ratio_bound(n: int, p: float, delta: float) -> PRatioResult:
    """Bound on |p_hat/p - 1| holding with probability 1 - delta:

        z = sqrt(2 log(1/delta) / (n p)),  ratio <= z / (1 - z)  (z < 1),

    with the looser form 2z applicable once z <= 1/2.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_term = _checked_log(1.0 / delta, "1/delta")
    z = math.sqrt(2.0 * log_term / (n * p))
    valid = z < 1.0
    ratio = z / (1.0 - z) if valid else float("inf")
    return PRatioResult(
        z=z,
        ratio_bound=ratio,
        valid=valid,
        simple_bound=2.0 * z,
        simple_valid=z <= 0.5,
    )


@dataclass(frozen=True)
class KnnBoundParams:
    """Geometry and regularity inputs of the neighbour-radius envelope.

    ``b_x`` lower-bounds the feature density on the support, ``c`` is
    the interior-cone constant, ``T`` the support radius, ``delta`` the
    confidence level the envelope is stated at.
    """

    d: int
    b_x: float
    c: float
    T: float
    delta: float

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"d must be at least 1, got {self.d}")
        for name in ("b_x", "c", "T"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the Euclidean unit ball in d dimensions."""
    if d < 1:
        raise ValueError(f"d must be at least 1, got {d}")
    return float(math.pi ** (d / 2.0) / math.exp(gammaln(d / 2.0 + 1.0)))


@dataclass(frozen=True)
class EnvelopeResult:
    """Uniform k-NN radius envelope with its k-range precondition."""

    tau_bar: float
    precondition_ok: bool
    k_lower: float
    k_upper: float


def knn_radius_envelope(params: KnnBoundParams, k: int, n: int) -> EnvelopeResult:
    """High-probability uniform envelope for the k-th neighbour radius:

        tau_bar = ( 2 k / (n b_x c V_d) )^(1/d),

    applicable for 8 d log(12 n / delta) <= k <= T^d n b_x c V_d / 2.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    vol = unit_ball_volume(params.d)
    mass = params.b_x * params.c * vol
    tau_bar = (2.0 * k / (n * mass)) ** (1.0 / params.d)
    k_lower = 8.0 * params.d * _checked_log(12.0 * n / params.delta, "12 n / delta")
    k_upper = params.T**params.d * n * mass / 2.0
    return EnvelopeResult(
        tau_bar=tau_bar,
        precondition_ok=k_lower <= k <= k_upper,
        k_lower=k_lower,
        k_upper=k_upper,
    )


@dataclass(frozen=True)
class FixedPointResult:
    """Fixed point of a sub-root line psi(r) = b sqrt(r) + c."""

    r_star: float
    upper: float


def subroot_fixed_point(b: float, c: float) -> FixedPointResult:
    """Largest solution of r = b sqrt(r) + c and the closed upper bound.

    sqrt(r*) = (b + sqrt(b^2 + 4c)) / 2, and r* <= 2 (b^2 + c).
    """
    if b < 0 or c < 0:
        raise ValueError(f"need b >= 0 and c >= 0, got b={b}, c={c}")
    if b == 0 and c == 0:
        raise ValueError("b and c cannot both be zero")
    root = 0.5 * (b + math.sqrt(b * b + 4.0 * c))
    return FixedPointResult(r_star=root * root, upper=2.0 * (b * b + c))
