"""Utility functions, their convex conjugates and assumption certificates."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "UtilityError",
    "UtilityFunction",
    "PowerUtility",
    "LogUtility",
    "NonHARAUtility",
    "evaluate",
    "AssumptionReport",
    "check_assumption_3_1",
    "nonhara_h",
    "nonhara_h_identity",
    "utility_from_dict",
]


class UtilityError(ValueError):
    pass


def _positive(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise UtilityError("argument must be strictly positive")
    return x


class UtilityFunction:
    """U, U', the conjugate Ut(y) = sup_x [U(x) - xy], Ut' and I = (U')^{-1}."""

    kind: str

    def U(self, x):
        raise NotImplementedError

    def dU(self, x):
        raise NotImplementedError

    def conj(self, y):
        raise NotImplementedError

    def dconj(self, y):
        return -self.inv_marginal(y)

    def inv_marginal(self, y):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class PowerUtility(UtilityFunction):
    """U(x) = x**beta / beta with 0 < beta < 1."""

    beta: float
    kind: str = field(default="power", init=False)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise UtilityError("power utility needs beta in (0, 1)")

    def U(self, x):
        return _positive(x) ** self.beta / self.beta

    def dU(self, x):
        return _positive(x) ** (self.beta - 1.0)

    def conj(self, y):
        b = self.beta
        return (1.0 - b) / b * _positive(y) ** (b / (b - 1.0))

    def inv_marginal(self, y):
        return _positive(y) ** (1.0 / (self.beta - 1.0))

    def to_dict(self):
        return {"kind": "power", "beta": self.beta}


@dataclass(frozen=True)
class LogUtility(UtilityFunction):
    kind: str = field(default="log", init=False)

    def U(self, x):
        return np.log(_positive(x))

    def dU(self, x):
        return 1.0 / _positive(x)

    def conj(self, y):
        return -(1.0 + np.log(_positive(y)))

    def inv_marginal(self, y):
        return 1.0 / _positive(y)


def nonhara_h(x):
    """H(x) = (2 / (sqrt(1 + 4x) - 1))**(1/2); the marginal utility of the non-HARA example."""
    x = _positive(x)
    # 2 / (sqrt(1+4x) - 1) == (sqrt(1+4x) + 1) / (2x); the right side avoids cancellation
    return np.sqrt((np.sqrt(1.0 + 4.0 * x) + 1.0) / (2.0 * x))


@dataclass(frozen=True)
class NonHARAUtility(UtilityFunction):
    """U(x) = H^-3/3 + H^-1 + x H with conjugate Ut(y) = y^-3/3 + y^-1."""

    kind: str = field(default="nonhara", init=False)

    def U(self, x):
        h = nonhara_h(x)
        return h ** -3 / 3.0 + 1.0 / h + x * h

    def dU(self, x):
        return nonhara_h(x)

    def conj(self, y):
        y = _positive(y)
        return y ** -3 / 3.0 + 1.0 / y

    def inv_marginal(self, y):
        y = _positive(y)
        return y ** -4 + y ** -2


def evaluate(u: UtilityFunction, which: str, arg):
    """Evaluate one of ``U``, ``U'``, ``Ut``, ``Ut'``, ``I`` at ``arg > 0``."""
    table = {
        "U": u.U,
        "U'": u.dU,
        "dU": u.dU,
        "Ut": u.conj,
        "Ut'": u.dconj,
        "dUt": u.dconj,
        "I": u.inv_marginal,
    }
    try:
        fn = table[which]
    except KeyError:
        raise UtilityError(f"unknown evaluator {which!r}") from None
    return fn(arg)


def nonhara_h_identity(x) -> float:
    h = nonhara_h(x)
    return float(np.max(np.abs(h ** -4 + h ** -2 - np.asarray(x, dtype=float))))


@dataclass
class AssumptionReport:
    monotone_xdu: bool
    witness: tuple | None
    risk_aversion_le_one: bool
    max_relative_risk_aversion: float

    @property
    def ok(self) -> bool:
        return self.monotone_xdu and self.witness is not None


BETA_LATTICE = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
GAMMA_LATTICE = (1.1, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0)


def check_assumption_3_1(u: UtilityFunction, grid=None, rtol: float = 1e-12) -> AssumptionReport:
    """Grid certificate for the two growth conditions on U.

    (i) x U'(x) non-decreasing; (ii) some (beta0, gamma) in a small lattice
    with beta0 U'(x) >= U'(gamma x) at every grid point.  Also reports the
    largest relative risk aversion -x U''/U' (central differences).
    """
    if grid is None:
        grid = np.logspace(-4, 4, 801)
    x = np.sort(_positive(grid))
    xdu = x * u.dU(x)
    monotone = bool(np.all(np.diff(xdu) >= -rtol * np.abs(xdu[1:])))

    witness = None
    du = u.dU(x)
    for b0, g in itertools.product(BETA_LATTICE, GAMMA_LATTICE):
        if np.all(b0 * du >= u.dU(g * x) * (1 - rtol)):
            witness = (b0, g)
            break

    h = 1e-4 * x
    d2 = (u.dU(x + h) - u.dU(x - h)) / (2 * h)
    rra = -x * d2 / du
    max_rra = float(np.max(rra))
    return AssumptionReport(
        monotone_xdu=monotone,
        witness=witness,
        risk_aversion_le_one=bool(max_rra <= 1.0 + 1e-6),
        max_relative_risk_aversion=max_rra,
    )


def utility_from_dict(d: dict) -> UtilityFunction:
    kind = d.get("kind")
    if kind == "power":
        if "beta" not in d:
            raise UtilityError("power utility needs beta")
        return PowerUtility(float(d["beta"]))
    if kind == "log":
        return LogUtility()
    if kind in ("nonhara", "non-hara"):
        return NonHARAUtility()
    raise UtilityError(f"unknown utility kind {kind!r}")
