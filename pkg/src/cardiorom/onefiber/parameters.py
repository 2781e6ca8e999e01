"""Parameter and state containers for the one-fiber model.

The JSON layout of the parameter file mirrors the model symbols (V0, Vw, ls0,
Tp0, cp, ...) so a file reads like the parameter table it encodes. Tp0 and cp
are base values; the stiffness correction factors gamma and lambda scale them
during simulation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from . import kernels
from .kernels import KPA_TO_MMHG  # noqa: F401  (re-exported unit constant)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CorrectionFactors:
    """Dimensionless correction factors [alpha, beta, gamma, lam].

    alpha and beta shape the stress-pressure ratio f = 2*alpha + 3*beta*V/Vw;
    gamma and lam scale the passive stiffness pair (Tp0, cp). All four are
    expected to stay close to unity. ``lam`` is spelled out because ``lambda``
    is reserved in Python; serialized form uses "lambda".
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValidationError("correction factors must be finite")
        if self.beta <= 0.0:
            raise ValidationError("beta must be positive (volume-independent "
                                  "fiber stress is non-physiological)")
        if self.alpha <= 0.0:
            raise ValidationError("alpha must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.lam], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "CorrectionFactors":
        a = np.asarray(arr, dtype=float).ravel()
        if a.size != 4:
            raise ValidationError("correction factors need exactly 4 entries")
        return cls(alpha=a[0], beta=a[1], gamma=a[2], lam=a[3])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionFactors":
        return cls(alpha=float(d["alpha"]), beta=float(d["beta"]),
                   gamma=float(d["gamma"]), lam=float(d["lambda"]))


FACTOR_NAMES = ("alpha", "beta", "gamma", "lambda")


@dataclass(frozen=True)
class CirculationParameters:
    """Closed-loop windkessel constants (mmHg, ml, ms units)."""

    Vart0: float  # arterial reference volume [ml]
    Vven0: float  # venous reference volume [ml]
    Cart: float   # arterial compliance [ml/mmHg]
    Cven: float   # venous compliance [ml/mmHg]
    Rart: float   # aortic valve resistance [mmHg*ms/ml]
    Rven: float   # mitral valve resistance [mmHg*ms/ml]
    Rper: float   # peripheral resistance [mmHg*ms/ml]

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"circulation parameter {name} must be "
                                      f"strictly positive, got {value!r}")


@dataclass(frozen=True)
class ROMParameters:
    """Full parameter set of the generalized one-fiber model."""

    V0: float       # stress-free cavity volume [ml]
    Vw: float       # wall volume [ml]
    ls0: float      # zero-passive-stress sarcomere length [um]
    lc0: float      # contractile threshold length [um]
    Tp0: float      # passive stress scale (base, scaled by gamma) [kPa]
    cp: float       # passive stiffness exponent (base, scaled by lambda) [1/um]
    T0: float       # isometric stress scale [kPa]
    al: float       # isometric steepness [1/um]
    Ea: float       # contractile stiffness [1/um]
    v0: float       # unloaded shortening velocity [um/ms]
    taur: float     # twitch rise time [ms]
    taud: float     # twitch decay time [ms]
    b: float        # twitch duration slope [ms/um]
    ld: float       # twitch duration intercept length [um]
    tcycle: float   # cardiac cycle duration [ms]
    tact: float     # activation time within the cycle [ms]
    circ: CirculationParameters

    def __post_init__(self):
        if not (self.Vw > 0 and self.V0 > 0):
            raise ValidationError("V0 and Vw must be positive")
        if self.ls0 <= 0:
            raise ValidationError("ls0 must be positive")
        if not (self.tcycle > self.tact >= 0):
            raise ValidationError("need tcycle > tact >= 0")
        if self.taur <= 0 or self.taud <= 0:
            raise ValidationError("twitch time constants must be positive")

    def as_vector(self) -> np.ndarray:
        """Flat float64 vector in the kernel layout (kernels.I_*)."""
        v = np.empty(kernels.N_PAR)
        v[kernels.I_V0] = self.V0
        v[kernels.I_VW] = self.Vw
        v[kernels.I_LS0] = self.ls0
        v[kernels.I_LC0] = self.lc0
        v[kernels.I_TP0] = self.Tp0
        v[kernels.I_CP] = self.cp
        v[kernels.I_T0] = self.T0
        v[kernels.I_AL] = self.al
        v[kernels.I_EA] = self.Ea
        v[kernels.I_V0SH] = self.v0
        v[kernels.I_TAUR] = self.taur
        v[kernels.I_TAUD] = self.taud
        v[kernels.I_B] = self.b
        v[kernels.I_LD] = self.ld
        v[kernels.I_TCYCLE] = self.tcycle
        v[kernels.I_TACT] = self.tact
        v[kernels.I_CART] = self.circ.Cart
        v[kernels.I_CVEN] = self.circ.Cven
        v[kernels.I_RART] = self.circ.Rart
        v[kernels.I_RVEN] = self.circ.Rven
        v[kernels.I_RPER] = self.circ.Rper
        v[kernels.I_VART0] = self.circ.Vart0
        v[kernels.I_VVEN0] = self.circ.Vven0
        return v

    def replace(self, **changes) -> "ROMParameters":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        circ_changes = {k: changes.pop(k) for k in list(changes)
                        if k in CirculationParameters.__dataclass_fields__}
        if circ_changes:
            circ_data = asdict(self.circ)
            circ_data.update(circ_changes)
            data["circ"] = CirculationParameters(**circ_data)
        data.update(changes)
        return ROMParameters(**data)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "circ"}
        d.update(asdict(self.circ))
        d["schema"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ROMParameters":
        d = dict(d)
        d.pop("schema", None)
        d.pop("units", None)
        d.pop("notes", None)
        try:
            circ = CirculationParameters(
                **{k: float(d.pop(k)) for k in
                   ("Vart0", "Vven0", "Cart", "Cven", "Rart", "Rven", "Rper")})
            return cls(circ=circ, **{k: float(v) for k, v in d.items()})
        except KeyError as exc:
            raise ValidationError(f"parameter file missing field {exc}") from exc
        except TypeError as exc:
            raise ValidationError(f"unexpected parameter field: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ROMParameters":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"cannot parse parameter file {path}: {exc}") from exc


@dataclass(frozen=True)
class CardiacState:
    """Instantaneous simulation state.

    ``t`` is the time within the current cycle (ms); activation occurs at
    params.tact. The closed loop fixes V + Vart + Vven for the whole run.
    """

    t: float
    V: float
    p: float
    lc: float
    Vart: float
    Vven: float

    def __post_init__(self):
        if self.V <= 0:
            raise ValidationError("cavity volume must be positive")


def default_parameters() -> ROMParameters:
    """Shipped defaults (data/default_params.json): a 44/136 ml reference
    ventricle whose steady cycle lands in the physiological EF band."""
    text = resources.files("cardiorom").joinpath("data/default_params.json").read_text()
    return ROMParameters.from_dict(json.loads(text))
