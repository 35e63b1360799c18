"""Scenario files: one YAML document per scenario, validated with pydantic."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import durations as du
from .errors import ConfigError
from .kernels import GammaStar, InitialLaw, KernelLaw, PiecewiseConstant

Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]
NonNeg = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Unit = Annotated[float, Field(ge=0, le=1)]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- durations ---------------------------------------------------------

class ExponentialSpec(_Model):
    law: Literal["exponential"]
    rate: Positive

    def build(self):
        return du.Exponential(self.rate)


class FixedSpec(_Model):
    law: Literal["fixed"]
    value: NonNeg

    def build(self):
        return du.Fixed(self.value)


class UniformSpec(_Model):
    law: Literal["uniform"]
    low: NonNeg
    high: Positive

    def build(self):
        return du.Uniform(self.low, self.high)


class GammaSpec(_Model):
    law: Literal["gamma"]
    shape: Positive
    rate: Positive

    def build(self):
        return du.GammaLaw(self.shape, self.rate)


class WeibullSpec(_Model):
    law: Literal["weibull"]
    shape: Positive
    scale: Positive

    def build(self):
        return du.Weibull(self.shape, self.scale)


class HazardSpec(_Model):
    law: Literal["piecewise_hazard"]
    breaks: list[NonNeg]
    rates: list[NonNeg]

    def build(self):
        return du.PiecewiseHazard(tuple(self.breaks), tuple(self.rates))


class HistogramSpec(_Model):
    law: Literal["histogram"]
    edges: list[NonNeg]
    weights: list[NonNeg]

    def build(self):
        return du.Histogram(tuple(self.edges), tuple(self.weights))


DurationSpec = Annotated[Union[ExponentialSpec, FixedSpec, UniformSpec, GammaSpec, WeibullSpec,
                               HazardSpec, HistogramSpec], Field(discriminator="law")]


class StepSpec(_Model):
    """Right-continuous step function."""

    breaks: list[NonNeg]
    values: list[NonNeg]

    def build(self) -> PiecewiseConstant:
        return PiecewiseConstant(tuple(self.breaks), tuple(self.values))


class GammaStarSpec(_Model):
    values: list[Annotated[float, Field(gt=0, le=1)]]
    weights: list[NonNeg] = Field(default_factory=lambda: [1.0])

    @model_validator(mode="after")
    def _same_length(self):
        if len(self.values) != len(self.weights):
            raise ValueError("values and weights must have the same length")
        return self


# -- kernel and initial laws ------------------------------------------

class KernelSpec(_Model):
    family: Literal["MarkovSIS", "GeneralSIS", "SIR", "SIRS", "IndicatorGamma", "GradualGamma", "Custom"]
    lam: Union[Positive, StepSpec]
    beta: Optional[Positive] = None
    eta: Optional[DurationSpec] = None
    theta: Optional[DurationSpec] = None
    gamma_star: Optional[GammaStarSpec] = None
    recovery: Optional[StepSpec] = None
    ramp: Optional[Positive] = None
    steps: Annotated[int, Field(ge=1)] = 8
    lambda_star: Optional[Positive] = None
    mc_budget: Annotated[int, Field(ge=1)] = 10_000
    E_zeta: Optional[float] = None

    @field_validator("gamma_star", mode="before")
    @classmethod
    def _scalar_gamma_star(cls, v):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return {"values": [v], "weights": [1.0]}
        return v

    @model_validator(mode="after")
    def _family_fields(self):
        fam = self.family
        need = {"MarkovSIS": ("beta",), "GeneralSIS": ("eta",), "SIR": ("eta",), "SIRS": ("eta", "theta"),
                "IndicatorGamma": ("eta", "theta", "gamma_star"),
                "GradualGamma": ("eta", "theta", "gamma_star", "ramp"), "Custom": ("eta", "recovery")}[fam]
        for name in need:
            if getattr(self, name) is None:
                raise ValueError(f"family {fam} needs field {name!r}")
        allowed = set(need) | {"lam", "family", "steps", "lambda_star", "mc_budget", "E_zeta"}
        if fam == "Custom":
            allowed.add("gamma_star")
        for name in ("beta", "eta", "theta", "gamma_star", "recovery", "ramp"):
            if getattr(self, name) is not None and name not in allowed:
                raise ValueError(f"field {name!r} does not apply to family {fam}")
        if fam in ("MarkovSIS", "GeneralSIS", "SIR", "SIRS") and not isinstance(self.lam, float):
            raise ValueError(f"family {fam} takes a constant infectivity level")
        return self

    def gamma_star_law(self) -> GammaStar:
        g = self.gamma_star
        if g is None:
            return GammaStar()
        return GammaStar(tuple(g.values), tuple(g.weights))

    def build(self) -> KernelLaw:
        kw = {"lambda_star": self.lambda_star, "mc_budget": self.mc_budget}
        lam = self.lam if isinstance(self.lam, float) else self.lam.build()
        eta = self.eta.build() if self.eta is not None else None
        theta = self.theta.build() if self.theta is not None else None
        fam = self.family
        if fam == "MarkovSIS":
            return KernelLaw.markov_sis(lam, self.beta, **kw)
        if fam == "GeneralSIS":
            return KernelLaw.general_sis(lam, eta, **kw)
        if fam == "SIR":
            return KernelLaw.sir(lam, eta, **kw)
        if fam == "SIRS":
            return KernelLaw.sirs(lam, eta, theta, **kw)
        if fam == "IndicatorGamma":
            return KernelLaw.indicator_gamma(lam, eta, theta, self.gamma_star_law(), **kw)
        if fam == "GradualGamma":
            return KernelLaw.gradual_gamma(lam, eta, theta, self.gamma_star_law(), self.ramp, self.steps, **kw)
        shape = lam if isinstance(lam, PiecewiseConstant) else PiecewiseConstant.constant(lam)
        return KernelLaw.custom(shape, eta, self.recovery.build(), self.gamma_star_law(), **kw)


class InitialSpec(_Model):
    i_fraction: Unit
    xi: DurationSpec = Field(default_factory=lambda: FixedSpec(law="fixed", value=0.0))
    r_fraction: Unit = 0.0
    recovery_age: Optional[DurationSpec] = None

    @model_validator(mode="after")
    def _total(self):
        if self.i_fraction + self.r_fraction > 1 + 1e-12:
            raise ValueError("i_fraction + r_fraction exceeds 1")
        return self

    def build(self, law: KernelLaw) -> InitialLaw:
        rec = self.recovery_age.build() if self.recovery_age is not None else None
        return InitialLaw(law, self.i_fraction, self.xi.build(), self.r_fraction, rec)


class AbmSpec(_Model):
    n: Annotated[int, Field(ge=1)] = 1000
    grid_dt: Positive = 0.1
    N: list[Annotated[int, Field(ge=1)]] = Field(default_factory=list)
    replications: Annotated[int, Field(ge=1)] = 20
    T: Optional[Positive] = None


class PdeSpec(_Model):
    lambda_tilde: StepSpec
    gamma_tilde: StepSpec
    hazard: StepSpec
    S0: Unit
    I0_density: StepSpec
    R0_density: Optional[StepSpec] = None
    snapshot_times: list[NonNeg] = Field(default_factory=list)

    @field_validator("gamma_tilde")
    @classmethod
    def _gamma_unit(cls, v):
        if any(x > 1 for x in v.values):
            raise ValueError("gamma_tilde values must lie in [0, 1]")
        return v

    def build(self):
        from .pde import PdeScenario

        rd = self.R0_density.build() if self.R0_density else PiecewiseConstant.constant(0.0)
        return PdeScenario(self.lambda_tilde.build(), self.gamma_tilde.build(),
                           du.PiecewiseHazard(tuple(self.hazard.breaks), tuple(self.hazard.values)),
                           self.S0, self.I0_density.build(), rd, tuple(self.snapshot_times))


class Scenario(_Model):
    name: str
    kernel: Optional[KernelSpec] = None
    initial: Optional[InitialSpec] = None
    T: Positive
    dt: Positive = 0.01
    M: Annotated[int, Field(ge=1)] = 500
    method: Literal["auto", "exact", "mc"] = "auto"
    seed: Annotated[int, Field(ge=0)] = 0
    abm: AbmSpec = Field(default_factory=AbmSpec)
    pde: Optional[PdeSpec] = None
    out: str = "out"
    tolerances: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self):
        if (self.kernel is None) != (self.initial is None):
            raise ValueError("kernel and initial must be given together")
        if self.kernel is None and self.pde is None:
            raise ValueError("a scenario needs a kernel/initial pair or a pde section")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        return self

    # -- builders ------------------------------------------------------
    def law(self) -> KernelLaw:
        if self.kernel is None:
            from .pde import kernel_laws

            return kernel_laws(self.pde.build())[0]
        return self.kernel.build()

    def initial_law(self, law: KernelLaw | None = None) -> InitialLaw:
        law = law or self.law()
        if self.initial is None:
            from .pde import kernel_laws

            return kernel_laws(self.pde.build())[1]
        return self.initial.build(law)

    def pde_scenario(self):
        if self.pde is None:
            raise ConfigError(f"scenario {self.name!r} has no pde section")
        return self.pde.build()


def _format_errors(err: ValidationError, source: str) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]
                       if not (isinstance(p, str) and (p in _SPEC_TAGS or "[" in p)))
        lines.append(f"{source}: {loc or '<root>'}: {e['msg']}")
    return "\n".join(lines)


_SPEC_TAGS = {"exponential", "fixed", "uniform", "gamma", "weibull", "piecewise_hazard", "histogram",
              "float", "StepSpec", "GammaStarSpec", "constrained-float"}


def _derive(data: dict, source: str) -> Scenario:
    try:
        scn = Scenario.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err, source)) from None
    if scn.kernel is None:
        return scn
    try:
        law = scn.kernel.build()
        scn.initial.build(law)
        if scn.pde is not None:
            scn.pde.build()
    except ConfigError as err:
        raise ConfigError(f"{source}: kernel: {err}") from None
    if law.never_susceptible:
        if scn.kernel.E_zeta is not None:
            raise ConfigError(f"{source}: kernel.E_zeta: this law never regains susceptibility")
        return scn
    e_zeta = float(law.zeta_law.mean())
    given = scn.kernel.E_zeta
    if given is None:
        kernel = scn.kernel.model_copy(update={"E_zeta": e_zeta})
        return scn.model_copy(update={"kernel": kernel})
    if not math.isclose(given, e_zeta, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError(f"{source}: kernel.E_zeta: declared {given!r} but the onset law gives {e_zeta!r}")
    return scn


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{source}: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return _derive(data, source)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read scenario {path}: {err}") from None
    return parse_scenario(text, str(path))


def dump_scenario(scn: Scenario) -> str:
    data = scn.model_dump(mode="json", exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def write_scenario(scn: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(scn))


def grid_every(scn: Scenario, grid_dt: float) -> int:
    k = grid_dt / scn.dt
    if abs(k - round(k)) > 1e-9 * max(k, 1.0) or round(k) < 1:
        raise ConfigError(f"abm.grid_dt={grid_dt} is not a multiple of dt={scn.dt}")
    return int(round(k))


