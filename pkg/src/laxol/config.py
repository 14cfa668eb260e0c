"""Run configuration: strict JSON files mapped onto frozen dataclasses.

Every section rejects unknown keys. ``resolve`` fixes derived values (the
time step rule, the tolerance rule, ladders) so that the resolved config,
written back with ``to_dict``, reproduces the run exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .grid import GridFn, InvalidInput
from .hamiltonian import HamiltonianSpec, Mechanical, Potential, Tabulated, Term
from .scheme import SchemeParams

NAMED_NUMBERS = {"pi": math.pi, "-pi": -math.pi, "2pi": 2 * math.pi}
TAU_RULES = ("fixed", "sqrt_eps", "sqrt_inv_n")
POTENTIALS = ("zero", "const", "one_minus_cos", "sin_t_cos_2x", "terms")
INITIALS = ("trig", "abs", "const", "random")
FORMATS = ("csv", "json")
FIELDS = ("snapshots", "blocks", "drift")
REFERENCES = ("moreau_abs", "fine_grid")
EPS_RULES = ("tau_squared", "fixed_ratio")


def _number(value, where: str) -> float:
    if isinstance(value, str) and value in NAMED_NUMBERS:
        return NAMED_NUMBERS[value]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidInput(f"{where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise InvalidInput(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidInput(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _choice(value, options, where: str) -> str:
    if value not in options:
        raise InvalidInput(f"{where}: expected one of {list(options)}, got {value!r}")
    return value


def _section(raw, cls, where: str) -> dict:
    if not isinstance(raw, dict):
        raise InvalidInput(f"{where}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise InvalidInput(f"{where}: unknown keys {unknown}")
    return dict(raw)


def _opt(value, conv, where):
    return None if value is None else conv(value, where)


# --------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class TermConfig:
    amplitude: float
    frequency: float = 1.0
    shape: str = "cos"
    phase: float = 0.0
    time_shape: str | None = None
    time_frequency: float = 1.0

    @classmethod
    def parse(cls, raw, where) -> TermConfig:
        d = _section(raw, cls, where)
        if "amplitude" not in d:
            raise InvalidInput(f"{where}: missing 'amplitude'")
        return cls(
            amplitude=_number(d["amplitude"], f"{where}.amplitude"),
            frequency=_number(d.get("frequency", 1.0), f"{where}.frequency"),
            shape=_choice(d.get("shape", "cos"), ("cos", "sin"), f"{where}.shape"),
            phase=_number(d.get("phase", 0.0), f"{where}.phase"),
            time_shape=_choice(d.get("time_shape"), (None, "cos", "sin"), f"{where}.time_shape"),
            time_frequency=_number(d.get("time_frequency", 1.0), f"{where}.time_frequency"),
        )

    def build(self) -> Term:
        return Term(**dataclasses.asdict(self))


def _terms(raw, where) -> tuple[TermConfig, ...]:
    if not isinstance(raw, list):
        raise InvalidInput(f"{where}: expected a list")
    return tuple(TermConfig.parse(t, f"{where}[{i}]") for i, t in enumerate(raw))


@dataclass(frozen=True)
class KineticConfig:
    """``mechanical`` (``K*(v) = v^2/2 - drift v``) or ``tabulated`` samples of ``K*``."""

    kind: str = "mechanical"
    drift: float = 0.0
    velocities: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None

    @classmethod
    def parse(cls, raw, where="problem.kinetic") -> KineticConfig:
        d = _section(raw, cls, where)
        kind = _choice(d.get("kind", "mechanical"), ("mechanical", "tabulated"), f"{where}.kind")
        if kind == "mechanical":
            if "velocities" in d or "values" in d:
                raise InvalidInput(f"{where}: 'velocities'/'values' only apply to tabulated kinetics")
            return cls(kind, _number(d.get("drift", 0.0), f"{where}.drift"))
        if "drift" in d:
            raise InvalidInput(f"{where}: 'drift' only applies to mechanical kinetics")
        vel = d.get("velocities")
        val = d.get("values")
        if not isinstance(vel, list) or not isinstance(val, list):
            raise InvalidInput(f"{where}: tabulated kinetics need 'velocities' and 'values' lists")
        return cls(kind, 0.0,
                   tuple(_number(v, f"{where}.velocities") for v in vel),
                   tuple(_number(v, f"{where}.values") for v in val))

    def build(self):
        if self.kind == "mechanical":
            return Mechanical(self.drift)
        return Tabulated(np.array(self.velocities), np.array(self.values))


@dataclass(frozen=True)
class PotentialConfig:
    """Builtin potentials: ``zero``, ``const`` (``value``), ``one_minus_cos``
    (``1 - cos x``), ``sin_t_cos_2x``, or ``terms`` (``value`` plus a sum of terms)."""

    kind: str = "zero"
    value: float = 0.0
    terms: tuple[TermConfig, ...] = ()

    @classmethod
    def parse(cls, raw, where="problem.potential") -> PotentialConfig:
        d = _section(raw, cls, where)
        kind = _choice(d.get("kind", "zero"), POTENTIALS, f"{where}.kind")
        if "terms" in d and kind != "terms":
            raise InvalidInput(f"{where}: 'terms' only applies to kind 'terms'")
        if "value" in d and kind not in ("const", "terms"):
            raise InvalidInput(f"{where}: 'value' only applies to kinds 'const' and 'terms'")
        terms = _terms(d.get("terms", []), f"{where}.terms")
        return cls(kind, _number(d.get("value", 0.0), f"{where}.value"), terms)

    def build(self) -> Potential:
        if self.kind == "zero":
            return Potential.zero()
        if self.kind == "const":
            return Potential.constant_value(self.value)
        if self.kind == "one_minus_cos":
            return Potential.trig([Term(-1.0)], 1.0, name="one_minus_cos")
        if self.kind == "sin_t_cos_2x":
            return Potential.trig([Term(1.0, 2.0, time_shape="sin")], 0.0, name="sin_t_cos_2x")
        return Potential.trig([t.build() for t in self.terms], self.value, name="terms")


@dataclass(frozen=True)
class InitialConfig:
    """Initial data: ``trig`` (``constant`` plus terms), ``abs`` (``slope * |x|``),
    ``const`` (``value``) or ``random`` (uniform in ``[-amplitude, amplitude]``, seeded)."""

    kind: str = "const"
    terms: tuple[TermConfig, ...] = ()
    constant: float = 0.0
    slope: float = 1.0
    value: float = 0.0
    amplitude: float = 1.0
    seed: int = 0

    _KEYS = {
        "trig": {"terms", "constant"},
        "abs": {"slope"},
        "const": {"value"},
        "random": {"amplitude", "seed"},
    }

    @classmethod
    def parse(cls, raw, where="problem.initial") -> InitialConfig:
        d = _section(raw, cls, where)
        kind = _choice(d.get("kind", "const"), INITIALS, f"{where}.kind")
        stray = sorted(set(d) - {"kind"} - cls._KEYS[kind])
        if stray:
            raise InvalidInput(f"{where}: keys {stray} do not apply to kind {kind!r}")
        return cls(
            kind=kind,
            terms=_terms(d.get("terms", []), f"{where}.terms"),
            constant=_number(d.get("constant", 0.0), f"{where}.constant"),
            slope=_number(d.get("slope", 1.0), f"{where}.slope"),
            value=_number(d.get("value", 0.0), f"{where}.value"),
            amplitude=_number(d.get("amplitude", 1.0), f"{where}.amplitude"),
            seed=_integer(d.get("seed", 0), f"{where}.seed"),
        )

    def sample(self, params: SchemeParams) -> GridFn:
        x = params.coords
        if self.kind == "trig":
            pot = Potential.trig([t.build() for t in self.terms], self.constant)
            vals = pot(0.0, x)
        elif self.kind == "abs":
            vals = self.slope * np.abs(x)
        elif self.kind == "const":
            vals = np.full(x.shape, self.value)
        else:
            rng = np.random.default_rng(self.seed)
            vals = rng.uniform(-self.amplitude, self.amplitude, x.size)
        return params.grid(vals)


@dataclass(frozen=True)
class DomainConfig:
    length: float = 1.0
    origin: float = 0.0
    periodic: bool = True

    @classmethod
    def parse(cls, raw, where="problem.domain") -> DomainConfig:
        d = _section(raw, cls, where)
        periodic = d.get("periodic", True)
        if not isinstance(periodic, bool):
            raise InvalidInput(f"{where}.periodic: expected true or false")
        return cls(_number(d.get("length", 1.0), f"{where}.length"),
                   _number(d.get("origin", 0.0), f"{where}.origin"), periodic)


@dataclass(frozen=True)
class ProblemConfig:
    kinetic: KineticConfig = field(default_factory=KineticConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)

    @classmethod
    def parse(cls, raw, where="problem") -> ProblemConfig:
        d = _section(raw, cls, where)
        return cls(
            KineticConfig.parse(d.get("kinetic", {})),
            PotentialConfig.parse(d.get("potential", {})),
            DomainConfig.parse(d.get("domain", {})),
            InitialConfig.parse(d.get("initial", {})),
        )

    def hamiltonian(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.kinetic.build(), self.potential.build())


@dataclass(frozen=True)
class DiscretizationConfig:
    """Grid and time step.

    ``tau_rule``: ``fixed`` uses ``tau``; ``sqrt_eps`` sets ``tau = sqrt(length / n_space)``;
    ``sqrt_inv_n`` sets ``tau = sqrt(1 / n_space)``. ``eta_factor``, when given,
    sets ``eta = eta_factor / n_space**2``.
    """

    n_space: int = 64
    tau: float | None = None
    tau_rule: str = "fixed"
    eta: float = 0.0
    eta_factor: float | None = None
    h0: float = 1.0
    potential_time: str = "arrival"
    kernel_halfwidth: float | None = None
    engine: str = "fast"

    @classmethod
    def parse(cls, raw, where="discretization") -> DiscretizationConfig:
        d = _section(raw, cls, where)
        if "n_space" not in d:
            raise InvalidInput(f"{where}: missing 'n_space'")
        out = cls(
            n_space=_integer(d["n_space"], f"{where}.n_space"),
            tau=_opt(d.get("tau"), _number, f"{where}.tau"),
            tau_rule=_choice(d.get("tau_rule", "fixed"), TAU_RULES, f"{where}.tau_rule"),
            eta=_number(d.get("eta", 0.0), f"{where}.eta"),
            eta_factor=_opt(d.get("eta_factor"), _number, f"{where}.eta_factor"),
            h0=_number(d.get("h0", 1.0), f"{where}.h0"),
            potential_time=_choice(d.get("potential_time", "arrival"), ("arrival", "departure"),
                                   f"{where}.potential_time"),
            kernel_halfwidth=_opt(d.get("kernel_halfwidth"), _number, f"{where}.kernel_halfwidth"),
            engine=_choice(d.get("engine", "fast"), ("fast", "naive"), f"{where}.engine"),
        )
        if out.n_space < 2:
            raise InvalidInput(f"{where}.n_space: need at least 2 cells, got {out.n_space}")
        if out.tau_rule == "fixed" and out.tau is None:
            raise InvalidInput(f"{where}: tau_rule 'fixed' needs 'tau'")
        if out.tau_rule != "fixed" and out.tau is not None:
            raise InvalidInput(f"{where}: give either 'tau' or a non-fixed tau_rule, not both")
        if out.eta_factor is not None and "eta" in d:
            raise InvalidInput(f"{where}: give either 'eta' or 'eta_factor', not both")
        return out

    def resolve(self, length: float) -> DiscretizationConfig:
        tau = self.tau
        if self.tau_rule == "sqrt_eps":
            tau = math.sqrt(length / self.n_space)
        elif self.tau_rule == "sqrt_inv_n":
            tau = math.sqrt(1.0 / self.n_space)
        eta = self.eta if self.eta_factor is None else self.eta_factor / self.n_space ** 2
        return dataclasses.replace(self, tau=tau, tau_rule="fixed", eta=eta, eta_factor=None)


@dataclass(frozen=True)
class RunSettings:
    """Horizon and snapshot schedule. Exactly one of ``t_final`` and ``steps``."""

    t0: float = 0.0
    t_final: float | None = None
    steps: int | None = None
    snapshot_times: tuple[float, ...] = ()
    snapshot_every: int | None = None
    seed: int = 0

    @classmethod
    def parse(cls, raw, where="run") -> RunSettings:
        d = _section(raw, cls, where)
        times = d.get("snapshot_times", [])
        if not isinstance(times, list):
            raise InvalidInput(f"{where}.snapshot_times: expected a list")
        out = cls(
            t0=_number(d.get("t0", 0.0), f"{where}.t0"),
            t_final=_opt(d.get("t_final"), _number, f"{where}.t_final"),
            steps=_opt(d.get("steps"), _integer, f"{where}.steps"),
            snapshot_times=tuple(_number(t, f"{where}.snapshot_times") for t in times),
            snapshot_every=_opt(d.get("snapshot_every"), _integer, f"{where}.snapshot_every"),
            seed=_integer(d.get("seed", 0), f"{where}.seed"),
        )
        if (out.t_final is None) == (out.steps is None):
            raise InvalidInput(f"{where}: give exactly one of 't_final' and 'steps'")
        if out.steps is not None and out.steps < 0:
            raise InvalidInput(f"{where}.steps must be >= 0")
        if out.t_final is not None and out.t_final < out.t0:
            raise InvalidInput(f"{where}.t_final must be >= t0")
        if out.snapshot_every is not None and out.snapshot_every < 1:
            raise InvalidInput(f"{where}.snapshot_every must be >= 1")
        return out

    def n_steps(self, tau: float) -> int:
        if self.steps is not None:
            return self.steps
        return _steps_for(self.t_final - self.t0, tau)


def _steps_for(span: float, tau: float) -> int:
    k = span / tau
    near = round(k)
    if abs(k - near) <= 1e-9 * max(1.0, k):
        return int(near)
    return int(math.ceil(k))


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")
    fields: tuple[str, ...] = FIELDS

    @classmethod
    def parse(cls, raw, where="output") -> OutputConfig:
        d = _section(raw, cls, where)
        directory = d.get("directory", "out")
        if not isinstance(directory, str) or not directory:
            raise InvalidInput(f"{where}.directory: expected a non-empty string")
        formats = d.get("formats", list(FORMATS))
        fields_ = d.get("fields", list(FIELDS))
        if not isinstance(formats, list) or not isinstance(fields_, list):
            raise InvalidInput(f"{where}: 'formats' and 'fields' must be lists")
        return cls(directory,
                   tuple(_choice(f, FORMATS, f"{where}.formats") for f in formats),
                   tuple(_choice(f, FIELDS, f"{where}.fields") for f in fields_))


@dataclass(frozen=True)
class LadderPoint:
    n_space: int
    tau: float

    @classmethod
    def parse(cls, raw, where) -> LadderPoint:
        d = _section(raw, cls, where)
        if set(d) != {"n_space", "tau"}:
            raise InvalidInput(f"{where}: ladder points need 'n_space' and 'tau'")
        return cls(_integer(d["n_space"], f"{where}.n_space"), _number(d["tau"], f"{where}.tau"))


@dataclass(frozen=True)
class StudyConfig:
    """Parameters of the study commands.

    A ladder is either explicit (``ladder``) or generated from ``taus`` with
    ``eps_rule``: ``tau_squared`` (``eps = tau^2``) or ``fixed_ratio``
    (``eps = ratio * tau``).
    """

    ladder: tuple[LadderPoint, ...] = ()
    taus: tuple[float, ...] = ()
    eps_rule: str = "tau_squared"
    ratio: float = 0.1
    etas: tuple[float, ...] = ()
    reference: str = "moreau_abs"
    min_order: float = 0.8
    max_periods: int = 10_000
    tol: float | None = None
    matrix_max_size: int = 512
    expected: float | None = None
    slope_fit: bool = False
    fit_tolerance: float = 0.01

    @classmethod
    def parse(cls, raw, where="study") -> StudyConfig:
        d = _section(raw, cls, where)
        for key in ("ladder", "taus", "etas"):
            if not isinstance(d.get(key, []), list):
                raise InvalidInput(f"{where}.{key}: expected a list")
        if d.get("ladder") and d.get("taus"):
            raise InvalidInput(f"{where}: give either 'ladder' or 'taus', not both")
        slope_fit = d.get("slope_fit", False)
        if not isinstance(slope_fit, bool):
            raise InvalidInput(f"{where}.slope_fit: expected true or false")
        return cls(
            ladder=tuple(LadderPoint.parse(p, f"{where}.ladder[{i}]")
                         for i, p in enumerate(d.get("ladder", []))),
            taus=tuple(_number(t, f"{where}.taus") for t in d.get("taus", [])),
            eps_rule=_choice(d.get("eps_rule", "tau_squared"), EPS_RULES, f"{where}.eps_rule"),
            ratio=_number(d.get("ratio", 0.1), f"{where}.ratio"),
            etas=tuple(_number(e, f"{where}.etas") for e in d.get("etas", [])),
            reference=_choice(d.get("reference", "moreau_abs"), REFERENCES, f"{where}.reference"),
            min_order=_number(d.get("min_order", 0.8), f"{where}.min_order"),
            max_periods=_integer(d.get("max_periods", 10_000), f"{where}.max_periods"),
            tol=_opt(d.get("tol"), _number, f"{where}.tol"),
            matrix_max_size=_integer(d.get("matrix_max_size", 512), f"{where}.matrix_max_size"),
            expected=_opt(d.get("expected"), _number, f"{where}.expected"),
            slope_fit=slope_fit,
            fit_tolerance=_number(d.get("fit_tolerance", 0.01), f"{where}.fit_tolerance"),
        )

    def resolve(self, length: float) -> StudyConfig:
        if not self.taus:
            return self
        points = []
        for tau in self.taus:
            eps = tau * tau if self.eps_rule == "tau_squared" else self.ratio * tau
            n = length / eps
            if abs(n - round(n)) > 1e-6 * n:
                raise InvalidInput(
                    f"study: tau={tau:g} gives eps={eps:g}, which does not divide the domain length"
                )
            points.append(LadderPoint(int(round(n)), tau))
        return dataclasses.replace(self, ladder=tuple(points), taus=())


# --------------------------------------------------------------------------
# top level


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    discretization: DiscretizationConfig
    run: RunSettings
    output: OutputConfig = field(default_factory=OutputConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    @classmethod
    def from_dict(cls, raw: Any) -> RunConfig:
        d = _section(raw, cls, "config")
        for key in ("problem", "discretization", "run"):
            if key not in d:
                raise InvalidInput(f"config: missing section {key!r}")
        return cls(
            ProblemConfig.parse(d["problem"]),
            DiscretizationConfig.parse(d["discretization"]),
            RunSettings.parse(d["run"]),
            OutputConfig.parse(d.get("output", {})),
            StudyConfig.parse(d.get("study", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidInput(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            raw = json.loads(text, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def resolve(self) -> RunConfig:
        disc = self.discretization.resolve(self.problem.domain.length)
        return dataclasses.replace(
            self,
            discretization=disc,
            study=self.study.resolve(self.problem.domain.length),
        )

    def params(self, n_space: int | None = None, tau: float | None = None,
               eta: float | None = None) -> SchemeParams:
        disc = self.discretization.resolve(self.problem.domain.length)
        dom = self.problem.domain
        return SchemeParams(
            n_space=disc.n_space if n_space is None else n_space,
            tau=disc.tau if tau is None else tau,
            eta=disc.eta if eta is None else eta,
            h0=disc.h0,
            length=dom.length,
            origin=dom.origin,
            periodic=dom.periodic,
            potential_time=disc.potential_time,
            kernel_halfwidth=disc.kernel_halfwidth,
        )

    def to_dict(self) -> dict:
        d = _plain(dataclasses.asdict(self))
        prob = d["problem"]
        kin = prob["kinetic"]
        keep = {"kind", "drift"} if kin["kind"] == "mechanical" else {"kind", "velocities", "values"}
        prob["kinetic"] = {k: v for k, v in kin.items() if k in keep}
        pot = prob["potential"]
        keep = {"kind"} | {"const": {"value"}, "terms": {"value", "terms"}}.get(pot["kind"], set())
        prob["potential"] = {k: v for k, v in pot.items() if k in keep}
        ini = prob["initial"]
        keep = {"kind"} | InitialConfig._KEYS[ini["kind"]]
        prob["initial"] = {k: v for k, v in ini.items() if k in keep}
        return d

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _reject_constant(name):
    raise InvalidInput(f"non-finite JSON constant {name} is not allowed")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
