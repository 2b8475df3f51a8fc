"""Experiment configuration: an INI file with a schema version, validated before any work."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .environment import DISTRIBUTIONS, REGIMES
from .torus import TorusGrid

SCHEMA_VERSION = 1
KINDS = ("schauder", "spectra", "env-stats", "slfv", "duality", "kpp")
SCALINGS = ("sparse", "diffusive")


class ConfigError(ValueError):
    pass


def _meta(section: str, doc: str):
    return {"section": section, "doc": doc}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = field(metadata=_meta("experiment", "one of " + ", ".join(KINDS)))
    schema_version: int = field(default=SCHEMA_VERSION, metadata=_meta("experiment", "config schema version"))
    seed: int = field(default=1, metadata=_meta("experiment", "master seed"))
    workers: int = field(default=1, metadata=_meta("experiment", "worker processes for replica ensembles"))
    output: str = field(default="", metadata=_meta("experiment", "subdirectory of the output root (default: kind)"))

    d: int = field(default=1, metadata=_meta("model", "dimension, 1 or 2"))
    n: tuple[int, ...] = field(default=(8,), metadata=_meta("model", "space-separated list of scales"))
    m: int = field(default=8, metadata=_meta("model", "grid oversampling, N = m n"))
    regime: str = field(default="white-noise", metadata=_meta("model", "environment: white-noise or smooth"))
    scaling: str = field(default="sparse", metadata=_meta("model", "SLFV scaling: sparse or diffusive"))
    distribution: str = field(default="rademacher", metadata=_meta("model", "box law: rademacher or uniform"))
    rho: float = field(default=2.0, metadata=_meta("model", "sparsity exponent, rho > 3d/2"))
    eta: float = field(default=1.0, metadata=_meta("model", "diffusive impact exponent (1 in d=1)"))
    zero_noise: bool = field(default=False, metadata=_meta("model", "replace the environment by s = 0"))

    T: float = field(default=0.5, metadata=_meta("numerics", "time horizon"))
    dt: float = field(default=0.005, metadata=_meta("numerics", "PDE step size"))
    checkpoints: int = field(default=5, metadata=_meta("numerics", "equally spaced checkpoints in (0, T]"))
    rank: int = field(default=24, metadata=_meta("numerics", "eigenpairs kept in spectral expansions"))
    eigen_count: int = field(default=4, metadata=_meta("numerics", "eigenpairs reported"))
    kappa: float = field(default=0.25, metadata=_meta("numerics", "regularity loss in the enhanced-noise norm"))
    lambdas: tuple[float, ...] = field(default=(1.0, 10.0, 100.0), metadata=_meta("numerics", "resolvent parameters"))
    alpha: float = field(default=0.5, metadata=_meta("numerics", "Hoelder exponent of the Schauder corpus"))
    corpus: int = field(default=50, metadata=_meta("numerics", "fields in the Schauder calibration corpus"))
    kpp_n: int = field(default=32, metadata=_meta("numerics", "scale of the KPP reference grid"))
    cn_cache: str = field(default="cn_cache.csv", metadata=_meta("numerics", "c_n cache, relative to the output root"))

    replicas: int = field(default=1000, metadata=_meta("monte-carlo", "replicas per ensemble"))
    seeds: int = field(default=10, metadata=_meta("monte-carlo", "environments per scale (env-stats)"))
    max_events: int = field(default=0, metadata=_meta("monte-carlo", "event budget per replica, 0 = none"))

    # ------------------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        err = []
        if self.schema_version != SCHEMA_VERSION:
            err.append(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if self.kind not in KINDS:
            err.append(f"kind {self.kind!r} not in {KINDS}")
        if self.d not in (1, 2):
            err.append("d must be 1 or 2")
        if not self.n:
            err.append("n list is empty")
        if self.regime not in REGIMES:
            err.append(f"regime {self.regime!r} not in {REGIMES}")
        if self.scaling not in SCALINGS:
            err.append(f"scaling {self.scaling!r} not in {SCALINGS}")
        if self.distribution not in DISTRIBUTIONS:
            err.append(f"distribution {self.distribution!r} not in {DISTRIBUTIONS}")
        if self.workers < 1:
            err.append("workers must be >= 1")
        if self.d in (1, 2):
            for n in self.n:
                try:
                    TorusGrid(self.d, n, self.m).check_resolution()
                except ValueError as exc:
                    err.append(f"n={n}: {exc}")
        uses_slfv = self.kind in ("slfv", "duality", "kpp")
        if uses_slfv:
            if self.scaling == "sparse" and not self.rho > 1.5 * self.d:
                err.append(f"sparse scaling needs rho > 3d/2 = {1.5 * self.d}")
            if self.scaling == "diffusive":
                if self.eta <= 0:
                    err.append("diffusive scaling needs eta > 0")
                if self.d == 1 and self.eta != 1.0:
                    err.append("diffusive scaling in d=1 needs eta = 1")
            if self.replicas < 1:
                err.append("replicas must be >= 1")
            if self.T <= 0:
                err.append("T must be positive")
            if self.checkpoints < 1:
                err.append("checkpoints must be >= 1")
            if self.max_events < 0:
                err.append("max_events must be >= 0")
        if self.kind == "duality" and self.scaling != "sparse":
            err.append("duality needs the sparse scaling")
        if self.kind == "kpp":
            if self.scaling != "diffusive" or self.regime != "smooth":
                err.append("kpp needs diffusive scaling in a smooth environment")
            if self.d == 2 and any(self.kpp_n % n for n in self.n):
                err.append("kpp_n must be a multiple of every n in d=2")
        if self.kind in ("duality", "kpp") and self.dt <= 0:
            err.append("dt must be positive")
        if self.kind == "duality" and self.T > 0 and abs(round(self.T / self.dt) * self.dt - self.T) > 1e-9:
            err.append("T must be a multiple of dt")
        if self.kind in ("spectra", "duality") and not 1 <= self.eigen_count <= 32:
            err.append("eigen_count must lie in [1, 32]")
        if self.kind == "duality" and not 1 <= self.rank <= 32:
            err.append("rank must lie in [1, 32]")
        if self.kind == "env-stats":
            if self.seeds < 1:
                err.append("seeds must be >= 1")
            if not 0 < self.kappa < 0.5:
                err.append("kappa must lie in (0, 1/2)")
            if any(lam < 1 for lam in self.lambdas):
                err.append("lambdas must be >= 1")
        if self.kind == "schauder" and self.corpus < 1:
            err.append("corpus must be >= 1")
        if err:
            raise ConfigError("; ".join(err))
        return self

    @property
    def out_name(self) -> str:
        return self.output or self.kind

    def checkpoint_times(self) -> list[float]:
        return [self.T * i / self.checkpoints for i in range(self.checkpoints + 1)]

    # ------------------------------------------------------------------
    def to_text(self, comments: bool = True) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            sec = f.metadata["section"]
            lines = sections.setdefault(sec, [])
            if comments:
                lines.append(f"# {f.metadata['doc']}")
            lines.append(f"{f.name} = {_dump(getattr(self, f.name))}")
        return "\n".join(f"[{s}]\n" + "\n".join(ls) + "\n" for s, ls in sections.items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text(comments=False).encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                f = known[key]
                if f.metadata["section"] != sec:
                    raise ConfigError(f"key {key!r} belongs in [{f.metadata['section']}]")
                kw[key] = _load(raw, f.type, key)
        if "kind" not in kw:
            raise ConfigError("missing [experiment] kind")
        if "schema_version" not in kw:
            raise ConfigError("missing [experiment] schema_version")
        return cls(**kw).validate()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


def _dump(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_dump(x) for x in v)
    return str(v)


def _load(raw: str, typ: str, key: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "tuple[int, ...]":
            return tuple(int(x) for x in raw.split())
        if typ == "tuple[float, ...]":
            return tuple(float(x) for x in raw.split())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc
    return raw


_DEFAULTS = {
    "schauder": dict(d=1, n=(16, 32, 64, 128)),
    "spectra": dict(d=1, n=(8, 16, 32), zero_noise=True),
    "env-stats": dict(d=2, n=(8, 16), seeds=10),
    "slfv": dict(d=1, n=(8,), rho=2.0, T=0.01, checkpoints=2, replicas=1000, zero_noise=True),
    "duality": dict(d=1, n=(8,), rho=2.0, T=0.5, dt=0.005, replicas=2000),
    "kpp": dict(d=2, n=(8, 16), scaling="diffusive", regime="smooth", T=0.05, dt=0.0, replicas=2, kpp_n=16),
}


def default_config(kind: str) -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"kind {kind!r} not in {KINDS}")
    kw = dict(_DEFAULTS[kind])
    if kind == "kpp":
        kw["dt"] = kpp_stable_dt(kw["d"], kw["kpp_n"], 8, kw["T"])
    return ExperimentConfig(kind=kind, **kw).validate()


def kpp_stable_dt(d: int, kpp_n: int, m: int, T: float) -> float:
    """Largest ``T / k`` satisfying the KPP step-size guard on the reference grid."""
    import math

    from .limits import stability_number

    N = kpp_n * m
    steps = math.ceil(T * stability_number(d, N, 1.0))
    return T / steps
