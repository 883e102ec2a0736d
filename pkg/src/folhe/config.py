"""``key = value`` configuration files for the command line.

One parser reads every file given on the command line, later files
overriding earlier ones. Sections:

``[model]``
    ``n``, ``N``, ``leaf_dims`` (product model) or ``xi`` (rows split by
    ``;``), ``chi_scale``, ``dep_lattice``.
``[bundle]``
    ``factors`` (Chern vectors split by ``;``), ``holonomy`` (same layout).
``[extension:<name>]``, ``[twist:<name>]``
    ``i``, ``j``, ``k`` and ``coeffs`` (extension) or ``value`` (twist).
``[solver]``
    ``eps_min``, ``schedule``, ``tol``, ``newton_tol``, ``max_halvings``,
    ``blowup_threshold``, ``max_polish_drift``, ``seed``.
``[moduli]``
    ``xi``, ``count``, ``base``, ``dep_lattice``.
``[output]``
    ``dir``, ``json``, ``csv``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


def _split(raw: str, sep: str) -> list:
    return [t.strip() for t in raw.split(sep) if t.strip()]


def _ints(raw: str, key: str) -> list:
    try:
        return [int(t) for t in _split(raw, ",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma separated integers, got {raw!r}") from exc


def _floats(raw: str, key: str) -> list:
    try:
        return [float(t) for t in _split(raw, ",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma separated numbers, got {raw!r}") from exc


def _complexes(raw: str, key: str) -> list:
    try:
        return [complex(t.replace(" ", "")) for t in _split(raw, ",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma separated complex numbers, "
                          f"got {raw!r}") from exc


def _get(section, key, conv, default=None, *, required=False):
    name = f"{section.name}.{key}"
    if key not in section:
        if required:
            raise ConfigError(f"{name}: missing required key")
        return default
    raw = section[key].strip()
    if raw == "":
        return default
    try:
        return conv(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} ({exc})") from exc


_KNOWN = {
    "model": {"n", "N", "leaf_dims", "xi", "chi_scale", "dep_lattice"},
    "bundle": {"factors", "holonomy"},
    "extension": {"i", "j", "k", "coeffs"},
    "twist": {"i", "j", "k", "value"},
    "solver": {"eps_min", "schedule", "tol", "newton_tol", "max_halvings",
               "blowup_threshold", "max_polish_drift", "seed"},
    "moduli": {"xi", "count", "base", "dep_lattice"},
    "output": {"dir", "json", "csv"},
}


@dataclass
class SolverParams:
    eps_min: float = 1e-6
    schedule: list | None = None
    tol: float = 1e-8
    newton_tol: float | None = None
    max_halvings: int = 8
    blowup_threshold: float = 50.0
    max_polish_drift: float = 1e-3

    def kwargs(self) -> dict:
        return {"schedule": self.schedule, "eps_min": self.eps_min, "tol": self.tol,
                "newton_tol": self.newton_tol, "max_halvings": self.max_halvings,
                "blowup_threshold": self.blowup_threshold,
                "max_polish_drift": self.max_polish_drift}


@dataclass
class RunConfig:
    """Everything a subcommand needs, validated on construction."""

    sources: list = field(default_factory=list)
    model: dict = field(default_factory=dict)
    bundle: dict | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    moduli: dict | None = None
    output_dir: Path = Path("reports")
    json_name: str | None = None
    csv_name: str | None = None
    seed: int = 0

    def echo(self) -> dict:
        """Config as it appears in reports; paths are kept as given."""
        return {
            "sources": [str(s) for s in self.sources],
            "model": self.model,
            "bundle": self.bundle,
            "solver": self.solver.__dict__,
            "moduli": self.moduli,
            "seed": self.seed,
        }

    # -- builders -----------------------------------------------------------------

    def build_model(self):
        from .kernel import FoliatedTorusModel

        m = self.model
        if not m:
            raise ConfigError("model: section [model] is missing")
        kw = {"chi_scale": m["chi_scale"]}
        if m.get("dep_lattice"):
            kw["dep_lattice"] = m["dep_lattice"]
        try:
            if m.get("xi"):
                return FoliatedTorusModel(m["xi"], m["n"], m["N"], **kw)
            return FoliatedTorusModel.product(m["n"], m["N"], leaf_dims=m["leaf_dims"], **kw)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

    def build_bundle(self, model):
        from .bundles import BundleSpec, LineFactor

        b = self.bundle
        if not b:
            raise ConfigError("bundle: section [bundle] is missing")
        hol = b.get("holonomy") or [()] * len(b["factors"])
        if len(hol) != len(b["factors"]):
            raise ConfigError("bundle.holonomy: needs one entry per factor")
        factors = [LineFactor(tuple(c), tuple(y)) for c, y in zip(b["factors"], hol)]
        try:
            return BundleSpec(model, factors, extensions=b["extensions"], twist=b["twist"])
        except ValueError as exc:
            raise ConfigError(f"bundle: {exc}") from exc


def load(paths) -> RunConfig:
    """Read and validate ``paths`` (later files override earlier ones)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    for name in cp.sections():
        kind = name.split(":", 1)[0]
        if kind not in _KNOWN:
            raise ConfigError(f"{name}: unknown section")
        for key in cp[name]:
            if key not in _KNOWN[kind]:
                raise ConfigError(f"{name}.{key}: unknown key")
    cfg = RunConfig(sources=paths)
    if cp.has_section("model"):
        s = cp["model"]
        xi = _get(s, "xi", lambda r: [_split(row, ",") for row in _split(r, ";")])
        cfg.model = {
            "n": _get(s, "n", int, 1),
            "N": _get(s, "N", int, 8),
            "leaf_dims": _get(s, "leaf_dims", int, 1),
            "xi": xi,
            "chi_scale": _get(s, "chi_scale", float, 1.0),
            "dep_lattice": _get(s, "dep_lattice", lambda r: [_ints(row, "model.dep_lattice")
                                                             for row in _split(r, ";")]),
        }
        if cfg.model["N"] < 4:
            raise ConfigError("model.N: cutoff must be at least 4")
        if cfg.model["n"] < 1:
            raise ConfigError("model.n: must be positive")
        if cfg.model["chi_scale"] <= 0:
            raise ConfigError("model.chi_scale: must be positive")
    if cp.has_section("bundle"):
        s = cp["bundle"]
        factors = _get(s, "factors", lambda r: [_ints(f, "bundle.factors")
                                                for f in _split(r, ";")], required=True)
        holonomy = _get(s, "holonomy", lambda r: [_split(f, ",") for f in _split(r, ";")])
        ext, tw = [], []
        for name in cp.sections():
            kind = name.split(":", 1)[0]
            if kind == "extension":
                t = cp[name]
                ext.append((_get(t, "i", int, required=True), _get(t, "j", int, required=True),
                            tuple(_get(t, "k", lambda r: _ints(r, f"{name}.k"), required=True)),
                            _get(t, "coeffs", lambda r: _complexes(r, f"{name}.coeffs"),
                                 required=True)))
            elif kind == "twist":
                t = cp[name]
                tw.append((_get(t, "i", int, required=True), _get(t, "j", int, required=True),
                           tuple(_get(t, "k", lambda r: _ints(r, f"{name}.k"), required=True)),
                           _get(t, "value", float, required=True)))
        cfg.bundle = {"factors": factors, "holonomy": holonomy, "extensions": ext,
                      "twist": tw}
    if cp.has_section("solver"):
        s = cp["solver"]
        sp_ = SolverParams(
            eps_min=_get(s, "eps_min", float, 1e-6),
            schedule=_get(s, "schedule", lambda r: _floats(r, "solver.schedule")),
            tol=_get(s, "tol", float, 1e-8),
            newton_tol=_get(s, "newton_tol", float),
            max_halvings=_get(s, "max_halvings", int, 8),
            blowup_threshold=_get(s, "blowup_threshold", float, 50.0),
            max_polish_drift=_get(s, "max_polish_drift", float, 1e-3),
        )
        for key in ("eps_min", "tol", "newton_tol", "blowup_threshold", "max_polish_drift"):
            v = getattr(sp_, key)
            if v is not None and not v > 0:
                raise ConfigError(f"solver.{key}: must be positive")
        if sp_.schedule is not None:
            sch = sp_.schedule
            if not sch or sch[0] != 1.0 or any(b >= a for a, b in zip(sch, sch[1:])) \
                    or sch[-1] <= 0:
                raise ConfigError("solver.schedule: must start at 1 and decrease strictly "
                                  "to a positive value")
        cfg.solver = sp_
        cfg.seed = _get(s, "seed", int, 0)
    if cp.has_section("moduli"):
        s = cp["moduli"]
        cfg.moduli = {
            "xi": _get(s, "xi", str, required=True),
            "count": _get(s, "count", int, 10),
            "base": _get(s, "base", str, "0,0,0"),
            "dep_lattice": _get(s, "dep_lattice", lambda r: [_ints(row, "moduli.dep_lattice")
                                                             for row in _split(r, ";")]),
        }
        if cfg.moduli["count"] < 1:
            raise ConfigError("moduli.count: must be positive")
    if cp.has_section("output"):
        s = cp["output"]
        cfg.output_dir = Path(_get(s, "dir", str, "reports"))
        cfg.json_name = _get(s, "json", str)
        cfg.csv_name = _get(s, "csv", str)
    return cfg
