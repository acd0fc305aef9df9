"""Scenario configuration files (TOML) and bundled default data."""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .scenario import (
    CapacityPathway,
    OmegaTrajectory,
    RecyclingRamp,
    Scenario,
    ScenarioError,
    build_bau,
    build_nze,
)
from .series import GW, interpolate_linear

CONFIG_DIR_ENV = "IRISIM_CONFIG_DIR"

SCHEMA = {
    "": {"name"},
    "pathway": {"kind", "anchors", "anchors_file", "end_value_gw", "end_year",
                "extrapolation", "pemel_share"},
    "omega": {"start", "floor", "decay_rate", "start_year"},
    "gamma": {"start", "end", "ramp_end_year", "start_year"},
    "fleet": {"tau_mean", "unit_size_mw", "horizon", "seed", "mc_subsample",
              "recycling_lag"},
}
REQUIRED = {
    "pathway": {"kind"},
    "omega": {"start", "floor", "decay_rate"},
    "gamma": {"start", "end", "ramp_end_year"},
    "fleet": {"tau_mean"},
}


class ConfigError(ValueError):
    """Invalid configuration; messages name the offending file and key."""


def default_config_dir() -> Path:
    env = os.environ.get(CONFIG_DIR_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("irisim") / "data"))


def check_schema(doc: dict, source: str = "<config>") -> None:
    errors = []
    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                errors.append(f"{source}: unknown section [{key}]")
                continue
            for sub in value:
                if sub not in SCHEMA[key]:
                    errors.append(f"{source}: unknown key '{sub}' in [{key}]")
        elif key not in SCHEMA[""]:
            errors.append(f"{source}: unknown top-level key '{key}'")
    for section, keys in REQUIRED.items():
        if section not in doc:
            errors.append(f"{source}: missing section [{section}]")
            continue
        for k in sorted(keys - set(doc[section])):
            errors.append(f"{source}: missing key '{k}' in [{section}]")
    if errors:
        raise ConfigError("\n".join(errors))


def read_anchor_csv(path: Path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 2:
        raise ConfigError(f"{path}: expected two columns (year, value)")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            out.append((int(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: line {n}: cannot parse {row!r}") from None
    return out


@dataclass(frozen=True)
class LoadedScenario:
    scenario: Scenario
    source: Path | None
    raw: dict
    inputs: tuple  # paths of data files the scenario depends on

    def digest(self) -> str:
        """SHA-256 over the config text and every referenced data file."""
        h = hashlib.sha256()
        files = ([self.source] if self.source else []) + list(self.inputs)
        for p in files:
            h.update(str(Path(p).name).encode())
            h.update(Path(p).read_bytes())
        if not self.source:
            h.update(repr(sorted(self.raw.items())).encode())
        return h.hexdigest()


def _pathway(sec: dict, base_dir: Path, horizon: tuple[int, int], source: str):
    kind = sec["kind"]
    inputs = []
    if "anchors" in sec:
        anchors = [(int(y), float(v)) for y, v in sec["anchors"]]
    elif "anchors_file" in sec:
        path = base_dir / sec["anchors_file"]
        if not path.exists():
            raise ConfigError(f"{source}: anchors_file {path} not found")
        anchors = read_anchor_csv(path)
        inputs.append(path)
    else:
        raise ConfigError(f"{source}: [pathway] needs 'anchors' or 'anchors_file'")
    first, last = horizon
    if kind == "bau":
        pw = build_bau(
            anchors,
            end_value=float(sec.get("end_value_gw", 489.0)),
            end_year=int(sec.get("end_year", 2050)),
            start_year=min(first, anchors[0][0]),
            extrapolation=sec.get("extrapolation", "cumulative-linear"),
        )
    elif kind == "nze":
        pw = build_nze(anchors, pemel_share=float(sec.get("pemel_share", 0.40)),
                       start_year=min(first, anchors[0][0]),
                       end_year=max(last, anchors[-1][0]))
    elif kind == "custom":
        cum = interpolate_linear(anchors, min(first, anchors[0][0]),
                                 max(last, anchors[-1][0]), GW)
        pw = CapacityPathway.from_cumulative(cum, "custom")
    else:
        raise ConfigError(f"{source}: [pathway] kind must be bau, nze or custom, got {kind!r}")
    return pw, inputs


def scenario_from_dict(doc: dict, base_dir: Path = Path("."), source: str = "<config>"):
    check_schema(doc, source)
    fleet = doc["fleet"]
    horizon = tuple(int(y) for y in fleet.get("horizon", (2024, 2050)))
    if len(horizon) != 2:
        raise ConfigError(f"{source}: [fleet] horizon must be [first, last]")
    try:
        pathway, inputs = _pathway(doc["pathway"], base_dir, horizon, source)
        om = doc["omega"]
        omega = OmegaTrajectory(float(om["start"]), float(om["floor"]),
                                float(om["decay_rate"]), int(om.get("start_year", horizon[0])))
        ga = doc["gamma"]
        gamma = RecyclingRamp(float(ga["start"]), float(ga["end"]), int(ga["ramp_end_year"]),
                              int(ga.get("start_year", horizon[0])))
        scenario = Scenario(
            pathway=pathway, omega=omega, gamma=gamma,
            tau_mean=float(fleet["tau_mean"]),
            unit_size=float(fleet.get("unit_size_mw", 1.0)),
            horizon=horizon,
            seed=int(fleet.get("seed", 0)),
            mc_subsample=int(fleet.get("mc_subsample", 1)),
            recycling_lag=int(fleet.get("recycling_lag", 0)),
            name=str(doc.get("name", "scenario")),
        )
    except ScenarioError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return LoadedScenario(scenario, None, doc, tuple(inputs))


def load_scenario(path: str | Path) -> LoadedScenario:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    loaded = scenario_from_dict(doc, path.parent, str(path))
    return LoadedScenario(loaded.scenario, path, doc, loaded.inputs)


def loads_toml(text: str) -> dict:
    return tomllib.load(io.BytesIO(text.encode()))
