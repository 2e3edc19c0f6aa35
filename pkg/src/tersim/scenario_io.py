"""Scenario and cohort files: versioned JSON with documented schemas.

See docs/FORMATS.md for the field-by-field description.  Parse errors name
the offending JSON path; `version` is mandatory in both formats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from importlib import resources

from .netchannel import ChannelParams, PRESETS as CHANNEL_PRESETS
from .phantom import (PhantomConfig, Aneurysm, Thrombus,
                      PRESETS as PHANTOM_PRESETS)
from .session import Scenario, Station, MeasurementSpec, ScenarioInvalidError


class FileFormatError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise FileFormatError(where, f"missing required field '{key}'")
    return obj[key]


def _check_version(obj: dict, where: str) -> None:
    if _require(obj, "version", where) != 1:
        raise FileFormatError(where, f"unsupported version {obj['version']!r}")


def phantom_from_obj(obj, where: str = "phantom") -> PhantomConfig:
    if isinstance(obj, str):
        if obj not in PHANTOM_PRESETS:
            raise FileFormatError(
                where, f"unknown phantom preset {obj!r}; "
                f"known: {sorted(PHANTOM_PRESETS)}")
        return PHANTOM_PRESETS[obj]
    if not isinstance(obj, dict):
        raise FileFormatError(where, "must be a preset name or an object")
    kwargs = dict(obj)
    try:
        if kwargs.get("aneurysm") is not None:
            kwargs["aneurysm"] = Aneurysm(**kwargs["aneurysm"])
        if kwargs.get("thrombus") is not None:
            th = dict(kwargs["thrombus"])
            th["extent_y"] = tuple(th["extent_y"])
            kwargs["thrombus"] = Thrombus(**th)
        if "segmentary_extent_y" in kwargs:
            kwargs["segmentary_extent_y"] = tuple(kwargs["segmentary_extent_y"])
        return PhantomConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(where, str(exc)) from None


def phantom_to_obj(cfg: PhantomConfig) -> dict:
    d = asdict(cfg)
    if d["thrombus"] is not None:
        d["thrombus"]["extent_y"] = list(d["thrombus"]["extent_y"])
    d["segmentary_extent_y"] = list(d["segmentary_extent_y"])
    return d


def channel_from_obj(obj, where: str = "channel") -> ChannelParams:
    if isinstance(obj, str):
        if obj not in CHANNEL_PRESETS:
            raise FileFormatError(
                where, f"unknown channel preset {obj!r}; "
                f"known: {sorted(CHANNEL_PRESETS)}")
        return CHANNEL_PRESETS[obj]
    if not isinstance(obj, dict):
        raise FileFormatError(where, "must be a preset name or an object")
    try:
        return ChannelParams(**obj)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(where, str(exc)) from None


def scenario_from_json(text: str, name: str = "scenario") -> Scenario:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(name, f"line {exc.lineno}, col {exc.colno}: {exc.msg}")
    if not isinstance(obj, dict):
        raise FileFormatError(name, "top level must be an object")
    _check_version(obj, name)

    sweep = []
    for i, st in enumerate(_require(obj, "sweep", name)):
        where = f"{name}.sweep[{i}]"
        if not isinstance(st, dict):
            raise FileFormatError(where, "station must be an object")
        try:
            sweep.append(Station(
                xy=tuple(_require(st, "xy", where)),
                tilt=float(st.get("tilt", 0.0)),
                z=float(st.get("z", -0.003)),
                dwell_ticks=int(st.get("dwell_ticks", 80))))
        except (TypeError, ValueError) as exc:
            raise FileFormatError(where, str(exc)) from None

    measurements = []
    for i, m in enumerate(obj.get("measurements", [])):
        where = f"{name}.measurements[{i}]"
        measurements.append(MeasurementSpec(
            station_index=int(_require(m, "station", where)),
            measure=str(_require(m, "measure", where))))

    scenario = Scenario(
        phantom=phantom_from_obj(_require(obj, "phantom", name), f"{name}.phantom"),
        sweep=tuple(sweep),
        measurements=tuple(measurements),
        channel=channel_from_obj(obj.get("channel", "vthd"), f"{name}.channel"),
        seed=int(obj.get("seed", 0)),
        name=str(obj.get("name", name)))
    try:
        scenario.validate()
    except ScenarioInvalidError as exc:
        raise FileFormatError(name, str(exc)) from None
    return scenario


def scenario_to_json(s: Scenario) -> str:
    obj = {
        "version": 1,
        "name": s.name,
        "phantom": phantom_to_obj(s.phantom),
        "sweep": [{"xy": list(st.xy), "tilt": st.tilt, "z": st.z,
                   "dwell_ticks": st.dwell_ticks} for st in s.sweep],
        "measurements": [{"station": m.station_index, "measure": m.measure}
                         for m in s.measurements],
        "channel": asdict(s.channel),
        "seed": s.seed,
    }
    return json.dumps(obj, indent=2)


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int = 58
    aaa_prevalence: float = 0.15
    aaa_radius_median: float = 0.027
    aaa_radius_sigma: float = 0.18      # lognormal sigma
    aaa_radius_min: float = 0.0165
    aaa_radius_max: float = 0.030
    normal_radius_mean: float = 0.010
    normal_radius_sd: float = 0.0012
    normal_radius_min: float = 0.0075
    normal_radius_max: float = 0.012
    thrombus_prob_given_aaa: float = 0.75
    grade_mix: tuple[float, float, float] = (0.26, 0.21, 0.53)
    n_failures: int = 0
    seed: int = 42
    channel: ChannelParams = ChannelParams(base_delay=0.005)

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        for p in (self.aaa_prevalence, self.thrombus_prob_given_aaa,
                  *self.grade_mix):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if abs(sum(self.grade_mix) - 1.0) > 1e-9:
            raise ValueError("grade_mix must sum to 1")


def cohort_from_json(text: str, name: str = "cohort") -> CohortSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(name, f"line {exc.lineno}, col {exc.colno}: {exc.msg}")
    if not isinstance(obj, dict):
        raise FileFormatError(name, "top level must be an object")
    _check_version(obj, name)
    kwargs = {k: v for k, v in obj.items() if k != "version"}
    if "grade_mix" in kwargs:
        kwargs["grade_mix"] = tuple(kwargs["grade_mix"])
    if "channel" in kwargs:
        kwargs["channel"] = channel_from_obj(kwargs["channel"], f"{name}.channel")
    try:
        return CohortSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(name, str(exc)) from None


def load_bundled_scenario(name: str) -> Scenario:
    """Scenarios shipped with the package (aaa_54mm, normal_aorta, ...)."""
    ref = resources.files("tersim").joinpath(f"data/scenarios/{name}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return scenario_from_json(ref.read_text(), name=name)


def bundled_scenario_names() -> list[str]:
    base = resources.files("tersim").joinpath("data/scenarios")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))
