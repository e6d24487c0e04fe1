"""Strict JSON scenario files, merged over DEFAULT_SCENARIO and validated."""

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.config import DEFAULT_SCENARIO
from src.core_model.bumps import BumpSum, CompactBump
from src.core_model.cutoff import CutoffSpec
from src.core_model.phase_space import AdmissibleSpec, FieldGrid, RunConfig
from src.forward.control_field import ControlField
from src.forward.snapshot import read_control
from src.logger import get_logger
from src.optimize.descent import OptimizeConfig

logger = get_logger(__name__)

MODES = ("forward", "backward", "gradcheck", "optimize", "fixedpoint", "picard-study")
BUMP_KEYS = {"center", "radius_x", "radius_v", "amplitude", "exponent"}
CUTOFF_KEYS = {"inner_radius", "outer_radius"}
CONTROL_KEYS = {"uniform", "file"}


class ScenarioError(ValueError):
    """Invalid scenario content; path names the offending JSON key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class GradcheckSettings:
    directions: int
    delta: float
    tolerance: float
    tangent_tolerance: float
    abs_tolerance: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """A validated scenario; target None means the transported initial datum."""

    mode: str
    datum: BumpSum
    target: Optional[BumpSum]
    initial_control: Dict[str, Any]
    run: RunConfig
    optimize: OptimizeConfig
    gradcheck: GradcheckSettings
    picard_max_iters: int
    picard_tol: float
    self_field: bool
    raw: Dict[str, Any]
    sha256: str
    base_dir: Path

    def build_control(self) -> ControlField:
        grid, T = self.run.field_grid, self.run.T
        if "uniform" in self.initial_control:
            return ControlField.uniform(grid, T, self.initial_control["uniform"])
        path = self.base_dir / self.initial_control["file"]
        try:
            field = read_control(path)
        except (OSError, ValueError) as e:
            raise ScenarioError("initial_control.file", str(e)) from e
        if field.grid != grid or field.final_time != T:
            raise ScenarioError(
                "initial_control.file",
                f"{path} does not match run.field_grid and run.T",
            )
        return field


def _check_keys(data: Dict, allowed, path: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        prefix = f"{path}." if path else ""
        raise ScenarioError(f"{prefix}{unknown[0]}", "unknown key")


def _merge(defaults: Dict, override: Dict, path: str = "") -> Dict:
    """Deep merge of override into defaults; unknown keys are rejected."""
    _check_keys(override, defaults, path)
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        sub = f"{path}.{key}" if path else key
        base = defaults[key]
        if isinstance(base, dict) and key != "initial_control":
            if not isinstance(value, dict):
                raise ScenarioError(sub, "expected an object")
            merged[key] = _merge(base, value, sub)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _field_of(error: ValueError, section: str) -> str:
    """Dotted key named at the start of a validation message, else the section."""
    match = re.match(rf"({section}(?:\.\w+)+)", str(error))
    return match.group(1) if match else section


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ScenarioError(path, f"expected a finite number, got {value!r}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    number = _number(value, path)
    if number != int(number):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    return int(number)


def _vector(value: Any, length: int, path: str) -> List[float]:
    if not isinstance(value, list) or len(value) != length:
        raise ScenarioError(path, f"expected a list of {length} numbers")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _bumps(value: Any, path: str) -> BumpSum:
    if not isinstance(value, list):
        raise ScenarioError(path, "expected a list of bumps")
    bumps = []
    for i, entry in enumerate(value):
        where = f"{path}[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(where, "expected an object")
        _check_keys(entry, BUMP_KEYS, where)
        for key in ("center", "radius_x", "radius_v"):
            if key not in entry:
                raise ScenarioError(f"{where}.{key}", "missing")
        try:
            bumps.append(
                CompactBump(
                    center=tuple(_vector(entry["center"], 6, f"{where}.center")),
                    radius_x=_number(entry["radius_x"], f"{where}.radius_x"),
                    radius_v=_number(entry["radius_v"], f"{where}.radius_v"),
                    amplitude=_number(entry.get("amplitude", 1.0), f"{where}.amplitude"),
                    exponent=_integer(entry.get("exponent", 3), f"{where}.exponent"),
                )
            )
        except ScenarioError:
            raise
        except ValueError as e:
            raise ScenarioError(where, str(e)) from e
    return BumpSum.of(bumps)


def _run_config(run: Dict) -> RunConfig:
    grid_raw = run["field_grid"]
    try:
        grid = FieldGrid(
            origin=tuple(_vector(grid_raw["origin"], 3, "run.field_grid.origin")),
            spacing=tuple(_vector(grid_raw["spacing"], 3, "run.field_grid.spacing")),
            dims=tuple(
                _integer(v, f"run.field_grid.dims[{i}]")
                for i, v in enumerate(_vector(grid_raw["dims"], 3, "run.field_grid.dims"))
            ),
            n_time_knots=_integer(grid_raw["n_time_knots"], "run.field_grid.n_time_knots"),
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError("run.field_grid", str(e)) from e

    cutoff = None
    if run["cutoff"] is not None:
        if not isinstance(run["cutoff"], dict):
            raise ScenarioError("run.cutoff", "expected an object or null")
        _check_keys(run["cutoff"], CUTOFF_KEYS, "run.cutoff")
        try:
            inner = run["cutoff"].get("inner_radius")
            outer = run["cutoff"].get("outer_radius")
            cutoff = CutoffSpec(
                inner_radius=_number(inner, "run.cutoff.inner_radius"),
                outer_radius=_number(outer, "run.cutoff.outer_radius"),
            )
        except ScenarioError:
            raise
        except ValueError as e:
            raise ScenarioError("run.cutoff", str(e)) from e

    admissible = run["admissible"]
    try:
        spec = AdmissibleSpec(
            K=_number(admissible["K"], "run.admissible.K"),
            beta=_number(admissible["beta"], "run.admissible.beta"),
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError("run.admissible", str(e)) from e

    try:
        return RunConfig(
            T=_number(run["T"], "run.T"),
            dt=_number(run["dt"], "run.dt"),
            softening=_number(run["softening"], "run.softening"),
            sample_spacing=_number(run["sample_spacing"], "run.sample_spacing"),
            field_grid=grid,
            weight_floor=_number(run["weight_floor"], "run.weight_floor"),
            lam=_number(run["lambda"], "run.lambda"),
            admissible=spec,
            cutoff=cutoff,
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(_field_of(e, "run"), str(e)) from e


def _initial_control(value: Any) -> Dict[str, Any]:
    if not isinstance(value, dict) or len(value) != 1:
        raise ScenarioError("initial_control", "expected exactly one of 'uniform' or 'file'")
    _check_keys(value, CONTROL_KEYS, "initial_control")
    if "uniform" in value:
        return {"uniform": _vector(value["uniform"], 3, "initial_control.uniform")}
    if not isinstance(value["file"], str):
        raise ScenarioError("initial_control.file", "expected a path string")
    return {"file": value["file"]}


def _optimize_config(raw: Dict) -> OptimizeConfig:
    max_step = raw["max_field_step"]
    try:
        return OptimizeConfig(
            step_size=_number(raw["step_size"], "optimize.step_size"),
            armijo=_number(raw["armijo"], "optimize.armijo"),
            backtrack=_number(raw["backtrack"], "optimize.backtrack"),
            max_iters=_integer(raw["max_iters"], "optimize.max_iters"),
            tol=_number(raw["tol"], "optimize.tol"),
            damping=_number(raw["damping"], "optimize.damping"),
            max_field_step=None
            if max_step is None
            else _number(max_step, "optimize.max_field_step"),
            formula=raw["formula"],
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(_field_of(e, "optimize"), str(e)) from e


def _gradcheck(raw: Dict) -> GradcheckSettings:
    settings = GradcheckSettings(
        directions=_integer(raw["directions"], "gradcheck.directions"),
        delta=_number(raw["delta"], "gradcheck.delta"),
        tolerance=_number(raw["tolerance"], "gradcheck.tolerance"),
        tangent_tolerance=_number(raw["tangent_tolerance"], "gradcheck.tangent_tolerance"),
        abs_tolerance=_number(raw["abs_tolerance"], "gradcheck.abs_tolerance"),
    )
    if settings.directions < 0:
        raise ScenarioError("gradcheck.directions", "must be nonnegative")
    for name in ("delta", "tolerance", "tangent_tolerance"):
        if not getattr(settings, name) > 0:
            raise ScenarioError(f"gradcheck.{name}", "must be positive")
    if settings.abs_tolerance < 0:
        raise ScenarioError("gradcheck.abs_tolerance", "must be nonnegative")
    return settings


def scenario_hash(raw: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of the merged scenario."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_scenario(
    data: Dict[str, Any], mode: Optional[str] = None, base_dir: Path = Path(".")
) -> Scenario:
    """Validate a scenario document.

    Args:
        data: Parsed JSON object, merged over DEFAULT_SCENARIO
        mode: Subcommand; overrides the document's mode
        base_dir: Directory that relative file paths refer to

    Returns:
        The validated scenario

    Raises:
        ScenarioError: unknown key, wrong type or a value outside its range
    """
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected a JSON object")
    user_run = data.get("run", {}) if isinstance(data.get("run", {}), dict) else {}
    raw = _merge(DEFAULT_SCENARIO, data)
    if mode is not None:
        raw["mode"] = mode
    if raw["mode"] not in MODES:
        raise ScenarioError("mode", f"expected one of {', '.join(MODES)}, got {raw['mode']!r}")
    if raw["mode"] == "fixedpoint":
        if user_run.get("lambda") is None:
            raise ScenarioError("run.lambda", "fixedpoint mode needs an explicit lambda > 0")
        if not _number(user_run["lambda"], "run.lambda") > 0:
            raise ScenarioError("run.lambda", "fixedpoint mode needs lambda > 0")
    if not isinstance(raw["self_field"], bool):
        raise ScenarioError("self_field", "expected true or false")

    target = None
    if raw["target"] == "transported":
        pass
    elif isinstance(raw["target"], list):
        target = _bumps(raw["target"], "target")
    else:
        raise ScenarioError("target", "expected a list of bumps or \"transported\"")

    picard = raw["picard"]
    picard_iters = _integer(picard["max_iters"], "picard.max_iters")
    if picard_iters < 1:
        raise ScenarioError("picard.max_iters", "must be at least 1")
    picard_tol = _number(picard["tol"], "picard.tol")
    if not picard_tol > 0:
        raise ScenarioError("picard.tol", "must be positive")

    scenario = Scenario(
        mode=raw["mode"],
        datum=_bumps(raw["initial_datum"], "initial_datum"),
        target=target,
        initial_control=_initial_control(raw["initial_control"]),
        run=_run_config(raw["run"]),
        optimize=_optimize_config(raw["optimize"]),
        gradcheck=_gradcheck(raw["gradcheck"]),
        picard_max_iters=picard_iters,
        picard_tol=picard_tol,
        self_field=raw["self_field"],
        raw=raw,
        sha256=scenario_hash(raw),
        base_dir=Path(base_dir),
    )
    if scenario.datum.is_zero:
        raise ScenarioError("initial_datum", "the initial datum vanishes identically")
    return scenario


def load_scenario(path: Optional[Union[str, Path]], mode: Optional[str] = None) -> Scenario:
    """Read and validate a scenario file; None gives the default scenario."""
    if path is None:
        logger.info("No scenario file given, using the default scenario")
        return parse_scenario({}, mode)
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as e:
        raise ScenarioError("<file>", f"{path} not found") from e
    except json.JSONDecodeError as e:
        raise ScenarioError("<file>", f"{path} is not valid JSON: {e}") from e
    scenario = parse_scenario(data, mode, base_dir=path.parent)
    logger.info(f"Loaded scenario {path} (sha256 {scenario.sha256[:12]})")
    return scenario
