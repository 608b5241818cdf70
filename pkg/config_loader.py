import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

import convex_ifs_constants as constants
from geometry import PointSet
from ifs_errors import (
    AlphaConditionError,
    CoefficientError,
    ConfigError,
    DimensionMismatchError,
    MapError,
    MapOutOfBoxError,
)
from ifs_system import CoefficientTable, IFSSystem, synthesize_affine_coeffs
from maps import AffineMap, CompositeMap, DomainBox, MapDescriptor, Poly1DMap

# Configure logging for this module
logger = logging.getLogger(__name__)

MAP_TYPES = ('affine', 'poly1d', 'composite')
COEFFICIENTS_SYNTHESIZE = 'synthesize'
# Characters reserved by the word syntax 'pre|cycle' and 'a,b,c'.
RESERVED_ID_CHARS = set('|, \t\n')


@dataclass(frozen=True)
class RunDefaults:
    tol: float = constants.DEFAULT_TOL
    eps_decimate: float = constants.DEFAULT_EPS_DECIMATE
    max_iter: int = constants.DEFAULT_MAX_ITER
    seed: int = constants.DEFAULT_SEED
    picard_tol: float = constants.DEFAULT_PICARD_TOL

    def to_config(self) -> Dict[str, Any]:
        return {'tol': self.tol, 'eps_decimate': self.eps_decimate, 'max_iter': self.max_iter,
                'seed': self.seed, 'picard_tol': self.picard_tol}


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """A validated configuration: the system plus its run defaults and starting cloud."""
    system: IFSSystem
    initial: PointSet
    defaults: RunDefaults
    version: str = constants.CONFIG_VERSION_PREFIX
    synthesized: bool = False

    @property
    def name(self) -> str:
        return self.system.name

    @property
    def dim(self) -> int:
        return self.system.dim


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class ConfigLoader:
    """Loads and validates convex-IFS system configurations (schema v1)."""

    def load_config_file(self, path: str) -> Any:
        """Load a JSON or YAML file and return its contents."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                if path.endswith(('.yaml', '.yml')):
                    return yaml.safe_load(f)
                return json.load(f)
        except FileNotFoundError:
            logger.error(f"Configuration file not found: {path}")
            raise ConfigError("file not found", location=path) from None
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML file: {path} - {e}")
            raise ConfigError(f"YAML parse error: {e}", location=path) from e
        except json.JSONDecodeError as e:
            logger.error(f"Error parsing JSON file: {path} - {e}")
            raise ConfigError(f"JSON parse error at line {e.lineno} column {e.colno}: {e.msg}", location=path) from e
        except UnicodeDecodeError as e:
            logger.error(f"Configuration file is not valid UTF-8: {path} - {e}")
            raise ConfigError(f"not valid UTF-8 at byte {e.start}", location=path) from e

    def _numbers(self, raw: Any, length: int, location: str) -> List[float]:
        if not isinstance(raw, list) or len(raw) != length or not all(_is_number(v) for v in raw):
            raise ConfigError(f"expected a list of {length} numbers, got {raw!r}", location)
        return [float(v) for v in raw]

    def _positive(self, raw: Any, location: str, allow_zero: bool = False) -> float:
        if not _is_number(raw) or raw < 0 or (raw == 0 and not allow_zero):
            raise ConfigError(f"expected a {'non-negative' if allow_zero else 'positive'} number, got {raw!r}", location)
        return float(raw)

    def parse_box(self, raw: Any, dim: int) -> DomainBox:
        if not isinstance(raw, dict) or 'lo' not in raw or 'hi' not in raw:
            raise ConfigError("box must be a mapping with 'lo' and 'hi'", 'box')
        lo = self._numbers(raw['lo'], dim, 'box.lo')
        hi = self._numbers(raw['hi'], dim, 'box.hi')
        try:
            return DomainBox(np.array(lo), np.array(hi))
        except ValueError as e:
            raise ConfigError(str(e), 'box') from e

    def parse_map(self, raw: Any, dim: int, location: str) -> MapDescriptor:
        """Build one map descriptor; composite components are parsed recursively."""
        if not isinstance(raw, dict):
            raise ConfigError("map descriptor must be a mapping", location)
        kind = raw.get('type')
        if kind not in MAP_TYPES:
            raise ConfigError(f"unknown map type {kind!r}; expected one of {list(MAP_TYPES)}", f"{location}.type")
        try:
            if kind == 'affine':
                rows = raw.get('matrix')
                if not isinstance(rows, list) or len(rows) != dim:
                    raise ConfigError(f"matrix must have {dim} rows", f"{location}.matrix")
                matrix = [self._numbers(row, dim, f"{location}.matrix[{r}]") for r, row in enumerate(rows)]
                offset = self._numbers(raw.get('offset'), dim, f"{location}.offset")
                return AffineMap(matrix, offset)
            if kind == 'poly1d':
                if dim != 1:
                    raise ConfigError(f"poly1d maps need dim 1, config has dim {dim}", f"{location}.type")
                coeffs = raw.get('coefficients')
                if not isinstance(coeffs, list) or not coeffs:
                    raise ConfigError("coefficients must be a non-empty list", f"{location}.coefficients")
                return Poly1DMap(self._numbers(coeffs, len(coeffs), f"{location}.coefficients"))
            components = raw.get('components')
            if not isinstance(components, list) or not components:
                raise ConfigError("components must be a non-empty list", f"{location}.components")
            return CompositeMap([self.parse_map(c, dim, f"{location}.components[{k}]")
                                 for k, c in enumerate(components)])
        except (MapError, DimensionMismatchError) as e:
            raise ConfigError(str(e), location) from e

    def parse_maps(self, raw: Any, dim: int) -> Dict[str, MapDescriptor]:
        if not isinstance(raw, list) or not raw:
            raise ConfigError("maps must be a non-empty list", 'maps')
        maps: Dict[str, MapDescriptor] = {}
        for k, entry in enumerate(raw):
            location = f"maps[{k}]"
            if not isinstance(entry, dict) or 'id' not in entry:
                raise ConfigError("each map needs an 'id'", location)
            map_id = str(entry['id'])
            if not map_id or RESERVED_ID_CHARS & set(map_id):
                raise ConfigError(f"map id {map_id!r} is empty or contains one of '|', ',' or whitespace", f"{location}.id")
            if map_id in maps:
                raise ConfigError(f"duplicate map id {map_id!r}", f"{location}.id")
            maps[map_id] = self.parse_map(entry, dim, location)
        logger.debug(f"Parsed {len(maps)} maps: {list(maps)}")
        return maps

    def parse_coefficients(self, raw: Any, maps: Dict[str, MapDescriptor], box: DomainBox) -> CoefficientTable:
        symbols = list(maps)
        if raw == COEFFICIENTS_SYNTHESIZE:
            try:
                return synthesize_affine_coeffs(maps, box)
            except AlphaConditionError as e:
                raise ConfigError(str(e), f"maps[{symbols.index(e.i)}]") from e
            except MapError as e:
                raise ConfigError(str(e), 'coefficients') from e
        if not isinstance(raw, list):
            raise ConfigError(f"coefficients must be '{COEFFICIENTS_SYNTHESIZE}' or a list of entries", 'coefficients')
        for k, entry in enumerate(raw):
            location = f"coefficients[{k}]"
            if not isinstance(entry, dict) or 'i' not in entry or 'j' not in entry:
                raise ConfigError("each entry needs 'i' and 'j'", location)
            for key in ('i', 'j'):
                if str(entry[key]) not in maps:
                    raise ConfigError(f"unknown map id {entry[key]!r}", f"{location}.{key}")
            for key in ('a', 'b', 'c'):
                if key in entry:
                    self._positive(entry[key], f"{location}.{key}", allow_zero=True)
        try:
            return CoefficientTable.from_entries(symbols, raw)
        except CoefficientError as e:
            raise ConfigError(str(e), 'coefficients') from e

    def parse_points(self, raw: Any, dim: int, location: str) -> PointSet:
        if not isinstance(raw, list) or not raw:
            raise ConfigError("expected a non-empty list of points", location)
        points = []
        for k, p in enumerate(raw):
            if dim == 1 and _is_number(p):
                p = [p]
            points.append(self._numbers(p, dim, f"{location}[{k}]"))
        return PointSet(np.array(points))

    def parse_defaults(self, raw: Any) -> RunDefaults:
        if raw is None:
            return RunDefaults()
        if not isinstance(raw, dict):
            raise ConfigError("defaults must be a mapping", 'defaults')
        unknown = set(raw) - set(RunDefaults().to_config())
        if unknown:
            logger.warning(f"Ignoring unknown defaults: {sorted(unknown)}")
        values = RunDefaults().to_config()
        for key in ('tol', 'picard_tol'):
            if key in raw:
                values[key] = self._positive(raw[key], f"defaults.{key}")
        if 'eps_decimate' in raw:
            values['eps_decimate'] = self._positive(raw['eps_decimate'], 'defaults.eps_decimate', allow_zero=True)
        for key in ('max_iter', 'seed'):
            if key in raw:
                if not isinstance(raw[key], int) or isinstance(raw[key], bool) or raw[key] < 0:
                    raise ConfigError(f"expected a non-negative integer, got {raw[key]!r}", f"defaults.{key}")
                values[key] = raw[key]
        return RunDefaults(**values)

    def validate_system_config(self, raw: Any, name_hint: str = '', threads: int = 1) -> SystemConfig:
        """Validate the structure and version (v1) of a system configuration and build the system."""
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping", '<root>')
        for key in ('version', 'dim', 'box', 'maps', 'coefficients'):
            if key not in raw:
                raise ConfigError(f"missing required key '{key}'", key)

        version = raw['version']
        if not isinstance(version, str) or not version.startswith(constants.CONFIG_VERSION_PREFIX):
            raise ConfigError(f"unsupported version {version!r}; expected '{constants.CONFIG_VERSION_PREFIX}'", 'version')
        dim = raw['dim']
        if not isinstance(dim, int) or isinstance(dim, bool) or not 1 <= dim <= 8:
            raise ConfigError(f"dim must be an integer between 1 and 8, got {dim!r}", 'dim')

        box = self.parse_box(raw['box'], dim)
        maps = self.parse_maps(raw['maps'], dim)
        table = self.parse_coefficients(raw['coefficients'], maps, box)
        name = str(raw.get('name', name_hint))
        try:
            system = IFSSystem(maps, table, box, name=name, threads=threads)
        except MapOutOfBoxError as e:
            location = f"maps[{list(maps).index(e.symbol)}]" if e.symbol in maps else 'maps'
            raise ConfigError(str(e), location) from e
        except AlphaConditionError as e:
            raise ConfigError(str(e), f"coefficients ({e.i}, {e.j})") from e
        except (CoefficientError, DimensionMismatchError, MapError) as e:
            raise ConfigError(str(e), 'maps') from e

        if 'initial' in raw:
            initial = self.parse_points(raw['initial'], dim, 'initial')
            if not box.contains(initial.points):
                raise ConfigError("initial points must lie inside the box", 'initial')
        else:
            initial = PointSet(box.center.reshape(1, -1))
        defaults = self.parse_defaults(raw.get('defaults'))
        logger.info(f"Configuration '{name}' version '{version}' loaded: {len(maps)} maps, dim {dim}, d = {system.d:.6g}")
        return SystemConfig(system, initial, defaults, version, raw['coefficients'] == COEFFICIENTS_SYNTHESIZE)

    def load_and_validate_config(self, path: str, threads: int = 1) -> SystemConfig:
        """Load a configuration file and return the validated SystemConfig."""
        try:
            raw = self.load_config_file(path)
            name_hint = os.path.splitext(os.path.basename(path))[0]
            return self.validate_system_config(raw, name_hint=name_hint, threads=threads)
        except ConfigError as e:
            logger.error(f"Invalid configuration {path}: {e}")
            raise

    def dump_system_config(self, config: SystemConfig) -> Dict[str, Any]:
        """Serialize back to the v1 schema."""
        system = config.system
        return {
            'version': config.version,
            'name': system.name,
            'dim': system.dim,
            'box': system.box.to_config(),
            'maps': [{'id': s, **system.maps[s].to_config()} for s in system.symbols],
            'coefficients': COEFFICIENTS_SYNTHESIZE if config.synthesized else system.table.to_entries(),
            'initial': config.initial.points.tolist(),
            'defaults': config.defaults.to_config(),
        }

    def save_config_file(self, config: SystemConfig, path: str) -> None:
        data = self.dump_system_config(config)
        with open(path, 'w', encoding='utf-8') as f:
            if path.endswith(('.yaml', '.yml')):
                yaml.safe_dump(data, f, sort_keys=False)
            else:
                json.dump(data, f, indent=2)
        logger.info(f"Wrote configuration '{config.name}' to {path}")


def default_config_path(name: str) -> Optional[str]:
    """Path of a shipped fixture such as 'cantor', or None if there is none."""
    path = os.path.join(constants.CONFIG_DIR, f"{name}.json")
    return path if os.path.exists(path) else None
