"""Run manifests: the config snapshot, toolkit version, seeds and wall time of a run.

Manifests are JSON with sorted keys and two-space indentation, so writing a
loaded manifest reproduces the original bytes.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

MANIFEST_FORMAT = "indist-adv-manifest/1"
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    """A manifest is unreadable or has a missing/invalid field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"manifest field {field_name!r}: {message}")
        self.field = field_name


class VersionMismatchWarning(UserWarning):
    pass


def toolkit_version() -> str:
    from . import __version__
    return __version__


@dataclass
class Manifest:
    command: str
    config: dict
    seeds: dict[str, int]
    version: str = field(default_factory=toolkit_version)
    wall_time_s: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
        }


def dumps(m: Manifest) -> str:
    return json.dumps(m.to_json(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def manifest_write(m: Manifest, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(m))


def _need(obj: dict, name: str, kinds, what: str):
    if name not in obj:
        raise ManifestError(name, "missing")
    v = obj[name]
    if isinstance(v, bool) or not isinstance(v, kinds):
        raise ManifestError(name, f"expected {what}, got {type(v).__name__}")
    return v


def manifest_from_json(obj) -> Manifest:
    if not isinstance(obj, dict):
        raise ManifestError("<root>", "expected a JSON object")
    fmt = _need(obj, "format", str, "a string")
    if fmt != MANIFEST_FORMAT:
        raise ManifestError("format", f"unsupported format {fmt!r}")
    command = _need(obj, "command", str, "a string")
    config = _need(obj, "config", dict, "an object")
    seeds = _need(obj, "seeds", dict, "an object")
    for k, v in seeds.items():
        if not isinstance(v, int) or isinstance(v, bool):
            raise ManifestError(f"seeds.{k}", f"expected an integer, got {v!r}")
    version = _need(obj, "version", str, "a string")
    wall = _need(obj, "wall_time_s", (int, float), "a number")
    if not math.isfinite(wall) or wall < 0:
        raise ManifestError("wall_time_s", f"expected a non-negative number, got {wall!r}")
    outputs = _need(obj, "outputs", list, "a list")
    if not all(isinstance(o, str) for o in outputs):
        raise ManifestError("outputs", "expected a list of strings")
    extra = set(obj) - {"format", "command", "config", "seeds", "version", "wall_time_s", "outputs"}
    if extra:
        raise ManifestError(sorted(extra)[0], "unknown field")
    if version != toolkit_version():
        warnings.warn(f"manifest written by version {version}, running {toolkit_version()}",
                      VersionMismatchWarning, stacklevel=3)
    return Manifest(command, config, seeds, version, wall, outputs)


def manifest_load(path) -> Manifest:
    with open(path) as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError("<root>", f"not valid JSON ({exc})") from None
    return manifest_from_json(obj)


def is_manifest(obj) -> bool:
    return isinstance(obj, dict) and obj.get("format") == MANIFEST_FORMAT
