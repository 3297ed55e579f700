"""Camera and light parameter space of a rendered scene, and classifier oracles.

A scene has one camera (10 numbers) and 1-4 area lights (11 numbers each).
The flat vector layout is::

    camera: position xyz, look_at xyz, up xyz, fov
    light i: position xyz, look_at xyz, size (h, w), intensity rgb

Look-at points of the camera *and* of every light are tied to the camera
position: component ``j`` must lie between 0 and ``0.3 * camera_position[j]``
(closed interval, either orientation).

Oracles map scenes to an 11-way label and class probabilities.  The renderer
plus network of a real pipeline plugs in through :class:`SubprocessOracle`,
which speaks newline-delimited JSON over a child process's stdin/stdout::

    request:  {"id": 7, "n_lights": 2, "flat": [...]}
    response: {"id": 7, "label": 3, "probs": [...]}   or   {"id": 7, "error": "..."}
"""

from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cma_search import (RANGE_PERCENT, SCENE_MAX_GENERATIONS, AttackOutcome, SearchSpace,
                         attack)
from .seeding import make_rng

LOOK_AT_K = 0.3
CAMERA_RADIUS = (0.5, 8.0)
FOV_RANGE = (35.0, 100.0)
UP_RANGE = (-1.0, 1.0)
LIGHT_RADIUS = (1.0, 8.0)
LIGHT_SIZE = (0.1, 5.0)
INTENSITY = (0.0, 1.0)
MAX_LIGHTS = 4
N_CLASSES = 11
CAMERA_DIM = 10
LIGHT_DIM = 11


def flat_dim(n_lights: int) -> int:
    return CAMERA_DIM + LIGHT_DIM * n_lights


@dataclass(frozen=True, eq=False)
class CameraParams:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.position, self.look_at, self.up, [self.fov]])


@dataclass(frozen=True, eq=False)
class LightParams:
    position: np.ndarray
    look_at: np.ndarray
    size: np.ndarray
    intensity: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.position, self.look_at, self.size, self.intensity])


@dataclass(frozen=True, eq=False)
class SceneVector:
    camera: CameraParams
    lights: tuple[LightParams, ...]

    def __post_init__(self):
        if not 1 <= len(self.lights) <= MAX_LIGHTS:
            raise ValueError(f"a scene has 1-{MAX_LIGHTS} lights, got {len(self.lights)}")

    @property
    def n_lights(self) -> int:
        return len(self.lights)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.camera.flat()] + [l.flat() for l in self.lights])

    @classmethod
    def from_flat(cls, flat, n_lights: int) -> SceneVector:
        v = np.asarray(flat, dtype=float)
        if not 1 <= n_lights <= MAX_LIGHTS or v.shape != (flat_dim(n_lights),):
            raise ValueError(f"flat vector of shape {v.shape} does not match {n_lights} light(s)")
        cam = CameraParams(v[0:3].copy(), v[3:6].copy(), v[6:9].copy(), float(v[9]))
        lights = []
        for i in range(n_lights):
            o = CAMERA_DIM + LIGHT_DIM * i
            lights.append(LightParams(v[o:o + 3].copy(), v[o + 3:o + 6].copy(),
                                      v[o + 6:o + 8].copy(), v[o + 8:o + 11].copy()))
        return cls(cam, tuple(lights))

    def to_json(self) -> dict:
        return {"n_lights": self.n_lights, "flat": [float(x) for x in self.flat]}


def _on_sphere(rng: np.random.Generator, radius: float) -> np.ndarray:
    v = rng.standard_normal(3)
    return radius * v / np.linalg.norm(v)


def _look_at(rng: np.random.Generator, cam_pos: np.ndarray) -> np.ndarray:
    a = LOOK_AT_K * cam_pos
    return rng.uniform(np.minimum(0.0, a), np.maximum(0.0, a))


def sample_scene(rng: np.random.Generator) -> SceneVector:
    pos = _on_sphere(rng, rng.uniform(*CAMERA_RADIUS))
    cam = CameraParams(pos, _look_at(rng, pos), rng.uniform(*UP_RANGE, size=3), float(rng.uniform(*FOV_RANGE)))
    lights = []
    for _ in range(int(rng.integers(1, MAX_LIGHTS + 1))):
        lights.append(LightParams(
            _on_sphere(rng, rng.uniform(*LIGHT_RADIUS)),
            _look_at(rng, pos),
            rng.uniform(*LIGHT_SIZE, size=2),
            rng.uniform(*INTENSITY, size=3),
        ))
    return SceneVector(cam, tuple(lights))


def scene_ranges(n_lights: int) -> np.ndarray:
    """Per-component ``(lo, hi)`` bounding box of the scene distribution."""
    look = LOOK_AT_K * CAMERA_RADIUS[1]
    cam = [(-CAMERA_RADIUS[1], CAMERA_RADIUS[1])] * 3 + [(-look, look)] * 3 + [UP_RANGE] * 3 + [FOV_RANGE]
    light = ([(-LIGHT_RADIUS[1], LIGHT_RADIUS[1])] * 3 + [(-look, look)] * 3
             + [LIGHT_SIZE] * 2 + [INTENSITY] * 3)
    return np.array(cam + light * n_lights, dtype=float)


def _between(x, lo, hi):
    return (x >= lo) & (x <= hi)


def scene_membership_batch(F: np.ndarray, n_lights: int) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != flat_dim(n_lights):
        raise ValueError(f"expected flat vectors of length {flat_dim(n_lights)} for {n_lights} light(s), "
                         f"got {F.shape[1]}")
    pos = F[:, 0:3]
    box = LOOK_AT_K * pos
    box_lo, box_hi = np.minimum(0.0, box), np.maximum(0.0, box)

    def look_ok(L):
        return np.all(_between(L, box_lo, box_hi), axis=1)

    ok = _between(np.linalg.norm(pos, axis=1), *CAMERA_RADIUS)
    ok &= look_ok(F[:, 3:6])
    ok &= np.all(_between(F[:, 6:9], *UP_RANGE), axis=1)
    ok &= _between(F[:, 9], *FOV_RANGE)
    for i in range(n_lights):
        o = CAMERA_DIM + LIGHT_DIM * i
        ok &= _between(np.linalg.norm(F[:, o:o + 3], axis=1), *LIGHT_RADIUS)
        ok &= look_ok(F[:, o + 3:o + 6])
        ok &= np.all(_between(F[:, o + 6:o + 8], *LIGHT_SIZE), axis=1)
        ok &= np.all(_between(F[:, o + 8:o + 11], *INTENSITY), axis=1)
    return ok & np.all(np.isfinite(F), axis=1)


def scene_membership(v: SceneVector | Sequence[float], n_lights: int | None = None) -> bool:
    """Is the scene inside the sampling distribution's support (closed bounds)?"""
    if isinstance(v, SceneVector):
        flat, n_lights = v.flat, v.n_lights
    else:
        if n_lights is None:
            raise ValueError("n_lights is required with a flat vector")
        flat = np.asarray(v, dtype=float)
        if flat.ndim != 1:
            raise ValueError("expected a single flat vector")
    return bool(scene_membership_batch(flat[None], n_lights)[0])


# -- oracles ------------------------------------------------------------------

class OracleError(RuntimeError):
    """The oracle died, answered out of protocol, or reported an error."""


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SyntheticOracle:
    """Deterministic 11-class linear-softmax classifier over flat scene vectors.

    Each component is first mapped to ``[-1, 1]`` using :func:`scene_ranges`;
    logits are ``(W z + b) / temperature`` where ``W`` and ``b`` are standard
    normal draws from ``seed``.  Light slot ``i`` always uses the same columns
    of ``W``, whatever the light count.
    """

    def __init__(self, seed: int = 0, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        rng = make_rng(seed)
        self.seed = seed
        self.temperature = float(temperature)
        self.W = rng.standard_normal((N_CLASSES, flat_dim(MAX_LIGHTS)))
        self.b = rng.standard_normal(N_CLASSES)

    def logits_flat(self, F: np.ndarray, n_lights: int) -> np.ndarray:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        r = scene_ranges(n_lights)
        z = (F - r.mean(axis=1)) / (0.5 * (r[:, 1] - r[:, 0]))
        return (z @ self.W[:, :F.shape[1]].T + self.b) / self.temperature

    def classify_flat(self, F: np.ndarray, n_lights: int) -> list[tuple[int, np.ndarray]]:
        P = _softmax(self.logits_flat(F, n_lights))
        return [(int(np.argmax(p)), p) for p in P]

    def classify(self, scenes: Sequence[SceneVector]) -> list[tuple[int, np.ndarray]]:
        out = []
        for s in scenes:
            out += self.classify_flat(s.flat[None], s.n_lights)
        return out

    def log_proba(self, F: np.ndarray, n_lights: int) -> np.ndarray:
        z = self.logits_flat(F, n_lights)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def respond(self, request: dict) -> dict:
        """Answer one protocol request dict."""
        rid = request.get("id")
        try:
            n = int(request["n_lights"])
            flat = np.asarray(request["flat"], dtype=float)
            if flat.shape != (flat_dim(n),):
                raise ValueError(f"flat has length {flat.size}, expected {flat_dim(n)} for {n} light(s)")
            label, probs = self.classify_flat(flat[None], n)[0]
        except (KeyError, TypeError, ValueError) as exc:
            return {"id": rid, "error": str(exc)}
        return {"id": rid, "label": label, "probs": [float(p) for p in probs]}


class SubprocessOracle:
    """Client side of the JSON-lines oracle protocol.

    Requests are written in chunks of at most ``chunk`` lines, and each chunk's
    responses are read before the next is sent, so neither pipe can fill up.
    """

    def __init__(self, command: Sequence[str], chunk: int = 64):
        self.command = list(command)
        self.chunk = chunk
        self._next_id = 0
        self._lines_read = 0
        self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     text=True, bufsize=1)

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def classify_flat(self, F: np.ndarray, n_lights: int) -> list[tuple[int, np.ndarray]]:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        out = []
        for s in range(0, len(F), self.chunk):
            out += self._round_trip(F[s:s + self.chunk], n_lights)
        return out

    def classify(self, scenes: Sequence[SceneVector]) -> list[tuple[int, np.ndarray]]:
        out = []
        for s in scenes:
            out += self.classify_flat(s.flat[None], s.n_lights)
        return out

    def log_proba(self, F: np.ndarray, n_lights: int) -> np.ndarray:
        P = np.array([p for _, p in self.classify_flat(F, n_lights)])
        with np.errstate(divide="ignore"):
            return np.log(P)

    def _round_trip(self, F, n_lights):
        ids = list(range(self._next_id, self._next_id + len(F)))
        self._next_id += len(F)
        try:
            for rid, row in zip(ids, F):
                self.proc.stdin.write(json.dumps({"id": rid, "n_lights": n_lights,
                                                  "flat": [float(x) for x in row]}) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"oracle {self.command!r} is not accepting requests: {exc}") from exc
        results = []
        for rid in ids:
            line = self.proc.stdout.readline()
            self._lines_read += 1
            where = f"oracle response line {self._lines_read}"
            if not line:
                code = self.proc.poll()
                raise OracleError(f"{where}: oracle exited (status {code}) before answering id {rid}")
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                raise OracleError(f"{where}: malformed JSON: {line.rstrip()!r}") from None
            if not isinstance(msg, dict) or msg.get("id") != rid:
                raise OracleError(f"{where}: expected id {rid}: {line.rstrip()!r}")
            if "error" in msg:
                raise OracleError(f"{where}: oracle error: {msg['error']}")
            try:
                label = int(msg["label"])
                probs = np.asarray(msg["probs"], dtype=float)
            except (KeyError, TypeError, ValueError):
                raise OracleError(f"{where}: missing or invalid label/probs: {line.rstrip()!r}") from None
            if probs.ndim != 1 or not 0 <= label < probs.size:
                raise OracleError(f"{where}: label {label} outside probs of length {probs.size}")
            results.append((label, probs))
        return results


def oracle_classify(oracle, scenes: Sequence[SceneVector]) -> list[tuple[int, np.ndarray]]:
    """One ``(label, probs)`` per scene, in order."""
    return oracle.classify(scenes)


def serve(oracle, stdin=None, stdout=None) -> None:
    """Answer protocol requests from ``stdin`` until EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            resp = {"id": None, "error": f"bad request: {exc}"}
        else:
            resp = oracle.respond(req)
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


# -- attacks over a parameter block -------------------------------------------

def block_mask(n_lights: int, block: str) -> np.ndarray:
    """Active mask for ``"camera"`` or ``"light:<i>"`` (0-based light index)."""
    mask = np.zeros(flat_dim(n_lights), dtype=bool)
    if block == "camera":
        mask[:CAMERA_DIM] = True
    elif block.startswith("light:"):
        i = int(block.split(":", 1)[1])
        if not 0 <= i < n_lights:
            raise ValueError(f"light index {i} out of range for {n_lights} light(s)")
        o = CAMERA_DIM + LIGHT_DIM * i
        mask[o:o + LIGHT_DIM] = True
    else:
        raise ValueError(f"unknown block {block!r}; use 'camera' or 'light:<i>'")
    return mask


def scene_search_space(n_lights: int, block: str = "camera") -> SearchSpace:
    return SearchSpace(
        in_support=lambda X: scene_membership_batch(X, n_lights),
        active_mask=block_mask(n_lights, block),
        ranges=scene_ranges(n_lights),
        distance_kind=RANGE_PERCENT,
    )


class OracleClassifier:
    """Adapts an oracle to the batch log-probability callable CMA-Search expects."""

    def __init__(self, oracle, n_lights: int):
        self.oracle = oracle
        self.n_lights = n_lights

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.oracle.log_proba(X, self.n_lights)


def attack_scene(oracle, start: SceneVector, block: str = "camera", true_label: int | None = None,
                 max_generations: int = SCENE_MAX_GENERATIONS, sigma0: float | None = None,
                 seed: int = 0) -> AttackOutcome:
    """CMA-Search over one parameter block of ``start``.

    ``true_label`` defaults to the oracle's own label for ``start``.
    """
    clf = OracleClassifier(oracle, start.n_lights)
    flat = start.flat
    if true_label is None:
        true_label = int(np.argmax(clf(flat[None])[0]))
    return attack(clf, true_label, flat, scene_search_space(start.n_lights, block),
                  max_generations, sigma0, seed)
