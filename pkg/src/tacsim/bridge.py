"""Line-delimited JSON bridge over stdio for foreign-language bindings.

One request per line, one response per line. Requests carry an integer
id, an op name, and a params object; responses echo the id and carry
either a result or an error with the originating exception type and
message. Large arrays cross the boundary as base64 little-endian
float64, row-major; small vectors go as plain JSON numbers, which round
trip bit-exactly through shortest-representation decimal.

Every step/reset result includes the observation digest computed on
this side, so a client can hash the decoded bytes with the same recipe
and prove the crossing was lossless.
"""

import base64
import json
import sys
from typing import Dict, IO, Optional

import numpy as np

from . import envs as ev
from .errors import InvalidArgumentError, TacsimError

PROTOCOL_VERSION = 1


def _b64(a: np.ndarray) -> str:
    buf = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return base64.b64encode(buf).decode("ascii")


def _obs_record(obs: ev.Observation) -> dict:
    return {
        "step_index": obs.step_index,
        "markers": [
            {"shape": list(m.shape), "data": _b64(m)} for m in obs.markers
        ],
        "load_states": [
            {
                "contact_center": [float(v) for v in ls.contact_center],
                "max_indentation": float(ls.max_indentation),
                "shear": [float(v) for v in ls.shear],
                "twist": float(ls.twist),
                "in_contact": bool(ls.in_contact),
            }
            for ls in obs.load_states
        ],
        "rgb": [
            None if r is None else {"shape": list(r.shape), "data": _b64(r)}
            for r in obs.rgb
        ],
        "heightmap": [
            None if h is None else {"shape": list(h.shape), "data": _b64(h)}
            for h in obs.heightmap
        ],
        "case_poses": [[float(v) for v in p.as_array()] for p in obs.case_poses],
        "object_centroids": [
            [float(v) for v in row] for row in obs.object_centroids
        ],
        "object_poses": [
            None if p is None else [float(v) for v in p.as_array()]
            for p in obs.object_poses
        ],
        "digest": ev.observation_digest(obs),
    }


def _timings_record(t: ev.StageTimings) -> dict:
    return {
        "physics_ms": t.physics_ms,
        "heightmap_ms": t.heightmap_ms,
        "optical_ms": t.optical_ms,
        "marker_ms": t.marker_ms,
    }


class _Server:
    def __init__(self) -> None:
        self._envs: Dict[int, ev.Environment] = {}
        self._next_handle = 1

    def _env(self, params: dict) -> ev.Environment:
        handle = params.get("env")
        if not isinstance(handle, int) or handle not in self._envs:
            raise InvalidArgumentError(f"unknown or closed env handle {handle!r}")
        return self._envs[handle]

    def op_hello(self, params: dict) -> dict:
        return {"protocol": PROTOCOL_VERSION, "tasks": list(ev.TASKS)}

    def op_make_env(self, params: dict) -> dict:
        task = params.get("task", "")
        cfg_doc = params.get("config")
        cfg = ev.config_from_dict(cfg_doc) if cfg_doc is not None else None
        env = ev.make_env(
            task, config=cfg, mode=params.get("mode"), seed=params.get("seed")
        )
        handle = self._next_handle
        self._next_handle += 1
        self._envs[handle] = env
        return {
            "env": handle,
            "config": ev.config_to_dict(env.config),
            "episode_length": ev.scripted_episode_length(task),
        }

    def op_reset(self, params: dict) -> dict:
        env = self._env(params)
        obs = env.reset(seed=params.get("seed"))
        return {"obs": _obs_record(obs)}

    def op_step(self, params: dict) -> dict:
        env = self._env(params)
        act = params.get("action")
        if not isinstance(act, dict):
            raise InvalidArgumentError("step needs an action object")
        twist = np.asarray(act.get("twist", ()), dtype=np.float64)
        if twist.shape != (6,):
            raise InvalidArgumentError(f"action twist must have 6 entries, got shape {twist.shape}")
        action = ev.Action(twist, aperture=float(act.get("aperture", 0.0)))
        obs, timings = env.step(action)
        return {"obs": _obs_record(obs), "timings": _timings_record(timings)}

    def op_scripted_action(self, params: dict) -> dict:
        action = ev.scripted_action(
            params.get("task", ""), params.get("mode", ""), int(params.get("step_index", 0))
        )
        return {
            "twist": [float(v) for v in action.twist],
            "aperture": float(action.aperture),
        }

    def op_close(self, params: dict) -> dict:
        handle = params.get("env")
        if not isinstance(handle, int) or handle not in self._envs:
            raise InvalidArgumentError(f"unknown or closed env handle {handle!r}")
        del self._envs[handle]
        return {}

    def handle(self, request: dict) -> dict:
        rid = request.get("id")
        op_name = request.get("op")
        fn = getattr(self, f"op_{op_name}", None) if isinstance(op_name, str) else None
        if fn is None:
            return {
                "id": rid,
                "ok": False,
                "error": {"type": "InvalidArgumentError", "message": f"unknown op {op_name!r}"},
            }
        try:
            result = fn(request.get("params") or {})
            return {"id": rid, "ok": True, "result": result}
        except TacsimError as exc:
            return {
                "id": rid,
                "ok": False,
                "error": {"type": type(exc).__name__, "message": str(exc)},
            }


def serve(stdin: IO[str], stdout: IO[str]) -> int:
    """Serve requests until EOF or a shutdown op; returns the exit code."""
    server = _Server()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {
                "id": None,
                "ok": False,
                "error": {"type": "ConfigError", "message": f"bad request JSON: {exc.msg}"},
            }
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()
            continue
        if request.get("op") == "shutdown":
            stdout.write(json.dumps({"id": request.get("id"), "ok": True, "result": {}}) + "\n")
            stdout.flush()
            return 0
        response = server.handle(request)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    return 0
