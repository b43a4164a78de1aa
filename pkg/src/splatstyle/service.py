"""HTTP render service for interactive intensity tuning.

Serves a base scene plus any number of trained style fields. Handlers
resolve every request against an immutable :class:`ServeState` snapshot;
``POST /admin/reload`` rebuilds a fresh snapshot from the same files and
swaps it in atomically, so concurrent readers see either the old state or
the new one, never a mix. Responses are pure functions of
(snapshot, query) and therefore byte-identical across repeats; an LRU
keyed by the canonical query makes repeats cheap without changing bytes.

Endpoints:
  GET  /scene/meta   — {count, views, bounds}
  GET  /styles       — [{style_id, Z, a, b}]
  GET  /masks        — [mask ids]
  GET  /render?view=&style=&beta=&width=&height=  — image/png
  POST /render       — {pose, intrinsics, styles:[{style_id, beta, mask_id?}]}
  POST /admin/reload — rebuild the snapshot from disk
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import FormatError, ValidationError
from .images import encode_png
from .render import RenderConfig, render
from .scene import (Camera, GaussianScene, file_fingerprint,
                    load_cameras_json, load_scene_json)
from .stylefield import (StyleEntry, StyleOffsetField, StyleTuner,
                         compose, compose_multi, embedding_for, load_field,
                         load_mask)

DEFAULT_CACHE_SIZE = 64


@dataclass(frozen=True)
class StyleSlot:
    offsets: StyleOffsetField
    tuner: StyleTuner


@dataclass
class ServeState:
    """One immutable service snapshot; replaced wholesale on reload."""

    scene: GaussianScene
    cameras: dict[str, Camera]
    styles: dict[str, StyleSlot]
    masks: dict[str, np.ndarray]
    config: RenderConfig = field(default_factory=RenderConfig)
    cache_size: int = DEFAULT_CACHE_SIZE

    def __post_init__(self):
        if not self.styles:
            raise ValidationError("service needs at least one style field")
        self._cache: OrderedDict[str, bytes] = OrderedDict()
        self._cache_lock = threading.Lock()

    def cached_png(self, key: str, producer) -> bytes:
        with self._cache_lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        body = producer()
        with self._cache_lock:
            self._cache[key] = body
            self._cache.move_to_end(key)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return body


def build_state(scene_path, cameras_path, field_paths, mask_paths=(),
                cache_size: int = DEFAULT_CACHE_SIZE,
                config: RenderConfig = RenderConfig()) -> ServeState:
    """Load everything the service needs from disk."""
    scene = load_scene_json(scene_path)
    cameras = {c.view_id: c for c in load_cameras_json(cameras_path)}
    fingerprint = file_fingerprint(scene_path)
    styles = {}
    for path in field_paths:
        offsets, tuner = load_field(path, expected_fingerprint=fingerprint)
        if offsets.count != scene.count:
            raise ValidationError(
                f"style field {path} covers {offsets.count} primitives, "
                f"scene has {scene.count}")
        styles[offsets.style_id] = StyleSlot(offsets=offsets, tuner=tuner)
    masks = {}
    for path in mask_paths:
        masks[Path(path).stem] = load_mask(path)
    return ServeState(scene=scene, cameras=cameras, styles=styles,
                      masks=masks, cache_size=cache_size)


class _HTTPError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _scene_meta(state: ServeState) -> dict:
    pos = state.scene.positions
    return {"count": state.scene.count,
            "views": sorted(state.cameras),
            "bounds": {"min": [float(v) for v in pos.min(axis=0)],
                       "max": [float(v) for v in pos.max(axis=0)]}}


def _styles_payload(state: ServeState) -> list[dict]:
    out = []
    for style_id in sorted(state.styles):
        tuner = state.styles[style_id].tuner
        out.append({"style_id": style_id, "Z": tuner.bucket_count,
                    "a": tuner.lo, "b": tuner.hi})
    return out


def _resolve_entries(state: ServeState, styles_spec: list[dict]) -> list[StyleEntry]:
    entries = []
    for spec in styles_spec:
        style_id = spec.get("style_id")
        slot = state.styles.get(style_id)
        if slot is None:
            raise _HTTPError(404, f"unknown style {style_id!r}")
        try:
            beta = float(spec["beta"])
        except (KeyError, TypeError, ValueError):
            raise _HTTPError(422, "style entry needs a numeric beta")
        if not slot.tuner.lo <= beta <= slot.tuner.hi:
            raise _HTTPError(
                422, f"beta {beta} outside [{slot.tuner.lo}, {slot.tuner.hi}]")
        mask = None
        if spec.get("mask_id") is not None:
            mask = state.masks.get(spec["mask_id"])
            if mask is None:
                raise _HTTPError(404, f"unknown mask {spec['mask_id']!r}")
        entries.append(StyleEntry(offsets=slot.offsets, tuner=slot.tuner,
                                  beta=beta, mask=mask))
    return entries


def _compose_for(state: ServeState, entries: list[StyleEntry]) -> GaussianScene:
    try:
        if len(entries) == 1 and entries[0].mask is None:
            entry = entries[0]
            gains = embedding_for(entry.tuner, entry.beta)
            return compose(state.scene, entry.offsets, gains)
        return compose_multi(state.scene, entries)
    except ValidationError as exc:
        raise _HTTPError(422, str(exc))


def _scaled_camera(cam: Camera, width: int | None, height: int | None) -> Camera:
    if width is None and height is None:
        return cam
    width = width or cam.width
    height = height or cam.height
    sx, sy = width / cam.width, height / cam.height
    return Camera(view_id=cam.view_id, fx=cam.fx * sx, fy=cam.fy * sy,
                  cx=(cam.cx + 0.5) * sx - 0.5, cy=(cam.cy + 0.5) * sy - 0.5,
                  width=width, height=height, w2c_rot=cam.w2c_rot,
                  w2c_trans=cam.w2c_trans)


def _render_get(state: ServeState, query: dict) -> bytes:
    view = query.get("view")
    if view is None:
        raise _HTTPError(422, "missing view parameter")
    cam = state.cameras.get(view)
    if cam is None:
        raise _HTTPError(404, f"unknown view {view!r}")
    style_id = query.get("style")
    if style_id is None:
        style_id = sorted(state.styles)[0]
    beta = query.get("beta", "0")
    try:
        width = int(query["width"]) if "width" in query else None
        height = int(query["height"]) if "height" in query else None
    except ValueError:
        raise _HTTPError(422, "width/height must be integers")
    entries = _resolve_entries(state, [{"style_id": style_id, "beta": beta}])
    key = json.dumps(["get", view, style_id, repr(entries[0].beta),
                      width, height], sort_keys=True)

    def produce():
        composed = _compose_for(state, entries)
        image = render(composed, _scaled_camera(cam, width, height),
                       state.config).image
        return encode_png(image)

    return state.cached_png(key, produce)


def _camera_from_body(body: dict) -> Camera:
    pose = body.get("pose") or {}
    intr = body.get("intrinsics") or {}
    try:
        return Camera(view_id="@pose",
                      fx=float(intr["fx"]), fy=float(intr["fy"]),
                      cx=float(intr["cx"]), cy=float(intr["cy"]),
                      width=int(intr["width"]), height=int(intr["height"]),
                      w2c_rot=np.asarray(pose["w2c_rot"], dtype=np.float64),
                      w2c_trans=np.asarray(pose["w2c_trans"],
                                           dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise _HTTPError(422, f"bad pose/intrinsics: {exc}")


def _render_post(state: ServeState, body: dict) -> bytes:
    styles_spec = body.get("styles")
    if not styles_spec:
        raise _HTTPError(422, "body needs a non-empty styles list")
    try:
        cam = _camera_from_body(body)
    except ValidationError as exc:
        raise _HTTPError(422, str(exc))
    entries = _resolve_entries(state, styles_spec)
    key = json.dumps(["post", cam.w2c_rot.tolist(), cam.w2c_trans.tolist(),
                      cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                      [[e.offsets.style_id, repr(e.beta),
                        None if e.mask is None else e.mask.tolist()]
                       for e in entries]])

    def produce():
        composed = _compose_for(state, entries)
        return encode_png(render(composed, cam, state.config).image)

    return state.cached_png(key, produce)


class _StateBox:
    """Holder whose snapshot can be swapped atomically."""

    def __init__(self, state: ServeState, rebuild=None):
        self._lock = threading.Lock()
        self._state = state
        self._rebuild = rebuild

    @property
    def state(self) -> ServeState:
        with self._lock:
            return self._state

    def reload(self) -> ServeState:
        if self._rebuild is None:
            raise _HTTPError(422, "service was built without reload support")
        fresh = self._rebuild()
        with self._lock:
            self._state = fresh
        return fresh


class _Handler(BaseHTTPRequestHandler):
    box: _StateBox = None  # set by make_server

    # Silence per-request logging; tests and CLI report at a higher level.
    def log_message(self, fmt, *args):  # noqa: D102
        pass

    def _send(self, status: int, content_type: str, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, payload, status: int = 200):
        self._send(status, "application/json",
                   json.dumps(payload).encode("utf-8"))

    def _send_error_json(self, status: int, message: str):
        self._send_json({"error": message}, status=status)

    def do_GET(self):
        parsed = urlparse(self.path)
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        state = self.box.state
        try:
            if parsed.path == "/scene/meta":
                self._send_json(_scene_meta(state))
            elif parsed.path == "/styles":
                self._send_json(_styles_payload(state))
            elif parsed.path == "/masks":
                self._send_json(sorted(state.masks))
            elif parsed.path == "/render":
                self._send(200, "image/png", _render_get(state, query))
            else:
                self._send_error_json(404, f"no such path {parsed.path}")
        except _HTTPError as exc:
            self._send_error_json(exc.status, str(exc))
        except (ValidationError, FormatError) as exc:
            self._send_error_json(422, str(exc))

    def do_POST(self):
        parsed = urlparse(self.path)
        try:
            if parsed.path == "/render":
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    raise _HTTPError(400, "body must be JSON")
                png = _render_post(self.box.state, body)
                self._send(200, "image/png", png)
            elif parsed.path == "/admin/reload":
                fresh = self.box.reload()
                self._send_json({"reloaded": True,
                                 "styles": sorted(fresh.styles)})
            else:
                self._send_error_json(404, f"no such path {parsed.path}")
        except _HTTPError as exc:
            self._send_error_json(exc.status, str(exc))
        except (ValidationError, FormatError) as exc:
            self._send_error_json(422, str(exc))


def make_server(state: ServeState, host: str = "127.0.0.1", port: int = 0,
                rebuild=None) -> ThreadingHTTPServer:
    """Build (but do not start) the threaded HTTP server."""
    box = _StateBox(state, rebuild=rebuild)
    handler = type("BoundHandler", (_Handler,), {"box": box})
    server = ThreadingHTTPServer((host, port), handler)
    server.state_box = box
    return server


def serve_forever(state: ServeState, host: str, port: int, rebuild=None):
    server = make_server(state, host, port, rebuild=rebuild)
    address = server.server_address
    print(f"serving on http://{address[0]}:{address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:  # pragma: no cover
        pass
    finally:
        server.server_close()
    return 0
