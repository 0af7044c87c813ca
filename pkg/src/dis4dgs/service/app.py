"""Interactive render service.

HTTP: GET /info (scene metadata), GET /healthz. WebSocket /stream: the client
sends JSON view requests (camera-to-world pose, fov, timestamp, mode, size)
and receives a JSON metadata message followed by a binary frame. Frames are
raw 8-bit RGB behind a fixed 16-byte header so the viewer can blit them with
zero decode work.

Each session owns its camera-stage cache: scrubbing time with a fixed pose
reuses the cached world-to-camera arrays (cache_hit=true in the metadata).
A newer request arriving before rendering starts replaces the queued one, so
interactive scrubbing never backlogs.
"""

from __future__ import annotations

import asyncio
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, ValidationError

from ..imgio import encode_u8
from ..projection import ProjectionCache, RenderOptions
from ..rasterize import render
from ..scene import CameraModel, Scene4D, quat_to_rotmat, rotmat_to_quat

FRAME_MAGIC = b"D4GS"
FRAME_FORMAT_RGB8 = 1
_HEADER = struct.Struct("<4sIHHHH")  # magic, frame id, width, height, format, reserved


def pack_frame(frame_id: int, rgb_u8: np.ndarray) -> bytes:
    h, w = rgb_u8.shape[:2]
    header = _HEADER.pack(FRAME_MAGIC, frame_id & 0xFFFFFFFF, w, h,
                          FRAME_FORMAT_RGB8, 0)
    return header + rgb_u8.tobytes()


def unpack_frame_header(blob: bytes):
    magic, frame_id, w, h, fmt, _ = _HEADER.unpack(blob[:_HEADER.size])
    if magic != FRAME_MAGIC:
        raise ValueError(f"bad frame magic {magic!r}")
    return {"frame_id": frame_id, "width": w, "height": h, "format": fmt,
            "payload": blob[_HEADER.size:]}


class Pose(BaseModel):
    quat: list[float] = Field(min_length=4, max_length=4)  # camera-to-world (w,x,y,z)
    position: list[float] = Field(min_length=3, max_length=3)


class ViewRequest(BaseModel):
    pose: Pose
    fov_y: float = 50.0
    time: float = 0.0
    mode: str = "exact"
    width: int = 512
    height: int = 512
    req_id: int | None = None


def camera_from_request(req: ViewRequest) -> tuple[CameraModel, bool]:
    """Build the pinhole camera; returns (camera, clamped_time_flag)."""
    q = np.asarray(req.pose.quat, dtype=np.float64)
    q = q / np.linalg.norm(q)
    r_c2w = quat_to_rotmat(q[None])[0]
    pos = np.asarray(req.pose.position, dtype=np.float64)
    rot_w2c = r_c2w.T
    trans = -rot_w2c @ pos
    fy = 0.5 * req.height / np.tan(np.radians(req.fov_y) / 2)
    cam = CameraModel(fx=fy, fy=fy, cx=req.width / 2, cy=req.height / 2,
                      width=req.width, height=req.height,
                      rot_w2c=rot_w2c, trans_w2c=trans)
    clamped = not (0.0 <= req.time <= 1.0)
    return cam, clamped


class Session:
    def __init__(self, scene: Scene4D):
        self.scene = scene
        self.cache = ProjectionCache()
        self.frame_id = 0

    def handle_frame(self, req: ViewRequest) -> tuple[dict, bytes]:
        cam, clamped = camera_from_request(req)
        t0 = float(np.clip(req.time, 0.0, 1.0))
        cache_hit = self.cache.valid_for(cam)
        options = RenderOptions(mode=req.mode, dtype=np.float32)
        start = time.perf_counter()
        buffers = render(self.scene, cam, t0, options=options, cache=self.cache)
        rgb = encode_u8(buffers.color)
        ms = (time.perf_counter() - start) * 1e3
        self.frame_id += 1
        meta = {"type": "frame_meta", "frame_id": self.frame_id,
                "req_id": req.req_id, "render_ms": round(ms, 3),
                "n_visible": int(len(buffers._proj_state.index)),
                "cache_hit": cache_hit, "cache_builds": self.cache.n_builds,
                "clamped": clamped,
                "width": cam.width, "height": cam.height, "t0": t0}
        return meta, pack_frame(self.frame_id, rgb)


def suggested_pose(scene: Scene4D) -> dict:
    mu = scene.gaussians.mu4d[:, :3]
    center = mu.mean(axis=0) if len(mu) else np.zeros(3)
    radius = float(np.linalg.norm(mu - center, axis=1).max()) if len(mu) else 1.0
    pos = center + np.array([0.0, 0.0, -max(3.0 * radius, 1.0)])
    from ..synthetic import look_at
    rot_w2c, _ = look_at(pos, center)
    quat = rotmat_to_quat(rot_w2c.T)
    return {"position": [float(v) for v in pos],
            "quat": [float(v) for v in quat], "fov_y": 50.0}


def create_app(scene: Scene4D | None, max_size: int = 1024,
               workers: int | None = None, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="dis4dgs render service")
    pool = ThreadPoolExecutor(max_workers=workers or 4)
    app.state.scene = scene
    app.state.pool = pool
    app.state.max_size = max_size

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/info")
    def info():
        sc = app.state.scene
        if sc is None:
            return {"error": "no_scene"}
        h = w = min(512, max_size)
        per_frame = (w * h * (3 + 2 + 1 + 1) * 4          # float32 buffers
                     + len(sc.gaussians) * 16 * 4)         # screen-space batch
        return {"n_gaussians": len(sc.gaussians),
                "duration_seconds": sc.duration_seconds,
                "sh_degree": sc.sh_degree,
                "background": [float(v) for v in sc.background],
                "suggested_pose": suggested_pose(sc),
                "limits": {"max_width": max_size, "max_height": max_size,
                           "workers": pool._max_workers},
                "per_frame_memory_bytes": int(per_frame)}

    async def _receiver(ws: WebSocket, slot: dict, wake: asyncio.Event):
        try:
            while True:
                text = await ws.receive_text()
                try:
                    req = ViewRequest.model_validate_json(text)
                except ValidationError as e:
                    await ws.send_json({"type": "error", "code": "bad_request",
                                        "message": str(e.errors()[0]["msg"])})
                    continue
                except ValueError:
                    await ws.send_json({"type": "error", "code": "bad_request",
                                        "message": "malformed JSON"})
                    continue
                if req.width > app.state.max_size or req.height > app.state.max_size \
                        or req.width < 1 or req.height < 1:
                    await ws.send_json({"type": "error", "code": "oversized",
                                        "message": f"size limit is {app.state.max_size}",
                                        "req_id": req.req_id})
                    continue
                if req.mode not in ("exact", "fast"):
                    await ws.send_json({"type": "error", "code": "bad_request",
                                        "message": f"unknown mode {req.mode!r}",
                                        "req_id": req.req_id})
                    continue
                slot["req"] = req  # latest-wins: stale queued requests are replaced
                wake.set()
        finally:
            slot["closed"] = True
            wake.set()

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        if app.state.scene is None:
            await ws.send_json({"type": "error", "code": "no_scene",
                                "message": "no scene loaded"})
            await ws.close()
            return
        session = Session(app.state.scene)
        slot: dict = {}
        wake = asyncio.Event()
        recv_task = asyncio.create_task(_receiver(ws, slot, wake))
        loop = asyncio.get_running_loop()
        try:
            while True:
                await wake.wait()
                wake.clear()
                if slot.get("closed"):
                    break
                req = slot.pop("req", None)
                if req is None:
                    continue
                meta, frame = await loop.run_in_executor(
                    app.state.pool, session.handle_frame, req)
                await ws.send_json(meta)
                await ws.send_bytes(frame)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="viewer")
    return app
