// Viewer UI: canvas blitting, orbit/pan/zoom drag handling, timeline scrubber
// with playback, exact/fast toggle and a stats overlay.

import { defaultOrbit, orbitFromPose, pan, rotate, toPose, zoom } from './camera.js';
import type { Frame, FrameMeta } from './protocol.js';
import { rgbToRgba } from './protocol.js';
import { StreamClient } from './net.js';

interface Info {
  n_gaussians: number;
  duration_seconds: number;
  suggested_pose: { quat: [number, number, number, number]; position: [number, number, number]; fov_y: number };
  limits: { max_width: number; max_height: number };
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function main(): Promise<void> {
  const canvas = el<HTMLCanvasElement>('view');
  const ctx = canvas.getContext('2d')!;
  const scrubber = el<HTMLInputElement>('scrubber');
  const playBtn = el<HTMLButtonElement>('play');
  const speedInput = el<HTMLInputElement>('speed');
  const modeSel = el<HTMLSelectElement>('mode');
  const overlay = el<HTMLDivElement>('overlay');
  const banner = el<HTMLDivElement>('banner');

  const info: Info = await (await fetch('/info')).json();
  const orbit = info.suggested_pose
    ? orbitFromPose(info.suggested_pose)
    : defaultOrbit();
  const fovY = info.suggested_pose?.fov_y ?? 50;

  let time = 0;
  let playing = false;
  let lastTick = performance.now();
  let clientFrames = 0;
  let clientFps = 0;
  let fpsWindowStart = performance.now();
  let imageData: ImageData | null = null;

  const size = Math.min(512, info.limits?.max_width ?? 512);
  canvas.width = size;
  canvas.height = size;

  const drawFrame = (meta: FrameMeta, frame: Frame) => {
    if (frame.width !== canvas.width || frame.height !== canvas.height) {
      canvas.width = frame.width;
      canvas.height = frame.height;
      imageData = null;
    }
    if (!imageData) {
      imageData = ctx.createImageData(frame.width, frame.height);
    }
    rgbToRgba(frame.pixels, imageData.data);
    ctx.putImageData(imageData, 0, 0);
    clientFrames += 1;
    const now = performance.now();
    if (now - fpsWindowStart > 1000) {
      clientFps = (clientFrames * 1000) / (now - fpsWindowStart);
      clientFrames = 0;
      fpsWindowStart = now;
    }
    overlay.textContent =
      `render ${meta.render_ms.toFixed(1)} ms | client ${clientFps.toFixed(0)} fps | `
      + `visible ${meta.n_visible} | cache ${meta.cache_hit ? 'hit' : 'miss'} | `
      + `t=${meta.t0.toFixed(3)}`;
  };

  const client = new StreamClient(
    `${location.protocol === 'https:' ? 'wss' : 'ws'}://${location.host}/stream`,
    {
      onFrame: drawFrame,
      onStatus: (s) => {
        banner.textContent = s === 'connected' ? '' : s;
        banner.style.display = s === 'connected' ? 'none' : 'block';
        if (s === 'connected') requestRender();
      },
      onError: (code, message) => {
        banner.textContent = `server error: ${code} ${message}`;
        banner.style.display = 'block';
      },
    });

  const requestRender = () => {
    client.request({
      pose: toPose(orbit),
      fov_y: fovY,
      time,
      mode: modeSel.value as 'exact' | 'fast',
      width: canvas.width,
      height: canvas.height,
    });
  };

  // pointer input: left drag orbits, shift/right drag pans, wheel zooms
  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener('pointerdown', (e) => {
    dragging = true;
    panning = e.button === 2 || e.shiftKey;
    lastX = e.clientX;
    lastY = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener('pointermove', (e) => {
    if (!dragging) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
    if (panning) {
      pan(orbit, -dx * orbit.distance * 0.002, -dy * orbit.distance * 0.002);
    } else {
      rotate(orbit, dx * 0.008, dy * 0.008);
    }
    requestRender();
  });
  canvas.addEventListener('pointerup', () => { dragging = false; });
  canvas.addEventListener('contextmenu', (e) => e.preventDefault());
  canvas.addEventListener('wheel', (e) => {
    e.preventDefault();
    zoom(orbit, Math.exp(e.deltaY * 0.001));
    requestRender();
  }, { passive: false });

  scrubber.addEventListener('input', () => {
    time = Number(scrubber.value);
    playing = false;
    playBtn.textContent = 'play';
    requestRender();
  });
  modeSel.addEventListener('change', requestRender);
  playBtn.addEventListener('click', () => {
    playing = !playing;
    playBtn.textContent = playing ? 'pause' : 'play';
    lastTick = performance.now();
  });

  const tick = () => {
    if (playing) {
      const now = performance.now();
      const speed = Number(speedInput.value) || 1; // scene seconds per real second
      time += ((now - lastTick) / 1000) * speed / (info.duration_seconds || 1);
      lastTick = now;
      if (time > 1) time -= 1;
      scrubber.value = String(time);
      requestRender();
    }
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
  requestRender();
}

main().catch((err) => {
  const banner = document.getElementById('banner');
  if (banner) {
    banner.textContent = String(err);
    banner.style.display = 'block';
  }
});
