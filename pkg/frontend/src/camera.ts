// Orbit camera: yaw/pitch/distance around a target point, converted to the
// camera-to-world pose the server expects (camera looks +z, image y down).

import type { Pose } from './protocol.js';

export interface OrbitState {
  target: [number, number, number];
  yaw: number;      // radians around world y
  pitch: number;    // radians, clamped away from the poles
  distance: number;
}

const PITCH_LIMIT = Math.PI / 2 - 0.05;

export function defaultOrbit(): OrbitState {
  return { target: [0, 0, 0], yaw: 0, pitch: 0, distance: 3 };
}

export function rotate(state: OrbitState, dYaw: number, dPitch: number): void {
  state.yaw += dYaw;
  state.pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, state.pitch + dPitch));
}

export function zoom(state: OrbitState, factor: number): void {
  state.distance = Math.min(100, Math.max(0.05, state.distance * factor));
}

export function pan(state: OrbitState, dx: number, dy: number): void {
  // move the target in the camera's image plane
  const { right, up } = basis(state);
  for (let i = 0; i < 3; i++) {
    state.target[i] += right[i] * dx + up[i] * dy;
  }
}

function basis(state: OrbitState) {
  const cp = Math.cos(state.pitch);
  const sp = Math.sin(state.pitch);
  const cy = Math.cos(state.yaw);
  const sy = Math.sin(state.yaw);
  // camera sits at target - forward * distance
  const forward: [number, number, number] = [cp * sy, -sp, cp * cy];
  const worldUp: [number, number, number] = [0, 1, 0];
  const right = normalize(cross(worldUp, forward));
  const up = cross(forward, right); // image y (down in pixels): forward x right
  return { forward, right, up };
}

function cross(a: number[], b: number[]): [number, number, number] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** Rotation-matrix (columns right/up/forward) to quaternion (w,x,y,z). */
export function matrixToQuat(
  c0: number[], c1: number[], c2: number[],
): [number, number, number, number] {
  const m00 = c0[0], m01 = c1[0], m02 = c2[0];
  const m10 = c0[1], m11 = c1[1], m12 = c2[1];
  const m20 = c0[2], m21 = c1[2], m22 = c2[2];
  const trace = m00 + m11 + m22;
  let w: number, x: number, y: number, z: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1) * 2;
    w = s / 4;
    x = (m21 - m12) / s;
    y = (m02 - m20) / s;
    z = (m10 - m01) / s;
  } else if (m00 > m11 && m00 > m22) {
    const s = Math.sqrt(1 + m00 - m11 - m22) * 2;
    w = (m21 - m12) / s;
    x = s / 4;
    y = (m01 + m10) / s;
    z = (m02 + m20) / s;
  } else if (m11 > m22) {
    const s = Math.sqrt(1 + m11 - m00 - m22) * 2;
    w = (m02 - m20) / s;
    x = (m01 + m10) / s;
    y = s / 4;
    z = (m12 + m21) / s;
  } else {
    const s = Math.sqrt(1 + m22 - m00 - m11) * 2;
    w = (m10 - m01) / s;
    x = (m02 + m20) / s;
    y = (m12 + m21) / s;
    z = s / 4;
  }
  return [w, x, y, z];
}

/** Camera-to-world pose for the current orbit state. */
export function toPose(state: OrbitState): Pose {
  const { forward, right, up } = basis(state);
  const position: [number, number, number] = [
    state.target[0] - forward[0] * state.distance,
    state.target[1] - forward[1] * state.distance,
    state.target[2] - forward[2] * state.distance,
  ];
  // camera-to-world columns are the camera axes expressed in world frame
  const quat = matrixToQuat(right, up, forward);
  return { quat, position };
}

/** Apply the rotation of a quaternion (w,x,y,z) to a vector. */
export function quatRotate(q: number[], v: number[]): [number, number, number] {
  const [w, x, y, z] = q;
  const uvx = y * v[2] - z * v[1];
  const uvy = z * v[0] - x * v[2];
  const uvz = x * v[1] - y * v[0];
  const uuvx = y * uvz - z * uvy;
  const uuvy = z * uvx - x * uvz;
  const uuvz = x * uvy - y * uvx;
  return [
    v[0] + 2 * (w * uvx + uuvx),
    v[1] + 2 * (w * uvy + uuvy),
    v[2] + 2 * (w * uvz + uuvz),
  ];
}

/** Initialize the orbit so it reproduces a server-suggested pose. */
export function orbitFromPose(pose: Pose, target: [number, number, number] = [0, 0, 0]): OrbitState {
  const fwd = quatRotate(pose.quat, [0, 0, 1]);
  const dx = target[0] - pose.position[0];
  const dy = target[1] - pose.position[1];
  const dz = target[2] - pose.position[2];
  const distance = Math.hypot(dx, dy, dz) || 3;
  const pitch = Math.asin(Math.min(1, Math.max(-1, -fwd[1])));
  const yaw = Math.atan2(fwd[0], fwd[2]);
  return { target, yaw, pitch, distance };
}
