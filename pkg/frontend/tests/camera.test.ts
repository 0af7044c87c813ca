import { describe, expect, it } from 'vitest';

import { defaultOrbit, orbitFromPose, quatRotate, rotate, toPose, zoom } from '../src/camera.js';

function length(v: number[]): number {
  return Math.hypot(v[0], v[1], v[2]);
}

describe('orbit camera', () => {
  it('looks at the target from the set distance', () => {
    const orbit = defaultOrbit();
    orbit.distance = 5;
    const pose = toPose(orbit);
    expect(length(pose.position)).toBeCloseTo(5, 10);
    // camera +z must point from the position toward the target
    const fwd = quatRotate(pose.quat, [0, 0, 1]);
    const toTarget = pose.position.map((p, i) => (orbit.target[i] - p) / 5);
    for (let i = 0; i < 3; i++) expect(fwd[i]).toBeCloseTo(toTarget[i], 10);
  });

  it('produces unit quaternions for random orbits', () => {
    const orbit = defaultOrbit();
    for (let k = 0; k < 25; k++) {
      rotate(orbit, 0.7, 0.3);
      zoom(orbit, 1.1);
      const q = toPose(orbit).quat;
      expect(Math.hypot(...q)).toBeCloseTo(1, 10);
    }
  });

  it('clamps pitch away from the poles', () => {
    const orbit = defaultOrbit();
    rotate(orbit, 0, 100);
    expect(orbit.pitch).toBeLessThan(Math.PI / 2);
    const pose = toPose(orbit);
    expect(Number.isFinite(pose.quat[0])).toBe(true);
  });

  it('round-trips a pose through orbitFromPose', () => {
    const orbit = defaultOrbit();
    rotate(orbit, 0.9, -0.4);
    orbit.distance = 2.5;
    const pose = toPose(orbit);
    const rec = orbitFromPose(pose);
    expect(rec.yaw).toBeCloseTo(orbit.yaw, 6);
    expect(rec.pitch).toBeCloseTo(orbit.pitch, 6);
    expect(rec.distance).toBeCloseTo(orbit.distance, 6);
  });
});
