import { expect, test } from 'vitest';

import {
  defaultOrbit,
  lookAtPose,
  orbitEye,
  orbitToPose,
} from '../src/orbit.js';

// Reference values produced by the render service's own look-at routine,
// pinned here so the client-side pose math cannot drift from the server.
const GOLDEN = [
  {
    eye: [1.2, 0.4, -4.0] as [number, number, number],
    target: [0.1, -0.2, 5.0] as [number, number, number],
    rot: [0.0020074790168344335, -0.06073887617690181,
          -0.03297188114867991, 0.9976069436417738],
    trans: [0.7058585016160199, 0.12734585555906214, 4.13346668170536],
  },
  {
    eye: [0.0, 2.5, -6.0] as [number, number, number],
    target: [0.0, 0.0, 5.5] as [number, number, number],
    rot: [-0.0, 0.0, -0.10682611122099099, 0.9942777187292293],
    trans: [0.0, 1.1683630438207402, 6.3941322943644145],
  },
];

test('lookAtPose matches the service pose convention exactly', () => {
  for (const { eye, target, rot, trans } of GOLDEN) {
    const pose = lookAtPose(eye, target);
    for (let i = 0; i < 4; i += 1) {
      expect(Math.abs((pose.w2c_rot[i] as number) - (rot[i] as number)))
        .toBeLessThan(1e-12);
    }
    for (let i = 0; i < 3; i += 1) {
      expect(Math.abs((pose.w2c_trans[i] as number) - (trans[i] as number)))
        .toBeLessThan(1e-12);
    }
  }
});

test('lookAtPose rejects an up vector parallel to the view direction', () => {
  expect(() => lookAtPose([0, 0, 0], [0, 5, 0])).toThrow(/parallel/);
});

test('orbit eye positions sit on the sphere around the center', () => {
  const flat = orbitEye({ yaw: 0, pitch: 0, radius: 5, center: [1, 2, 3] });
  expect(flat[0]).toBeCloseTo(1, 12);
  expect(flat[1]).toBeCloseTo(2, 12);
  expect(flat[2]).toBeCloseTo(-2, 12);

  const side = orbitEye({ yaw: Math.PI / 2, pitch: 0, radius: 5,
                          center: [1, 2, 3] });
  expect(side[0]).toBeCloseTo(6, 12);
  expect(side[1]).toBeCloseTo(2, 12);
  expect(side[2]).toBeCloseTo(3, 12);

  const top = orbitEye({ yaw: 0, pitch: Math.PI / 2, radius: 5,
                         center: [1, 2, 3] });
  expect(top[1]).toBeCloseTo(7, 12);
});

test('orbit poses stay unit-quaternion over a parameter sweep', () => {
  // cheap deterministic pseudo-random walk; mirrors the seeded loops used
  // by the service's own test suite
  let s = 1234567;
  const rand = () => {
    s = (s * 1103515245 + 12345) % 2147483648;
    return s / 2147483648;
  };
  for (let i = 0; i < 200; i += 1) {
    const orbit = {
      yaw: (rand() - 0.5) * 6,
      pitch: (rand() - 0.5) * 2.6,
      radius: 0.5 + rand() * 10,
      center: [rand() - 0.5, rand() - 0.5, rand() * 4] as [number, number, number],
    };
    const pose = orbitToPose(orbit);
    const n = Math.hypot(...pose.w2c_rot);
    expect(Math.abs(n - 1)).toBeLessThan(1e-12);
    for (const v of [...pose.w2c_rot, ...pose.w2c_trans]) {
      expect(Number.isFinite(v)).toBe(true);
    }
  }
});

test('orbitToPose equals lookAtPose at the orbit eye', () => {
  const orbit = { yaw: 0.7, pitch: -0.3, radius: 4,
                  center: [0.2, -0.1, 5] as [number, number, number] };
  const a = orbitToPose(orbit);
  const b = lookAtPose(orbitEye(orbit), orbit.center);
  expect(a.w2c_rot).toEqual(b.w2c_rot);
  expect(a.w2c_trans).toEqual(b.w2c_trans);
});

test('default orbit frames the bounds with a minimum radius', () => {
  const orbit = defaultOrbit({ min: [-1, -2, 4], max: [3, 2, 6] });
  expect(orbit.center).toEqual([1, 0, 5]);
  expect(orbit.radius).toBeCloseTo(6, 12);

  const point = defaultOrbit({ min: [0, 0, 0], max: [0, 0, 0] });
  expect(point.radius).toBe(1.0);
});
