// Orbit camera math. The pose convention mirrors the render engine's:
// rows of R are the camera axes in world coordinates (x right, y down,
// z forward), w2c_trans = -R * eye, quaternion in wxyz order.

import type { Pose } from './types.js';

export interface OrbitPose {
  /** radians around the vertical axis; 0 looks along +z */
  yaw: number;
  /** radians above the horizon */
  pitch: number;
  radius: number;
  center: [number, number, number];
}

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function orbitEye(orbit: OrbitPose): Vec3 {
  const horizontal = Math.cos(orbit.pitch) * orbit.radius;
  return [
    orbit.center[0] + Math.sin(orbit.yaw) * horizontal,
    orbit.center[1] + Math.sin(orbit.pitch) * orbit.radius,
    orbit.center[2] - Math.cos(orbit.yaw) * horizontal,
  ];
}

/** Rotation matrix (rows) to unit quaternion wxyz; stable branch pick. */
function matrixToQuat(r: number[][]): [number, number, number, number] {
  const m = (i: number, j: number): number => r[i]![j]!;
  const tr = m(0, 0) + m(1, 1) + m(2, 2);
  let q: [number, number, number, number];
  if (tr > 0) {
    const s = Math.sqrt(tr + 1.0) * 2.0;
    q = [0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
         (m(1, 0) - m(0, 1)) / s];
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const s = Math.sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q = [(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
         (m(0, 2) + m(2, 0)) / s];
  } else if (m(1, 1) >= m(2, 2)) {
    const s = Math.sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q = [(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
         (m(1, 2) + m(2, 1)) / s];
  } else {
    const s = Math.sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q = [(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
         (m(1, 2) + m(2, 1)) / s, 0.25 * s];
  }
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function lookAtPose(eye: Vec3, target: Vec3,
                           up: Vec3 = [0, 1, 0]): Pose {
  const fwdRaw = sub(target, eye);
  const fwd = scale(fwdRaw, 1.0 / norm(fwdRaw));
  const rightRaw = cross(fwd, up);
  const rightNorm = norm(rightRaw);
  if (rightNorm < 1e-9) {
    throw new Error('camera up vector is parallel to the view direction');
  }
  const right = scale(rightRaw, 1.0 / rightNorm);
  const down = cross(fwd, right);
  const rows = [right, down, fwd];
  const rot = matrixToQuat(rows);
  const trans: Vec3 = [
    -(right[0] * eye[0] + right[1] * eye[1] + right[2] * eye[2]),
    -(down[0] * eye[0] + down[1] * eye[1] + down[2] * eye[2]),
    -(fwd[0] * eye[0] + fwd[1] * eye[1] + fwd[2] * eye[2]),
  ];
  return { w2c_rot: rot, w2c_trans: trans };
}

export function orbitToPose(orbit: OrbitPose): Pose {
  return lookAtPose(orbitEye(orbit), orbit.center);
}

/** Orbit start position framing the scene bounds from the front. */
export function defaultOrbit(bounds: { min: number[]; max: number[] }): OrbitPose {
  const center: Vec3 = [0, 1, 2].map(
    (i) => 0.5 * ((bounds.min[i] ?? 0) + (bounds.max[i] ?? 0)),
  ) as Vec3;
  const extent = Math.max(
    ...[0, 1, 2].map((i) => (bounds.max[i] ?? 0) - (bounds.min[i] ?? 0)),
  );
  return { yaw: 0, pitch: 0, radius: Math.max(extent * 1.5, 1.0), center };
}
