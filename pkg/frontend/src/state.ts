// Viewer state and its invariant-preserving updates. All updates return
// new objects; the UI layer re-renders from whatever is current.

import type { OrbitPose } from './orbit.js';
import type { StyleInfo } from './types.js';

export type CameraSelection =
  | { kind: 'view'; viewId: string }
  | { kind: 'orbit'; orbit: OrbitPose };

export interface DisplayedImage {
  bytes: Uint8Array;
  /** id of the request this image answered */
  requestId: number;
  /** the exact request that produced it: canonical URL or POST body */
  params: string;
  latencyMs: number;
}

export interface ViewerState {
  camera: CameraSelection;
  /** per-style slider values, keyed by style_id */
  sliders: Record<string, number>;
  /** mask id -> style id; a mask maps to at most one style by construction */
  maskAssignments: Record<string, string>;
  displayed: DisplayedImage | null;
  /** last non-blocking error message, for the toast */
  toast: string | null;
}

export function initialState(views: string[], styles: StyleInfo[]): ViewerState {
  const sliders: Record<string, number> = {};
  for (const style of styles) {
    sliders[style.style_id] = style.a;
  }
  const viewId = views[0];
  if (viewId === undefined) {
    throw new Error('service reported no views');
  }
  return {
    camera: { kind: 'view', viewId },
    sliders,
    maskAssignments: {},
    displayed: null,
    toast: null,
  };
}

export function clampBeta(style: StyleInfo, raw: number): number {
  if (Number.isNaN(raw)) {
    return style.a;
  }
  return Math.min(style.b, Math.max(style.a, raw));
}

export function setSlider(state: ViewerState, style: StyleInfo,
                          raw: number): ViewerState {
  const value = clampBeta(style, raw);
  return { ...state, sliders: { ...state.sliders, [style.style_id]: value } };
}

export function setView(state: ViewerState, viewId: string): ViewerState {
  return { ...state, camera: { kind: 'view', viewId } };
}

export function setOrbit(state: ViewerState, orbit: OrbitPose): ViewerState {
  return { ...state, camera: { kind: 'orbit', orbit } };
}

/** Assign a style to a mask region, or clear it with null. */
export function assignMask(state: ViewerState, maskId: string,
                           styleId: string | null): ViewerState {
  const next = { ...state.maskAssignments };
  if (styleId === null) {
    delete next[maskId];
  } else {
    next[maskId] = styleId;
  }
  return { ...state, maskAssignments: next };
}

/**
 * Atomic image swap: only a response newer than the one on screen may
 * replace it, so the display always equals exactly one past request.
 */
export function applyRender(state: ViewerState, image: DisplayedImage): ViewerState {
  if (state.displayed !== null && image.requestId <= state.displayed.requestId) {
    return state;
  }
  return { ...state, displayed: image, toast: null };
}

export function applyError(state: ViewerState, message: string): ViewerState {
  return { ...state, toast: message };
}

/**
 * Slider label text. Rounded to the quantization step's precision, so the
 * shown value differs from the sent beta by less than one step.
 */
export function sliderLabel(style: StyleInfo, beta: number): string {
  const step = (style.b - style.a) / style.Z;
  const decimals = Math.max(0, Math.ceil(-Math.log10(step)));
  return beta.toFixed(decimals);
}
