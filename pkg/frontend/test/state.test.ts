import { expect, test } from 'vitest';

import {
  applyError,
  applyRender,
  assignMask,
  clampBeta,
  initialState,
  setSlider,
  sliderLabel,
} from '../src/state.js';
import type { DisplayedImage, ViewerState } from '../src/state.js';
import type { StyleInfo } from '../src/types.js';

const INK: StyleInfo = { style_id: 'ink', Z: 10, a: 0, b: 1 };
const OIL: StyleInfo = { style_id: 'oil', Z: 20, a: 0.5, b: 2.5 };

function fresh(): ViewerState {
  return initialState(['p0', 'p1'], [INK, OIL]);
}

function image(requestId: number, tag: string): DisplayedImage {
  return {
    bytes: new TextEncoder().encode(tag),
    requestId,
    params: tag,
    latencyMs: 1,
  };
}

test('initial state starts sliders at each style minimum', () => {
  const state = fresh();
  expect(state.sliders).toEqual({ ink: 0, oil: 0.5 });
  expect(state.camera).toEqual({ kind: 'view', viewId: 'p0' });
  expect(state.displayed).toBeNull();
  expect(() => initialState([], [INK])).toThrow(/no views/);
});

test('beta values clamp to the advertised range', () => {
  expect(clampBeta(INK, -3)).toBe(0);
  expect(clampBeta(INK, 0.4)).toBe(0.4);
  expect(clampBeta(INK, 7)).toBe(1);
  expect(clampBeta(INK, NaN)).toBe(0);
  expect(clampBeta(OIL, 0.1)).toBe(0.5);
  expect(clampBeta(OIL, 9)).toBe(2.5);
});

test('setSlider clamps and leaves the previous state untouched', () => {
  const before = fresh();
  const after = setSlider(before, INK, 99);
  expect(after.sliders['ink']).toBe(1);
  expect(before.sliders['ink']).toBe(0);
  expect(after.sliders['oil']).toBe(0.5);
});

test('a mask region holds at most one style', () => {
  let state = fresh();
  state = assignMask(state, 'inner', 'ink');
  state = assignMask(state, 'inner', 'oil');
  expect(state.maskAssignments).toEqual({ inner: 'oil' });
  state = assignMask(state, 'inner', null);
  expect(state.maskAssignments).toEqual({});
});

test('image swap is atomic: only newer responses replace the display', () => {
  let state = fresh();
  state = applyRender(state, image(5, 'five'));
  expect(state.displayed?.params).toBe('five');

  state = applyRender(state, image(3, 'three'));
  expect(state.displayed?.params).toBe('five');

  state = applyRender(state, image(5, 'five again'));
  expect(state.displayed?.params).toBe('five');

  state = applyRender(state, image(6, 'six'));
  expect(state.displayed?.params).toBe('six');
});

test('errors toast without disturbing the displayed image', () => {
  let state = fresh();
  state = applyRender(state, image(1, 'good'));
  state = applyError(state, 'boom');
  expect(state.toast).toBe('boom');
  expect(state.displayed?.params).toBe('good');

  state = applyRender(state, image(2, 'better'));
  expect(state.toast).toBeNull();
});

test('slider label rounds within one quantization step of the sent beta', () => {
  expect(sliderLabel(INK, 0.73)).toBe('0.7');
  expect(sliderLabel({ style_id: 's', Z: 1, a: 0, b: 1 }, 0.4)).toBe('0');

  const styles: StyleInfo[] = [
    INK,
    OIL,
    { style_id: 'fine', Z: 200, a: 0, b: 1 },
    { style_id: 'coarse', Z: 4, a: 0, b: 2 },
  ];
  let s = 42;
  const rand = () => {
    s = (s * 1103515245 + 12345) % 2147483648;
    return s / 2147483648;
  };
  for (let i = 0; i < 100; i += 1) {
    for (const style of styles) {
      const beta = style.a + rand() * (style.b - style.a);
      const step = (style.b - style.a) / style.Z;
      const shown = Number(sliderLabel(style, beta));
      expect(Math.abs(shown - beta)).toBeLessThan(step);
    }
  }
});
