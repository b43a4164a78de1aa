// Browser entry point. Everything interesting lives in the pure modules;
// this file only builds DOM controls and forwards events to the controller.

import { RenderClient } from './client.js';
import { ViewerController } from './controller.js';
import type { ViewerState } from './state.js';
import { sliderLabel } from './state.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {},
  text = ''): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function mount(root: HTMLElement): void {
  const urlInput = el('input', { type: 'text', value: 'http://127.0.0.1:8080' });
  const connectBtn = el('button', {}, 'connect');
  const statusLine = el('div', { class: 'status' });
  const controls = el('div', { class: 'controls' });
  const image = el('img', { alt: 'rendered view' });
  const toast = el('div', { class: 'toast' });
  root.append(urlInput, connectBtn, statusLine, controls, image, toast);

  let objectUrl: string | null = null;

  function redraw(controller: ViewerController, state: ViewerState): void {
    if (state.displayed !== null) {
      const blob = new Blob([state.displayed.bytes.slice().buffer],
                            { type: 'image/png' });
      const next = URL.createObjectURL(blob);
      image.src = next;
      if (objectUrl !== null) {
        URL.revokeObjectURL(objectUrl);
      }
      objectUrl = next;
      statusLine.textContent =
        `request #${state.displayed.requestId}, `
        + `${state.displayed.latencyMs.toFixed(0)} ms`;
    }
    toast.textContent = state.toast ?? '';
    toast.style.display = state.toast === null ? 'none' : 'block';
    for (const style of controller.styleList) {
      const label = controls.querySelector(
        `[data-style-label="${style.style_id}"]`);
      const beta = state.sliders[style.style_id] ?? style.a;
      if (label !== null) {
        label.textContent = `${style.style_id}: ${sliderLabel(style, beta)}`;
      }
    }
  }

  async function connect(): Promise<void> {
    controls.replaceChildren();
    const client = new RenderClient(urlInput.value);
    const controller = await ViewerController.connect(client, {
      onChange: (state) => redraw(controller, state),
    });

    const viewSelect = el('select');
    for (const viewId of controller.views) {
      viewSelect.append(el('option', { value: viewId }, viewId));
    }
    viewSelect.addEventListener('change', () => {
      controller.setView(viewSelect.value);
    });
    controls.append(el('span', {}, 'view '), viewSelect);

    const styleSelect = el('select');
    for (const style of controller.styleList) {
      styleSelect.append(el('option', { value: style.style_id },
                            style.style_id));
    }
    styleSelect.addEventListener('change', () => {
      controller.selectStyle(styleSelect.value);
    });
    controls.append(el('span', {}, ' style '), styleSelect);

    for (const style of controller.styleList) {
      const row = el('div', { class: 'slider-row' });
      const label = el('span', { 'data-style-label': style.style_id },
                       `${style.style_id}: ${sliderLabel(style, style.a)}`);
      const slider = el('input', {
        type: 'range',
        min: String(style.a),
        max: String(style.b),
        step: String((style.b - style.a) / style.Z),
        value: String(style.a),
      });
      slider.addEventListener('input', () => {
        controller.setSlider(style.style_id, Number(slider.value));
      });
      row.append(label, slider);
      controls.append(row);
    }

    for (const maskId of controller.maskIds) {
      const select = el('select');
      select.append(el('option', { value: '' }, '(none)'));
      for (const style of controller.styleList) {
        select.append(el('option', { value: style.style_id },
                         style.style_id));
      }
      select.addEventListener('change', () => {
        controller.assignMask(maskId,
                              select.value === '' ? null : select.value);
      });
      controls.append(el('span', {}, ` mask ${maskId} `), select);
    }

    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    image.addEventListener('pointerdown', (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    window.addEventListener('pointerup', () => {
      dragging = false;
    });
    window.addEventListener('pointermove', (ev) => {
      if (!dragging) {
        return;
      }
      const camera = controller.state.camera;
      const orbit = camera.kind === 'orbit'
        ? camera.orbit
        : { yaw: 0, pitch: 0, radius: 6, center: [0, 0, 0] as [number, number, number] };
      controller.setOrbit({
        ...orbit,
        yaw: orbit.yaw + (ev.clientX - lastX) * 0.01,
        pitch: Math.min(1.4, Math.max(
          -1.4, orbit.pitch + (ev.clientY - lastY) * 0.01)),
      });
      lastX = ev.clientX;
      lastY = ev.clientY;
    });

    controller.refresh();
  }

  connectBtn.addEventListener('click', () => {
    connect().catch((err: unknown) => {
      toast.textContent = `connect failed: ${String(err)}`;
      toast.style.display = 'block';
    });
  });
}

const rootNode = typeof document === 'undefined'
  ? null
  : document.getElementById('viewer-root');
if (rootNode !== null) {
  mount(rootNode);
}
