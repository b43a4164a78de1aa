// Glue between viewer state, the HTTP client, and the latest-wins
// scheduler. Owns no DOM; the UI layer subscribes via onChange.

import { RenderClient, ServiceError, canonicalBody } from './client.js';
import { LatestWins } from './debounce.js';
import { defaultOrbit, orbitToPose } from './orbit.js';
import type { OrbitPose } from './orbit.js';
import {
  applyError,
  applyRender,
  assignMask,
  clampBeta,
  initialState,
  setOrbit,
  setSlider,
  setView,
} from './state.js';
import type { ViewerState } from './state.js';
import type {
  Intrinsics,
  SceneMeta,
  StyleInfo,
  StyleRequestEntry,
} from './types.js';

export interface ControllerOptions {
  /** canvas size the synthesized orbit intrinsics target */
  imageSize?: number;
  /** vertical field of view for orbit renders, degrees */
  fovDeg?: number;
  minIntervalMs?: number;
  now?: () => number;
  schedule?: (fn: () => void, ms: number) => unknown;
  onChange?: (state: ViewerState) => void;
}

type RequestParams =
  | { kind: 'get'; view: string; style: string; beta: number }
  | { kind: 'post'; body: string };

interface RenderResult {
  bytes: Uint8Array;
  params: string;
  latencyMs: number;
}

/**
 * Intrinsics for client-side orbit poses. The scene metadata carries no
 * camera parameters, so the viewer picks its own: a square image with the
 * given vertical field of view, principal point at the pixel-grid center.
 */
export function orbitIntrinsics(size: number, fovDeg: number): Intrinsics {
  const f = 0.5 * size / Math.tan((fovDeg * Math.PI / 180) / 2);
  return {
    fx: f,
    fy: f,
    cx: (size - 1) / 2,
    cy: (size - 1) / 2,
    width: size,
    height: size,
  };
}

export class ViewerController {
  readonly views: string[];
  readonly styleList: StyleInfo[];
  readonly maskIds: string[];
  readonly meta: SceneMeta;

  private readonly client: RenderClient;
  private readonly byId: Map<string, StyleInfo>;
  private readonly intrinsics: Intrinsics;
  private readonly scheduler: LatestWins<RequestParams, RenderResult>;
  private readonly notify: (state: ViewerState) => void;
  private readonly clock: () => number;

  private current: ViewerState;
  private selectedStyleId: string;

  private constructor(client: RenderClient, meta: SceneMeta,
                      styles: StyleInfo[], masks: string[],
                      opts: ControllerOptions) {
    if (styles.length === 0) {
      throw new Error('service reported no styles');
    }
    this.client = client;
    this.meta = meta;
    this.views = [...meta.views];
    this.styleList = styles;
    this.maskIds = masks;
    this.byId = new Map(styles.map((s) => [s.style_id, s]));
    this.intrinsics = orbitIntrinsics(opts.imageSize ?? 512,
                                      opts.fovDeg ?? 50);
    this.notify = opts.onChange ?? (() => undefined);
    this.clock = opts.now ?? (() => Date.now());
    this.current = initialState(this.views, styles);
    const first = styles[0];
    if (first === undefined) {
      throw new Error('unreachable: styles checked non-empty');
    }
    this.selectedStyleId = first.style_id;
    this.scheduler = new LatestWins<RequestParams, RenderResult>({
      minIntervalMs: opts.minIntervalMs ?? 100,
      send: (params, id) => this.send(params, id),
      apply: (result, id) => {
        this.current = applyRender(this.current, {
          bytes: result.bytes,
          requestId: id,
          params: result.params,
          latencyMs: result.latencyMs,
        });
        this.notify(this.current);
      },
      onError: (err) => {
        const message = err instanceof ServiceError
          ? err.message
          : `request failed: ${String(err)}`;
        this.current = applyError(this.current, message);
        this.notify(this.current);
      },
      ...(opts.now !== undefined ? { now: opts.now } : {}),
      ...(opts.schedule !== undefined ? { schedule: opts.schedule } : {}),
    });
  }

  static async connect(client: RenderClient,
                       opts: ControllerOptions = {}): Promise<ViewerController> {
    const [meta, styles, masks] = await Promise.all([
      client.meta(), client.styles(), client.masks(),
    ]);
    return new ViewerController(client, meta, styles, masks, opts);
  }

  get state(): ViewerState {
    return this.current;
  }

  get selectedStyle(): StyleInfo {
    const style = this.byId.get(this.selectedStyleId);
    if (style === undefined) {
      throw new Error(`selected style ${this.selectedStyleId} vanished`);
    }
    return style;
  }

  style(styleId: string): StyleInfo {
    const style = this.byId.get(styleId);
    if (style === undefined) {
      throw new Error(`unknown style ${styleId}`);
    }
    return style;
  }

  lastIssuedId(): number {
    return this.scheduler.lastIssuedId();
  }

  setSlider(styleId: string, raw: number): void {
    this.current = setSlider(this.current, this.style(styleId), raw);
    this.push();
  }

  selectStyle(styleId: string): void {
    this.style(styleId);
    this.selectedStyleId = styleId;
    this.push();
  }

  setView(viewId: string): void {
    if (!this.views.includes(viewId)) {
      throw new Error(`unknown view ${viewId}`);
    }
    this.current = setView(this.current, viewId);
    this.push();
  }

  setOrbit(orbit: OrbitPose): void {
    this.current = setOrbit(this.current, orbit);
    this.push();
  }

  /**
   * Assign a style to a mask region (null clears it). Region mixing needs
   * a pose the client knows, so a named-view camera switches to the
   * default orbit around the scene bounds.
   */
  assignMask(maskId: string, styleId: string | null): void {
    if (styleId !== null) {
      this.style(styleId);
    }
    this.current = assignMask(this.current, maskId, styleId);
    if (this.current.camera.kind === 'view'
        && Object.keys(this.current.maskAssignments).length > 0) {
      this.current = setOrbit(this.current, defaultOrbit(this.meta.bounds));
    }
    this.push();
  }

  /** Request a render for the current state (debounced, latest wins). */
  refresh(): void {
    this.push();
  }

  private activeEntries(): StyleRequestEntry[] {
    const assignments = this.current.maskAssignments;
    const maskIds = Object.keys(assignments).sort();
    if (maskIds.length === 0) {
      const style = this.selectedStyle;
      const beta = clampBeta(style,
                             this.current.sliders[style.style_id] ?? style.a);
      return [{ style_id: style.style_id, beta }];
    }
    return maskIds.map((maskId) => {
      const styleId = assignments[maskId];
      if (styleId === undefined) {
        throw new Error('unreachable: key came from the record');
      }
      const style = this.style(styleId);
      const beta = clampBeta(style, this.current.sliders[styleId] ?? style.a);
      return { style_id: styleId, beta, mask_id: maskId };
    });
  }

  private buildParams(): RequestParams {
    const entries = this.activeEntries();
    const camera = this.current.camera;
    if (camera.kind === 'view') {
      const only = entries[0];
      if (entries.length === 1 && only !== undefined
          && only.mask_id === undefined) {
        return {
          kind: 'get',
          view: camera.viewId,
          style: only.style_id,
          beta: only.beta,
        };
      }
      throw new Error('masked entries require an orbit camera');
    }
    const pose = orbitToPose(camera.orbit);
    return {
      kind: 'post',
      body: canonicalBody({ pose, intrinsics: this.intrinsics,
                            styles: entries }),
    };
  }

  private push(): void {
    this.scheduler.update(this.buildParams());
    this.notify(this.current);
  }

  private async send(params: RequestParams,
                     _id: number): Promise<RenderResult> {
    const started = this.clock();
    let bytes: Uint8Array;
    let label: string;
    if (params.kind === 'get') {
      bytes = await this.client.renderView(params.view, params.style,
                                           params.beta);
      label = `GET view=${params.view} style=${params.style}`
        + ` beta=${params.beta}`;
    } else {
      bytes = await this.client.renderPoseRaw(params.body);
      label = params.body;
    }
    return { bytes, params: label, latencyMs: this.clock() - started };
  }
}
