// Thin HTTP client for the render service. Pure: no DOM access, fetch is
// injectable, and request bodies are serialized with a fixed key order so
// identical parameters always produce identical bytes on the wire.

import type {
  Intrinsics,
  Pose,
  RenderRequestBody,
  SceneMeta,
  StyleInfo,
  StyleRequestEntry,
} from './types.js';

export class ServiceError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = 'ServiceError';
    this.status = status;
  }
}

export type FetchFn = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{
  ok: boolean;
  status: number;
  arrayBuffer: () => Promise<ArrayBuffer>;
  text: () => Promise<string>;
}>;

/** Serialize the POST body with a deterministic key order. */
export function canonicalBody(body: RenderRequestBody): string {
  const styles = body.styles.map((s: StyleRequestEntry) => {
    const entry: Record<string, unknown> = {
      style_id: s.style_id,
      beta: s.beta,
    };
    if (s.mask_id !== undefined) {
      entry['mask_id'] = s.mask_id;
    }
    return entry;
  });
  return JSON.stringify({
    pose: {
      w2c_rot: body.pose.w2c_rot,
      w2c_trans: body.pose.w2c_trans,
    },
    intrinsics: {
      fx: body.intrinsics.fx,
      fy: body.intrinsics.fy,
      cx: body.intrinsics.cx,
      cy: body.intrinsics.cy,
      width: body.intrinsics.width,
      height: body.intrinsics.height,
    },
    styles,
  });
}

async function raiseFor(status: number,
                        text: () => Promise<string>): Promise<never> {
  let detail = '';
  try {
    const body = await text();
    try {
      const parsed: unknown = JSON.parse(body);
      if (parsed !== null && typeof parsed === 'object' && 'error' in parsed) {
        detail = String((parsed as { error: unknown }).error);
      } else {
        detail = body;
      }
    } catch {
      detail = body;
    }
  } catch {
    detail = '(unreadable response body)';
  }
  throw new ServiceError(status, `service returned ${status}: ${detail}`);
}

export class RenderClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchFn;

  constructor(baseUrl: string, fetchFn?: FetchFn) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path);
    if (!resp.ok) {
      await raiseFor(resp.status, resp.text);
    }
    return JSON.parse(await resp.text()) as T;
  }

  meta(): Promise<SceneMeta> {
    return this.getJson<SceneMeta>('/scene/meta');
  }

  styles(): Promise<StyleInfo[]> {
    return this.getJson<StyleInfo[]>('/styles');
  }

  masks(): Promise<string[]> {
    return this.getJson<string[]>('/masks');
  }

  /** GET render of a named view with a single whole-scene style. */
  async renderView(viewId: string, styleId: string,
                   beta: number): Promise<Uint8Array> {
    const url = this.baseUrl
      + `/render?view=${encodeURIComponent(viewId)}`
      + `&style=${encodeURIComponent(styleId)}`
      + `&beta=${beta}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) {
      await raiseFor(resp.status, resp.text);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  /** POST render of an arbitrary pose with any style combination. */
  renderPose(pose: Pose, intrinsics: Intrinsics,
             styles: StyleRequestEntry[]): Promise<Uint8Array> {
    return this.renderPoseRaw(canonicalBody({ pose, intrinsics, styles }));
  }

  /** POST an already-canonical body: the exact bytes go on the wire. */
  async renderPoseRaw(body: string): Promise<Uint8Array> {
    const resp = await this.fetchFn(this.baseUrl + '/render', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body,
    });
    if (!resp.ok) {
      await raiseFor(resp.status, resp.text);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }
}
