// Wire types for the splatstyle render service. Field names match the
// server's JSON exactly; do not rename.

export interface SceneMeta {
  count: number;
  views: string[];
  bounds: { min: number[]; max: number[] };
}

export interface StyleInfo {
  style_id: string;
  /** number of intensity buckets */
  Z: number;
  /** lower end of the intensity range */
  a: number;
  /** upper end of the intensity range */
  b: number;
}

export interface Pose {
  /** unit quaternion, wxyz order */
  w2c_rot: [number, number, number, number];
  w2c_trans: [number, number, number];
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface StyleRequestEntry {
  style_id: string;
  beta: number;
  mask_id?: string;
}

export interface RenderRequestBody {
  pose: Pose;
  intrinsics: Intrinsics;
  styles: StyleRequestEntry[];
}
