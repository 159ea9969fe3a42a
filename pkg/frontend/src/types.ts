/** Wire types of the inference service (POST /generate and friends). */

export interface SceneGraphJson {
  objects: string[];
  edges: [number | string, string, number | string][];
}

export interface GenerateRequest {
  scene_graph: SceneGraphJson;
  crop_overrides: Record<number, string>;
  k?: number | null;
  seed: number;
  gt_boxes?: number[][] | null;
}

export interface CropUsed {
  object_index: number;
  crop_id: string;
  thumbnail_png_base64: string;
}

export interface GenerateResponse {
  image_png_base64: string;
  boxes: number[][];
  crops: CropUsed[];
  candidates: string[][];
  timing_ms: number;
}

export interface VocabResponse {
  objects: string[];
  predicates: string[];
}

/** One reproducible generation: the exact request plus what came back. */
export interface Snapshot {
  request: GenerateRequest;
  response: GenerateResponse;
  at: number;
}
