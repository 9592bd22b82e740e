// Wire types mirroring the service's /api/v1 JSON schemas, plus the
// console's own session and overlay models.

export type MaskStatus = "mask" | "no_mask";

export interface BoxJson {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface DetectionJson {
  box: BoxJson;
  class: MaskStatus;
  confidence: number;
}

export interface MatchJson {
  decision: string;
  distance: number | null;
  runner_up_distance: number | null;
  threshold_used: number;
}

export interface VerifyFace {
  detection: DetectionJson;
  match: MatchJson;
}

export interface VerifyResponse {
  image: { width: number; height: number };
  session_id: string;
  threshold: number;
  faces: VerifyFace[];
}

export interface EnrollResponse {
  student_id: string;
  name: string;
  embeddings_count: number;
}

export interface GalleryEntry {
  id: string;
  name: string;
  embeddings_count: number;
  enrolled_at: number | null;
}

export interface AttendanceEvent {
  timestamp: number;
  decision: string;
  distance: number | null;
  mask_status: MaskStatus;
  confidence: number;
  session_id: string;
}

export interface HealthResponse {
  status: string;
  version: string;
  detector_loaded: boolean;
  embedder_loaded: boolean;
  gallery_size: number;
}

export const UNKNOWN_DECISION = "unknown";

export const MIN_CAPTURE_INTERVAL_MS = 200;
export const THRESHOLD_MIN = 0.3;
export const THRESHOLD_MAX = 1.0;

export interface ConsoleSession {
  baseUrl: string;
  sessionId: string;
  captureIntervalMs: number;
  threshold: number;
}

export function createSession(
  baseUrl: string,
  overrides: Partial<Omit<ConsoleSession, "baseUrl">> = {},
): ConsoleSession {
  const interval = overrides.captureIntervalMs ?? 500;
  return {
    baseUrl,
    sessionId: overrides.sessionId ?? `console-${Math.random().toString(36).slice(2, 10)}`,
    captureIntervalMs: Math.max(MIN_CAPTURE_INTERVAL_MS, interval),
    threshold: clampThreshold(overrides.threshold ?? 0.6),
  };
}

export function clampThreshold(value: number): number {
  return Math.min(THRESHOLD_MAX, Math.max(THRESHOLD_MIN, value));
}

export interface FaceOverlay {
  x: number;
  y: number;
  width: number;
  height: number;
  label: string;
  badge: MaskStatus;
  distance: number | null;
  matched: boolean;
}
