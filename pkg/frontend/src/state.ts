// Console state and pure reducers. Rendering derives everything from the
// last service responses plus session state, so the view is snapshot-
// testable without a DOM.

import { computeOverlays, overlayCaption } from "./overlay.js";
import type {
  AttendanceEvent,
  ConsoleSession,
  FaceOverlay,
  GalleryEntry,
  VerifyResponse,
} from "./types.js";
import { clampThreshold } from "./types.js";

export interface ConsoleState {
  session: ConsoleSession;
  lastVerify: VerifyResponse | null;
  gallery: GalleryEntry[];
  attendance: AttendanceEvent[];
  attendanceSince: number | null;
  banner: string | null;
  paused: boolean;
  toast: string | null;
  enrollError: string | null;
  notice: string | null;
  skippedTicks: number;
}

export function initialState(session: ConsoleSession): ConsoleState {
  return {
    session,
    lastVerify: null,
    gallery: [],
    attendance: [],
    attendanceSince: null,
    banner: null,
    paused: false,
    toast: null,
    enrollError: null,
    notice: null,
    skippedTicks: 0,
  };
}

export function applyVerify(state: ConsoleState, response: VerifyResponse): ConsoleState {
  return { ...state, lastVerify: response, banner: null };
}

export function applyServiceError(state: ConsoleState, message: string): ConsoleState {
  return { ...state, banner: message, paused: true };
}

export function resume(state: ConsoleState): ConsoleState {
  return { ...state, banner: null, paused: false };
}

export function tickSkipped(state: ConsoleState): ConsoleState {
  return { ...state, skippedTicks: state.skippedTicks + 1 };
}

export function setThreshold(state: ConsoleState, value: number): ConsoleState {
  return {
    ...state,
    session: { ...state.session, threshold: clampThreshold(value) },
  };
}

export function setAttendanceSince(state: ConsoleState, since: number | null): ConsoleState {
  return { ...state, attendanceSince: since };
}

export function applyGallery(state: ConsoleState, entries: GalleryEntry[]): ConsoleState {
  return { ...state, gallery: entries };
}

export function applyAttendance(state: ConsoleState, events: AttendanceEvent[]): ConsoleState {
  return { ...state, attendance: events };
}

export function applyEnrollSuccess(
  state: ConsoleState,
  result: { student_id: string; embeddings_count: number },
): ConsoleState {
  return {
    ...state,
    toast: `enrolled ${result.student_id} (${result.embeddings_count} embeddings)`,
    enrollError: null,
  };
}

export function applyEnrollFailure(state: ConsoleState, status: number, detail: unknown): ConsoleState {
  let message = `enrollment failed (${status})`;
  if (status === 422 && detail && typeof detail === "object" && "faces" in detail) {
    const faces = (detail as { faces: number }).faces;
    message = `need exactly one face in view, found ${faces}`;
  } else if (typeof detail === "string") {
    message = detail;
  }
  return { ...state, enrollError: message, toast: null };
}

export function applyDeleteMissing(state: ConsoleState, studentId: string): ConsoleState {
  return { ...state, notice: `'${studentId}' was already gone; list refreshed` };
}

export function clearTransients(state: ConsoleState): ConsoleState {
  return { ...state, toast: null, notice: null };
}

/** Client-side validation for the enroll form; null means submittable. */
export function validateEnrollment(studentId: string, name: string): string | null {
  if (!studentId.trim()) return "student id must not be empty";
  if (!name.trim()) return "name must not be empty";
  return null;
}

export interface GalleryRow {
  id: string;
  name: string;
  embeddings: number;
}

export interface AttendanceRow {
  time: string;
  decision: string;
  maskStatus: string;
  distance: string;
}

export interface ViewModel {
  overlays: FaceOverlay[];
  captions: string[];
  banner: string | null;
  paused: boolean;
  toast: string | null;
  enrollError: string | null;
  notice: string | null;
  thresholdLabel: string;
  galleryRows: GalleryRow[];
  attendanceRows: AttendanceRow[];
}

/** Pure render: last responses + session state in, view model out. */
export function renderModel(
  state: ConsoleState,
  display: { width: number; height: number },
): ViewModel {
  const nameById = new Map(state.gallery.map((entry) => [entry.id, entry.name]));
  const overlays = state.lastVerify
    ? computeOverlays(state.lastVerify, display.width, display.height, nameById)
    : [];
  const since = state.attendanceSince;
  const events =
    since === null
      ? state.attendance
      : state.attendance.filter((event) => event.timestamp >= since);
  return {
    overlays,
    captions: overlays.map(overlayCaption),
    banner: state.banner,
    paused: state.paused,
    toast: state.toast,
    enrollError: state.enrollError,
    notice: state.notice,
    thresholdLabel: state.session.threshold.toFixed(2),
    galleryRows: state.gallery.map((entry) => ({
      id: entry.id,
      name: entry.name,
      embeddings: entry.embeddings_count,
    })),
    attendanceRows: events
      .slice(-50)
      .reverse()
      .map((event) => ({
        time: new Date(event.timestamp * 1000).toLocaleTimeString(),
        decision: event.decision,
        maskStatus: event.mask_status,
        distance: event.distance === null ? "-" : event.distance.toFixed(3),
      })),
  };
}
