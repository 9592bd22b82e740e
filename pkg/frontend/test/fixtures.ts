// Wire-format fixtures recorded from a live service run (stub detector +
// packaged tiny embedder). Contract tests pin the client against these
// exact shapes.

import type {
  AttendanceEvent,
  GalleryEntry,
  HealthResponse,
  VerifyResponse,
} from "../src/types.js";

export const HEALTH: HealthResponse = {
  status: "ok",
  version: "0.1.0",
  detector_loaded: true,
  embedder_loaded: true,
  gallery_size: 0,
};

export const ENROLL_OK = {
  student_id: "s-001",
  name: "Ada Lovelace",
  embeddings_count: 1,
};

export const ENROLL_422_DETAIL = {
  error: "enrollment requires exactly one detected face",
  faces: 2,
};

export const VERIFY_MATCH: VerifyResponse = {
  image: { width: 640, height: 480 },
  session_id: "console-demo",
  threshold: 0.6,
  faces: [
    {
      detection: {
        box: {
          x1: 200.00000027604096,
          y1: 120.00000056080381,
          x2: 320.0000004478326,
          y2: 240.00000016306973,
        },
        class: "mask",
        confidence: 0.9000000072074278,
      },
      match: {
        decision: "s-001",
        distance: 0.0,
        runner_up_distance: null,
        threshold_used: 0.6,
      },
    },
  ],
};

export const VERIFY_UNKNOWN: VerifyResponse = {
  image: { width: 640, height: 480 },
  session_id: "console-demo",
  threshold: 0.6,
  faces: [
    {
      detection: {
        box: {
          x1: 200.00000027604096,
          y1: 120.00000056080381,
          x2: 320.0000004478326,
          y2: 240.00000016306973,
        },
        class: "mask",
        confidence: 0.9000000072074278,
      },
      match: {
        decision: "unknown",
        distance: 65.6848773815925,
        runner_up_distance: null,
        threshold_used: 0.6,
      },
    },
  ],
};

export const GALLERY: GalleryEntry[] = [
  {
    id: "s-001",
    name: "Ada Lovelace",
    embeddings_count: 1,
    enrolled_at: 1786322030.2214305,
  },
];

export const ATTENDANCE: AttendanceEvent[] = [
  {
    timestamp: 1786322030.3591192,
    decision: "s-001",
    distance: 0.0,
    mask_status: "mask",
    confidence: 0.9000000072074278,
    session_id: "console-demo",
  },
  {
    timestamp: 1786322030.4934833,
    decision: "unknown",
    distance: 65.6848773815925,
    mask_status: "mask",
    confidence: 0.9000000072074278,
    session_id: "console-demo",
  },
];

export const DELETE_404_DETAIL = "student 'ghost' not enrolled";
