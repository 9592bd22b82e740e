// Pure mapping from a verify response to display-space face overlays.
// Display coordinates are derived client-side from the image dimensions
// echoed in the response; the server never learns the display size.

import type { FaceOverlay, VerifyResponse } from "./types.js";
import { UNKNOWN_DECISION } from "./types.js";

export function computeOverlays(
  response: VerifyResponse,
  displayWidth: number,
  displayHeight: number,
  nameById: ReadonlyMap<string, string> = new Map(),
): FaceOverlay[] {
  if (response.image.width <= 0 || response.image.height <= 0) {
    return [];
  }
  const sx = displayWidth / response.image.width;
  const sy = displayHeight / response.image.height;
  return response.faces.map((face) => {
    const { box } = face.detection;
    const matched = face.match.decision !== UNKNOWN_DECISION;
    const label = matched
      ? (nameById.get(face.match.decision) ?? face.match.decision)
      : UNKNOWN_DECISION;
    return {
      x: box.x1 * sx,
      y: box.y1 * sy,
      width: (box.x2 - box.x1) * sx,
      height: (box.y2 - box.y1) * sy,
      label,
      badge: face.detection.class,
      distance: face.match.distance,
      matched,
    };
  });
}

export function overlayCaption(overlay: FaceOverlay): string {
  const badge = overlay.badge === "mask" ? "mask" : "no mask";
  if (overlay.distance === null) {
    return `${overlay.label} · ${badge}`;
  }
  return `${overlay.label} · ${badge} · d=${overlay.distance.toFixed(3)}`;
}
