// Webcam helpers: thin DOM layer, kept apart from the pure core.

export async function initCamera(video: HTMLVideoElement): Promise<void> {
  const stream = await navigator.mediaDevices.getUserMedia({
    video: { width: { ideal: 640 }, height: { ideal: 480 } },
    audio: false,
  });
  video.srcObject = stream;
  await video.play();
}

/** Grab the current video frame as raw base64 JPEG (no data: prefix). */
export function captureFrameBase64(
  video: HTMLVideoElement,
  canvas: HTMLCanvasElement,
): string | null {
  if (!video.videoWidth || !video.videoHeight) {
    return null;
  }
  canvas.width = video.videoWidth;
  canvas.height = video.videoHeight;
  const ctx = canvas.getContext("2d");
  if (!ctx) return null;
  ctx.drawImage(video, 0, 0, canvas.width, canvas.height);
  const dataUrl = canvas.toDataURL("image/jpeg", 0.7);
  const comma = dataUrl.indexOf(",");
  return comma === -1 ? null : dataUrl.slice(comma + 1);
}
