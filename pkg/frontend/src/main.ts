// DOM wiring for the operator console. All presentation decisions live in
// the pure renderModel(); this file only moves data between the DOM and
// the state, and draws the current ViewModel.

import { ApiClient, ApiError } from "./api.js";
import { captureFrameBase64, initCamera } from "./capture.js";
import { VerifyLoop } from "./loop.js";
import {
  applyAttendance,
  applyDeleteMissing,
  applyEnrollFailure,
  applyEnrollSuccess,
  applyGallery,
  initialState,
  renderModel,
  setAttendanceSince,
  setThreshold,
  validateEnrollment,
  type ConsoleState,
} from "./state.js";
import { createSession } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const api = new ApiClient("");
let state: ConsoleState = initialState(createSession("", { captureIntervalMs: 600 }));

const video = $<HTMLVideoElement>("camera");
const overlayCanvas = $<HTMLCanvasElement>("overlay");
const captureCanvas = document.createElement("canvas");

function draw(): void {
  const width = video.clientWidth || 640;
  const height = video.clientHeight || 480;
  overlayCanvas.width = width;
  overlayCanvas.height = height;
  const vm = renderModel(state, { width, height });

  const ctx = overlayCanvas.getContext("2d");
  if (ctx) {
    ctx.clearRect(0, 0, width, height);
    ctx.lineWidth = 2;
    ctx.font = "13px system-ui, sans-serif";
    vm.overlays.forEach((overlay, i) => {
      ctx.strokeStyle = overlay.matched ? "#2e9e5b" : "#d64545";
      ctx.strokeRect(overlay.x, overlay.y, overlay.width, overlay.height);
      const caption = vm.captions[i] ?? overlay.label;
      const textY = overlay.y > 16 ? overlay.y - 5 : overlay.y + overlay.height + 14;
      ctx.fillStyle = overlay.matched ? "#2e9e5b" : "#d64545";
      ctx.fillText(caption, overlay.x + 2, textY);
    });
  }

  const banner = $("banner");
  banner.textContent = vm.banner ?? "";
  banner.classList.toggle("hidden", vm.banner === null);
  $("resume").classList.toggle("hidden", !vm.paused);

  const toast = $("toast");
  toast.textContent = vm.toast ?? "";
  toast.classList.toggle("hidden", vm.toast === null);

  const enrollError = $("enroll-error");
  enrollError.textContent = vm.enrollError ?? "";
  enrollError.classList.toggle("hidden", vm.enrollError === null);

  const notice = $("notice");
  notice.textContent = vm.notice ?? "";
  notice.classList.toggle("hidden", vm.notice === null);

  $("threshold-label").textContent = vm.thresholdLabel;

  const galleryBody = $("gallery-body");
  galleryBody.innerHTML = "";
  for (const row of vm.galleryRows) {
    const tr = document.createElement("tr");
    const del = `<button class="delete" data-id="${row.id}">delete</button>`;
    tr.innerHTML =
      `<td>${row.id}</td><td>${row.name}</td><td>${row.embeddings}</td><td>${del}</td>`;
    galleryBody.appendChild(tr);
  }

  const feed = $("attendance-body");
  feed.innerHTML = "";
  for (const row of vm.attendanceRows) {
    const tr = document.createElement("tr");
    tr.innerHTML =
      `<td>${row.time}</td><td>${row.decision}</td>` +
      `<td>${row.maskStatus}</td><td>${row.distance}</td>`;
    feed.appendChild(tr);
  }
}

function update(next: ConsoleState): void {
  state = next;
  draw();
}

async function refreshPanels(): Promise<void> {
  try {
    const [gallery, attendance] = await Promise.all([
      api.gallery(),
      api.attendance(state.attendanceSince ?? undefined),
    ]);
    update(applyAttendance(applyGallery(state, gallery), attendance));
  } catch {
    // panel refresh failures are non-fatal; the loop owns the banner
  }
}

const loop = new VerifyLoop({
  api,
  captureFrame: () => captureFrameBase64(video, captureCanvas),
  getState: () => state,
  setState: update,
  onVerified: () => {
    void refreshPanels();
  },
});

function wireControls(): void {
  const slider = $<HTMLInputElement>("threshold");
  slider.addEventListener("input", () => {
    update(setThreshold(state, Number(slider.value)));
  });

  $("resume").addEventListener("click", () => loop.resume());

  const enrollForm = $<HTMLFormElement>("enroll-form");
  enrollForm.addEventListener("submit", (event) => {
    event.preventDefault();
    const studentId = $<HTMLInputElement>("enroll-id").value;
    const name = $<HTMLInputElement>("enroll-name").value;
    const problem = validateEnrollment(studentId, name);
    if (problem) {
      update(applyEnrollFailure(state, 0, problem));
      return;
    }
    const frame = captureFrameBase64(video, captureCanvas);
    if (!frame) {
      update(applyEnrollFailure(state, 0, "camera is not ready"));
      return;
    }
    api
      .enroll(studentId.trim(), name.trim(), frame)
      .then((result) => {
        update(applyEnrollSuccess(state, result));
        return refreshPanels();
      })
      .catch((error) => {
        if (error instanceof ApiError) {
          update(applyEnrollFailure(state, error.status, error.detail));
        } else {
          update(applyEnrollFailure(state, 0, "service unreachable"));
        }
      });
  });

  $("gallery-body").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const id = target.dataset.id;
    if (!id || !target.classList.contains("delete")) return;
    if (!window.confirm(`Remove ${id} from the gallery?`)) return;
    api
      .deleteStudent(id)
      .then(() => refreshPanels())
      .catch((error) => {
        if (error instanceof ApiError && error.status === 404) {
          update(applyDeleteMissing(state, id));
        }
        return refreshPanels();
      });
  });

  const sinceInput = $<HTMLInputElement>("since");
  $("apply-since").addEventListener("click", () => {
    const raw = sinceInput.value.trim();
    update(setAttendanceSince(state, raw ? Number(raw) : null));
    void refreshPanels();
  });
}

async function start(): Promise<void> {
  wireControls();
  draw();
  try {
    await initCamera(video);
  } catch {
    update({ ...state, banner: "camera permission denied" });
    return;
  }
  await refreshPanels();
  loop.start();
}

void start();
