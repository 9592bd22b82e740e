// Live verification loop: capture a frame, POST /verify, fold the result
// into state. One request in flight at most; a tick that would overlap is
// dropped (back-pressure by skipping frames). Transport failures pause the
// loop and raise the banner until the operator resumes.

import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import type { ConsoleState } from "./state.js";
import { applyServiceError, applyVerify, resume, tickSkipped } from "./state.js";
import { MIN_CAPTURE_INTERVAL_MS } from "./types.js";

export interface LoopHarness {
  api: Pick<ApiClient, "verify">;
  captureFrame: () => string | null;
  getState: () => ConsoleState;
  setState: (next: ConsoleState) => void;
  onVerified?: () => void;
}

export class VerifyLoop {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(private readonly harness: LoopHarness) {}

  get running(): boolean {
    return this.timer !== null;
  }

  start(): void {
    if (this.timer !== null) return;
    const interval = Math.max(
      MIN_CAPTURE_INTERVAL_MS,
      this.harness.getState().session.captureIntervalMs,
    );
    this.timer = setInterval(() => {
      void this.tick();
    }, interval);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  resume(): void {
    this.harness.setState(resume(this.harness.getState()));
    this.start();
  }

  async tick(): Promise<void> {
    const { harness } = this;
    if (this.inFlight) {
      harness.setState(tickSkipped(harness.getState()));
      return;
    }
    const frame = harness.captureFrame();
    if (frame === null) {
      return;
    }
    this.inFlight = true;
    try {
      const state = harness.getState();
      const response = await harness.api.verify(frame, {
        sessionId: state.session.sessionId,
        threshold: state.session.threshold,
      });
      harness.setState(applyVerify(harness.getState(), response));
      harness.onVerified?.();
    } catch (error) {
      if (error instanceof ApiError) {
        harness.setState(
          applyServiceError(harness.getState(), `service error ${error.status}`),
        );
      } else {
        harness.setState(
          applyServiceError(harness.getState(), "service unreachable"),
        );
      }
      this.stop();
    } finally {
      this.inFlight = false;
    }
  }
}
