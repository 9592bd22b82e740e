// Typed client for the service's documented /api/v1 endpoints. The fetch
// implementation is injectable so contract tests can run against a mock.

import type {
  AttendanceEvent,
  EnrollResponse,
  GalleryEntry,
  HealthResponse,
  VerifyResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`service returned ${status}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    body = null;
  }
  if (!response.ok) {
    const detail =
      body && typeof body === "object" && "detail" in body
        ? (body as { detail: unknown }).detail
        : body;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  private postJson(path: string, payload: unknown): Promise<Response> {
    return this.fetchFn(this.url(path), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async health(): Promise<HealthResponse> {
    return parseOrThrow(await this.fetchFn(this.url("/api/v1/health")));
  }

  async detect(imageB64: string): Promise<unknown[]> {
    return parseOrThrow(await this.postJson("/api/v1/detect", { image_b64: imageB64 }));
  }

  async enroll(studentId: string, name: string, imageB64: string): Promise<EnrollResponse> {
    return parseOrThrow(
      await this.postJson("/api/v1/enroll", {
        student_id: studentId,
        name,
        image_b64: imageB64,
      }),
    );
  }

  async verify(
    imageB64: string,
    options: { sessionId?: string; threshold?: number } = {},
  ): Promise<VerifyResponse> {
    const payload: Record<string, unknown> = { image_b64: imageB64 };
    if (options.sessionId !== undefined) payload.session_id = options.sessionId;
    if (options.threshold !== undefined) payload.threshold = options.threshold;
    return parseOrThrow(await this.postJson("/api/v1/verify", payload));
  }

  async gallery(): Promise<GalleryEntry[]> {
    return parseOrThrow(await this.fetchFn(this.url("/api/v1/gallery")));
  }

  async deleteStudent(studentId: string): Promise<{ removed: string }> {
    return parseOrThrow(
      await this.fetchFn(this.url(`/api/v1/gallery/${encodeURIComponent(studentId)}`), {
        method: "DELETE",
      }),
    );
  }

  async attendance(since?: number): Promise<AttendanceEvent[]> {
    const query = since === undefined ? "" : `?since=${encodeURIComponent(since)}`;
    return parseOrThrow(await this.fetchFn(this.url(`/api/v1/attendance${query}`)));
  }
}
