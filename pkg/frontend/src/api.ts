// Types and transport for the annotation service HTTP API.

export interface Assignment {
  done: false;
  sample_id: string;
  image_url: string;
  labeled: number;
  total: number;
}

export interface SessionDone {
  done: true;
  labeled: number;
}

export type NextResponse = Assignment | SessionDone;

export interface Definitions {
  behavioral: Record<string, string>;
  emotional: Record<string, string>;
  combination: string;
}

export interface LabelSubmission {
  sample_id: string;
  annotator: string;
  behavioral: string;
  emotional: string;
}

export interface LabelOption {
  value: string;
  label: string;
}

// Option order is part of the annotation protocol; never reorder or filter.
export const BEHAVIORAL_OPTIONS: readonly LabelOption[] = [
  { value: "on_task", label: "On-Task" },
  { value: "off_task", label: "Off-Task" },
  { value: "cant_decide", label: "Can't Decide" },
];

export const EMOTIONAL_OPTIONS: readonly LabelOption[] = [
  { value: "satisfied", label: "Satisfied" },
  { value: "confused", label: "Confused" },
  { value: "bored", label: "Bored" },
  { value: "cant_decide", label: "Can't Decide" },
];

/** Error with the HTTP status attached so callers can branch on it. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export interface Transport {
  next(annotator: string): Promise<NextResponse>;
  submit(submission: LabelSubmission): Promise<void>;
  definitions(): Promise<Definitions>;
}

async function throwForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

/** fetch-based transport; base is "" when served by the service itself. */
export class HttpTransport implements Transport {
  constructor(
    private readonly base: string = "",
    private readonly token: string | null = null,
  ) {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  async next(annotator: string): Promise<NextResponse> {
    const url = `${this.base}/api/next?annotator=${encodeURIComponent(annotator)}`;
    const response = await fetch(url, { headers: this.headers(false) });
    await throwForStatus(response);
    return response.json();
  }

  async submit(submission: LabelSubmission): Promise<void> {
    const response = await fetch(`${this.base}/api/label`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(submission),
    });
    await throwForStatus(response);
  }

  async definitions(): Promise<Definitions> {
    const response = await fetch(`${this.base}/api/definitions`);
    await throwForStatus(response);
    return response.json();
  }
}
