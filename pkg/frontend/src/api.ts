// Typed client for the annotation server's HTTP+JSON API.

import type { KeyBinding } from "./keymap.js";

export interface ProposalNext {
  done: false;
  mode: "propose";
  index: number;
  total: number;
  image_id: string;
  image_url: string;
  row: number;
  col: number;
  keymap: KeyBinding[];
}

export interface PickModeNext {
  done: false;
  mode: "human-pick";
  images: string[];
  keymap: KeyBinding[];
  picked: number;
}

export interface DoneNext {
  done: true;
  mode: string;
  total: number;
}

export type NextResponse = ProposalNext | PickModeNext | DoneNext;

export interface Progress {
  done: number;
  total: number;
  mean_ms: number | null;
  per_class_counts: Record<string, number>;
}

export interface SubmitAck {
  ok: boolean;
  cursor: number;
  total: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export interface Transport {
  next(sessionId: string): Promise<NextResponse>;
  submit(
    sessionId: string,
    body: { index: number; class_id: number; elapsed_ms: number },
  ): Promise<SubmitAck>;
  pick(
    sessionId: string,
    body: { image: string; row: number; col: number; class_id: number },
  ): Promise<{ ok: boolean; picked: number }>;
  progress(sessionId: string): Promise<Progress>;
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  let body: unknown = null;
  try {
    body = await resp.json();
  } catch {
    // non-JSON body: fall through to the status check
  }
  if (!resp.ok) {
    const err = (body ?? {}) as { error?: string; detail?: string };
    throw new ApiError(resp.status, err.error ?? "http_error", err.detail ?? resp.statusText);
  }
  return body as T;
}

export function httpTransport(baseUrl = ""): Transport {
  const root = baseUrl.replace(/\/$/, "");
  return {
    next: (sid) => request<NextResponse>(`${root}/sessions/${sid}/next`),
    submit: (sid, body) =>
      request(`${root}/sessions/${sid}/labels`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    pick: (sid, body) =>
      request(`${root}/sessions/${sid}/picks`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    progress: (sid) => request<Progress>(`${root}/sessions/${sid}/progress`),
  };
}
