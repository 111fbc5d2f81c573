import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

export function fixture<T>(name: string): T {
  const raw = readFileSync(join(here, "fixtures", `${name}.json`), "utf-8");
  return JSON.parse(raw) as T;
}

export interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

/** fetch stand-in that records calls and serves canned payloads by path. */
export function recordingFetch(
  payloads: Record<string, unknown>,
  calls: RecordedCall[],
) {
  return async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    calls.push({
      url,
      method,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    const path = url.split("?")[0];
    const payload = payloads[`${method} ${path}`] ?? payloads[path];
    if (payload === undefined) {
      return new Response("not found", { status: 404 });
    }
    return new Response(JSON.stringify(payload), {
      status: 200,
      headers: { "content-type": "application/json" },
    });
  };
}
