import type {
  CodesPayload,
  MetaPayload,
  PathPayload,
  PathRequest,
  SaliencyPayload,
  SaliencyRequest,
} from "./types.js";

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* keep statusText */
    }
    throw new ServiceError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

/** Thin typed client over the /v1 endpoints; performs no model math. */
export class ApiClient {
  constructor(private readonly base: string = "") {}

  meta(): Promise<MetaPayload> {
    return fetch(`${this.base}/v1/meta`).then((r) => parseOrThrow<MetaPayload>(r));
  }

  codes(): Promise<CodesPayload> {
    return fetch(`${this.base}/v1/codes`).then((r) => parseOrThrow<CodesPayload>(r));
  }

  path(req: PathRequest): Promise<PathPayload> {
    return fetch(`${this.base}/v1/path`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    }).then((r) => parseOrThrow<PathPayload>(r));
  }

  saliency(req: SaliencyRequest): Promise<SaliencyPayload> {
    return fetch(`${this.base}/v1/saliency`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    }).then((r) => parseOrThrow<SaliencyPayload>(r));
  }
}
