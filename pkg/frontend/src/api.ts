// Typed client for the retrieval service's JSON API. Every number the
// console displays comes out of these responses; the client performs no
// retrieval math of its own.

export type Labels = Record<string, string>;

export type ResultEntry = {
    id: string;
    score: number;
    rank: number;
    labels: Labels;
};

export type RankedResponse = {
    query: Record<string, unknown>;
    results: ResultEntry[];
    retention?: number;
};

export type CondInput = string | { tokens: number[][] };

export type QueryBody = { cond: CondInput; w: number; n_q: number; k: number };
export type NegativeBody = { neg_cond: CondInput | null; w: number };
export type InvertBody = { new_cond: CondInput; k_steps: number; w: number };

export type CorpusItem = { id: string; labels: Labels; split: string };
export type CorpusPage = { total: number; offset: number; items: CorpusItem[] };

export class ApiError extends Error {
    constructor(public status: number, detail: string) {
        super(`HTTP ${status}: ${detail}`);
    }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
    constructor(
        private baseUrl: string,
        private fetchFn: FetchLike = (input, init) => fetch(input, init),
    ) {}

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
        if (!resp.ok) {
            let detail = resp.statusText;
            try {
                const body = await resp.json();
                if (body && typeof body.detail === "string") detail = body.detail;
            } catch {
                // non-JSON error body; keep the status text
            }
            throw new ApiError(resp.status, detail);
        }
        return (await resp.json()) as T;
    }

    private post<T>(path: string, body: unknown): Promise<T> {
        return this.request<T>(path, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
    }

    health(): Promise<{ status: string; model: string; corpus: string }> {
        return this.request("/health");
    }

    corpusItems(offset = 0, limit = 500): Promise<CorpusPage> {
        return this.request(`/corpus/items?offset=${offset}&limit=${limit}`);
    }

    createSession(model: string, corpus: string, seed?: number): Promise<{ session_id: string; seed: number }> {
        const body: Record<string, unknown> = { model, corpus };
        if (seed !== undefined) body.seed = seed;
        return this.post("/sessions", body);
    }

    query(sessionId: string, body: QueryBody): Promise<RankedResponse> {
        return this.post(`/sessions/${sessionId}/query`, body);
    }

    refineNegative(sessionId: string, body: NegativeBody): Promise<RankedResponse> {
        return this.post(`/sessions/${sessionId}/refine/negative`, body);
    }

    refineInvert(sessionId: string, body: InvertBody): Promise<RankedResponse> {
        return this.post(`/sessions/${sessionId}/refine/invert`, body);
    }

    session(sessionId: string): Promise<{ id: string; history: unknown[]; last_results: unknown }> {
        return this.request(`/sessions/${sessionId}`);
    }
}
