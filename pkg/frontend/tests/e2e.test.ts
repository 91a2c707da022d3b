// End-to-end session flow against a live service with a trained model:
// create session -> query -> negative refine -> inversion refine, driving
// the console's state transitions exactly as the DOM layer does, and
// checking that badges are consistent with the server's rankings and that
// the retention gauge shows the server's retention to three decimals.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, ServiceClient, type RankedResponse } from "../src/api.js";
import {
    applyRanking,
    initialView,
    rankDeltas,
    type SessionView,
} from "../src/state.js";
import { renderGauge, renderResults } from "../src/render.js";

const LONG = 180_000;

let workdir: string;
let server: ChildProcess | null = null;
let baseUrl: string;
let client: ServiceClient;
let modelName: string;
let corpusName: string;

function freePort(): Promise<number> {
    return new Promise((resolve, reject) => {
        const probe = createServer();
        probe.once("error", reject);
        probe.listen(0, "127.0.0.1", () => {
            const address = probe.address();
            if (address === null || typeof address === "string") {
                reject(new Error("no port assigned"));
                return;
            }
            probe.close(() => resolve(address.port));
        });
    });
}

async function waitForHealth(url: string, timeoutMs = 60_000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
        try {
            const resp = await fetch(`${url}/health`);
            if (resp.ok) return;
        } catch {
            // not up yet
        }
        await new Promise((r) => setTimeout(r, 250));
    }
    throw new Error(`service at ${url} never became healthy`);
}

beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "gq-console-e2e-"));
    const corpus = join(workdir, "e2e.gdrl");
    execFileSync("ghostquery", [
        "gen-corpus", "--grid", "3x3", "--items", "8", "--da", "16", "--dt", "8",
        "--frames", "8", "--seed", "5", "-o", corpus,
    ]);
    execFileSync(
        "ghostquery",
        [
            "train", "--corpus", corpus, "--hidden", "32", "--steps", "300",
            "--warmup", "30", "--batch", "32", "--seed", "2", "-o", join(workdir, "run"),
        ],
        { stdio: "ignore" },
    );
    const port = await freePort();
    baseUrl = `http://127.0.0.1:${port}`;
    server = spawn(
        "ghostquery",
        [
            "serve", "--model", join(workdir, "run", "model.gdrm"),
            "--corpus", corpus, "--port", String(port),
        ],
        { stdio: "ignore" },
    );
    await waitForHealth(baseUrl);
    client = new ServiceClient(baseUrl);
    const health = await client.health();
    modelName = health.model;
    corpusName = health.corpus;
}, LONG);

afterAll(() => {
    server?.kill();
    if (workdir) rmSync(workdir, { recursive: true, force: true });
});

describe("session flow through the console state machine", () => {
    let view: SessionView;
    let sessionId: string;
    let queryResponse: RankedResponse;
    let negativeResponse: RankedResponse;
    let invertResponse: RankedResponse;

    it("creates a session", { timeout: LONG }, async () => {
        const created = await client.createSession(modelName, corpusName, 6);
        sessionId = created.session_id;
        view = { ...initialView(), sessionId };
        expect(sessionId).toBeTruthy();
    });

    it("composes and runs a query", { timeout: LONG }, async () => {
        queryResponse = await client.query(sessionId, { cond: "g0", w: 2, n_q: 5, k: 10 });
        view = applyRanking(view, "query", "g0 (w=2)", queryResponse);
        expect(view.rows).toHaveLength(10);
        const scores = view.rows.map((r) => r.score);
        expect([...scores].sort((a, b) => b - a)).toEqual(scores);
        expect(view.rows.every((r) => r.delta === null)).toBe(true);
        expect(view.rows.every((r) => "genre" in r.labels)).toBe(true);
    });

    it("negative refinement visibly updates the ranking with consistent badges",
        { timeout: LONG }, async () => {
        negativeResponse = await client.refineNegative(sessionId, { neg_cond: "i1", w: 2 });
        view = applyRanking(view, "negative", "not i1 (w=2)", negativeResponse);

        const before = queryResponse.results.map((r) => r.id);
        const after = negativeResponse.results.map((r) => r.id);
        expect(after).not.toEqual(before); // visibly updated

        // badge consistency: recompute deltas from the raw server rankings
        const expected = rankDeltas(queryResponse.results, negativeResponse.results);
        expect(view.rows.map((r) => [r.id, r.delta])).toEqual(
            expected.map((r) => [r.id, r.delta]),
        );
        const html = renderResults(view.rows, view.departed);
        for (const r of view.rows) {
            if (r.delta === "new") expect(html).toContain("badge-new");
        }
    });

    it("inversion refinement returns a retention gauge matching the server to 3 decimals",
        { timeout: LONG }, async () => {
        invertResponse = await client.refineInvert(sessionId, {
            new_cond: "g0,i2", k_steps: 20, w: 1,
        });
        view = applyRanking(view, "invert", "-> g0,i2 (k=20, w=1)", invertResponse);
        expect(typeof invertResponse.retention).toBe("number");
        const gauge = renderGauge(view.retention);
        expect(gauge).toContain(`>${invertResponse.retention!.toFixed(3)}<`);
        expect(view.history.map((h) => h.kind)).toEqual(["query", "negative", "invert"]);
    });

    it("history matches the server's recorded session", { timeout: LONG }, async () => {
        const snap = await client.session(sessionId);
        expect(snap.history).toHaveLength(3);
    });
});

describe("guidance identity at w = 0", () => {
    it("a null-effect negative refine leaves the ranking unchanged (no badges)",
        { timeout: LONG }, async () => {
        const created = await client.createSession(modelName, corpusName, 9);
        let view = { ...initialView(), sessionId: created.session_id };
        const first = await client.query(created.session_id, { cond: "g1,i1", w: 0, n_q: 3, k: 8 });
        view = applyRanking(view, "query", "g1,i1 (w=0)", first);
        const refined = await client.refineNegative(created.session_id, { neg_cond: "i0", w: 0 });
        view = applyRanking(view, "negative", "not i0 (w=0)", refined);
        expect(refined.results.map((r) => r.id)).toEqual(first.results.map((r) => r.id));
        expect(view.rows.every((r) => r.delta === 0)).toBe(true);
        expect(renderResults(view.rows, view.departed)).not.toContain('class="badge ');
    });
});

describe("error surfaces", () => {
    it("refining before any query yields the 409 the UI maps to a hint",
        { timeout: LONG }, async () => {
        const created = await client.createSession(modelName, corpusName);
        try {
            await client.refineNegative(created.session_id, { neg_cond: "i1", w: 1 });
            expect.unreachable("server should have refused");
        } catch (err) {
            expect(err).toBeInstanceOf(ApiError);
            expect((err as ApiError).status).toBe(409);
        }
    });

    it("malformed conditioning yields 422 without killing the session",
        { timeout: LONG }, async () => {
        const created = await client.createSession(modelName, corpusName);
        await expect(
            client.query(created.session_id, { cond: "zz9", w: 1, n_q: 3, k: 5 }),
        ).rejects.toMatchObject({ status: 422 });
        const ok = await client.query(created.session_id, { cond: "g0,i0", w: 1, n_q: 3, k: 5 });
        expect(ok.results).toHaveLength(5);
    });
});
