// Console wiring: controls -> state transitions -> renderers.
//
// At most one mutating request is in flight per session; controls are
// disabled while pending. Errors surface inline without clearing the
// composer. Timeline clicks re-show the clicked step's stored results.

import { ApiError, ServiceClient, type CondInput } from "./api.js";
import {
    applyRanking,
    attributeOptions,
    condFromSelection,
    displayedStep,
    initialView,
    viewStep,
    withError,
    withPending,
    type SessionView,
} from "./state.js";
import { renderError, renderGauge, renderHistory, renderResults } from "./render.js";

const BASE_URL =
    (window as { GHOSTQUERY_URL?: string }).GHOSTQUERY_URL ?? window.location.origin;

const client = new ServiceClient(BASE_URL);
let view: SessionView = initialView();

const el = <T extends HTMLElement>(id: string): T => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
};

function selects(): HTMLSelectElement[] {
    return ["genre", "instrument", "neg-genre", "neg-instrument", "new-genre", "new-instrument"].map(
        (id) => el<HTMLSelectElement>(id),
    );
}

function controls(): (HTMLButtonElement | HTMLInputElement | HTMLSelectElement | HTMLTextAreaElement)[] {
    return [
        ...selects(),
        el<HTMLInputElement>("w"),
        el<HTMLInputElement>("nq"),
        el<HTMLInputElement>("k"),
        el<HTMLInputElement>("neg-w"),
        el<HTMLInputElement>("k-steps"),
        el<HTMLInputElement>("invert-w"),
        el<HTMLTextAreaElement>("raw-cond"),
        el<HTMLButtonElement>("run-query"),
        el<HTMLButtonElement>("run-negative"),
        el<HTMLButtonElement>("run-invert"),
    ];
}

function paint(): void {
    const step = displayedStep(view);
    el("results").innerHTML = renderResults(step?.rows ?? [], step?.departed ?? []);
    el("gauge").innerHTML = renderGauge(step ? step.retention : view.retention);
    el("history").innerHTML = renderHistory(view.history, view.viewing);
    el("error").innerHTML = renderError(view);
    el("session-tag").textContent = view.sessionId ? `session ${view.sessionId}` : "no session";
    for (const node of controls()) node.disabled = view.pending;
    for (const btn of el("history").querySelectorAll<HTMLButtonElement>("button.step")) {
        btn.addEventListener("click", () => {
            view = viewStep(view, Number(btn.dataset.step));
            paint();
        });
    }
}

function sliderEcho(sliderId: string, outId: string): void {
    const slider = el<HTMLInputElement>(sliderId);
    const out = el(outId);
    const update = () => (out.textContent = slider.value);
    slider.addEventListener("input", update);
    update();
}

function composerCond(): CondInput | null {
    const raw = el<HTMLTextAreaElement>("raw-cond").value.trim();
    if (raw) {
        return { tokens: JSON.parse(raw) as number[][] };
    }
    return condFromSelection(
        el<HTMLSelectElement>("genre").value || null,
        el<HTMLSelectElement>("instrument").value || null,
    );
}

async function mutate(run: () => Promise<void>): Promise<void> {
    if (view.pending) return; // one in-flight mutation per session
    view = withPending(view, true);
    paint();
    try {
        await run();
        view = withPending(view, false);
    } catch (err) {
        const message =
            err instanceof ApiError && err.status === 409
                ? "query first: this refinement needs a prior query"
                : String(err instanceof Error ? err.message : err);
        view = withError(view, message);
    }
    paint();
}

async function ensureSession(): Promise<string> {
    if (view.sessionId) return view.sessionId;
    const health = await client.health();
    const created = await client.createSession(health.model, health.corpus);
    view = { ...view, sessionId: created.session_id };
    return created.session_id;
}

function bindActions(): void {
    el<HTMLButtonElement>("run-query").addEventListener("click", () =>
        mutate(async () => {
            const cond = composerCond();
            if (!cond) throw new Error("pick at least one attribute (or raw tokens)");
            const sid = await ensureSession();
            const w = Number(el<HTMLInputElement>("w").value);
            const body = {
                cond,
                w,
                n_q: Number(el<HTMLInputElement>("nq").value),
                k: Number(el<HTMLInputElement>("k").value),
            };
            const resp = await client.query(sid, body);
            const label = typeof cond === "string" ? `${cond} (w=${w})` : `raw tokens (w=${w})`;
            view = applyRanking(view, "query", label, resp);
        }),
    );

    el<HTMLButtonElement>("run-negative").addEventListener("click", () =>
        mutate(async () => {
            if (!view.sessionId) throw new Error("query first");
            const neg = condFromSelection(
                el<HTMLSelectElement>("neg-genre").value || null,
                el<HTMLSelectElement>("neg-instrument").value || null,
            );
            const w = Number(el<HTMLInputElement>("neg-w").value);
            const resp = await client.refineNegative(view.sessionId, { neg_cond: neg, w });
            view = applyRanking(view, "negative", `not ${neg ?? "(null)"} (w=${w})`, resp);
        }),
    );

    el<HTMLButtonElement>("run-invert").addEventListener("click", () =>
        mutate(async () => {
            if (!view.sessionId) throw new Error("query first");
            const cond = condFromSelection(
                el<HTMLSelectElement>("new-genre").value || null,
                el<HTMLSelectElement>("new-instrument").value || null,
            );
            if (!cond) throw new Error("pick the new conditioning attributes");
            const kSteps = Number(el<HTMLInputElement>("k-steps").value);
            const w = Number(el<HTMLInputElement>("invert-w").value);
            const resp = await client.refineInvert(view.sessionId, {
                new_cond: cond,
                k_steps: kSteps,
                w,
            });
            view = applyRanking(view, "invert", `-> ${cond} (k=${kSteps}, w=${w})`, resp);
        }),
    );
}

async function populateAttributes(): Promise<void> {
    const page = await client.corpusItems(0, 1000);
    const options = attributeOptions(page.items);
    const fill = (id: string, attr: string, withEmpty: boolean) => {
        const select = el<HTMLSelectElement>(id);
        select.innerHTML = "";
        if (withEmpty) select.append(new Option("(any)", ""));
        for (const value of options.get(attr) ?? []) select.append(new Option(value, value));
    };
    for (const id of ["genre", "neg-genre", "new-genre"]) fill(id, "genre", true);
    for (const id of ["instrument", "neg-instrument", "new-instrument"]) fill(id, "instrument", true);
}

export async function boot(): Promise<void> {
    sliderEcho("w", "w-value");
    sliderEcho("neg-w", "neg-w-value");
    sliderEcho("k-steps", "k-steps-value");
    sliderEcho("invert-w", "invert-w-value");
    bindActions();
    paint();
    try {
        await populateAttributes();
        const health = await client.health();
        el("server-tag").textContent = `${health.model} / ${health.corpus}`;
    } catch (err) {
        view = withError(view, `service unreachable at ${BASE_URL}: ${err}`);
        paint();
    }
}

boot();
