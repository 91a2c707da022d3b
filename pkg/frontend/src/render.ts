// HTML renderers for the console panels. Pure string builders so the
// display logic is testable without a browser; main.ts assigns the output
// to container elements and wires events.

import type { ResultEntry } from "./api.js";
import type { HistoryStep, ResultRow, SessionView } from "./state.js";

export function escapeHtml(text: string): string {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}

function deltaBadge(row: ResultRow): string {
    if (row.delta === null || row.delta === 0) return "";
    if (row.delta === "new") return '<span class="badge badge-new">new</span>';
    const up = row.delta > 0;
    const cls = up ? "badge-up" : "badge-down";
    const arrow = up ? "&#9650;" : "&#9660;";
    return `<span class="badge ${cls}">${arrow}${Math.abs(row.delta)}</span>`;
}

function labelChips(labels: Record<string, string>): string {
    return Object.entries(labels)
        .map(([k, v]) => `<span class="chip" title="${escapeHtml(k)}">${escapeHtml(v)}</span>`)
        .join("");
}

export function renderResults(rows: ResultRow[], departed: ResultEntry[]): string {
    if (!rows.length) {
        return '<p class="placeholder">no results yet; compose a query</p>';
    }
    const lines = rows.map((row) => {
        const width = Math.round(Math.max(0, Math.min(1, (row.score + 1) / 2)) * 100);
        return `<li class="result">
            <span class="rank">${row.rank}</span>
            <span class="id">${escapeHtml(row.id)}</span>
            ${labelChips(row.labels)}
            <span class="scorebar"><span class="fill" style="width:${width}%"></span></span>
            <span class="score">${row.score.toFixed(4)}</span>
            ${deltaBadge(row)}
        </li>`;
    });
    const gone = departed.length
        ? `<p class="departed">left top-k: ${departed.map((e) => escapeHtml(e.id)).join(", ")}</p>`
        : "";
    return `<ol class="results">${lines.join("")}</ol>${gone}`;
}

export function renderGauge(retention: number | null): string {
    if (retention === null) {
        return '<p class="placeholder">retention appears after an inversion edit</p>';
    }
    const pct = Math.round(Math.max(0, Math.min(1, retention)) * 100);
    return `<div class="gauge"><div class="gauge-fill" style="width:${pct}%"></div></div>
        <span class="gauge-value">${retention.toFixed(3)}</span>`;
}

const KIND_TAGS: Record<string, string> = {
    query: "Q",
    negative: "−",
    invert: "↺",
};

export function renderHistory(history: HistoryStep[], viewing: number | null): string {
    if (!history.length) return '<p class="placeholder">no steps yet</p>';
    const live = viewing === null ? history.length - 1 : viewing;
    const items = history.map((step, i) => {
        const active = i === live ? " active" : "";
        const retention =
            step.retention === null ? "" : `<span class="mini">retention ${step.retention.toFixed(3)}</span>`;
        return `<button class="step${active}" data-step="${i}">
            <span class="kind">${KIND_TAGS[step.kind] ?? "?"}</span>
            <span class="label">${escapeHtml(step.label)}</span>${retention}
        </button>`;
    });
    return items.join("");
}

export function renderError(view: SessionView): string {
    return view.error ? `<div class="error">${escapeHtml(view.error)}</div>` : "";
}
