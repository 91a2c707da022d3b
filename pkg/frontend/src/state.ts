// Session view state and the pure transitions behind the console.
//
// The only numbers computed client-side are rank deltas between the two
// most recent server rankings (badge arithmetic); scores and retention
// always come straight from the service. History keeps each step's
// rendered rows, so clicking a timeline entry re-shows stored results
// rather than re-sampling anything.

import type { RankedResponse, ResultEntry } from "./api.js";

export type RankDelta = number | "new";

export type ResultRow = ResultEntry & { delta: RankDelta | null };

export type StepKind = "query" | "negative" | "invert";

export type HistoryStep = {
    kind: StepKind;
    label: string;
    rows: ResultRow[];
    departed: ResultEntry[];
    retention: number | null;
};

export type SessionView = {
    sessionId: string | null;
    rows: ResultRow[];
    departed: ResultEntry[];
    history: HistoryStep[];
    viewing: number | null; // timeline selection; null = live step
    retention: number | null;
    pending: boolean;
    error: string | null;
};

export function initialView(): SessionView {
    return {
        sessionId: null,
        rows: [],
        departed: [],
        history: [],
        viewing: null,
        retention: null,
        pending: false,
        error: null,
    };
}

/** Attach per-item rank movement vs the previous ranking (positive = up). */
export function rankDeltas(prev: ResultEntry[], next: ResultEntry[]): ResultRow[] {
    const prevRank = new Map(prev.map((e) => [e.id, e.rank]));
    return next.map((e) => {
        const before = prevRank.get(e.id);
        const delta: RankDelta | null =
            prev.length === 0 ? null : before === undefined ? "new" : before - e.rank;
        return { ...e, delta };
    });
}

/** Items that were ranked before but fell out of the new top-k. */
export function departedItems(prev: ResultEntry[], next: ResultEntry[]): ResultEntry[] {
    const kept = new Set(next.map((e) => e.id));
    return prev.filter((e) => !kept.has(e.id));
}

/** Fold a server ranking into the view: badges, history, retention gauge. */
export function applyRanking(
    view: SessionView,
    kind: StepKind,
    label: string,
    response: RankedResponse,
): SessionView {
    const prev = view.rows;
    const rows = rankDeltas(prev, response.results);
    const departed = departedItems(prev, response.results);
    const retention = typeof response.retention === "number" ? response.retention : null;
    const step: HistoryStep = { kind, label, rows, departed, retention };
    return {
        ...view,
        rows,
        departed,
        retention,
        history: [...view.history, step],
        viewing: null,
        error: null,
    };
}

/** Select a history step; its stored rows are what gets displayed. */
export function viewStep(view: SessionView, index: number | null): SessionView {
    if (index !== null && (index < 0 || index >= view.history.length)) return view;
    return { ...view, viewing: index };
}

/** Rows to display given the current timeline selection. */
export function displayedStep(view: SessionView): HistoryStep | null {
    if (view.viewing !== null) return view.history[view.viewing];
    return view.history.length ? view.history[view.history.length - 1] : null;
}

export function withPending(view: SessionView, pending: boolean): SessionView {
    return { ...view, pending };
}

export function withError(view: SessionView, message: string): SessionView {
    // errors surface inline; composer and results stay intact
    return { ...view, error: message, pending: false };
}

/** Attribute values present in the corpus labels, per attribute name. */
export function attributeOptions(items: { labels: Record<string, string> }[]): Map<string, string[]> {
    const out = new Map<string, Set<string>>();
    for (const item of items) {
        for (const [attr, value] of Object.entries(item.labels)) {
            if (!out.has(attr)) out.set(attr, new Set());
            out.get(attr)!.add(value);
        }
    }
    return new Map([...out.entries()].map(([k, v]) => [k, [...v].sort()]));
}

/** Compose the cond string the service expects from attribute selections. */
export function condFromSelection(genre: string | null, instrument: string | null): string | null {
    const parts = [genre, instrument].filter((v): v is string => !!v);
    return parts.length ? parts.join(",") : null;
}
