// DOM wiring: poll the service, render the run monitor and the queue,
// submit expert labels.

import { ApiClient, type QueryInfo, type StatusInfo } from "./api.js";
import { drawTrajectories } from "./chart.js";
import {
  badgeFor, currentLabelName, describeRound, formatPFalse, pointCount,
  sortQueue, sparklinePath, SubmitGuard, toChannelSeries,
} from "./model.js";

const POLL_MS = 1000;

const api = new ApiClient("");
const guard = new SubmitGuard();
const accuracyTrace: number[] = [];
let selectedId: number | null = null;
let lastSnapshotEpoch = -1;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setText(id: string, text: string): void {
  el(id).textContent = text;
}

function notice(text: string): void {
  const box = el<HTMLDivElement>("notice");
  box.textContent = text;
  box.classList.toggle("hidden", text === "");
}

function renderStatus(status: StatusInfo): void {
  setText("epoch", status.epoch >= 0 ? String(status.epoch) : "—");
  setText("phase", status.phase);
  const snap = status.snapshot;
  if (snap && snap.epoch !== lastSnapshotEpoch) {
    lastSnapshotEpoch = snap.epoch;
    accuracyTrace.push(snap.accuracy);
  }
  setText("accuracy", snap ? `${snap.accuracy.toFixed(2)}%` : "—");
  const corr = snap?.correction?.overall;
  setText("correction", corr === null || corr === undefined ? "n/a" : `${corr.toFixed(1)}%`);
  const round = status.pending_round;
  setText("round", describeRound(round?.pending ?? 0, round?.total ?? 0, round?.round ?? 0));
  el<HTMLElement>("done-banner").classList.toggle("hidden", !status.done);
  const spark = el<SVGPathElement & HTMLElement>("sparkline");
  spark.setAttribute("d", sparklinePath(accuracyTrace, 160, 36));
}

function queueRow(q: QueryInfo): HTMLLIElement {
  const li = document.createElement("li");
  li.dataset.id = String(q.id);
  li.className = q.id === selectedId ? "query selected" : "query";
  const badge = badgeFor(q.direction);
  li.innerHTML = `
    <span class="badge ${badge}">${badge}</span>
    <span class="qid">#${q.id}</span>
    <span class="pfalse">p_false ${formatPFalse(q.p_false)}</span>
    <span class="trained-as">now ${currentLabelName(q)}</span>`;
  li.addEventListener("click", () => select(q.id));
  return li;
}

async function renderQueue(): Promise<void> {
  const queries = sortQueue(await api.pendingQueries());
  const list = el<HTMLUListElement>("queue");
  list.replaceChildren(...queries.map(queueRow));
  el<HTMLElement>("queue-empty").classList.toggle("hidden", queries.length > 0);
  el<HTMLElement>("detail").classList.toggle(
    "hidden", selectedId === null || !queries.some((q) => q.id === selectedId));
  if (selectedId !== null && !queries.some((q) => q.id === selectedId)) {
    selectedId = null;
  }
}

async function select(id: number): Promise<void> {
  selectedId = id;
  const sample = await api.sample(id);
  const series = toChannelSeries(sample);
  setText("detail-title", `sample #${id} — ${series.length} channels, ` +
    `${pointCount(series)} points`);
  drawTrajectories(el<HTMLCanvasElement>("chart"), series);
  el<HTMLElement>("detail").classList.remove("hidden");
  await renderQueue();
}

async function submit(label: "stable" | "unstable"): Promise<void> {
  if (selectedId === null) return;
  const id = selectedId;
  if (!guard.tryAcquire(id)) return;
  // optimistic removal; conflicts restore the row with a notice
  const result = await api.submitLabel(id, label).catch(() => "error" as const);
  if (result === "ok") {
    notice("");
    selectedId = null;
  } else if (result === "conflict") {
    notice(`query #${id} was already answered elsewhere`);
    selectedId = null;
  } else {
    guard.release(id);
    notice(`submission failed (${result}); try again`);
  }
  await renderQueue();
}

async function tick(): Promise<void> {
  try {
    renderStatus(await api.status());
    await renderQueue();
    el<HTMLElement>("offline-banner").classList.add("hidden");
  } catch {
    el<HTMLElement>("offline-banner").classList.remove("hidden");
  }
}

export function start(): void {
  el<HTMLButtonElement>("label-stable").addEventListener("click", () => submit("stable"));
  el<HTMLButtonElement>("label-unstable").addEventListener("click", () => submit("unstable"));
  void tick();
  setInterval(() => void tick(), POLL_MS);
}

if (typeof document !== "undefined" && document.getElementById("queue")) {
  start();
}
