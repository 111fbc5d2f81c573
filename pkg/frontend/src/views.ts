// HTML renderers for each dashboard section. Pure string functions so
// they are testable without a DOM; main.ts assigns the results and wires
// the event handlers.

import type { MetricTiles, ViewModel } from "./state.js";
import { visibleDirectives } from "./state.js";
import type { Escalation, Goal, Task } from "./types.js";

function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderTiles(tiles: MetricTiles, connection: string): string {
  const entries: [string, string][] = [
    ["Effective tokens", tiles.effectiveTokens.toLocaleString("en-US")],
    ["Goals", `${tiles.goalsCompleted} / ${tiles.goalsTotal}`],
    ["Open escalations", String(tiles.openEscalations)],
    ["Merge queue", String(tiles.queueDepth)],
    ["Active agents", String(tiles.activeAgents)],
    ["Feed", connection],
  ];
  return entries
    .map(
      ([label, value]) =>
        `<div class="tile"><div class="tile-value">${escapeHtml(value)}</div>` +
        `<div class="tile-label">${escapeHtml(label)}</div></div>`,
    )
    .join("");
}

export function renderGoalsTable(goals: Goal[]): string {
  const rows = goals
    .map((goal) => {
      const latest = goal.verdict_history[goal.verdict_history.length - 1];
      const scores = latest
        ? latest.verdict.scores
            .map((s) => `${s.rubric.slice(0, 4)}:${s.score}`)
            .join(" ")
        : "—";
      const purity = latest ? (latest.verdict.purity.passed ? "ok" : "FAIL") : "—";
      const reasons = latest
        ? escapeHtml(latest.verdict.failure_reasons.join("; "))
        : "";
      return (
        `<tr class="goal-${goal.status}" title="${reasons}">` +
        `<td>${escapeHtml(goal.target_id)}</td>` +
        `<td class="status">${goal.status}</td>` +
        `<td>${escapeHtml(goal.last_matched_declaration ?? "—")}</td>` +
        `<td>${escapeHtml(scores)}</td>` +
        `<td class="purity-${purity === "ok" ? "ok" : "bad"}">${purity}</td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table><thead><tr><th>Target</th><th>Status</th><th>Declaration</th>` +
    `<th>Rubrics</th><th>Purity</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderInbox(escalations: Escalation[]): string {
  if (escalations.length === 0) {
    return `<p class="empty">No escalations.</p>`;
  }
  return escalations
    .map((e) => {
      const reply =
        e.status === "open"
          ? `<form class="answer-form" data-id="${escapeHtml(e.id)}">` +
            `<input name="text" placeholder="Answer ${escapeHtml(e.id)}" />` +
            `<button type="submit">Send</button></form>`
          : `<div class="response">↳ ${escapeHtml(e.response ?? "")}</div>`;
      return (
        `<div class="escalation sev-${escapeHtml(e.severity)} st-${e.status}" ` +
        `data-id="${escapeHtml(e.id)}">` +
        `<span class="esc-id">${escapeHtml(e.id)}</span> ` +
        `<span class="esc-status">[${e.status}]</span> ` +
        `<span class="esc-from">${escapeHtml(e.from_agent)}</span> on ` +
        `<span class="esc-task">${escapeHtml(e.task_id || "—")}</span>: ` +
        `${escapeHtml(e.message)}${reply}</div>`
      );
    })
    .join("");
}

export function renderDirectiveLog(model: ViewModel): string {
  const rows = visibleDirectives(model)
    .map((d) => {
      const pending = d.id.startsWith("pending-");
      const state = pending ? "sending" : d.consumed_at ? "consumed" : "queued";
      return (
        `<li class="directive-${state}">` +
        `<span class="dir-state">[${state}]</span> ${escapeHtml(d.text)}</li>`
      );
    })
    .join("");
  return `<ul class="directive-log">${rows}</ul>`;
}

export function renderTaskDetail(task: Task | null): string {
  if (task === null) {
    return `<p class="empty">Click a node to inspect its task.</p>`;
  }
  const history = task.attempt_history.join(", ") || "no attempts yet";
  return (
    `<h3>${escapeHtml(task.id)} · ${escapeHtml(task.title)}</h3>` +
    `<dl>` +
    `<dt>Status</dt><dd>${task.status}</dd>` +
    `<dt>Kind</dt><dd>${task.kind}</dd>` +
    `<dt>Attempts</dt><dd>${task.attempt_count} (${escapeHtml(history)})</dd>` +
    `<dt>Targets</dt><dd>${escapeHtml(task.target_refs.join(", ") || "—")}</dd>` +
    `<dt>Dependencies</dt><dd>${escapeHtml(task.dependencies.join(", ") || "—")}</dd>` +
    `<dt>Skill guide</dt><dd><code>skills/tasks/${escapeHtml(task.id)}/guide.md</code></dd>` +
    `</dl>` +
    `<pre class="prompt">${escapeHtml(task.prompt)}</pre>`
  );
}
