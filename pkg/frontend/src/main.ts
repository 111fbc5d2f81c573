// Browser wiring: fetch the mirrors, render, and keep them fresh from the
// event stream (falling back to 5-second polling when the stream drops).
// The only mutations the dashboard can issue are the two POSTs: submit a
// directive and answer an escalation.

import { ApiClient } from "./api.js";
import { layoutDag, renderDagSvg } from "./dag.js";
import {
  addOptimisticDirective,
  applyCost,
  applyDirectives,
  applyEscalations,
  applyGoals,
  applyGraph,
  applyRun,
  applyTasks,
  emptyModel,
  metricTiles,
  resourcesInvalidatedBy,
  type ViewModel,
} from "./state.js";
import type { StoreEvent, Task } from "./types.js";
import {
  renderDirectiveLog,
  renderGoalsTable,
  renderInbox,
  renderTaskDetail,
  renderTiles,
} from "./views.js";

const client = new ApiClient((url, init) => fetch(url, init));
let model: ViewModel = emptyModel();
let selectedTask: Task | null = null;
let refreshQueued = new Set<string>();
let refreshTimer: number | null = null;
let pollTimer: number | null = null;

function byId(id: string): HTMLElement {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing #${id}`);
  return element;
}

function render(): void {
  byId("tiles").innerHTML = renderTiles(metricTiles(model), model.connection);
  byId("goals").innerHTML = renderGoalsTable(model.goals);
  byId("inbox").innerHTML = renderInbox(model.escalations);
  byId("directive-log").innerHTML = renderDirectiveLog(model);
  byId("dag").innerHTML = renderDagSvg(layoutDag(model.graph));
  byId("task-detail").innerHTML = renderTaskDetail(selectedTask);
  wireAnswerForms();
  wireDagClicks();
}

const RESOURCE_LOADERS: Record<string, () => Promise<void>> = {
  run: async () => {
    model = applyRun(model, await client.run());
  },
  tasks: async () => {
    model = applyTasks(model, await client.tasks());
  },
  graph: async () => {
    model = applyGraph(model, await client.graph());
  },
  goals: async () => {
    model = applyGoals(model, await client.goals());
  },
  cost: async () => {
    model = applyCost(model, await client.cost());
  },
  escalations: async () => {
    model = applyEscalations(model, await client.escalations());
  },
  directives: async () => {
    model = applyDirectives(model, await client.directives());
  },
};

async function refresh(resources: string[]): Promise<void> {
  await Promise.all(resources.map((name) => RESOURCE_LOADERS[name]?.()));
  render();
}

function scheduleRefresh(resources: string[]): void {
  for (const name of resources) refreshQueued.add(name);
  if (refreshTimer !== null) return;
  refreshTimer = window.setTimeout(() => {
    const batch = [...refreshQueued];
    refreshQueued = new Set();
    refreshTimer = null;
    void refresh(batch);
  }, 150);
}

function startEventStream(): void {
  const source = new EventSource("/api/events");
  source.onopen = () => {
    model = { ...model, connection: "live" };
    if (pollTimer !== null) {
      window.clearInterval(pollTimer);
      pollTimer = null;
    }
    render();
  };
  source.onmessage = (message) => {
    try {
      const event = JSON.parse(message.data) as StoreEvent;
      scheduleRefresh(resourcesInvalidatedBy(event));
    } catch {
      scheduleRefresh(["run"]);
    }
  };
  source.onerror = () => {
    source.close();
    model = { ...model, connection: "polling" };
    render();
    if (pollTimer === null) {
      pollTimer = window.setInterval(() => {
        void refresh(Object.keys(RESOURCE_LOADERS));
      }, 5000);
    }
    // Try to re-establish the stream after a while.
    window.setTimeout(startEventStream, 15000);
  };
}

function wireAnswerForms(): void {
  for (const form of document.querySelectorAll<HTMLFormElement>(".answer-form")) {
    form.onsubmit = (submitEvent) => {
      submitEvent.preventDefault();
      const id = form.dataset.id ?? "";
      const input = form.querySelector<HTMLInputElement>("input[name=text]");
      const text = input?.value.trim() ?? "";
      if (!text) return;
      void client.answerEscalation(id, text).then(() => {
        scheduleRefresh(["escalations", "run"]);
      });
    };
  }
}

function wireDagClicks(): void {
  for (const node of document.querySelectorAll<SVGGElement>("#dag .node")) {
    node.addEventListener("click", () => {
      const id = node.getAttribute("data-id") ?? "";
      selectedTask = model.tasks.find((t) => t.id === id) ?? null;
      byId("task-detail").innerHTML = renderTaskDetail(selectedTask);
    });
  }
}

function wireDirectiveForm(): void {
  const form = byId("directive-form") as HTMLFormElement;
  form.onsubmit = (submitEvent) => {
    submitEvent.preventDefault();
    const input = form.querySelector<HTMLInputElement>("input[name=text]");
    const text = input?.value.trim() ?? "";
    if (!text) return;
    model = addOptimisticDirective(model, text);
    render();
    if (input) input.value = "";
    void client.submitDirective(text).then(() => {
      scheduleRefresh(["directives"]);
    });
  };
}

async function boot(): Promise<void> {
  wireDirectiveForm();
  await refresh(Object.keys(RESOURCE_LOADERS));
  startEventStream();
}

void boot();
