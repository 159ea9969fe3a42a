/** DOM wiring: toolbar, editor canvas, result panel, candidate strips,
 * history with side-by-side compare. All model computation is server-side;
 * this client only edits graphs and displays responses. */

import { ApiClient } from "./api.js";
import { GenerationController } from "./controller.js";
import { GraphEditor } from "./editor.js";
import {
  addEdge,
  addNode,
  emptyState,
  loadSession,
  removeEdge,
  removeNode,
  saveSession,
  setPin,
} from "./state.js";
import type { GenerateResponse, Snapshot } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export async function startApp(): Promise<void> {
  const api = new ApiClient("");
  const controller = new GenerationController(
    loadSession(window.localStorage) ?? emptyState(),
    api,
    {
      onState: (state) => {
        editor.setState(state);
        saveSession(state, window.localStorage);
        renderHistory();
        renderEdges();
      },
      onResult: (response) => renderResult(response),
      onError: (message) => showError(message),
    },
  );

  const canvas = el<HTMLCanvasElement>("editor");
  const editor = new GraphEditor(canvas, {
    onSelectNode: () => renderEdges(),
    onMoveNode: (id, x, y) => {
      const state = controller.state;
      const nodes = state.nodes.map((n) => (n.id === id ? { ...n, x, y } : n));
      controller.state = { ...state, nodes };
      editor.setState(controller.state);
    },
    onConnect: (subject, object) => {
      const predicate = (el<HTMLSelectElement>("predicate-select")).value;
      controller.apply(addEdge(controller.state, subject, predicate, object));
    },
  });

  const errorBadge = el<HTMLDivElement>("error-badge");
  function showError(message: string): void {
    errorBadge.textContent = message;
    errorBadge.style.display = "block";
    window.setTimeout(() => (errorBadge.style.display = "none"), 4000);
  }

  const vocab = await controller.loadVocab();
  const categorySelect = el<HTMLSelectElement>("category-select");
  for (const name of vocab.objects) {
    const opt = document.createElement("option");
    opt.value = opt.textContent = name;
    categorySelect.appendChild(opt);
  }
  const predicateSelect = el<HTMLSelectElement>("predicate-select");
  for (const name of vocab.predicates) {
    const opt = document.createElement("option");
    opt.value = opt.textContent = name;
    predicateSelect.appendChild(opt);
  }

  el<HTMLButtonElement>("add-node").onclick = () => {
    controller.apply(addNode(controller.state, categorySelect.value,
      0.2 + 0.6 * Math.random(), 0.2 + 0.6 * Math.random()));
  };
  el<HTMLButtonElement>("remove-node").onclick = () => {
    if (editor.selectedNode !== null) {
      controller.apply(removeNode(controller.state, editor.selectedNode));
    }
  };
  const connectButton = el<HTMLButtonElement>("connect-mode");
  connectButton.onclick = () => {
    editor.connectMode = !editor.connectMode;
    connectButton.classList.toggle("active", editor.connectMode);
  };
  el<HTMLButtonElement>("generate").onclick = () => void controller.generate();
  el<HTMLButtonElement>("reroll").onclick = () => void controller.reroll();
  const seedInput = el<HTMLInputElement>("seed");
  seedInput.onchange = () => {
    controller.state = { ...controller.state, seed: Number(seedInput.value) || 0 };
  };

  const edgeList = el<HTMLUListElement>("edge-list");
  function renderEdges(): void {
    edgeList.innerHTML = "";
    const byId = new Map(controller.state.nodes.map((n) => [n.id, n]));
    for (const e of controller.state.edges) {
      const li = document.createElement("li");
      li.textContent = `${byId.get(e.subject)?.category ?? "?"} —${e.predicate}→ ` +
        `${byId.get(e.object)?.category ?? "?"} `;
      const rm = document.createElement("button");
      rm.textContent = "✕";
      rm.onclick = () => controller.apply(removeEdge(controller.state, e.id));
      li.appendChild(rm);
      edgeList.appendChild(li);
    }
    seedInput.value = String(controller.state.seed);
  }

  const resultImg = el<HTMLImageElement>("result");
  const stripsBox = el<HTMLDivElement>("candidate-strips");
  function renderResult(response: GenerateResponse): void {
    resultImg.src = `data:image/png;base64,${response.image_png_base64}`;
    stripsBox.innerHTML = "";
    controller.state.nodes.forEach((node, idx) => {
      const row = document.createElement("div");
      row.className = "strip";
      const label = document.createElement("span");
      label.textContent = `${node.category}: `;
      row.appendChild(label);
      for (const cropId of response.candidates[idx] ?? []) {
        const img = document.createElement("img");
        img.src = api.cropImageUrl(cropId);
        img.title = cropId;
        img.width = img.height = 32;
        if (controller.state.pins[node.id] === cropId) img.classList.add("pinned");
        img.onclick = () => void controller.pinAndRegenerate(node.id, cropId);
        row.appendChild(img);
      }
      const auto = document.createElement("button");
      auto.textContent = "auto";
      auto.onclick = () => {
        controller.apply(setPin(controller.state, node.id, null));
        void controller.generate();
      };
      row.appendChild(auto);
      stripsBox.appendChild(row);
    });
  }

  const historyBox = el<HTMLDivElement>("history");
  const compareBox = el<HTMLDivElement>("compare");
  const compareSel: number[] = [];
  function renderHistory(): void {
    historyBox.innerHTML = "";
    controller.state.history.forEach((snap: Snapshot, i: number) => {
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${snap.response.image_png_base64}`;
      img.width = img.height = 64;
      img.title = `#${i} seed ${snap.request.seed}`;
      img.onclick = () => {
        compareSel.push(i);
        while (compareSel.length > 2) compareSel.shift();
        renderCompare();
      };
      img.ondblclick = () => void controller.resend(snap.request);
      historyBox.appendChild(img);
    });
  }
  function renderCompare(): void {
    compareBox.innerHTML = "";
    for (const i of compareSel) {
      const snap = controller.state.history[i];
      if (!snap) continue;
      const fig = document.createElement("figure");
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${snap.response.image_png_base64}`;
      img.width = img.height = 128;
      const cap = document.createElement("figcaption");
      cap.textContent = `#${i} seed ${snap.request.seed}`;
      fig.appendChild(img);
      fig.appendChild(cap);
      compareBox.appendChild(fig);
    }
  }

  editor.setState(controller.state);
  renderEdges();
  renderHistory();
}
