// Browser bootstrap: wires the DOM to the AnnotationClient. Propose mode
// listens to the keyboard only; pointer handlers are attached exclusively
// in human-pick sessions.

import { httpTransport } from "./api.js";
import type { PickModeNext, ProposalNext } from "./api.js";
import { AnnotationClient, type View } from "./client.js";
import { cssColor } from "./keymap.js";
import { canvasPixelFromClick, drawProposal } from "./render.js";

const params = new URLSearchParams(window.location.search);
const sessionId = params.get("session") ?? "default";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const legend = document.getElementById("legend") as HTMLUListElement;
const status = document.getElementById("status") as HTMLParagraphElement;
const title = document.getElementById("title") as HTMLHeadingElement;

const image = new Image();
let currentProposal: ProposalNext | null = null;
let pickMode: PickModeNext | null = null;
let pickImageId: string | null = null;

function renderLegend(keymap: { key: string; name: string; color: [number, number, number] }[]): void {
  legend.innerHTML = "";
  for (const b of keymap) {
    const li = document.createElement("li");
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.backgroundColor = cssColor(b.color);
    const keycap = document.createElement("kbd");
    keycap.textContent = b.key;
    li.append(keycap, swatch, document.createTextNode(` ${b.name}`));
    legend.appendChild(li);
  }
}

const view: View = {
  showProposal(p) {
    currentProposal = p;
    title.textContent = `Pixel ${p.index + 1} / ${p.total} — ${p.image_id}`;
    status.textContent = "press the key of the class for the highlighted pixel";
    renderLegend(p.keymap);
    image.onload = () => drawProposal({ canvas, image, row: p.row, col: p.col });
    image.onerror = () => {
      status.textContent = "image failed to load — press any mapped key to retry";
    };
    image.src = p.image_url;
    if (image.complete && image.naturalWidth > 0) {
      // Cached same-image case: onload will not re-fire.
      drawProposal({ canvas, image, row: p.row, col: p.col });
    }
  },
  showPickMode(p) {
    pickMode = p;
    pickImageId = p.images[0] ?? null;
    title.textContent = `Free picking — ${p.images.length} image(s), ${p.picked} picked`;
    status.textContent = "click a pixel, then press its class key";
    renderLegend(p.keymap);
    if (pickImageId !== null) {
      image.onload = () => drawProposal({ canvas, image, row: -9, col: -9 });
      image.src = `/images/${pickImageId}`;
    }
    canvas.addEventListener("click", onCanvasClick);
  },
  showDone(summary) {
    title.textContent = "Session complete";
    const mean = summary.meanMs === null ? "n/a" : `${summary.meanMs.toFixed(0)} ms`;
    status.textContent = `${summary.total} pixels labelled — mean time per label: ${mean}`;
    canvas.classList.add("dimmed");
  },
  showHint(message) {
    status.textContent = message;
  },
  showError(message) {
    status.textContent = message;
  },
};

const client = new AnnotationClient(sessionId, httpTransport(""), view, () => performance.now());

function onCanvasClick(ev: MouseEvent): void {
  if (pickMode === null || pickImageId === null) return;
  const { row, col } = canvasPixelFromClick(canvas, image, ev.clientX, ev.clientY);
  client.pickAt(pickImageId, row, col);
}

window.addEventListener("keydown", (ev) => {
  if (ev.metaKey || ev.ctrlKey || ev.altKey) return;
  void client.handleKey(ev.key);
});

void client.start();
