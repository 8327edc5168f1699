// App wiring: URL query config, connection, render loop, input pump,
// and the binding settings panel.

import { DEFAULT_BINDINGS, BindingTable, GamepadState, InputPoller } from "./input.js";
import { decodeCells, mapToCanvas } from "./map.js";
import { BridgeConnection } from "./net.js";
import { drawScene } from "./render.js";
import { fitToExtent, makeView, zoomAround } from "./transform.js";
import { Frame, MapPayload } from "./types.js";

const params = new URLSearchParams(window.location.search);
const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
const port = Number(params.get("port") ?? "8700");
const teleopAgent = params.get("agent");
const sendRateHz = Number(params.get("send_rate") ?? "20");

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const status = document.getElementById("status")!;
const hud = document.getElementById("hud")!;

let view = makeView(canvas.clientWidth, canvas.clientHeight);
let mapPayload: MapPayload | null = null;
let mapRaster: HTMLCanvasElement | null = null;
let lastFrame: Frame | null = null;
let fitted = false;

function resize(): void {
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  ctx.setTransform(devicePixelRatio, 0, 0, devicePixelRatio, 0, 0);
  view = { ...view, width: canvas.clientWidth, height: canvas.clientHeight };
}
window.addEventListener("resize", resize);
resize();

const connection = new BridgeConnection(host, port);
connection.onStatus = (state, detail) => {
  status.textContent = `${state}${detail ? ": " + detail : ""} (ws://${host}:${port})`;
  banner.style.display = state === "refused" ? "block" : "none";
  if (state === "refused") {
    banner.textContent = `Schema mismatch - ${detail ?? "incompatible server"}`;
  }
};
connection.onMap = (payload) => {
  mapPayload = payload;
  mapRaster = mapToCanvas(payload, decodeCells(payload));
  const [ox, oy] = payload.origin;
  view = fitToExtent(view, ox, ox + payload.width * payload.resolution,
    oy, oy + payload.height * payload.resolution);
  fitted = true;
};

// camera controls: wheel zoom, drag pan, F toggles follow
let dragging = false;
let dragStart: [number, number] | null = null;
canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  view = zoomAround(view, event.offsetX, event.offsetY, event.deltaY < 0 ? 1.15 : 1 / 1.15);
  view.follow = null;
});
canvas.addEventListener("mousedown", (event) => {
  dragging = true;
  dragStart = [event.offsetX, event.offsetY];
});
window.addEventListener("mouseup", () => (dragging = false));
canvas.addEventListener("mousemove", (event) => {
  if (!dragging || !dragStart) return;
  view = {
    ...view,
    follow: null,
    centerX: view.centerX - (event.offsetX - dragStart[0]) / view.zoom,
    centerY: view.centerY + (event.offsetY - dragStart[1]) / view.zoom,
  };
  dragStart = [event.offsetX, event.offsetY];
});

// keyboard state
const pressed = new Set<string>();
let bindings: BindingTable = { ...DEFAULT_BINDINGS };
window.addEventListener("keydown", (event) => {
  if ((event.target as HTMLElement).tagName === "INPUT") return;
  pressed.add(event.code);
  if (event.code === "KeyF" && lastFrame && teleopAgent) {
    view = { ...view, follow: view.follow ? null : teleopAgent };
  }
});
window.addEventListener("keyup", (event) => pressed.delete(event.code));
window.addEventListener("blur", () => pressed.clear());

function gamepadState(): GamepadState | null {
  const pads = navigator.getGamepads ? navigator.getGamepads() : [];
  for (const pad of pads) {
    if (pad && pad.connected) {
      return { leftStickX: pad.axes[0] ?? 0, leftStickY: pad.axes[1] ?? 0 };
    }
  }
  return null;
}

// input pump at the configured send rate
const poller = new InputPoller();
if (teleopAgent) {
  window.setInterval(() => {
    const cmd = poller.poll(pressed, bindings, gamepadState());
    if (cmd) {
      connection.sendCommand(teleopAgent, cmd.surge, cmd.yaw);
    }
  }, 1000 / Math.max(1, sendRateHz));
}

// settings panel: click a row, press the new key
const panel = document.getElementById("bindings")!;
function renderPanel(): void {
  panel.innerHTML = "";
  for (const [code, binding] of Object.entries(bindings)) {
    const row = document.createElement("div");
    row.className = "binding-row";
    row.textContent = `${code}  ->  surge ${binding.surge}, yaw ${binding.yaw}   (click to rebind)`;
    row.addEventListener("click", () => {
      row.textContent = "press a key...";
      const capture = (event: KeyboardEvent) => {
        event.preventDefault();
        const updated: BindingTable = {};
        for (const [k, v] of Object.entries(bindings)) {
          updated[k === code ? event.code : k] = v;
        }
        bindings = updated;
        window.removeEventListener("keydown", capture, true);
        renderPanel();
      };
      window.addEventListener("keydown", capture, true);
    });
    panel.appendChild(row);
  }
}
renderPanel();

// render loop at the browser's animation rate; newest frame wins
let framesDrawn = 0;
let fpsWindowStart = performance.now();
function loop(): void {
  const frame = connection.takeFrame();
  if (frame) {
    lastFrame = frame;
    framesDrawn += 1;
  }
  if (lastFrame) {
    if (view.follow && lastFrame.agents[view.follow]) {
      const agent = lastFrame.agents[view.follow];
      view = { ...view, centerX: agent.x, centerY: agent.y };
    }
    if (!fitted && !mapPayload) {
      // no map in handshake: frame extents drive the camera once
      const xs = Object.values(lastFrame.agents).map((a) => a.x);
      const ys = Object.values(lastFrame.agents).map((a) => a.y);
      view = fitToExtent(view, Math.min(...xs) - 20, Math.max(...xs) + 20,
        Math.min(...ys) - 20, Math.max(...ys) + 20);
      fitted = true;
    }
    const shapes: Record<string, { length: number; width: number }> = {};
    for (const [aid, info] of Object.entries(connection.vessels)) {
      shapes[aid] = { length: info.length_m, width: info.width_m };
    }
    drawScene(ctx, view, lastFrame, mapPayload, mapRaster, shapes);
    const now = performance.now();
    if (now - fpsWindowStart > 2000) {
      const fps = (framesDrawn * 1000) / (now - fpsWindowStart);
      hud.textContent = `tick ${lastFrame.tick}  t=${lastFrame.time_s.toFixed(1)}s  ` +
        `frames/s ${fps.toFixed(1)}  agents ${Object.keys(lastFrame.agents).length}` +
        (teleopAgent ? `  piloting ${teleopAgent}` : "");
      framesDrawn = 0;
      fpsWindowStart = now;
    }
  }
  requestAnimationFrame(loop);
}
requestAnimationFrame(loop);
