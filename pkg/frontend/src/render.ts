// Canvas scene painting: map raster, to-scale vessels, planned paths,
// goals, violation highlights.

import { ViewState, worldToScreen } from "./transform.js";
import { AgentFrame, Frame, MapPayload } from "./types.js";

const AGENT_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

export function colorFor(index: number): string {
  return AGENT_COLORS[index % AGENT_COLORS.length];
}

export interface VesselShape {
  length: number; // [m]
  width: number;
}

export const DEFAULT_SHAPE: VesselShape = { length: 4.0, width: 1.8 };

export function drawMap(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  payload: MapPayload,
  raster: HTMLCanvasElement,
): void {
  const [ox, oy] = payload.origin;
  const worldW = payload.width * payload.resolution;
  const worldH = payload.height * payload.resolution;
  const [left, bottom] = worldToScreen(view, ox, oy);
  ctx.imageSmoothingEnabled = false;
  // cells row 0 is the world's bottom row; canvas y grows downward
  ctx.save();
  ctx.translate(left, bottom);
  ctx.scale(view.zoom * payload.resolution, -view.zoom * payload.resolution);
  ctx.drawImage(raster, 0, 0);
  ctx.restore();
  ctx.imageSmoothingEnabled = true;
  void worldW;
  void worldH;
}

export function drawVessel(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  agent: AgentFrame,
  shape: VesselShape,
  color: string,
  flagged: boolean,
): void {
  const [sx, sy] = worldToScreen(view, agent.x, agent.y);
  const lengthPx = shape.length * view.zoom;
  const widthPx = shape.width * view.zoom;
  ctx.save();
  ctx.translate(sx, sy);
  ctx.rotate(-agent.heading); // screen y is flipped
  ctx.fillStyle = color;
  ctx.globalAlpha = 0.9;
  ctx.fillRect(-lengthPx / 2, -widthPx / 2, lengthPx, widthPx);
  // bow marker
  ctx.beginPath();
  ctx.moveTo(lengthPx / 2, 0);
  ctx.lineTo(lengthPx / 2 + Math.min(10, lengthPx * 0.25), 0);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.stroke();
  ctx.globalAlpha = 1.0;
  ctx.lineWidth = flagged ? 3 : 1;
  ctx.strokeStyle = flagged ? "#ff2222" : "#222222";
  ctx.strokeRect(-lengthPx / 2, -widthPx / 2, lengthPx, widthPx);
  ctx.restore();
}

export function drawPolyline(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  points: [number, number][],
  color: string,
): void {
  if (points.length < 2) return;
  ctx.beginPath();
  const [x0, y0] = worldToScreen(view, points[0][0], points[0][1]);
  ctx.moveTo(x0, y0);
  for (const [x, y] of points.slice(1)) {
    const [sx, sy] = worldToScreen(view, x, y);
    ctx.lineTo(sx, sy);
  }
  ctx.strokeStyle = color;
  ctx.globalAlpha = 0.65;
  ctx.lineWidth = 1.5;
  ctx.setLineDash([6, 4]);
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.globalAlpha = 1.0;
}

export function drawGoal(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  goal: [number, number],
  color: string,
): void {
  const [sx, sy] = worldToScreen(view, goal[0], goal[1]);
  ctx.beginPath();
  ctx.arc(sx, sy, 6, 0, 2 * Math.PI);
  ctx.fillStyle = color;
  ctx.globalAlpha = 0.5;
  ctx.fill();
  ctx.globalAlpha = 1.0;
  ctx.strokeStyle = "#222";
  ctx.stroke();
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  frame: Frame,
  mapPayload: MapPayload | null,
  mapRaster: HTMLCanvasElement | null,
  shapes: Record<string, VesselShape>,
): void {
  ctx.fillStyle = "#cfe3ec";
  ctx.fillRect(0, 0, view.width, view.height);
  if (mapPayload && mapRaster) {
    drawMap(ctx, view, mapPayload, mapRaster);
  }
  const flagged = new Set<string>();
  for (const [i, j] of frame.violations) {
    flagged.add(i);
    flagged.add(j);
  }
  for (const hit of frame.collisions) {
    for (const part of hit) {
      if (typeof part === "string" && part !== "static" && part !== "dynamic") {
        flagged.add(part);
      }
    }
  }
  const ids = Object.keys(frame.agents).sort();
  ids.forEach((aid, index) => {
    const agent = frame.agents[aid];
    const color = colorFor(index);
    if (agent.planned) {
      drawPolyline(ctx, view, agent.planned, color);
    }
    if (agent.goal) {
      drawGoal(ctx, view, agent.goal, color);
    }
    drawVessel(ctx, view, agent, shapes[aid] ?? DEFAULT_SHAPE, color, flagged.has(aid));
  });
}
