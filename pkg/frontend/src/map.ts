// Occupancy map decoding: base64 bit-packed cells from the handshake.

import { MapPayload } from "./types.js";

export function decodeCells(payload: MapPayload): Uint8Array {
  const raw = atob(payload.cells_b64);
  const packed = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) {
    packed[i] = raw.charCodeAt(i);
  }
  const total = payload.width * payload.height;
  const cells = new Uint8Array(total);
  for (let i = 0; i < total; i++) {
    cells[i] = (packed[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return cells;
}

/** Paint the grid into an offscreen canvas, one pixel per cell. */
export function mapToCanvas(payload: MapPayload, cells: Uint8Array): HTMLCanvasElement {
  const canvas = document.createElement("canvas");
  canvas.width = payload.width;
  canvas.height = payload.height;
  const ctx = canvas.getContext("2d")!;
  const image = ctx.createImageData(payload.width, payload.height);
  for (let i = 0; i < cells.length; i++) {
    const occupied = cells[i] === 1;
    const shade = occupied ? 60 : 235;
    image.data[i * 4] = shade;
    image.data[i * 4 + 1] = shade + (occupied ? 8 : 10);
    image.data[i * 4 + 2] = shade + (occupied ? 20 : 20);
    image.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
  return canvas;
}
