// World <-> screen mapping. World y points up, screen y points down.

export interface ViewState {
  centerX: number; // world meters
  centerY: number;
  zoom: number; // pixels per meter, > 0
  width: number; // viewport pixels
  height: number;
  follow: string | null; // agent id or free camera
}

export function makeView(width: number, height: number): ViewState {
  return { centerX: 0, centerY: 0, zoom: 10, width, height, follow: null };
}

export function worldToScreen(view: ViewState, x: number, y: number): [number, number] {
  return [
    (x - view.centerX) * view.zoom + view.width / 2,
    view.height / 2 - (y - view.centerY) * view.zoom,
  ];
}

export function screenToWorld(view: ViewState, sx: number, sy: number): [number, number] {
  return [
    (sx - view.width / 2) / view.zoom + view.centerX,
    (view.height / 2 - sy) / view.zoom + view.centerY,
  ];
}

export function zoomAround(view: ViewState, sx: number, sy: number, factor: number): ViewState {
  const [wx, wy] = screenToWorld(view, sx, sy);
  const zoom = Math.min(200, Math.max(0.5, view.zoom * factor));
  // keep the world point under the cursor fixed
  const centerX = wx - (sx - view.width / 2) / zoom;
  const centerY = wy + (sy - view.height / 2) / zoom;
  return { ...view, zoom, centerX, centerY };
}

export function fitToExtent(
  view: ViewState,
  xMin: number,
  xMax: number,
  yMin: number,
  yMax: number,
  margin = 0.95,
): ViewState {
  const zoomX = (view.width / (xMax - xMin)) * margin;
  const zoomY = (view.height / (yMax - yMin)) * margin;
  return {
    ...view,
    centerX: (xMin + xMax) / 2,
    centerY: (yMin + yMax) / 2,
    zoom: Math.max(0.5, Math.min(zoomX, zoomY)),
  };
}
