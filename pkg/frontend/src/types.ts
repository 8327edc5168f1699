// Wire schema shared with the bridge. Version-gated at handshake.

export const SCHEMA_VERSION = 1;

export interface MapPayload {
  width: number;
  height: number;
  resolution: number; // meters per cell
  origin: [number, number]; // world coords of cell (0, 0) corner
  hash: string;
  cells_b64: string; // row-major bit-packed occupancy
}

export interface AgentFrame {
  x: number;
  y: number;
  heading: number;
  surge: number;
  sway: number;
  yaw_rate: number;
  goal: [number, number] | null;
  planned: [number, number][] | null;
  controller: string;
}

export interface Frame {
  type: "frame";
  v: number;
  tick: number;
  time_s: number;
  map_hash: string;
  agents: Record<string, AgentFrame>;
  violations: [string, string, string][];
  collisions: (string | number)[][];
}

export interface VesselShapeInfo {
  length_m: number;
  width_m: number;
}

export interface Handshake {
  type: "handshake";
  v: number;
  map?: MapPayload;
  vessels?: Record<string, VesselShapeInfo>;
}

export interface TeleopCommand {
  type: "command";
  agent: string;
  surge: number; // normalized [-1, 1]
  yaw: number; // normalized [-1, 1]
  ts: number;
}

export interface ErrorMessage {
  type: "error";
  error: string;
  agent?: string;
  expected?: number;
}

export type ServerMessage = Frame | Handshake | ErrorMessage;
