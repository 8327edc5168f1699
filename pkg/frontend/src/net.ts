// Bridge connection: hello/handshake, latest-frame-wins buffering,
// version gating, command sending.

import { stableStringify } from "./protocol.js";
import {
  Frame,
  Handshake,
  MapPayload,
  SCHEMA_VERSION,
  ServerMessage,
  VesselShapeInfo,
} from "./types.js";

export type ConnectionStatus = "connecting" | "connected" | "refused" | "closed";

export class BridgeConnection {
  private socket: WebSocket;
  private latest: Frame | null = null;
  private lastRenderedTick = -1;
  status: ConnectionStatus = "connecting";
  map: MapPayload | null = null;
  vessels: Record<string, VesselShapeInfo> = {};
  onStatus: (status: ConnectionStatus, detail?: string) => void = () => {};
  onMap: (map: MapPayload) => void = () => {};

  constructor(host: string, port: number) {
    this.socket = new WebSocket(`ws://${host}:${port}`);
    this.socket.addEventListener("open", () => {
      this.send({ type: "hello", v: SCHEMA_VERSION });
    });
    this.socket.addEventListener("message", (event) => {
      this.handle(JSON.parse(event.data as string) as ServerMessage);
    });
    this.socket.addEventListener("close", () => {
      if (this.status !== "refused") {
        this.status = "closed";
      }
      this.onStatus(this.status);
    });
    this.socket.addEventListener("error", () => {
      this.status = "closed";
      this.onStatus(this.status, "socket error");
    });
  }

  private handle(message: ServerMessage): void {
    if (message.type === "handshake") {
      const handshake = message as Handshake;
      if (handshake.v !== SCHEMA_VERSION) {
        this.status = "refused";
        this.onStatus(this.status, `server schema v${handshake.v}`);
        this.socket.close();
        return;
      }
      this.status = "connected";
      if (handshake.map) {
        this.map = handshake.map;
        this.onMap(handshake.map);
      }
      if (handshake.vessels) {
        this.vessels = handshake.vessels;
      }
      this.onStatus(this.status);
    } else if (message.type === "frame") {
      const frame = message as Frame;
      if (frame.v !== SCHEMA_VERSION) {
        this.status = "refused";
        this.onStatus(this.status, `frame schema v${frame.v}`);
        this.socket.close();
        return;
      }
      // keep the newest frame only; the render loop consumes it
      if (this.latest === null || frame.tick >= this.latest.tick) {
        this.latest = frame;
      }
    } else if (message.type === "error") {
      if (message.error === "schema_version_mismatch") {
        this.status = "refused";
        this.onStatus(this.status, `server expects v${message.expected}`);
      } else {
        this.onStatus(this.status, message.error);
      }
    }
  }

  /** Newest unrendered frame; ticks never go backwards. */
  takeFrame(): Frame | null {
    const frame = this.latest;
    if (frame === null || frame.tick <= this.lastRenderedTick) {
      return null;
    }
    this.lastRenderedTick = frame.tick;
    return frame;
  }

  sendCommand(agent: string, surge: number, yaw: number): void {
    this.send({
      type: "command",
      agent,
      surge,
      yaw,
      ts: performance.now() / 1000,
    });
  }

  private send(obj: unknown): void {
    if (this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(stableStringify(obj));
    }
  }

  close(): void {
    this.socket.close();
  }
}
