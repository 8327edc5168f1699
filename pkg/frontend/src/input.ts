// Keyboard and gamepad bindings combined into normalized (surge, yaw)
// commands. Commands clamp to [-1, 1]; nothing is emitted while the
// stick is centered and the previous command was already zero.

export interface Binding {
  surge: number;
  yaw: number;
}

export type BindingTable = Record<string, Binding>;

export const DEFAULT_BINDINGS: BindingTable = {
  KeyW: { surge: 1, yaw: 0 },
  KeyS: { surge: -1, yaw: 0 },
  KeyA: { surge: 0, yaw: 1 },
  KeyD: { surge: 0, yaw: -1 },
  ArrowUp: { surge: 1, yaw: 0 },
  ArrowDown: { surge: -1, yaw: 0 },
  ArrowLeft: { surge: 0, yaw: 1 },
  ArrowRight: { surge: 0, yaw: -1 },
};

export interface GamepadState {
  leftStickX: number; // [-1, 1]
  leftStickY: number; // [-1, 1], up is negative on real pads
}

const clamp = (v: number) => Math.max(-1, Math.min(1, v));

export function combineInputs(
  pressed: Iterable<string>,
  bindings: BindingTable,
  pad: GamepadState | null = null,
  deadZone = 0.12,
): { surge: number; yaw: number } {
  let surge = 0;
  let yaw = 0;
  for (const code of pressed) {
    const binding = bindings[code];
    if (binding) {
      surge += binding.surge;
      yaw += binding.yaw;
    }
  }
  if (pad) {
    const sy = Math.abs(pad.leftStickY) > deadZone ? -pad.leftStickY : 0;
    const sx = Math.abs(pad.leftStickX) > deadZone ? -pad.leftStickX : 0;
    surge += sy;
    yaw += sx;
  }
  return { surge: clamp(surge), yaw: clamp(yaw) };
}

/** Stateful poller implementing the "silent while idle" rule. */
export class InputPoller {
  private lastSent: { surge: number; yaw: number } = { surge: 0, yaw: 0 };

  poll(
    pressed: Iterable<string>,
    bindings: BindingTable,
    pad: GamepadState | null = null,
  ): { surge: number; yaw: number } | null {
    const cmd = combineInputs(pressed, bindings, pad);
    const idle = cmd.surge === 0 && cmd.yaw === 0;
    const wasIdle = this.lastSent.surge === 0 && this.lastSent.yaw === 0;
    if (idle && wasIdle) {
      return null;
    }
    this.lastSent = cmd;
    return cmd;
  }
}
