import { describe, expect, it } from "vitest";

import { DEFAULT_BINDINGS, InputPoller, combineInputs } from "../src/input.js";

describe("input combination", () => {
  it("single forward key maps to full surge", () => {
    expect(combineInputs(["KeyW"], DEFAULT_BINDINGS)).toEqual({ surge: 1, yaw: 0 });
  });

  it("forward plus left combines and stays within bounds", () => {
    const cmd = combineInputs(["KeyW", "KeyA"], DEFAULT_BINDINGS);
    expect(cmd).toEqual({ surge: 1, yaw: 1 });
  });

  it("duplicate directions clamp to [-1, 1]", () => {
    const cmd = combineInputs(["KeyW", "ArrowUp"], DEFAULT_BINDINGS);
    expect(cmd.surge).toBe(1);
  });

  it("opposing keys cancel", () => {
    expect(combineInputs(["KeyW", "KeyS"], DEFAULT_BINDINGS)).toEqual({ surge: 0, yaw: 0 });
  });

  it("gamepad stick merges with deadzone", () => {
    const cmd = combineInputs([], DEFAULT_BINDINGS, { leftStickX: 0.05, leftStickY: -0.8 });
    expect(cmd.surge).toBeCloseTo(0.8);
    expect(cmd.yaw).toBe(0); // inside the deadzone
  });

  it("unknown keys are ignored", () => {
    expect(combineInputs(["KeyQ"], DEFAULT_BINDINGS)).toEqual({ surge: 0, yaw: 0 });
  });
});

describe("input poller idle rule", () => {
  it("emits nothing while idle after a zero command", () => {
    const poller = new InputPoller();
    expect(poller.poll([], DEFAULT_BINDINGS)).toBeNull();
    expect(poller.poll([], DEFAULT_BINDINGS)).toBeNull();
  });

  it("emits a single zero command on release, then goes silent", () => {
    const poller = new InputPoller();
    expect(poller.poll(["KeyW"], DEFAULT_BINDINGS)).toEqual({ surge: 1, yaw: 0 });
    expect(poller.poll([], DEFAULT_BINDINGS)).toEqual({ surge: 0, yaw: 0 });
    expect(poller.poll([], DEFAULT_BINDINGS)).toBeNull();
  });

  it("keeps emitting while held", () => {
    const poller = new InputPoller();
    expect(poller.poll(["KeyS"], DEFAULT_BINDINGS)).toEqual({ surge: -1, yaw: 0 });
    expect(poller.poll(["KeyS"], DEFAULT_BINDINGS)).toEqual({ surge: -1, yaw: 0 });
  });
});
