"""Planar surface-vessel dynamics.

State of one vessel:

    q = [x, y, heading, surge, sway, yaw_rate]

with (x, y, heading) the pose in the world frame and (surge, sway,
yaw_rate) body-frame velocities. The model is a second-order system
with diagonal mass and linear drag matrices (Coriolis and centripetal
terms are dropped because the vessels sail slowly):

    pos_dot = R(heading) @ [surge, sway, yaw_rate]
    vel_dot = M^-1 @ (B @ u - D @ vel)

Inputs u = [f1, f2, f3, f4] are thruster forces in newtons: f1/f2 the
longitudinal pair, f3/f4 the lateral pair. B maps them to body-frame
surge/sway forces and yaw torque via the lever arms a (longitudinal
pair) and b (lateral pair).

Every function here is a pure function of its arguments and accepts
either a single state vector or a batch with leading sample
dimensions, so the same code drives both the simulator and the
planner's vectorized rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    wrapped = np.mod(angle + np.pi, TWO_PI) - np.pi
    # np.mod lands exactly on -pi for odd multiples of pi; fold to +pi.
    return np.where(wrapped <= -np.pi, wrapped + TWO_PI, wrapped)


@dataclass
class VesselState:
    """Pose plus body-frame velocities of one vessel."""

    x: float = 0.0          # [m]
    y: float = 0.0          # [m]
    heading: float = 0.0    # [rad], wrapped to (-pi, pi]
    surge: float = 0.0      # [m/s] body-frame forward
    sway: float = 0.0       # [m/s] body-frame lateral (port positive)
    yaw_rate: float = 0.0   # [rad/s]

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.heading, self.surge, self.sway, self.yaw_rate],
            dtype=float,
        )

    @classmethod
    def from_array(cls, q) -> "VesselState":
        q = np.asarray(q, dtype=float)
        return cls(*(float(v) for v in q[:6]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def world_velocity(self) -> np.ndarray:
        """Planar velocity in the world frame, R(heading) @ (surge, sway)."""
        c, s = np.cos(self.heading), np.sin(self.heading)
        return np.array([c * self.surge - s * self.sway, s * self.surge + c * self.sway])

    @property
    def speed(self) -> float:
        """Planar speed; equal in body and world frame."""
        return float(np.hypot(self.surge, self.sway))


@dataclass
class ControlInput:
    """Four thruster forces [N]: f1/f2 longitudinal, f3/f4 lateral."""

    f1: float = 0.0
    f2: float = 0.0
    f3: float = 0.0
    f4: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4], dtype=float)

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(*(float(v) for v in u[:4]))

    def clamped(self, f_max: float) -> "ControlInput":
        return ControlInput.from_array(np.clip(self.as_array(), -f_max, f_max))


@dataclass
class VesselParams:
    """Physical vessel parameters.

    Mass and drag defaults are engineering choices (the hull is only
    specified as 4 m x 1.8 m with a ~1.7 m/s speed limit); they give a
    terminal surge of (2 * f_max) / drag_surge = 4 m/s at full thrust.
    """

    mass_surge: float = 150.0   # m11 [kg]
    mass_sway: float = 150.0    # m22 [kg]
    inertia_yaw: float = 150.0  # m33 [kg m^2]
    drag_surge: float = 50.0    # Xu [N/(m/s)]
    drag_sway: float = 100.0    # Yv [N/(m/s)]
    drag_yaw: float = 100.0     # Nr [N m/(rad/s)]
    lever_longitudinal: float = 2.0  # a [m], longitudinal thruster pair
    lever_lateral: float = 1.0       # b [m], lateral thruster pair
    length: float = 4.0         # [m]
    width: float = 1.8          # [m]
    f_max: float = 100.0        # [N] symmetric per-thruster bound
    v_max: float = 1.7          # [m/s] speed limit

    def __post_init__(self):
        for name in ("mass_surge", "mass_sway", "inertia_yaw",
                     "drag_surge", "drag_sway", "drag_yaw",
                     "length", "width", "f_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"VesselParams.{name} must be positive")

    @property
    def mass_diag(self) -> np.ndarray:
        return np.array([self.mass_surge, self.mass_sway, self.inertia_yaw])

    @property
    def drag_diag(self) -> np.ndarray:
        return np.array([self.drag_surge, self.drag_sway, self.drag_yaw])

    def thrust_matrix(self) -> np.ndarray:
        """B matrix mapping [f1..f4] to body (F_surge, F_sway, torque)."""
        a2 = self.lever_longitudinal / 2.0
        b2 = self.lever_lateral / 2.0
        return np.array([
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [a2, -a2, b2, -b2],
        ])


def rotation_matrix(heading: float) -> np.ndarray:
    """3x3 rotation from body to world frame (about z)."""
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def state_derivative_array(q: np.ndarray, u: np.ndarray, params: VesselParams) -> np.ndarray:
    """Time derivative of batched states q[..., 6] under inputs u[..., 4]."""
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    heading = q[..., 2]
    surge, sway, yaw_rate = q[..., 3], q[..., 4], q[..., 5]

    c, s = np.cos(heading), np.sin(heading)
    dx = c * surge - s * sway
    dy = s * surge + c * sway

    a2 = params.lever_longitudinal / 2.0
    b2 = params.lever_lateral / 2.0
    f_surge = u[..., 0] + u[..., 1]
    f_sway = u[..., 2] + u[..., 3]
    torque = a2 * (u[..., 0] - u[..., 1]) + b2 * (u[..., 2] - u[..., 3])

    dq = np.empty_like(q)
    dq[..., 0] = dx
    dq[..., 1] = dy
    dq[..., 2] = yaw_rate
    dq[..., 3] = (f_surge - params.drag_surge * surge) / params.mass_surge
    dq[..., 4] = (f_sway - params.drag_sway * sway) / params.mass_sway
    dq[..., 5] = (torque - params.drag_yaw * yaw_rate) / params.inertia_yaw
    return dq


def state_derivative(state: VesselState, inp: ControlInput, params: VesselParams) -> VesselState:
    """Derivative of a single state; returned as a VesselState for convenience."""
    dq = state_derivative_array(state.as_array(), inp.as_array(), params)
    return VesselState(*(float(v) for v in dq))


def step_array(q: np.ndarray, u: np.ndarray, dt: float, params: VesselParams) -> np.ndarray:
    """One explicit-Euler step of batched states; inputs are clamped to f_max.

    Heading comes back wrapped to (-pi, pi]. Noise, if any, must already
    be folded into u by the caller; this function is deterministic.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.clip(np.asarray(u, dtype=float), -params.f_max, params.f_max)
    dq = state_derivative_array(q, u, params)
    out = np.asarray(q, dtype=float) + dt * dq
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def step(state: VesselState, noisy_input: ControlInput, dt: float, params: VesselParams) -> VesselState:
    """Advance one vessel by dt."""
    return VesselState.from_array(step_array(state.as_array(), noisy_input.as_array(), dt, params))


def kinetic_energy(state: VesselState, params: VesselParams) -> float:
    """0.5 * v^T M v for the body-frame velocity vector."""
    v = np.array([state.surge, state.sway, state.yaw_rate])
    return float(0.5 * v @ (params.mass_diag * v))
