"""Vehicle plant: actuation chain, kinematic bicycle dynamics, simulated
sensors (shaft encoder, IMU, overhead camera), speed control, and state
estimation by complementary filtering.

All operations are pure given explicit state; one SensorRig/FusionFilter
pair belongs to exactly one vehicle's stepping context.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .canonical import round6
from .errors import InsufficientData, InvalidValue

STEER_LAG_TAU = 0.05   # s, first-order servo response
FUSION_ALPHA = 0.9     # complementary-filter blend toward the IMU branch
ACCEL_LP_TAU = 0.1     # s, low-pass on the accel estimate
CAMERA_ARBITER_DISAGREE = 0.2  # m/s; beyond this the overhead speed wins


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.16          # m
    wheel_diameter: float = 0.064    # m
    track_width: float = 0.12        # m, footprint width
    body_length: float = 0.23        # m
    max_steer: float = 0.45          # rad
    motor_gain: float = 2.0          # (m/s^2) per unit throttle
    drag_coeff: float = 0.5          # 1/s
    max_brake_decel: float = 2.0     # m/s^2
    encoder_ticks_per_rev: int = 40
    pwm_neutral: int = 1500          # us
    pwm_span: int = 500              # us
    steer_deadband: int = 10         # us
    throttle_deadband: int = 10      # us

    def __post_init__(self):
        for name in ("wheelbase", "wheel_diameter", "track_width", "body_length",
                     "max_steer", "motor_gain", "drag_coeff", "max_brake_decel",
                     "pwm_neutral", "pwm_span", "steer_deadband", "throttle_deadband"):
            if getattr(self, name) <= 0:
                raise InvalidValue(name, "must be positive")
        if self.max_steer >= math.pi / 2:
            raise InvalidValue("max_steer", "must be below pi/2")
        if self.encoder_ticks_per_rev < 1:
            raise InvalidValue("encoder_ticks_per_rev", "must be >= 1")

    def to_obj(self):
        return {
            "wheelbase": self.wheelbase,
            "wheel_diameter": self.wheel_diameter,
            "track_width": self.track_width,
            "body_length": self.body_length,
            "max_steer": self.max_steer,
            "motor_gain": self.motor_gain,
            "drag_coeff": self.drag_coeff,
            "max_brake_decel": self.max_brake_decel,
            "encoder_ticks_per_rev": self.encoder_ticks_per_rev,
            "pwm_neutral": self.pwm_neutral,
            "pwm_span": self.pwm_span,
            "steer_deadband": self.steer_deadband,
            "throttle_deadband": self.throttle_deadband,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_ax: float = 0.05        # m/s^2, IMU longitudinal accel
    sigma_yaw_rate: float = 0.02  # rad/s
    sigma_xy: float = 0.002       # m, overhead-camera position
    ax_bias: float = 0.0
    yaw_bias: float = 0.0
    window_s: float = 0.02        # encoder/IMU sample window
    camera_period_s: float = 0.033333
    camera_latency_s: float = 0.05

    @classmethod
    def zero(cls):
        return cls(sigma_ax=0.0, sigma_yaw_rate=0.0, sigma_xy=0.0)

    def to_obj(self):
        return {
            "sigma_ax": self.sigma_ax,
            "sigma_yaw_rate": self.sigma_yaw_rate,
            "sigma_xy": self.sigma_xy,
            "ax_bias": self.ax_bias,
            "yaw_bias": self.yaw_bias,
            "window_s": self.window_s,
            "camera_period_s": self.camera_period_s,
            "camera_latency_s": self.camera_latency_s,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0   # rad, wrapped to (-pi, pi]
    v: float = 0.0       # m/s, >= 0
    a: float = 0.0       # m/s^2, realized dv/dt of the last step
    delta: float = 0.0   # rad, current steering angle


@dataclass(frozen=True)
class ActuatorCommand:
    """Normalized driver command; out-of-range inputs clamp at construction.

    Values are also snapped to the 6-decimal telemetry grid so that a
    recorded command replays to the identical plant input.
    """

    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steer", round6(min(1.0, max(-1.0, self.steer))))
        object.__setattr__(self, "throttle", round6(min(1.0, max(0.0, self.throttle))))
        object.__setattr__(self, "brake", round6(min(1.0, max(0.0, self.brake))))


@dataclass(frozen=True)
class PwmFrame:
    steer_us: int
    throttle_us: int


@dataclass(frozen=True)
class OverheadPose:
    x: float
    y: float
    theta: float
    t_capture: float


@dataclass(frozen=True)
class SensorFrame:
    t: float
    encoder_ticks: int
    imu_ax: float
    imu_yaw_rate: float
    overhead_pose: OverheadPose | None = None


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def command_to_pwm(cmd: ActuatorCommand, params: VehicleParams) -> PwmFrame:
    """Quantize a normalized command into integer-microsecond PWM pulses."""
    steer_us = _round_half_away(params.pwm_neutral + cmd.steer * params.pwm_span)
    throttle_us = _round_half_away(
        params.pwm_neutral + (cmd.throttle - cmd.brake) * params.pwm_span
    )
    return PwmFrame(steer_us, throttle_us)


def _deadband_norm(offset: float, deadband: float, span: float) -> float:
    if abs(offset) <= deadband:
        return 0.0
    adj = offset - math.copysign(deadband, offset)
    return adj / (span - deadband)


def pwm_to_plant_inputs(pwm: PwmFrame, params: VehicleParams) -> dict:
    """Invert the PWM chain into steering-angle and acceleration commands,
    modeling the hobby ESC/servo deadband around neutral."""
    steer_n = _deadband_norm(pwm.steer_us - params.pwm_neutral,
                             params.steer_deadband, params.pwm_span)
    u = _deadband_norm(pwm.throttle_us - params.pwm_neutral,
                       params.throttle_deadband, params.pwm_span)
    accel = params.motor_gain * u if u >= 0 else params.max_brake_decel * u
    return {"delta_cmd": params.max_steer * steer_n, "accel_cmd": accel}


def direct_plant_inputs(cmd: ActuatorCommand, params: VehicleParams) -> dict:
    """Ideal actuation path: no quantization, no deadband."""
    u = cmd.throttle - cmd.brake
    accel = params.motor_gain * u if u >= 0 else params.max_brake_decel * u
    return {"delta_cmd": params.max_steer * cmd.steer, "accel_cmd": accel}


def step_dynamics(state: VehicleState, inputs: dict, params: VehicleParams,
                  dt: float) -> VehicleState:
    """One RK4 step of the kinematic bicycle with first-order steering lag.

    Speed is clamped non-negative (no reverse gear); the returned `a` is the
    realized dv/dt over the step.
    """
    delta_cmd = min(params.max_steer, max(-params.max_steer, inputs["delta_cmd"]))
    accel_cmd = inputs["accel_cmd"]
    L = params.wheelbase
    drag = params.drag_coeff

    def deriv(x, y, th, v, dl):
        vv = v if v > 0.0 else 0.0
        dv = accel_cmd - drag * vv
        if vv <= 0.0 and dv < 0.0:
            dv = 0.0
        return (
            vv * math.cos(th),
            vv * math.sin(th),
            vv * math.tan(dl) / L,
            dv,
            (delta_cmd - dl) / STEER_LAG_TAU,
        )

    s0 = (state.x, state.y, state.theta, state.v, state.delta)
    k1 = deriv(*s0)
    k2 = deriv(*(s0[i] + 0.5 * dt * k1[i] for i in range(5)))
    k3 = deriv(*(s0[i] + 0.5 * dt * k2[i] for i in range(5)))
    k4 = deriv(*(s0[i] + dt * k3[i] for i in range(5)))
    nxt = [s0[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(5)]

    v_new = max(0.0, nxt[3])
    theta = math.atan2(math.sin(nxt[2]), math.cos(nxt[2]))
    if theta <= -math.pi:
        theta = math.pi
    delta = min(params.max_steer, max(-params.max_steer, nxt[4]))
    return VehicleState(
        x=nxt[0], y=nxt[1], theta=theta, v=v_new,
        a=(v_new - state.v) / dt, delta=delta,
    )


def speed_controller(target_v: float, v_est: float, ctl_state: dict,
                     gains: dict, dt: float) -> tuple:
    """PI speed loop mapping to throttle/brake, integral frozen on saturation.

    Returns (throttle, brake, ctl_state').
    """
    e = target_v - v_est
    integral = ctl_state.get("integral", 0.0)
    candidate = integral + e * dt
    u = gains["kp"] * e + gains["ki"] * candidate
    if -1.0 <= u <= 1.0:
        integral = candidate
    else:
        u = gains["kp"] * e + gains["ki"] * integral
        u = min(1.0, max(-1.0, u))
    if u >= 0.0:
        out = (min(u, 1.0), 0.0)
    else:
        out = (0.0, min(-u, 1.0))
    return out[0], out[1], {"integral": integral}


class SensorRig:
    """Per-vehicle sensor simulation with deterministic seeded noise.

    integrate() is called once per physics tick; sample() once per sensor
    window. The encoder accumulator carries fractional ticks across windows;
    the overhead camera reports a delayed, noisy pose at its own rate.
    """

    def __init__(self, params: VehicleParams, noise: NoiseConfig, rng, physics_dt: float):
        self.params = params
        self.noise = noise
        self.rng = rng
        self.dt = physics_dt
        self.pending_ticks = 0.0
        self._odo = 0.0
        self._history = deque(maxlen=max(4, int(noise.camera_latency_s / physics_dt) + 4))
        self._next_camera_t = noise.camera_period_s

    def integrate(self, prev_v: float, state: VehicleState, t: float):
        """Advance the odometer and pose history by one physics tick ending at t."""
        self._odo += 0.5 * (prev_v + state.v) * self.dt
        self._history.append((t, state.x, state.y, state.theta))

    def sample(self, state: VehicleState, t: float) -> SensorFrame:
        n = self.noise
        revs = self._odo / (math.pi * self.params.wheel_diameter)
        self._odo = 0.0
        self.pending_ticks += revs * self.params.encoder_ticks_per_rev
        ticks = int(math.floor(self.pending_ticks))
        self.pending_ticks -= ticks

        imu_ax = state.a + n.ax_bias + self.rng.normal(0.0, n.sigma_ax)
        yaw_rate = state.v * math.tan(state.delta) / self.params.wheelbase
        imu_yaw = yaw_rate + n.yaw_bias + self.rng.normal(0.0, n.sigma_yaw_rate)

        overhead = None
        if t >= self._next_camera_t - 1e-9:
            while self._next_camera_t <= t + 1e-9:
                self._next_camera_t += n.camera_period_s
            t_capture = t - n.camera_latency_s
            captured = self._capture(t_capture)
            if captured is not None:
                cx, cy, cth = captured
                overhead = OverheadPose(
                    x=cx + self.rng.normal(0.0, n.sigma_xy),
                    y=cy + self.rng.normal(0.0, n.sigma_xy),
                    theta=cth,
                    t_capture=max(0.0, t_capture),
                )
        return SensorFrame(t=t, encoder_ticks=ticks, imu_ax=imu_ax,
                           imu_yaw_rate=imu_yaw, overhead_pose=overhead)

    def _capture(self, t_capture: float):
        if t_capture < -1e-9 or not self._history:
            return None
        best = None
        for (ht, hx, hy, hth) in self._history:
            if ht <= t_capture + 1e-9:
                best = (hx, hy, hth)
            else:
                break
        if best is None:  # latency reaches before the first recorded tick
            first = self._history[0]
            best = (first[1], first[2], first[3])
        return best


def encoder_speed(ticks: int, window: float, params: VehicleParams) -> float:
    """Speed implied by one window's tick count."""
    return ticks / window * math.pi * params.wheel_diameter / params.encoder_ticks_per_rev


class FusionFilter:
    """Complementary filter over encoder / IMU / overhead-camera frames."""

    def __init__(self, params: VehicleParams, window_s: float):
        self.params = params
        self.window_s = window_s
        self.v_hat = None
        self.a_hat = 0.0
        self._last_t = None
        self._overhead_prev = None
        self._v_cam = None  # speed from the latest overhead-pose pair

    @property
    def last_overhead(self):
        return self._overhead_prev

    def update(self, frame: SensorFrame):
        dt = self.window_s if self._last_t is None else max(frame.t - self._last_t, 1e-9)
        self._last_t = frame.t
        v_enc = encoder_speed(frame.encoder_ticks, dt, self.params)

        if frame.overhead_pose is not None:
            if self._overhead_prev is not None:
                prev = self._overhead_prev
                span = frame.overhead_pose.t_capture - prev.t_capture
                if span > 1e-9:
                    self._v_cam = math.hypot(
                        frame.overhead_pose.x - prev.x, frame.overhead_pose.y - prev.y
                    ) / span
            self._overhead_prev = frame.overhead_pose
        if self._v_cam is not None and abs(self._v_cam - v_enc) > CAMERA_ARBITER_DISAGREE:
            v_enc = self._v_cam

        if self.v_hat is None:
            self.v_hat = v_enc
        else:
            self.v_hat = FUSION_ALPHA * (self.v_hat + frame.imu_ax * dt) \
                + (1.0 - FUSION_ALPHA) * v_enc
        self.a_hat += (dt / (ACCEL_LP_TAU + dt)) * (frame.imu_ax - self.a_hat)
        return self.v_hat, self.a_hat


def fuse_estimate(frames, params: VehicleParams, window_s: float = 0.02) -> dict:
    """Run the complementary filter over a time-ordered frame history."""
    frames = list(frames)
    if not frames:
        raise InsufficientData("no sensor frames")
    filt = FusionFilter(params, window_s)
    v_hat = a_hat = 0.0
    for fr in frames:
        v_hat, a_hat = filt.update(fr)
    return {"v_hat": v_hat, "a_hat": a_hat}
