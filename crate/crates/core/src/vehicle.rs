//! Vehicle parameters, action decoding and the two planar dynamics backends.
//!
//! The dynamic backend is a single-track model with a PD-driven steering
//! column, one spinning wheel per axle, slip-stiffness longitudinal forces,
//! linear lateral forces and a per-axle friction ellipse. The bicycle backend
//! is a kinematic model advanced once per control tick.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::friction::ground_material;

pub const GRAVITY: f64 = 9.81;
/// Wheel speeds below this magnitude do not resolve a rotation direction.
pub const BRAKE_SIGN_EPS: f64 = 1e-4;

/// Number of identified parameters.
pub const NUM_PARAMS: usize = 20;

/// Identified parameter names in vector order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "theta_max",
    "kp",
    "kd",
    "tau_steer_max",
    "tau_drive_max",
    "tau_brake_front",
    "tau_brake_rear",
    "wheel_mass",
    "inertia_scale",
    "susp_stiffness",
    "susp_damping",
    "lambda_yaw",
    "lambda_lat",
    "com_offset",
    "f_lon_dry",
    "f_lat_dry",
    "f_lon_wet",
    "f_lat_wet",
    "f_lon_gravel",
    "f_lat_gravel",
];

/// Intrinsic vehicle parameters. The first twenty fields form the vector
/// fitted by system identification; the rest are fixed model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Steering limit, rad.
    pub theta_max: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_steer_max: f64,
    /// Per-wheel drive torque at full throttle, N·m.
    pub tau_drive_max: f64,
    /// Per-wheel brake torques, N·m.
    pub tau_brake_front: f64,
    pub tau_brake_rear: f64,
    pub wheel_mass: f64,
    pub inertia_scale: f64,
    pub susp_stiffness: f64,
    pub susp_damping: f64,
    pub lambda_yaw: f64,
    pub lambda_lat: f64,
    /// Forward shift of the centre of mass from mid-wheelbase, m.
    pub com_offset: f64,
    pub f_lon_dry: f64,
    pub f_lat_dry: f64,
    pub f_lon_wet: f64,
    pub f_lat_wet: f64,
    pub f_lon_gravel: f64,
    pub f_lat_gravel: f64,

    pub chassis_mass: f64,
    pub wheelbase: f64,
    pub wheel_radius: f64,
    /// Steering column inertia, kg·m².
    pub steer_inertia: f64,
    /// Lateral stiffness per axle, N/rad.
    pub cornering_stiffness: f64,
    /// Longitudinal slip stiffness per axle, N per unit slip.
    pub slip_stiffness: f64,
    /// Gain of the pitch-proxy load transfer; zero disables it.
    pub pitch_gain: f64,
    pub cg_height: f64,
    /// Speed floor in slip denominators, m/s.
    pub v_min: f64,
    /// Bicycle backend constants.
    pub bicycle_steer_max_deg: f64,
    pub bicycle_a_max: f64,
    pub bicycle_b_max: f64,
    pub bicycle_c_roll: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            theta_max: 0.450,
            kp: 1839.5,
            kd: 110.5,
            tau_steer_max: 1200.0,
            tau_drive_max: 600.7,
            tau_brake_front: 1090.5,
            tau_brake_rear: 980.7,
            wheel_mass: 37.5,
            inertia_scale: 1.094,
            susp_stiffness: 1080.8,
            susp_damping: 2764.3,
            lambda_yaw: 10.6,
            lambda_lat: 150.0,
            com_offset: 0.0,
            f_lon_dry: 1.0,
            f_lat_dry: 1.0,
            f_lon_wet: 1.0,
            f_lat_wet: 1.0,
            f_lon_gravel: 1.0,
            f_lat_gravel: 1.0,
            chassis_mass: 1800.0,
            wheelbase: 2.6,
            wheel_radius: 0.35,
            steer_inertia: 5.0,
            cornering_stiffness: 80_000.0,
            slip_stiffness: 100_000.0,
            pitch_gain: 0.0,
            cg_height: 0.55,
            v_min: 1.0,
            bicycle_steer_max_deg: 30.0,
            bicycle_a_max: 0.953,
            bicycle_b_max: 3.29,
            bicycle_c_roll: 0.05,
        }
    }
}

/// Surface slot selecting a pair of directional friction scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceSlot {
    Dry,
    Wet,
    Gravel,
}

impl VehicleParams {
    pub fn get(&self, i: usize) -> f64 {
        self.to_vector()[i]
    }

    pub fn to_vector(&self) -> [f64; NUM_PARAMS] {
        [
            self.theta_max,
            self.kp,
            self.kd,
            self.tau_steer_max,
            self.tau_drive_max,
            self.tau_brake_front,
            self.tau_brake_rear,
            self.wheel_mass,
            self.inertia_scale,
            self.susp_stiffness,
            self.susp_damping,
            self.lambda_yaw,
            self.lambda_lat,
            self.com_offset,
            self.f_lon_dry,
            self.f_lat_dry,
            self.f_lon_wet,
            self.f_lat_wet,
            self.f_lon_gravel,
            self.f_lat_gravel,
        ]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let slot = match i {
            0 => &mut self.theta_max,
            1 => &mut self.kp,
            2 => &mut self.kd,
            3 => &mut self.tau_steer_max,
            4 => &mut self.tau_drive_max,
            5 => &mut self.tau_brake_front,
            6 => &mut self.tau_brake_rear,
            7 => &mut self.wheel_mass,
            8 => &mut self.inertia_scale,
            9 => &mut self.susp_stiffness,
            10 => &mut self.susp_damping,
            11 => &mut self.lambda_yaw,
            12 => &mut self.lambda_lat,
            13 => &mut self.com_offset,
            14 => &mut self.f_lon_dry,
            15 => &mut self.f_lat_dry,
            16 => &mut self.f_lon_wet,
            17 => &mut self.f_lat_wet,
            18 => &mut self.f_lon_gravel,
            19 => &mut self.f_lat_gravel,
            _ => panic!("parameter index {i} out of range"),
        };
        *slot = v;
    }

    pub fn with_vector(&self, v: &[f64]) -> Self {
        let mut p = self.clone();
        for (i, &x) in v.iter().enumerate().take(NUM_PARAMS) {
            p.set(i, x);
        }
        p
    }

    pub fn index_of(name: &str) -> Option<usize> {
        PARAM_NAMES.iter().position(|n| *n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kp", self.kp),
            ("kd", self.kd),
            ("tau_steer_max", self.tau_steer_max),
            ("tau_drive_max", self.tau_drive_max),
            ("tau_brake_front", self.tau_brake_front),
            ("tau_brake_rear", self.tau_brake_rear),
            ("wheel_mass", self.wheel_mass),
            ("inertia_scale", self.inertia_scale),
            ("susp_stiffness", self.susp_stiffness),
            ("susp_damping", self.susp_damping),
            ("chassis_mass", self.chassis_mass),
            ("wheelbase", self.wheelbase),
            ("wheel_radius", self.wheel_radius),
            ("steer_inertia", self.steer_inertia),
            ("cornering_stiffness", self.cornering_stiffness),
            ("slip_stiffness", self.slip_stiffness),
            ("v_min", self.v_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("vehicle parameter `{name}` must be positive, got {v}")));
            }
        }
        if !(self.theta_max > 0.0 && self.theta_max < std::f64::consts::FRAC_PI_2) {
            return Err(SimError::Invalid(format!("theta_max must be in (0, pi/2), got {}", self.theta_max)));
        }
        if !(self.com_offset.abs() < 0.5 * self.wheelbase) {
            return Err(SimError::Invalid(format!("com_offset {} outside the wheelbase", self.com_offset)));
        }
        for (name, v) in [("lambda_yaw", self.lambda_yaw), ("lambda_lat", self.lambda_lat)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("`{name}` must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let p: VehicleParams = crate::config::from_yaml_str(&text, &path.display().to_string())?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_flat_string(&self) -> String {
        serde_yaml::to_string(self).expect("vehicle params serialize")
    }

    /// Directional friction scales for a surface slot.
    pub fn friction_scales(&self, slot: SurfaceSlot) -> (f64, f64) {
        match slot {
            SurfaceSlot::Dry => (self.f_lon_dry, self.f_lat_dry),
            SurfaceSlot::Wet => (self.f_lon_wet, self.f_lat_wet),
            SurfaceSlot::Gravel => (self.f_lon_gravel, self.f_lat_gravel),
        }
    }

    /// Ground-plane static friction from the dry-surface scales.
    pub fn ground_mu(&self) -> f64 {
        ground_material(1.0, self.f_lon_dry, self.f_lat_dry).0
    }

    pub fn axle_inertia(&self) -> f64 {
        2.0 * self.inertia_scale * 0.5 * self.wheel_mass * self.wheel_radius * self.wheel_radius
    }

    pub fn yaw_inertia(&self) -> f64 {
        let half = 0.5 * self.wheelbase;
        self.chassis_mass * half * half
    }

    /// Distances from the centre of mass to the front and rear axles.
    pub fn axle_distances(&self) -> (f64, f64) {
        let half = 0.5 * self.wheelbase;
        (half - self.com_offset, half + self.com_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub throttle: f64,
    pub steering: f64,
    pub brake: f64,
}

/// Rectify a raw policy output so a zero-mean policy idles.
pub fn decode_action(raw: [f64; 3]) -> Action {
    Action {
        throttle: raw[0].clamp(0.0, 1.0),
        steering: raw[1].clamp(-1.0, 1.0),
        brake: raw[2].clamp(0.0, 1.0),
    }
}

/// Planar agent state. Velocities are in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentDynState {
    pub pos: [f64; 2],
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub steer: f64,
    pub steer_rate: f64,
    pub wheel_front: f64,
    pub wheel_rear: f64,
    pub brake_sign_front: f64,
    pub brake_sign_rear: f64,
    /// Pitch-proxy longitudinal load transfer, N (front gains when negative).
    pub load_transfer: f64,
}

impl AgentDynState {
    pub fn at_rest(pos: [f64; 2], yaw: f64) -> Self {
        AgentDynState {
            pos,
            yaw,
            brake_sign_front: 1.0,
            brake_sign_rear: 1.0,
            ..Default::default()
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.pos[0],
            self.pos[1],
            self.yaw,
            self.vx,
            self.vy,
            self.yaw_rate,
            self.steer,
            self.steer_rate,
            self.wheel_front,
            self.wheel_rear,
            self.load_transfer,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// World-frame velocity.
    pub fn world_velocity(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * self.vx - s * self.vy, s * self.vx + c * self.vy]
    }
}

/// PD steering torque.
#[inline]
pub fn steering_effort(steer: f64, steer_rate: f64, cmd: f64, p: &VehicleParams) -> f64 {
    (p.kp * (p.theta_max * cmd - steer) - p.kd * steer_rate).clamp(-p.tau_steer_max, p.tau_steer_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axle {
    Front,
    Rear,
}

/// Brake torque opposing wheel rotation, with the rotation sign latched
/// while the wheel speed is unresolvable. Returns `(torque, latched_sign)`.
#[inline]
pub fn brake_effort(wheel_speed: f64, brake_cmd: f64, latched_sign: f64, p: &VehicleParams, axle: Axle) -> (f64, f64) {
    let sign = if wheel_speed.abs() >= BRAKE_SIGN_EPS {
        wheel_speed.signum()
    } else {
        latched_sign
    };
    let tau = match axle {
        Axle::Front => p.tau_brake_front,
        Axle::Rear => p.tau_brake_rear,
    };
    (-sign * brake_cmd * tau, sign)
}

/// One kinematic bicycle step.
pub fn step_bicycle(s: &AgentDynState, a: &Action, dt: f64, p: &VehicleParams) -> AgentDynState {
    let delta = a.steering * p.bicycle_steer_max_deg.to_radians();
    let v0 = s.vx;
    let roll = if v0 > 0.0 { p.bicycle_c_roll } else { 0.0 };
    let v = (v0 + (a.throttle * p.bicycle_a_max - a.brake * p.bicycle_b_max - roll) * dt).max(0.0);
    let yaw_rate = v * delta.tan() / p.wheelbase;
    let yaw = s.yaw + yaw_rate * dt;
    let (sy, cy) = yaw.sin_cos();
    let omega = v / p.wheel_radius;
    AgentDynState {
        pos: [s.pos[0] + v * cy * dt, s.pos[1] + v * sy * dt],
        yaw,
        vx: v,
        vy: 0.0,
        yaw_rate,
        steer: delta,
        steer_rate: 0.0,
        wheel_front: omega,
        wheel_rear: omega,
        brake_sign_front: s.brake_sign_front,
        brake_sign_rear: s.brake_sign_rear,
        load_transfer: 0.0,
    }
}

/// Tire forces of one dynamic substep in each axle's wheel frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxleForces {
    pub front: [f64; 2],
    pub rear: [f64; 2],
    pub fz_front: f64,
    pub fz_rear: f64,
}

/// Friction environment of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub mu: f64,
    pub slot: SurfaceSlot,
}

impl Contact {
    pub fn new(mu_wheel: f64, slot: SurfaceSlot, p: &VehicleParams) -> Self {
        Contact {
            mu: mu_wheel.min(p.ground_mu()),
            slot,
        }
    }
}

/// Clamp `(fx, fy)` into the ellipse with semi-axes `(ax, ay)`, lateral first.
#[inline]
fn ellipse_clamp(fx: f64, fy: f64, ax: f64, ay: f64) -> (f64, f64) {
    let fy = fy.clamp(-ay, ay);
    let rem = if ay > 0.0 { ax * (1.0 - (fy / ay).powi(2)).max(0.0).sqrt() } else { ax };
    (fx.clamp(-rem, rem), fy)
}

/// Slip-stiffness longitudinal force solved implicitly against the wheel
/// and chassis response over `dt`.
#[inline]
fn longitudinal_force(slip_vel: f64, u: f64, dt: f64, p: &VehicleParams, j: f64) -> f64 {
    let k = p.slip_stiffness / u.abs().max(p.v_min);
    let r = p.wheel_radius;
    k * slip_vel / (1.0 + dt * k * (r * r / j + 1.0 / p.chassis_mass))
}

/// Apply a brake torque magnitude over `dt` as a decay of `omega` toward
/// zero that never reverses it.
#[inline]
fn apply_brake(omega: f64, torque: f64, j: f64, dt: f64) -> f64 {
    let dw = torque.abs() / j * dt;
    if omega > 0.0 {
        (omega - dw).max(0.0)
    } else {
        (omega + dw).min(0.0)
    }
}

/// One dynamic substep. Returns the new state and the applied tire forces.
pub fn step_dynamic_detailed(s: &AgentDynState, a: &Action, dt: f64, p: &VehicleParams, contact: Contact) -> (AgentDynState, AxleForces) {
    let mut n = *s;
    let (la, lb) = p.axle_distances();
    let m = p.chassis_mass;
    let j = p.axle_inertia();
    let r = p.wheel_radius;

    // steering column
    let tau = steering_effort(s.steer, s.steer_rate, a.steering, p);
    n.steer_rate = s.steer_rate + tau / p.steer_inertia * dt;
    n.steer = s.steer + n.steer_rate * dt;
    let limit = 1.05 * p.theta_max;
    if n.steer.abs() > limit {
        n.steer = n.steer.clamp(-limit, limit);
        n.steer_rate = 0.0;
    }
    let delta = n.steer;
    let (sd, cd) = delta.sin_cos();

    // normal loads with optional pitch proxy
    let fz_front = (m * GRAVITY * lb / p.wheelbase + n.load_transfer).max(0.0);
    let fz_rear = (m * GRAVITY * la / p.wheelbase - n.load_transfer).max(0.0);
    let (f_lon, f_lat) = p.friction_scales(contact.slot);
    let mu = contact.mu.max(0.0);

    // wheel-frame velocities
    let vy_f = s.vy + la * s.yaw_rate;
    let vy_r = s.vy - lb * s.yaw_rate;
    let u_f = cd * s.vx + sd * vy_f;
    let lat_f = -sd * s.vx + cd * vy_f;
    let u_r = s.vx;

    // lateral forces
    let fy_f = -p.cornering_stiffness * lat_f / u_f.abs().max(p.v_min);
    let fy_r = -p.cornering_stiffness * vy_r / u_r.abs().max(p.v_min);

    // wheel torques before tire reaction
    let (tb_f, sign_f) = brake_effort(s.wheel_front, a.brake, s.brake_sign_front, p, Axle::Front);
    let (tb_r, sign_r) = brake_effort(s.wheel_rear, a.brake, s.brake_sign_rear, p, Axle::Rear);
    n.brake_sign_front = sign_f;
    n.brake_sign_rear = sign_r;
    let drive = 2.0 * p.tau_drive_max * a.throttle;
    let w_f = apply_brake(s.wheel_front + drive / j * dt, 2.0 * tb_f, j, dt);
    let w_r = apply_brake(s.wheel_rear, 2.0 * tb_r, j, dt);

    let fx_f = longitudinal_force(w_f * r - u_f, u_f, dt, p, j);
    let fx_r = longitudinal_force(w_r * r - u_r, u_r, dt, p, j);
    let (fx_f, fy_f) = ellipse_clamp(fx_f, fy_f, mu * f_lon * fz_front, mu * f_lat * fz_front);
    let (fx_r, fy_r) = ellipse_clamp(fx_r, fy_r, mu * f_lon * fz_rear, mu * f_lat * fz_rear);

    n.wheel_front = w_f - fx_f * r / j * dt;
    n.wheel_rear = w_r - fx_r * r / j * dt;

    // chassis wrench in the body frame
    let fx_body = fx_f * cd - fy_f * sd + fx_r;
    let fy_body = fx_f * sd + fy_f * cd + fy_r - p.lambda_lat * s.vy;
    let mz = la * (fx_f * sd + fy_f * cd) - lb * fy_r - p.lambda_yaw * s.yaw_rate;

    n.vx = s.vx + (fx_body / m + s.yaw_rate * s.vy) * dt;
    n.vy = s.vy + (fy_body / m - s.yaw_rate * s.vx) * dt;
    n.yaw_rate = s.yaw_rate + mz / p.yaw_inertia() * dt;
    n.yaw = s.yaw + n.yaw_rate * dt;
    let (sy, cy) = n.yaw.sin_cos();
    n.pos = [
        s.pos[0] + (cy * n.vx - sy * n.vy) * dt,
        s.pos[1] + (sy * n.vx + cy * n.vy) * dt,
    ];

    // pitch proxy relaxes toward the transfer implied by the longitudinal
    // acceleration with the suspension time constant
    let target = -p.pitch_gain * (fx_body / m) * m * p.cg_height / p.wheelbase;
    let rate = p.susp_stiffness / p.susp_damping;
    n.load_transfer = s.load_transfer + (target - s.load_transfer) * (1.0 - (-rate * dt).exp());

    let forces = AxleForces {
        front: [fx_f, fy_f],
        rear: [fx_r, fy_r],
        fz_front,
        fz_rear,
    };
    (n, forces)
}

pub fn step_dynamic(s: &AgentDynState, a: &Action, dt: f64, p: &VehicleParams, contact: Contact) -> AgentDynState {
    step_dynamic_detailed(s, a, dt, p, contact).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Bicycle,
    Dynamic,
}

/// Advance one control tick: `decimation` dynamic substeps of `physics_dt`,
/// or a single bicycle step of `physics_dt * decimation`.
pub fn control_tick(
    backend: Backend,
    s: &AgentDynState,
    a: &Action,
    physics_dt: f64,
    decimation: usize,
    p: &VehicleParams,
    contact: Contact,
) -> AgentDynState {
    match backend {
        Backend::Bicycle => step_bicycle(s, a, physics_dt * decimation as f64, p),
        Backend::Dynamic => {
            let mut cur = *s;
            for _ in 0..decimation {
                cur = step_dynamic(&cur, a, physics_dt, p, contact);
            }
            cur
        }
    }
}
