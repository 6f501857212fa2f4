//! Scripted policies driving every slot of an engine.

use crate::engine::Engine;
use crate::geometry::{dot, sub, wrap_angle};

pub trait Policy {
    /// One raw action per slot, world-major.
    fn act(&mut self, engine: &Engine) -> Vec<[f64; 3]>;
}

impl<F: FnMut(&Engine) -> Vec<[f64; 3]>> Policy for F {
    fn act(&mut self, engine: &Engine) -> Vec<[f64; 3]> {
        self(engine)
    }
}

/// Constant action for every slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub [f64; 3]);

impl Policy for Constant {
    fn act(&mut self, engine: &Engine) -> Vec<[f64; 3]> {
        vec![self.0; engine.num_slots()]
    }
}

/// Follows the tangent of the nearest lane, oriented toward the goal, with
/// a lateral correction and a speed-capped throttle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneFollower {
    pub throttle: f64,
    pub target_speed: f64,
    /// Steering angle that maps to a full command, rad.
    pub steer_scale: f64,
    /// Lateral correction gain, 1/m.
    pub lateral_gain: f64,
    /// Brake applied when more than 2 m/s over the target speed.
    pub overspeed_brake: f64,
}

impl Default for LaneFollower {
    fn default() -> Self {
        LaneFollower {
            throttle: 0.8,
            target_speed: 8.0,
            steer_scale: 0.45,
            lateral_gain: 0.6,
            overspeed_brake: 0.3,
        }
    }
}

impl LaneFollower {
    pub fn action_for(&self, engine: &Engine, i: usize) -> [f64; 3] {
        if !engine.state.alive[i] {
            return [0.0; 3];
        }
        let st = &engine.state;
        let pos = [st.x[i], st.y[i]];
        let goal = st.goal_pos[i];
        let to_goal = sub(goal, pos);
        let target_heading = match engine.nearest_lane(i) {
            // close to the goal the goal bearing wins over the lane tangent
            Some((k, _, lateral)) if dot(to_goal, to_goal) > 100.0 => {
                let row = engine.batch().row(engine.world_of(i), k);
                let mut dir = engine.batch().directions[row];
                let mut lat = lateral;
                if dot(dir, to_goal) < 0.0 {
                    dir = [-dir[0], -dir[1]];
                    lat = -lat;
                }
                let v = st.vx[i].abs();
                dir[1].atan2(dir[0]) - (self.lateral_gain * lat / (1.0 + 0.2 * v)).atan()
            }
            _ => to_goal[1].atan2(to_goal[0]),
        };
        let err = wrap_angle(target_heading - st.yaw[i]);
        let steer = (err / self.steer_scale).clamp(-1.0, 1.0);
        let v = st.vx[i];
        let (throttle, brake) = if v < self.target_speed {
            (self.throttle, 0.0)
        } else if v > self.target_speed + 2.0 {
            (0.0, self.overspeed_brake)
        } else {
            (0.0, 0.0)
        };
        [throttle, steer, brake]
    }
}

impl Policy for LaneFollower {
    fn act(&mut self, engine: &Engine) -> Vec<[f64; 3]> {
        (0..engine.num_slots()).map(|i| self.action_for(engine, i)).collect()
    }
}

/// Steers toward the goal using only the ego block of the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSeeker {
    pub throttle: f64,
    pub target_speed: f64,
    pub steer_gain: f64,
}

impl Default for GoalSeeker {
    fn default() -> Self {
        GoalSeeker {
            throttle: 0.6,
            target_speed: 6.0,
            steer_gain: 2.0,
        }
    }
}

impl GoalSeeker {
    /// Action from one observation row.
    pub fn from_obs(&self, row: &[f32]) -> [f64; 3] {
        let (s, c) = (row[2] as f64, row[3] as f64);
        if s == 0.0 && c == 0.0 {
            return [0.0; 3];
        }
        let err = s.atan2(c);
        let speed = row[5] as f64 * 10.0;
        let throttle = if speed < self.target_speed { self.throttle } else { 0.0 };
        [throttle, (self.steer_gain * err).clamp(-1.0, 1.0), 0.0]
    }
}

impl Policy for GoalSeeker {
    fn act(&mut self, engine: &Engine) -> Vec<[f64; 3]> {
        (0..engine.num_slots()).map(|i| self.from_obs(engine.obs_row(i))).collect()
    }
}
