//! Seedable CartPole and two-action MountainCar.
//!
//! Both environments expose a 4-element observation and two actions so the
//! same network shape fits either one. MountainCar pads `(position, velocity)`
//! with two zeros.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OBS_DIM: usize = 4;
pub const N_ACTIONS: usize = 2;

/// CartPole integration step in seconds.
pub const CARTPOLE_TAU: f64 = 0.02;

pub const MC_MIN_POSITION: f64 = -1.2;
pub const MC_MAX_POSITION: f64 = 0.6;
pub const MC_MAX_SPEED: f64 = 0.07;
pub const MC_GOAL_POSITION: f64 = 0.5;
pub const MC_FORCE: f64 = 0.001;
pub const MC_GRAVITY: f64 = 0.0025;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeDone,
    #[error("invalid action {0}, expected 0 or 1")]
    InvalidAction(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("state does not match environment kind")]
    KindMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    CartPole,
    MountainCarMod,
}

/// Physical parameters of one environment variant. MountainCar uses only
/// `kind` and `max_steps`; its dynamics constants are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_mag: f64,
    pub max_steps: u32,
    pub angle_limit: f64,
    pub position_limit: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::cartpole()
    }
}

impl EnvConfig {
    pub fn cartpole() -> Self {
        Self {
            kind: EnvKind::CartPole,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_mag: 10.0,
            max_steps: 200,
            angle_limit: 12.0 * std::f64::consts::PI / 180.0,
            position_limit: 2.4,
        }
    }

    pub fn mountain_car() -> Self {
        Self {
            kind: EnvKind::MountainCarMod,
            ..Self::cartpole()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("force_mag", self.force_mag),
            ("angle_limit", self.angle_limit),
            ("position_limit", self.position_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.max_steps < 1 {
            return Err(EnvError::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physics {
    CartPole {
        x: f64,
        x_dot: f64,
        theta: f64,
        theta_dot: f64,
    },
    MountainCar {
        position: f64,
        velocity: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub physics: Physics,
    pub step_count: u32,
    pub done: bool,
}

impl EnvState {
    pub fn observation(&self) -> [f64; OBS_DIM] {
        match self.physics {
            Physics::CartPole {
                x,
                x_dot,
                theta,
                theta_dot,
            } => [x, x_dot, theta, theta_dot],
            Physics::MountainCar { position, velocity } => [position, velocity, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    /// Episode over, either by failure/goal or by the step cap.
    pub done: bool,
    /// Failure or goal reached; false when only the step cap ended the episode.
    pub terminal: bool,
}

pub fn reset(config: &EnvConfig, seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let physics = match config.kind {
        EnvKind::CartPole => {
            let u = Uniform::new_inclusive(-0.05, 0.05);
            Physics::CartPole {
                x: u.sample(&mut rng),
                x_dot: u.sample(&mut rng),
                theta: u.sample(&mut rng),
                theta_dot: u.sample(&mut rng),
            }
        }
        EnvKind::MountainCarMod => Physics::MountainCar {
            position: Uniform::new_inclusive(-0.6, -0.4).sample(&mut rng),
            velocity: 0.0,
        },
    };
    EnvState {
        physics,
        step_count: 0,
        done: false,
    }
}

pub fn step(config: &EnvConfig, state: &EnvState, action: usize) -> Result<StepOutcome, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    if action >= N_ACTIONS {
        return Err(EnvError::InvalidAction(action));
    }
    let step_count = state.step_count + 1;
    let capped = step_count >= config.max_steps;
    match (config.kind, state.physics) {
        (
            EnvKind::CartPole,
            Physics::CartPole {
                x,
                x_dot,
                theta,
                theta_dot,
            },
        ) => {
            let force = if action == 1 {
                config.force_mag
            } else {
                -config.force_mag
            };
            let total_mass = config.cart_mass + config.pole_mass;
            let polemass_length = config.pole_mass * config.pole_half_length;
            let (sin, cos) = theta.sin_cos();
            let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
            let theta_acc = (config.gravity * sin - cos * temp)
                / (config.pole_half_length
                    * (4.0 / 3.0 - config.pole_mass * cos * cos / total_mass));
            let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

            let x = x + CARTPOLE_TAU * x_dot;
            let x_dot = x_dot + CARTPOLE_TAU * x_acc;
            let theta = theta + CARTPOLE_TAU * theta_dot;
            let theta_dot = theta_dot + CARTPOLE_TAU * theta_acc;

            let failed = x.abs() > config.position_limit || theta.abs() > config.angle_limit;
            let done = failed || capped;
            Ok(StepOutcome {
                next: EnvState {
                    physics: Physics::CartPole {
                        x,
                        x_dot,
                        theta,
                        theta_dot,
                    },
                    step_count,
                    done,
                },
                reward: if failed { 0.0 } else { 1.0 },
                done,
                terminal: failed,
            })
        }
        (EnvKind::MountainCarMod, Physics::MountainCar { position, velocity }) => {
            let direction = if action == 1 { 1.0 } else { -1.0 };
            let mut velocity =
                velocity + direction * MC_FORCE - (3.0 * position).cos() * MC_GRAVITY;
            velocity = velocity.clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
            let position = (position + velocity).clamp(MC_MIN_POSITION, MC_MAX_POSITION);
            if position == MC_MIN_POSITION && velocity < 0.0 {
                velocity = 0.0;
            }
            let goal = position >= MC_GOAL_POSITION;
            let done = goal || capped;
            Ok(StepOutcome {
                next: EnvState {
                    physics: Physics::MountainCar { position, velocity },
                    step_count,
                    done,
                },
                reward: if goal { 1.0 } else { 0.0 },
                done,
                terminal: goal,
            })
        }
        _ => Err(EnvError::KindMismatch),
    }
}
