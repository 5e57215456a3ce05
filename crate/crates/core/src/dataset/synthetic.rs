//! Synthetic 2-link planar-arm episodes with ground-truth structure.
//!
//! Each episode draws a random reach target, renders it into every frame as a
//! bright blob together with the arm links, and drives the arm with a
//! proportional task-space controller. The commanded torque depends on the
//! target (visible only in the image) and on the joint velocities (absent
//! from any single image), so neither modality alone determines the action.
//!
//! The effort channel carries a pose-dependent load torque rather than the
//! command itself; embedding the command in the state would let a state-only
//! model reconstruct the target.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ActionVector, ImageFrame, RobotState, Step, Trajectory};
use crate::error::{Error, Result};

pub const LINK1: f32 = 0.5;
pub const LINK2: f32 = 0.5;
pub const DT: f32 = 0.05;
pub const KP: f32 = 2.5;
pub const KD: f32 = 0.6;
pub const TORQUE_LIMIT: f32 = 2.0;
/// Half-extent of the rendered workspace window, in meters.
pub const VIEW_HALF: f32 = 1.2;
pub const GRIPPER_VALUE: f32 = 0.5;
pub const ENVIRONMENT_ID: &str = "planar-arm-2link";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_traj: usize,
    pub steps_per_traj: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Configured joint count J; the two real joints are padded with zeros.
    pub joint_count: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_traj: 200,
            steps_per_traj: 50,
            image_size: 32,
            seed: 7,
            joint_count: 6,
        }
    }
}

/// End-effector position and elbow position for rendering.
pub fn forward_kinematics(theta: [f32; 2]) -> ([f32; 2], [f32; 2]) {
    let elbow = [LINK1 * theta[0].cos(), LINK1 * theta[0].sin()];
    let s12 = (theta[0] + theta[1]).sin();
    let c12 = (theta[0] + theta[1]).cos();
    let ee = [elbow[0] + LINK2 * c12, elbow[1] + LINK2 * s12];
    (elbow, ee)
}

/// Jacobian-transpose proportional controller with velocity damping:
/// `tau = Kp * J(theta)^T (target - ee) - Kd * omega`, clamped per joint.
pub fn control_torque(theta: [f32; 2], omega: [f32; 2], target: [f32; 2]) -> [f32; 2] {
    let (_, ee) = forward_kinematics(theta);
    let e = [target[0] - ee[0], target[1] - ee[1]];
    let s1 = theta[0].sin();
    let c1 = theta[0].cos();
    let s12 = (theta[0] + theta[1]).sin();
    let c12 = (theta[0] + theta[1]).cos();
    // rows of J^T
    let jt1 = [-LINK1 * s1 - LINK2 * s12, LINK1 * c1 + LINK2 * c12];
    let jt2 = [-LINK2 * s12, LINK2 * c12];
    let tau1 = KP * (jt1[0] * e[0] + jt1[1] * e[1]) - KD * omega[0];
    let tau2 = KP * (jt2[0] * e[0] + jt2[1] * e[1]) - KD * omega[1];
    [
        tau1.clamp(-TORQUE_LIMIT, TORQUE_LIMIT),
        tau2.clamp(-TORQUE_LIMIT, TORQUE_LIMIT),
    ]
}

/// Explicit Euler update: `theta += omega * dt; omega += action * dt`.
pub fn step_dynamics(theta: [f32; 2], omega: [f32; 2], action: [f32; 2]) -> ([f32; 2], [f32; 2]) {
    (
        [theta[0] + omega[0] * DT, theta[1] + omega[1] * DT],
        [omega[0] + action[0] * DT, omega[1] + action[1] * DT],
    )
}

/// Pose-dependent load torque reported on the effort channel.
pub fn load_torque(theta: [f32; 2]) -> [f32; 2] {
    let c1 = theta[0].cos();
    let c12 = (theta[0] + theta[1]).cos();
    [0.8 * c1 + 0.3 * c12, 0.3 * c12]
}

fn to_pixel(p: [f32; 2], size: usize) -> [f32; 2] {
    let scale = (size - 1) as f32 / (2.0 * VIEW_HALF);
    [(p[0] + VIEW_HALF) * scale, (VIEW_HALF - p[1]) * scale]
}

fn dist_to_segment(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len_sq > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Render one grayscale frame: arm links at mid intensity, the reach target
/// as a bright Gaussian blob, pixels clamped to [0, 1].
pub fn render_frame(theta: [f32; 2], target: [f32; 2], size: usize) -> ImageFrame {
    let (elbow, ee) = forward_kinematics(theta);
    let base_px = to_pixel([0.0, 0.0], size);
    let elbow_px = to_pixel(elbow, size);
    let ee_px = to_pixel(ee, size);
    let target_px = to_pixel(target, size);

    let line_halfwidth = size as f32 / 32.0; // scales with resolution
    let blob_sigma = 1.1 * size as f32 / 32.0;
    let mut pixels = vec![0.0f32; size * size];
    for py in 0..size {
        for px in 0..size {
            let p = [px as f32, py as f32];
            let d1 = dist_to_segment(p, base_px, elbow_px);
            let d2 = dist_to_segment(p, elbow_px, ee_px);
            let d = d1.min(d2);
            let mut v = 0.55 * (1.0 - d / line_halfwidth).max(0.0);
            let dt2 = (p[0] - target_px[0]).powi(2) + (p[1] - target_px[1]).powi(2);
            v += (-dt2 / (2.0 * blob_sigma * blob_sigma)).exp();
            pixels[py * size + px] = v.clamp(0.0, 1.0);
        }
    }
    ImageFrame {
        channels: 1,
        height: size,
        width: size,
        pixels,
    }
}

fn pad(v: [f32; 2], joint_count: usize) -> Vec<f32> {
    let mut out = vec![0.0; joint_count];
    out[0] = v[0];
    out[1] = v[1];
    out
}

/// Roll one episode from an initial pose toward a fixed target.
///
/// The recorded step holds the pre-transition frame and state together with
/// the torque commanded at that instant; the next step stores the Euler
/// update of the previous one.
pub fn simulate_episode(
    id: &str,
    theta0: [f32; 2],
    target: [f32; 2],
    steps: usize,
    image_size: usize,
    joint_count: usize,
) -> Trajectory {
    let mut theta = theta0;
    let mut omega = [0.0f32; 2];
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = control_torque(theta, omega, target);
        let load = load_torque(theta);
        out.push(Step {
            image: render_frame(theta, target, image_size),
            state: RobotState {
                joint_positions: pad(theta, joint_count),
                joint_velocities: pad(omega, joint_count),
                joint_efforts: pad(load, joint_count),
                gripper: GRIPPER_VALUE,
            },
            action: ActionVector::new(action.to_vec()),
        });
        let (t, o) = step_dynamics(theta, omega, action);
        theta = t;
        omega = o;
    }
    Trajectory {
        id: id.to_string(),
        environment_id: ENVIRONMENT_ID.to_string(),
        steps: out,
    }
}

/// Generate a seeded dataset of reach episodes.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<Trajectory>> {
    if config.image_size < 16 {
        return Err(Error::Config(format!(
            "image_size must be >= 16, got {}",
            config.image_size
        )));
    }
    if config.joint_count < 2 {
        return Err(Error::Config("joint_count must be >= 2".into()));
    }
    if config.steps_per_traj < 2 {
        return Err(Error::Config("steps_per_traj must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reach = LINK1 + LINK2;
    let mut out = Vec::with_capacity(config.n_traj);
    for i in 0..config.n_traj {
        let theta0 = [
            rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI),
            rng.gen_range(-2.4..2.4),
        ];
        let radius = rng.gen_range(0.35 * reach..0.95 * reach);
        let angle = rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI);
        let target = [radius * angle.cos(), radius * angle.sin()];
        out.push(simulate_episode(
            &format!("t{:04}", i),
            theta0,
            target,
            config.steps_per_traj,
            config.image_size,
            config.joint_count,
        ));
    }
    Ok(out)
}
