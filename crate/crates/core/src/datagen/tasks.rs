//! Task trajectories: phase schedules, time-warp jitter, inverse kinematics
//! and the torque surrogate.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::rng;

use super::render::{arm_points, render_all_groups, Scene, SceneObject};
use super::{Role, ScalingRecord, Sequence, SequenceBatch, Task, WorldSpec};

/// How many sequences to generate per task and height condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenCounts {
    pub train_per_condition: usize,
    pub test_per_condition: usize,
}

impl Default for GenCounts {
    fn default() -> Self {
        GenCounts {
            train_per_condition: 3,
            test_per_condition: 1,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = crate::math::clamp(x, 0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Two-link inverse kinematics, elbow-up branch.
pub fn inverse_kinematics(spec: &WorldSpec, tx: f64, ty: f64) -> Result<(f64, f64)> {
    let dx = tx - spec.arm_base.0;
    let dy = ty - spec.arm_base.1;
    let r2 = dx * dx + dy * dy;
    let (l1, l2) = (spec.link1, spec.link2);
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0 + 1e-9..=1.0 - 1e-9).contains(&c2) {
        return Err(CoreError::Data(alloc::format!(
            "target ({tx:.3}, {ty:.3}) outside the arm's comfortable workspace"
        )));
    }
    let theta2 = -libm::acos(c2); // elbow-up: negative relative angle
    let k1 = l1 + l2 * libm::cos(theta2);
    let k2 = l2 * libm::sin(theta2);
    let theta1 = libm::atan2(dy, dx) - libm::atan2(k2, k1);
    Ok((theta1, theta2))
}

/// Piecewise-linear time warp mapping jittered phase boundaries onto the
/// canonical ones.
fn warp(s: f64, canon: &[f64; 2], jittered: &[f64; 2]) -> f64 {
    let knots_in = [0.0, jittered[0], jittered[1], 1.0];
    let knots_out = [0.0, canon[0], canon[1], 1.0];
    for seg in 0..3 {
        if s <= knots_in[seg + 1] || seg == 2 {
            let span_in = knots_in[seg + 1] - knots_in[seg];
            let span_out = knots_out[seg + 1] - knots_out[seg];
            let u = if span_in > 1e-12 {
                (s - knots_in[seg]) / span_in
            } else {
                0.0
            };
            return knots_out[seg] + u * span_out;
        }
    }
    1.0
}

struct RawStep {
    scene: Scene,
    proprio: Vec<f64>, // theta1, theta2, torque1, torque2
}

fn torque_surrogate(
    spec: &WorldSpec,
    theta1: f64,
    theta2: f64,
    load: f64,
) -> (f64, f64) {
    let ((ex, _ey), (tx, _ty)) = arm_points(spec, theta1, theta2);
    let passive1 = 0.2 * theta1;
    let passive2 = 0.2 * theta2;
    // Load torque about each joint scales with the horizontal moment arm of
    // the tip; this shifts as the pose changes, which is the signal the
    // reposition task carries.
    let t1 = passive1 + load * (tx - spec.arm_base.0);
    let t2 = passive2 + load * (tx - ex);
    (t1, t2)
}

fn reposition_sequence(
    spec: &WorldSpec,
    height: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RawStep>> {
    let j = spec.reposition_jitter;
    let canon = [0.35, 0.60];
    let jit = [
        canon[0] + j.phase * rng::uniform_symmetric(rng, 1.0),
        canon[1] + j.phase * rng::uniform_symmetric(rng, 1.0),
    ];
    let start = (
        0.30 + j.start_pose * rng::uniform_symmetric(rng, 1.0),
        0.40 + j.start_pose * rng::uniform_symmetric(rng, 1.0),
    );
    let lift = 0.10 * (1.0 + j.amplitude * rng::uniform_symmetric(rng, 1.0));
    let bar_cx = 0.60;
    let bar_half = 0.12;
    let grip = (bar_cx, height);
    let mut steps = Vec::with_capacity(spec.t_len);
    for k in 0..spec.t_len {
        let s = k as f64 / (spec.t_len - 1) as f64;
        let u = warp(s, &canon, &jit);
        let (tip, bar_cy, load) = if u < canon[0] {
            // Reach toward the bar.
            let a = smoothstep(u / canon[0]);
            (
                (
                    start.0 + (grip.0 - start.0) * a,
                    start.1 + (grip.1 - start.1) * a,
                ),
                height,
                0.0,
            )
        } else if u < canon[1] {
            // Hold: settle on the bar while the load ramps in.
            let a = (u - canon[0]) / (canon[1] - canon[0]);
            let dip = 0.01 * libm::sin(core::f64::consts::PI * a);
            ((grip.0, grip.1 - dip), height, smoothstep(a))
        } else {
            // Lift: bar attached to the tip.
            let a = smoothstep((u - canon[1]) / (1.0 - canon[1]));
            ((grip.0, grip.1 + lift * a), height + lift * a, 1.0)
        };
        let (t1, t2) = inverse_kinematics(spec, tip.0, tip.1)?;
        let (tau1, tau2) = torque_surrogate(spec, t1, t2, spec.load * load);
        steps.push(RawStep {
            scene: Scene {
                arm: Some((t1, t2)),
                object: SceneObject::Bar {
                    cx: bar_cx,
                    cy: bar_cy,
                    half: bar_half,
                },
            },
            proprio: vec![t1, t2, tau1, tau2],
        });
    }
    Ok(steps)
}

fn wipe_sequence(spec: &WorldSpec, height: f64, rng: &mut ChaCha8Rng) -> Result<Vec<RawStep>> {
    let j = spec.wipe_jitter;
    let canon = [0.25, 0.80];
    let jit = [
        canon[0] + 0.1 * j.phase * rng::uniform_symmetric(rng, 1.0),
        canon[1] + 0.1 * j.phase * rng::uniform_symmetric(rng, 1.0),
    ];
    let start = (
        0.30 + j.start_pose * rng::uniform_symmetric(rng, 1.0),
        0.45 + j.start_pose * rng::uniform_symmetric(rng, 1.0),
    );
    let strip = SceneObject::Strip {
        x0: 0.50,
        x1: 0.78,
        y: height,
    };
    let center = 0.64;
    let amp = 0.11 * (1.0 + j.amplitude * rng::uniform_symmetric(rng, 1.0));
    let phase0 = j.phase * rng::uniform_symmetric(rng, core::f64::consts::PI);
    let cycles = 1.25 + 0.5 * j.amplitude * rng::uniform_symmetric(rng, 1.0);
    let hover = height + 0.02;
    let wipe_entry = (center + amp * libm::sin(phase0), hover);
    let rest = (0.32, 0.50);
    let mut steps = Vec::with_capacity(spec.t_len);
    for k in 0..spec.t_len {
        let s = k as f64 / (spec.t_len - 1) as f64;
        let u = warp(s, &canon, &jit);
        let (tip, load) = if u < canon[0] {
            let a = smoothstep(u / canon[0]);
            (
                (
                    start.0 + (wipe_entry.0 - start.0) * a,
                    start.1 + (wipe_entry.1 - start.1) * a,
                ),
                0.0,
            )
        } else if u < canon[1] {
            let a = (u - canon[0]) / (canon[1] - canon[0]);
            let x = center + amp * libm::sin(core::f64::consts::TAU * cycles * a + phase0);
            let y = hover + 0.006 * libm::cos(2.0 * core::f64::consts::TAU * a + phase0);
            ((x, y), 0.15)
        } else {
            let a = smoothstep((u - canon[1]) / (1.0 - canon[1]));
            let exit_x =
                center + amp * libm::sin(core::f64::consts::TAU * cycles + phase0);
            let exit_y = hover + 0.006 * libm::cos(2.0 * core::f64::consts::TAU + phase0);
            (
                (
                    exit_x + (rest.0 - exit_x) * a,
                    exit_y + (rest.1 - exit_y) * a,
                ),
                0.15 * (1.0 - a),
            )
        };
        let (t1, t2) = inverse_kinematics(spec, tip.0, tip.1)?;
        let (tau1, tau2) = torque_surrogate(spec, t1, t2, spec.load * load);
        steps.push(RawStep {
            scene: Scene {
                arm: Some((t1, t2)),
                object: strip,
            },
            proprio: vec![t1, t2, tau1, tau2],
        });
    }
    Ok(steps)
}

/// Deterministic dataset generation. Train sequences per (task, condition)
/// come first, round-robin over conditions so that balanced prefixes of a
/// task's train set stay balanced, then the test sequences.
pub fn generate(spec: &WorldSpec, counts: &GenCounts, seed: u64) -> Result<SequenceBatch> {
    spec.validate()?;
    let n_cond = spec.heights.len();
    struct Slot {
        task: Task,
        role: Role,
        condition: usize,
        rep: usize,
    }
    let mut slots = Vec::new();
    for role in [Role::Train, Role::Test] {
        let per = match role {
            Role::Train => counts.train_per_condition,
            Role::Test => counts.test_per_condition,
        };
        for task in Task::ALL {
            for rep in 0..per {
                for condition in 0..n_cond {
                    slots.push(Slot {
                        task,
                        role,
                        condition,
                        rep,
                    });
                }
            }
        }
    }

    // Generate raw sequences.
    let mut raw: Vec<(Slot, Vec<RawStep>)> = Vec::with_capacity(slots.len());
    for slot in slots {
        let mut rng = rng::stream(
            seed,
            &[
                rng::salt::DATAGEN,
                slot.task as u64,
                slot.role as u64,
                slot.condition as u64,
                slot.rep as u64,
            ],
        );
        let height = spec.heights[slot.condition];
        let steps = match slot.task {
            Task::Reposition => reposition_sequence(spec, height, &mut rng)?,
            Task::Wipe => wipe_sequence(spec, height, &mut rng)?,
        };
        raw.push((slot, steps));
    }

    // Normalize proprioception over the whole pool.
    let pool: Vec<Vec<f64>> = raw
        .iter()
        .flat_map(|(_, steps)| steps.iter().map(|s| s.proprio.clone()))
        .collect();
    let scaling = ScalingRecord::from_pool(&pool)?;

    let mut sequences = Vec::with_capacity(raw.len());
    for (slot, steps) in raw {
        let mut extero = Vec::with_capacity(spec.t_len * spec.extero_dim());
        let mut proprio = Vec::with_capacity(spec.t_len * spec.proprio_dim());
        for step in &steps {
            extero.extend(render_all_groups(&step.scene, spec)?);
            for (d, v) in step.proprio.iter().enumerate() {
                proprio.push(scaling.normalize_value(d, *v));
            }
        }
        sequences.push(Sequence {
            task: slot.task,
            role: slot.role,
            condition: slot.condition,
            t_len: spec.t_len,
            extero,
            proprio,
        });
    }

    Ok(SequenceBatch {
        extero_groups: spec.extero_groups(),
        proprio_dim: spec.proprio_dim(),
        sequences,
        scaling,
        spec_hash: spec.content_hash(),
        seed,
    })
}
