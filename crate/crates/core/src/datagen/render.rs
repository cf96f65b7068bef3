//! Scene rasterization: anti-aliased segments on a unit canvas, rendered at
//! the highest resolution and box-filtered down for the coarser groups.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;

use super::WorldSpec;

const BACKGROUND: f64 = 0.0;
const OBJECT_INTENSITY: f64 = 0.55;
const ARM_INTENSITY: f64 = 1.0;

/// What is visible on the canvas at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    /// Joint angles of the 2-link arm, absent for an empty canvas.
    pub arm: Option<(f64, f64)>,
    pub object: SceneObject,
}

impl Scene {
    pub fn empty() -> Self {
        Scene {
            arm: None,
            object: SceneObject::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SceneObject {
    None,
    /// Rigid horizontal bar centered at (cx, cy).
    Bar { cx: f64, cy: f64, half: f64 },
    /// Horizontal target strip from x0 to x1 at height y.
    Strip { x0: f64, x1: f64, y: f64 },
}

fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let abx = bx - ax;
    let aby = by - ay;
    let apx = px - ax;
    let apy = py - ay;
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        math::clamp((apx * abx + apy * aby) / len2, 0.0, 1.0)
    } else {
        0.0
    };
    let dx = px - (ax + t * abx);
    let dy = py - (ay + t * aby);
    math::sqrt(dx * dx + dy * dy)
}

fn coverage(dist: f64, half_thickness: f64, aa: f64) -> f64 {
    math::clamp((half_thickness + 0.5 * aa - dist) / aa, 0.0, 1.0)
}

/// Forward kinematics: (elbow, tip) positions for the given joint angles.
pub fn arm_points(spec: &WorldSpec, theta1: f64, theta2: f64) -> ((f64, f64), (f64, f64)) {
    let (bx, by) = spec.arm_base;
    let ex = bx + spec.link1 * libm::cos(theta1);
    let ey = by + spec.link1 * libm::sin(theta1);
    let tx = ex + spec.link2 * libm::cos(theta1 + theta2);
    let ty = ey + spec.link2 * libm::sin(theta1 + theta2);
    ((ex, ey), (tx, ty))
}

fn render_at(scene: &Scene, spec: &WorldSpec, res: usize) -> Vec<f64> {
    let aa = 1.0 / res as f64;
    let mut out = vec![0.0; res * res];
    for row in 0..res {
        for col in 0..res {
            // Image rows run top-down; the canvas y axis points up.
            let px = (col as f64 + 0.5) / res as f64;
            let py = 1.0 - (row as f64 + 0.5) / res as f64;
            let obj_cov = match scene.object {
                SceneObject::None => 0.0,
                SceneObject::Bar { cx, cy, half } => coverage(
                    dist_to_segment(px, py, cx - half, cy, cx + half, cy),
                    spec.object_thickness * 0.5,
                    aa,
                ),
                SceneObject::Strip { x0, x1, y } => coverage(
                    dist_to_segment(px, py, x0, y, x1, y),
                    spec.object_thickness * 0.5,
                    aa,
                ),
            };
            let arm_cov = match scene.arm {
                None => 0.0,
                Some((t1, t2)) => {
                    let ((ex, ey), (tx, ty)) = arm_points(spec, t1, t2);
                    let (bx, by) = spec.arm_base;
                    let d1 = dist_to_segment(px, py, bx, by, ex, ey);
                    let d2 = dist_to_segment(px, py, ex, ey, tx, ty);
                    let c1 = coverage(d1, spec.arm_thickness * 0.5, aa);
                    let c2 = coverage(d2, spec.arm_thickness * 0.5, aa);
                    // Slightly larger tip disc so the effector reads at 4x4.
                    let dt = math::sqrt((px - tx) * (px - tx) + (py - ty) * (py - ty));
                    let c3 = coverage(dt, spec.arm_thickness * 0.9, aa);
                    c1.max(c2).max(c3)
                }
            };
            // Occlusion order is fixed: arm over object over background.
            let under = obj_cov * OBJECT_INTENSITY + (1.0 - obj_cov) * BACKGROUND;
            let val = arm_cov * ARM_INTENSITY + (1.0 - arm_cov) * under;
            out[row * res + col] = val;
        }
    }
    out
}

/// Exact 2x box-filter downsample of a square image.
pub fn box_downsample(pixels: &[f64], res: usize) -> Vec<f64> {
    debug_assert_eq!(pixels.len(), res * res);
    debug_assert_eq!(res % 2, 0);
    let half = res / 2;
    let mut out = vec![0.0; half * half];
    for r in 0..half {
        for c in 0..half {
            let a = pixels[(2 * r) * res + 2 * c];
            let b = pixels[(2 * r) * res + 2 * c + 1];
            let d = pixels[(2 * r + 1) * res + 2 * c];
            let e = pixels[(2 * r + 1) * res + 2 * c + 1];
            out[r * half + c] = (a + b + d + e) * 0.25;
        }
    }
    out
}

fn to_signed(v: f64) -> f64 {
    -0.9 + 1.8 * v
}

/// Renders the scene at the requested resolution, mapped linearly onto
/// [-0.9, 0.9]. Resolutions below the highest one are exact box-filter
/// downsamples of the highest-resolution rendering.
pub fn render_views(scene: &Scene, spec: &WorldSpec, resolution: usize) -> Result<Vec<f64>> {
    let max_res = *spec.resolutions.last().ok_or_else(|| {
        CoreError::Config("world spec has no resolutions".into())
    })?;
    if !spec.resolutions.contains(&resolution) {
        return Err(CoreError::Config(alloc::format!(
            "resolution {resolution} not in the spec's resolution set"
        )));
    }
    let mut img = render_at(scene, spec, max_res);
    let mut res = max_res;
    while res > resolution {
        if res % 2 != 0 {
            return Err(CoreError::Config(alloc::format!(
                "resolution chain requires powers of two apart, got {res} -> {resolution}"
            )));
        }
        img = box_downsample(&img, res);
        res /= 2;
        if res < resolution {
            return Err(CoreError::Config(alloc::format!(
                "resolution {resolution} is not reachable by halving from {max_res}"
            )));
        }
    }
    Ok(img.iter().map(|v| to_signed(*v)).collect())
}

/// Renders the full concatenated exteroceptive vector (coarsest group
/// first) for one scene.
pub fn render_all_groups(scene: &Scene, spec: &WorldSpec) -> Result<Vec<f64>> {
    let max_res = *spec.resolutions.last().unwrap();
    let mut by_res: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut img = render_at(scene, spec, max_res);
    by_res.push((max_res, img.clone()));
    let mut res = max_res;
    while res > *spec.resolutions.first().unwrap() {
        if res % 2 != 0 {
            return Err(CoreError::Config(
                "resolution chain requires halvable resolutions".into(),
            ));
        }
        img = box_downsample(&img, res);
        res /= 2;
        by_res.push((res, img.clone()));
    }
    let mut out = Vec::with_capacity(spec.extero_dim());
    for wanted in &spec.resolutions {
        let found = by_res
            .iter()
            .find(|(r, _)| r == wanted)
            .ok_or_else(|| {
                CoreError::Config(alloc::format!(
                    "resolution {wanted} unreachable by halving from {max_res}"
                ))
            })?;
        out.extend(found.1.iter().map(|v| to_signed(*v)));
    }
    Ok(out)
}
