//! Global (head-induced) motion: robust affine fits to dense flow, flow
//! compensation, trajectory compensation and per-frame camera translation.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::trajectory::Trajectory;

/// `(x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `angle` radians with uniform `scale` about `(cx, cy)`, then a shift.
    pub fn similarity(angle: f64, scale: f64, center: (f64, f64), shift: (f64, f64)) -> Self {
        let (s, c) = angle.sin_cos();
        let (a11, a12, a21, a22) = (scale * c, -scale * s, scale * s, scale * c);
        let (cx, cy) = center;
        Self {
            a11,
            a12,
            a21,
            a22,
            tx: cx - a11 * cx - a12 * cy + shift.0,
            ty: cy - a21 * cx - a22 * cy + shift.1,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a11 * x + self.a12 * y + self.tx,
            self.a21 * x + self.a22 * y + self.ty,
        )
    }

    /// Displacement `apply(p) - p`.
    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let (u, v) = self.apply(x, y);
        (u - x, v - y)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &AffineTransform) -> AffineTransform {
        AffineTransform {
            a11: self.a11 * first.a11 + self.a12 * first.a21,
            a12: self.a11 * first.a12 + self.a12 * first.a22,
            a21: self.a21 * first.a11 + self.a22 * first.a21,
            a22: self.a21 * first.a12 + self.a22 * first.a22,
            tx: self.a11 * first.tx + self.a12 * first.ty + self.tx,
            ty: self.a21 * first.tx + self.a22 * first.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Option<AffineTransform> {
        let det = self.a11 * self.a22 - self.a12 * self.a21;
        if det.abs() < 1e-12 {
            return None;
        }
        let (i11, i12, i21, i22) = (self.a22 / det, -self.a12 / det, -self.a21 / det, self.a11 / det);
        Some(AffineTransform {
            a11: i11,
            a12: i12,
            a21: i21,
            a22: i22,
            tx: -(i11 * self.tx + i12 * self.ty),
            ty: -(i21 * self.tx + i22 * self.ty),
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Same motion expressed in coordinates scaled by `s` (e.g. a pyramid level).
    pub fn rescaled(&self, s: f64) -> AffineTransform {
        AffineTransform {
            tx: self.tx * s,
            ty: self.ty * s,
            ..*self
        }
    }
}

/// RANSAC settings for [`estimate_affine`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFitConfig {
    pub grid_step: usize,
    pub inlier_px: f64,
    pub iterations: usize,
    pub min_inlier_ratio: f64,
    pub seed: u64,
    pub min_samples: usize,
}

impl Default for AffineFitConfig {
    fn default() -> Self {
        Self {
            grid_step: 8,
            inlier_px: 1.0,
            iterations: 200,
            min_inlier_ratio: 0.2,
            seed: 0x00C0_FFEE,
            min_samples: 50,
        }
    }
}

struct Sample {
    x: f64,
    y: f64,
    u: f64,
    v: f64,
}

pub fn estimate_affine(flow: &FlowField, mask: Option<&[bool]>) -> Result<AffineTransform> {
    estimate_affine_with(flow, mask, &AffineFitConfig::default())
}

/// Robust affine fit to the displacement field: RANSAC on a coarse grid,
/// then a least-squares refit on the consensus set. Falls back to identity
/// when the consensus is below `min_inlier_ratio`.
pub fn estimate_affine_with(
    flow: &FlowField,
    mask: Option<&[bool]>,
    cfg: &AffineFitConfig,
) -> Result<AffineTransform> {
    if flow.is_empty() {
        return Err(Error::Input("empty flow field".into()));
    }
    if let Some(m) = mask {
        if m.len() != flow.len() {
            return Err(Error::DimensionMismatch {
                expected: flow.len(),
                actual: m.len(),
            });
        }
    }
    let mut step = cfg.grid_step.max(1);
    let samples = loop {
        let s = grid_samples(flow, mask, step);
        if s.len() >= cfg.min_samples || step == 1 {
            break s;
        }
        step /= 2;
    };
    if samples.len() < cfg.min_samples {
        return Err(Error::Input(format!(
            "only {} flow samples available for the affine fit, need {}",
            samples.len(),
            cfg.min_samples
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thresh2 = cfg.inlier_px * cfg.inlier_px;
    let mut best: Option<(usize, AffineTransform)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..samples.len());
        let j = rng.random_range(0..samples.len());
        let k = rng.random_range(0..samples.len());
        if i == j || j == k || i == k {
            continue;
        }
        let Some(model) = fit_least_squares(&[&samples[i], &samples[j], &samples[k]]) else {
            continue;
        };
        let count = samples.iter().filter(|s| residual2(&model, s) < thresh2).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, model));
        }
    }
    let Some((count, model)) = best else {
        return Ok(AffineTransform::IDENTITY);
    };
    if (count as f64) < cfg.min_inlier_ratio * samples.len() as f64 {
        return Ok(AffineTransform::IDENTITY);
    }
    let inliers: Vec<&Sample> = samples.iter().filter(|s| residual2(&model, s) < thresh2).collect();
    Ok(fit_least_squares(&inliers).unwrap_or(model))
}

fn grid_samples(flow: &FlowField, mask: Option<&[bool]>, step: usize) -> Vec<Sample> {
    let off = step / 2;
    let mut out = Vec::new();
    for y in (off..flow.height).step_by(step) {
        for x in (off..flow.width).step_by(step) {
            let i = y * flow.width + x;
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (u, v) = (flow.u[i] as f64, flow.v[i] as f64);
            if u.is_finite() && v.is_finite() {
                out.push(Sample {
                    x: x as f64,
                    y: y as f64,
                    u,
                    v,
                });
            }
        }
    }
    out
}

fn residual2(m: &AffineTransform, s: &Sample) -> f64 {
    let (du, dv) = m.displacement(s.x, s.y);
    (du - s.u).powi(2) + (dv - s.v).powi(2)
}

/// Least-squares displacement model `d = B (x - c) + e` on centred coordinates.
fn fit_least_squares(samples: &[&Sample]) -> Option<AffineTransform> {
    let n = samples.len() as f64;
    if samples.len() < 3 {
        return None;
    }
    let cx = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let cy = samples.iter().map(|s| s.y).sum::<f64>() / n;
    let mut ata = Matrix3::<f64>::zeros();
    let mut atu = Vector3::<f64>::zeros();
    let mut atv = Vector3::<f64>::zeros();
    for s in samples {
        let r = Vector3::new(s.x - cx, s.y - cy, 1.0);
        ata += r * r.transpose();
        atu += r * s.u;
        atv += r * s.v;
    }
    // Reject (near-)collinear configurations.
    let scale = ata[(0, 0)].max(ata[(1, 1)]).max(1.0);
    if ata.determinant().abs() < 1e-9 * scale * scale * n {
        return None;
    }
    let lu = ata.lu();
    let p = lu.solve(&atu)?;
    let q = lu.solve(&atv)?;
    let t = AffineTransform {
        a11: 1.0 + p[0],
        a12: p[1],
        a21: q[0],
        a22: 1.0 + q[1],
        tx: p[2] - p[0] * cx - p[1] * cy,
        ty: q[2] - q[0] * cx - q[1] * cy,
    };
    t.is_finite().then_some(t)
}

/// Residual flow after removing the affine displacement field.
pub fn compensate_flow(flow: &FlowField, a: &AffineTransform) -> FlowField {
    let mut out = flow.clone();
    for y in 0..flow.height {
        for x in 0..flow.width {
            let i = y * flow.width + x;
            let (du, dv) = a.displacement(x as f64, y as f64);
            out.u[i] = (flow.u[i] as f64 - du) as f32;
            out.v[i] = (flow.v[i] as f64 - dv) as f32;
        }
    }
    out
}

/// Removes per-step global motion from a trajectory.
///
/// `affines[i]` maps playback frame `i` to `i + 1` in original-frame
/// coordinates; `level_scale` converts trajectory coordinates to those
/// (original = point / level_scale).
pub fn cancel_head_motion(
    t: &Trajectory,
    affines: &[AffineTransform],
    level_scale: f64,
) -> Result<Trajectory> {
    if affines.len() != t.displacements.len() {
        return Err(Error::DimensionMismatch {
            expected: t.displacements.len(),
            actual: affines.len(),
        });
    }
    let mut points = Vec::with_capacity(t.points.len());
    let mut cur = t.points[0];
    points.push(cur);
    let mut displacements = Vec::with_capacity(t.displacements.len());
    for ((p, d), a) in t.points.iter().zip(&t.displacements).zip(affines) {
        let (gx, gy) = a.displacement(p[0] / level_scale, p[1] / level_scale);
        let r = [d[0] - gx * level_scale, d[1] - gy * level_scale];
        displacements.push(r);
        cur = [cur[0] + r[0], cur[1] + r[1]];
        points.push(cur);
    }
    Ok(Trajectory {
        scale_level: t.scale_level,
        direction: t.direction,
        start_frame: t.start_frame,
        points,
        displacements,
    })
}

/// Global frame-to-frame translation `(dx, dy)`: the affine displacement at the frame centre.
pub fn camera_translation(a: &AffineTransform, frame_dims: (usize, usize)) -> (f64, f64) {
    a.displacement(frame_dims.0 as f64 / 2.0, frame_dims.1 as f64 / 2.0)
}
