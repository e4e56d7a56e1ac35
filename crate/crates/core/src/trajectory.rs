//! Dense trajectories: grid sampling, median-flow tracking in both playback
//! directions, and pruning of static or erratic tracks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::video::GrayImage;

/// Playback direction a trajectory was tracked in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Grid spacing `W` of sampled points, in pixels.
    pub grid_step: usize,
    /// Trajectory length `L` in frames (number of displacements).
    pub traj_length: usize,
    pub num_scales: usize,
    pub scale_factor: f32,
    pub min_eig_frac: f32,
    pub static_std_px: f64,
    pub max_step_px: f64,
    pub max_step_frac: f64,
    pub median_kernel: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            grid_step: 5,
            traj_length: 15,
            num_scales: 8,
            scale_factor: std::f32::consts::FRAC_1_SQRT_2,
            min_eig_frac: 0.001,
            static_std_px: 1.0,
            max_step_px: 20.0,
            max_step_frac: 0.7,
            median_kernel: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_step < 1 {
            return Err(Error::Config("grid step must be >= 1".into()));
        }
        if self.traj_length < 2 {
            return Err(Error::Config("trajectory length must be >= 2".into()));
        }
        if self.num_scales < 1 || !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::Config("scale count must be >= 1 and factor in (0, 1)".into()));
        }
        if !(self.min_eig_frac > 0.0
            && self.static_std_px > 0.0
            && self.max_step_px > 0.0
            && self.max_step_frac > 0.0)
        {
            return Err(Error::Config("pruning thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Ratio between coordinates at `level` and at the original frame size.
    pub fn level_scale(&self, level: usize) -> f64 {
        (self.scale_factor as f64).powi(level as i32)
    }
}

/// A point tracked over `L + 1` consecutive frames of one playback pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scale_level: usize,
    pub direction: Direction,
    /// Playback index (within the pass) of the frame the point was seeded on.
    pub start_frame: usize,
    /// Positions at the trajectory's own scale.
    pub points: Vec<[f64; 2]>,
    pub displacements: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn from_points(
        scale_level: usize,
        direction: Direction,
        start_frame: usize,
        points: Vec<[f64; 2]>,
    ) -> Self {
        let displacements = points
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect();
        Self {
            scale_level,
            direction,
            start_frame,
            points,
            displacements,
        }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    /// Position of the seed frame in forward time within a window of `window_len` frames.
    pub fn window_position(&self, window_len: usize) -> usize {
        match self.direction {
            Direction::Forward => self.start_frame,
            Direction::Backward => window_len - 1 - self.start_frame,
        }
    }

    /// Debug line: `scale dir start_frame x0 y0 ... xL yL`.
    pub fn to_debug_line(&self) -> String {
        let mut s = format!("{} {} {}", self.scale_level, self.direction.as_str(), self.start_frame);
        for p in &self.points {
            let _ = write!(s, " {} {}", p[0], p[1]);
        }
        s
    }
}

/// All trajectories of one window, both directions pooled.
#[derive(Clone, Debug, Default)]
pub struct TrajectorySet {
    /// Sequence index of the window centre.
    pub window_center: usize,
    pub window_len: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Minimum eigenvalue of the 3×3-summed structure tensor at every pixel.
pub fn min_eigen_map(img: &GrayImage) -> Vec<f32> {
    let (w, h) = img.dims();
    let mut gxx = vec![0.0f32; w * h];
    let mut gxy = vec![0.0f32; w * h];
    let mut gyy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) * 0.5;
            let gy = (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) * 0.5;
            let i = y as usize * w + x as usize;
            gxx[i] = gx * gx;
            gxy[i] = gx * gy;
            gyy[i] = gy * gy;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for dy in -1..=1 {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -1..=1 {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let j = yy * w + xx;
                    a += gxx[j];
                    b += gxy[j];
                    c += gyy[j];
                }
            }
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            out[y as usize * w + x as usize] = ((a + c - disc) * 0.5).max(0.0);
        }
    }
    out
}

/// Grid points that are textured enough and not already covered by a live track.
pub fn sample_points(img: &GrayImage, existing: &[[f64; 2]], cfg: &TrackerConfig) -> Vec<[f64; 2]> {
    let (w, h) = img.dims();
    sample_points_from_eigen(&min_eigen_map(img), w, h, existing, cfg)
}

pub fn sample_points_from_eigen(
    eig: &[f32],
    width: usize,
    height: usize,
    existing: &[[f64; 2]],
    cfg: &TrackerConfig,
) -> Vec<[f64; 2]> {
    let step = cfg.grid_step;
    let cols = (width - 1) / step + 1;
    let rows = (height - 1) / step + 1;
    let mut occupied = vec![false; cols * rows];
    let half = step as f64 / 2.0;
    for p in existing {
        let gx = (p[0] / step as f64).round();
        let gy = (p[1] / step as f64).round();
        if gx < 0.0 || gy < 0.0 || gx >= cols as f64 || gy >= rows as f64 {
            continue;
        }
        let (dx, dy) = (p[0] - gx * step as f64, p[1] - gy * step as f64);
        if dx * dx + dy * dy < half * half {
            occupied[gy as usize * cols + gx as usize] = true;
        }
    }
    let max_eig = eig.iter().copied().fold(0.0f32, f32::max);
    let threshold = max_eig * cfg.min_eig_frac;
    let mut out = Vec::new();
    for gy in 0..rows {
        for gx in 0..cols {
            if occupied[gy * cols + gx] {
                continue;
            }
            let (x, y) = (gx * step, gy * step);
            if eig[y * width + x] > threshold {
                out.push([x as f64, y as f64]);
            }
        }
    }
    out
}

/// One tracking step: `p + flow` sampled at the rounded position of `p`.
/// Returns `None` once the point leaves the frame.
pub fn track_point(p: [f64; 2], flow: &FlowField) -> Option<[f64; 2]> {
    let (w, h) = (flow.width as f64, flow.height as f64);
    let inside = |q: [f64; 2]| q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= w - 1.0 && q[1] <= h - 1.0;
    if !inside(p) {
        return None;
    }
    let (u, v) = flow.at(p[0].round() as usize, p[1].round() as usize);
    let q = [p[0] + u as f64, p[1] + v as f64];
    inside(q).then_some(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneReason {
    Static,
    Erratic,
}

/// `Ok(())` keeps the trajectory, `Err(reason)` discards it.
pub fn prune_trajectory(t: &Trajectory, cfg: &TrackerConfig) -> std::result::Result<(), PruneReason> {
    let n = t.points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in &t.points {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy) = (0.0, 0.0);
    for p in &t.points {
        vx += (p[0] - mx).powi(2);
        vy += (p[1] - my).powi(2);
    }
    let (sx, sy) = ((vx / n).sqrt(), (vy / n).sqrt());
    if sx < cfg.static_std_px && sy < cfg.static_std_px {
        return Err(PruneReason::Static);
    }
    let norms: Vec<f64> = t.displacements.iter().map(|d| d[0].hypot(d[1])).collect();
    let total: f64 = norms.iter().sum();
    if norms
        .iter()
        .any(|&m| m > cfg.max_step_px || m > cfg.max_step_frac * total)
    {
        return Err(PruneReason::Erratic);
    }
    Ok(())
}

/// Per-scale imagery and tracking flow, addressed by sequence index.
pub trait TrackingSource: Sync {
    fn num_scales(&self) -> usize;
    fn frame_dims(&self, scale: usize) -> (usize, usize);
    fn eigen_map(&self, scale: usize, frame: usize) -> &[f32];
    /// Median-filtered flow from frame `from` to frame `to` at `scale`.
    fn tracking_flow(&self, scale: usize, from: usize, to: usize) -> &FlowField;
}

/// Tracks one playback pass over `order` (sequence indices) at one scale.
pub fn track_pass(
    src: &impl TrackingSource,
    order: &[usize],
    scale: usize,
    direction: Direction,
    cfg: &TrackerConfig,
) -> Vec<Trajectory> {
    struct Live {
        start: usize,
        points: Vec<[f64; 2]>,
    }
    let len = cfg.traj_length;
    if order.len() < len + 1 {
        return Vec::new();
    }
    let (w, h) = src.frame_dims(scale);
    let last_seed = order.len() - 1 - len;
    let mut live: Vec<Live> = Vec::new();
    let mut done = Vec::new();
    for t in 0..order.len() {
        if t <= last_seed {
            let existing: Vec<[f64; 2]> = live.iter().map(|l| *l.points.last().unwrap()).collect();
            let seeds = sample_points_from_eigen(src.eigen_map(scale, order[t]), w, h, &existing, cfg);
            live.extend(seeds.into_iter().map(|p| Live {
                start: t,
                points: vec![p],
            }));
        }
        if t + 1 == order.len() || live.is_empty() {
            if t >= last_seed {
                break;
            }
            continue;
        }
        let flow = src.tracking_flow(scale, order[t], order[t + 1]);
        let mut next = Vec::with_capacity(live.len());
        for mut l in live.drain(..) {
            let Some(q) = track_point(*l.points.last().unwrap(), flow) else {
                continue;
            };
            l.points.push(q);
            if l.points.len() == len + 1 {
                let traj = Trajectory::from_points(scale, direction, l.start, l.points);
                if prune_trajectory(&traj, cfg).is_ok() {
                    done.push(traj);
                }
            } else {
                next.push(l);
            }
        }
        live = next;
    }
    done
}

/// Forward and time-reversed passes over a window at every scale, pooled.
pub fn track_window(src: &impl TrackingSource, indices: &[usize], center: usize, cfg: &TrackerConfig) -> TrajectorySet {
    let reversed: Vec<usize> = indices.iter().rev().copied().collect();
    let mut trajectories = Vec::new();
    for scale in 0..src.num_scales() {
        trajectories.extend(track_pass(src, indices, scale, Direction::Forward, cfg));
        trajectories.extend(track_pass(src, &reversed, scale, Direction::Backward, cfg));
    }
    TrajectorySet {
        window_center: center,
        window_len: indices.len(),
        trajectories,
    }
}
