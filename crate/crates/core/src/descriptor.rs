//! Trajectory-aligned descriptors (shape, HOG, HOF, MBH, kinematic) and
//! window-level statistical and camera-activity features.
//!
//! Histogram descriptors are computed over an `N`×`N`×`L` volume that follows
//! the trajectory, split into `n_sigma`×`n_sigma`×`n_tau` cells. Every pixel
//! votes into one orientation bin (hard assignment) with its magnitude as
//! weight; the concatenated cell histograms are L2-normalized.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowGradients};
use crate::trajectory::Trajectory;
use crate::video::GrayImage;

/// Descriptor channel identifiers, also used in the on-disk formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Shape = 0,
    Hog = 1,
    Hof = 2,
    MbhX = 3,
    MbhY = 4,
    Kinematic = 5,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Shape,
        Channel::Hog,
        Channel::Hof,
        Channel::MbhX,
        Channel::MbhY,
        Channel::Kinematic,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Channel> {
        Channel::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Shape => "shape",
            Channel::Hog => "hog",
            Channel::Hof => "hof",
            Channel::MbhX => "mbhx",
            Channel::MbhY => "mbhy",
            Channel::Kinematic => "kinematic",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Descriptor length under `cfg` with trajectories of `traj_length` steps.
    pub fn dim(self, cfg: &DescriptorConfig, traj_length: usize) -> usize {
        let cells = cfg.spatial_cells * cfg.spatial_cells * cfg.temporal_cells;
        match self {
            Channel::Shape => 2 * traj_length,
            Channel::Hog => cells * cfg.hog_bins,
            Channel::Hof => cells * (cfg.hof_bins),
            Channel::MbhX | Channel::MbhY => cells * cfg.mbh_bins,
            Channel::Kinematic => 4 * KINEMATIC_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorConfig {
    /// Side `N` of the volume around the trajectory, in pixels.
    pub volume_size: usize,
    pub spatial_cells: usize,
    pub temporal_cells: usize,
    pub hog_bins: usize,
    /// Orientation bins plus the zero-motion bin.
    pub hof_bins: usize,
    pub mbh_bins: usize,
    pub zero_flow_thresh: f32,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            volume_size: 32,
            spatial_cells: 2,
            temporal_cells: 3,
            hog_bins: 8,
            hof_bins: 9,
            mbh_bins: 8,
            zero_flow_thresh: 0.4,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self, traj_length: usize) -> Result<()> {
        if self.spatial_cells == 0 || self.volume_size % self.spatial_cells != 0 {
            return Err(Error::Config(format!(
                "volume size {} not divisible by {} spatial cells",
                self.volume_size, self.spatial_cells
            )));
        }
        if self.temporal_cells == 0 || traj_length % self.temporal_cells != 0 {
            return Err(Error::Config(format!(
                "trajectory length {traj_length} not divisible by {} temporal cells",
                self.temporal_cells
            )));
        }
        if self.hog_bins == 0 || self.mbh_bins == 0 || self.hof_bins < 2 {
            return Err(Error::Config("histogram bin counts too small".into()));
        }
        if self.hog_bins > 255 || self.hof_bins > 255 || self.mbh_bins > 255 {
            return Err(Error::Config("at most 255 histogram bins".into()));
        }
        Ok(())
    }
}

/// Orientation bin of `(dx, dy)` among `bins` equal sectors, bin 0 centred on 0°.
#[inline]
pub fn orientation_bin(dx: f32, dy: f32, bins: usize) -> usize {
    let mut a = (dy as f64).atan2(dx as f64);
    if a < 0.0 {
        a += std::f64::consts::TAU;
    }
    let width = std::f64::consts::TAU / bins as f64;
    ((a / width + 0.5).floor() as usize) % bins
}

/// Per-pixel histogram vote: bin index and weight.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedField {
    pub width: usize,
    pub height: usize,
    pub bins: Vec<u8>,
    pub weights: Vec<f32>,
}

impl OrientedField {
    fn from_vectors(
        width: usize,
        height: usize,
        mut vec_at: impl FnMut(usize) -> (f32, f32),
        mut vote: impl FnMut(f32, f32) -> (usize, f32),
    ) -> Self {
        let n = width * height;
        let mut bins = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let (dx, dy) = vec_at(i);
            let (b, w) = vote(dx, dy);
            bins.push(b as u8);
            weights.push(w);
        }
        Self {
            width,
            height,
            bins,
            weights,
        }
    }

    /// Image gradients from `[-1, 0, 1]` differences with replicated borders.
    pub fn hog(img: &GrayImage, bins: usize) -> Self {
        let (w, h) = img.dims();
        Self::from_vectors(
            w,
            h,
            |i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                (
                    img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y),
                    img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1),
                )
            },
            |dx, dy| magnitude_vote(dx, dy, bins),
        )
    }

    /// Flow vectors; slow vectors vote with unit weight into the last (zero) bin.
    pub fn hof(flow: &FlowField, bins: usize, zero_thresh: f32) -> Self {
        let orient = bins - 1;
        Self::from_vectors(
            flow.width,
            flow.height,
            |i| (flow.u[i], flow.v[i]),
            |dx, dy| {
                let m = dx.hypot(dy);
                if m < zero_thresh {
                    (orient, 1.0)
                } else {
                    (orientation_bin(dx, dy, orient), m)
                }
            },
        )
    }

    /// Gradients of the `u` (first) and `v` (second) flow components.
    pub fn mbh(grads: &FlowGradients, bins: usize) -> (Self, Self) {
        let (w, h) = (grads.width, grads.height);
        let x = Self::from_vectors(w, h, |i| (grads.du_dx[i], grads.du_dy[i]), |dx, dy| magnitude_vote(dx, dy, bins));
        let y = Self::from_vectors(w, h, |i| (grads.dv_dx[i], grads.dv_dy[i]), |dx, dy| magnitude_vote(dx, dy, bins));
        (x, y)
    }
}

#[inline]
fn magnitude_vote(dx: f32, dy: f32, bins: usize) -> (usize, f32) {
    let m = dx.hypot(dy);
    if m == 0.0 {
        (0, 0.0)
    } else {
        (orientation_bin(dx, dy, bins), m)
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Spatial cells of one volume frame and the temporal cell it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCells {
    pub temporal_cell: usize,
    /// Row-major `n_sigma`×`n_sigma` rectangles.
    pub rects: Vec<CellRect>,
}

/// Cell layout of the volume following a trajectory over its first `L` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeCells {
    pub frames: Vec<FrameCells>,
    pub spatial_cells: usize,
    pub temporal_cells: usize,
}

impl VolumeCells {
    pub fn num_cells(&self) -> usize {
        self.spatial_cells * self.spatial_cells * self.temporal_cells
    }

    /// Total pixel count of cell `(t, row, col)`.
    pub fn cell_volume(&self, t: usize, row: usize, col: usize) -> usize {
        self.frames
            .iter()
            .filter(|f| f.temporal_cell == t)
            .map(|f| f.rects[row * self.spatial_cells + col].area())
            .sum()
    }
}

/// Volume cells centred on the rounded trajectory position of each frame,
/// clamped to the `frame_dims` rectangle.
pub fn volume_cells(t: &Trajectory, frame_dims: (usize, usize), cfg: &DescriptorConfig) -> VolumeCells {
    let len = t.len();
    let (w, h) = (frame_dims.0 as isize, frame_dims.1 as isize);
    let n = cfg.volume_size as isize;
    let cs = n / cfg.spatial_cells as isize;
    let per_cell = len.div_ceil(cfg.temporal_cells);
    let frames = t.points[..len]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cx = p[0].round() as isize;
            let cy = p[1].round() as isize;
            let (x0, y0) = (cx - n / 2, cy - n / 2);
            let mut rects = Vec::with_capacity(cfg.spatial_cells * cfg.spatial_cells);
            for row in 0..cfg.spatial_cells as isize {
                for col in 0..cfg.spatial_cells as isize {
                    let cx0 = (x0 + col * cs).clamp(0, w);
                    let cx1 = (x0 + (col + 1) * cs).clamp(0, w);
                    let cy0 = (y0 + row * cs).clamp(0, h);
                    let cy1 = (y0 + (row + 1) * cs).clamp(0, h);
                    rects.push(CellRect {
                        x0: cx0 as usize,
                        y0: cy0 as usize,
                        x1: cx1 as usize,
                        y1: cy1 as usize,
                    });
                }
            }
            FrameCells {
                temporal_cell: (i / per_cell).min(cfg.temporal_cells - 1),
                rects,
            }
        })
        .collect();
    VolumeCells {
        frames,
        spatial_cells: cfg.spatial_cells,
        temporal_cells: cfg.temporal_cells,
    }
}

/// Accumulates per-cell histograms over `fields[i]` for volume frame `i`, then L2-normalizes.
pub fn volume_histogram(fields: &[&OrientedField], cells: &VolumeCells, bins: usize) -> Vec<f64> {
    assert_eq!(fields.len(), cells.frames.len(), "one field per volume frame");
    let ns = cells.spatial_cells;
    let mut hist = vec![0.0f64; cells.num_cells() * bins];
    for (field, frame) in fields.iter().zip(&cells.frames) {
        for (s, r) in frame.rects.iter().enumerate() {
            let base = (frame.temporal_cell * ns * ns + s) * bins;
            for y in r.y0..r.y1 {
                let row = y * field.width;
                for x in r.x0..r.x1 {
                    hist[base + field.bins[row + x] as usize] += field.weights[row + x] as f64;
                }
            }
        }
    }
    l2_normalize(&mut hist);
    hist
}

pub(crate) fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// HOG over image-gradient fields of the volume frames.
pub fn hog_descriptor(fields: &[&OrientedField], cells: &VolumeCells, cfg: &DescriptorConfig) -> Vec<f64> {
    volume_histogram(fields, cells, cfg.hog_bins)
}

/// HOF over flow fields of the volume frames (orientation bins + zero bin).
pub fn hof_descriptor(fields: &[&OrientedField], cells: &VolumeCells, cfg: &DescriptorConfig) -> Vec<f64> {
    volume_histogram(fields, cells, cfg.hof_bins)
}

/// MBHx and MBHy, each normalized separately.
pub fn mbh_descriptor(
    x_fields: &[&OrientedField],
    y_fields: &[&OrientedField],
    cells: &VolumeCells,
    cfg: &DescriptorConfig,
) -> (Vec<f64>, Vec<f64>) {
    (
        volume_histogram(x_fields, cells, cfg.mbh_bins),
        volume_histogram(y_fields, cells, cfg.mbh_bins),
    )
}

/// Displacements divided by the sum of their magnitudes; zero for (near-)static tracks.
pub fn traj_shape(t: &Trajectory, traj_length: usize) -> Result<Vec<f64>> {
    if t.displacements.len() != traj_length {
        return Err(Error::DimensionMismatch {
            expected: traj_length,
            actual: t.displacements.len(),
        });
    }
    let total: f64 = t.displacements.iter().map(|d| d[0].hypot(d[1])).sum();
    if total < 1e-6 {
        return Ok(vec![0.0; 2 * traj_length]);
    }
    Ok(t.displacements
        .iter()
        .flat_map(|d| [d[0] / total, d[1] / total])
        .collect())
}

/// Bins per kinematic quantity.
pub const KINEMATIC_BINS: usize = 12;
const KINEMATIC_EDGES: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];
const KINEMATIC_OVERFLOW: f64 = 5.0;

/// `[divergence, curl, hyperbolic 1 (shear), hyperbolic 2]` from `[du_dx, du_dy, dv_dx, dv_dy]`.
pub fn kinematic_quantities(g: [f32; 4]) -> [f64; 4] {
    let [ux, uy, vx, vy] = g.map(|v| v as f64);
    [ux + vy, vx - uy, ux - vy, uy + vx]
}

/// Signed-magnitude bin: 0..=4 negative (most negative first), 5 near zero,
/// 6..=10 positive, 11 overflow (`|v| >= 5` or non-finite).
pub fn kinematic_bin(v: f64) -> usize {
    if !v.is_finite() || v.abs() >= KINEMATIC_OVERFLOW {
        return KINEMATIC_BINS - 1;
    }
    let m = v.abs();
    if m < KINEMATIC_EDGES[0] {
        return 5;
    }
    let k = KINEMATIC_EDGES.iter().rposition(|&e| m >= e).unwrap();
    if v > 0.0 {
        6 + k
    } else {
        4 - k
    }
}

/// 4 × 12 histogram of the kinematic quantities sampled along a trajectory, L1-normalized.
pub fn kinematic_descriptor(samples: &[[f32; 4]]) -> Vec<f64> {
    let mut hist = vec![0.0f64; 4 * KINEMATIC_BINS];
    for g in samples {
        for (q, v) in kinematic_quantities(*g).into_iter().enumerate() {
            hist[q * KINEMATIC_BINS + kinematic_bin(v)] += 1.0;
        }
    }
    let s: f64 = hist.iter().sum();
    if s > 0.0 {
        hist.iter_mut().for_each(|v| *v /= s);
    }
    hist
}

pub const STATISTICAL_DIM: usize = 13;

/// Window-level trajectory statistics.
///
/// Layout: `[ln(1+count), mean x, std x, mean y, std y, ln(1+mean arc length),
/// ln(1+mean |net dx|), ln(1+mean |net dy|), quadrant fractions ×4,
/// ln(1+mean |net displacement|)]`. Coordinates are mapped to the original
/// frame and normalized by its width/height; lengths are in original pixels.
pub fn statistical_features(
    trajectories: &[Trajectory],
    frame_dims: (usize, usize),
    scale_factor: f64,
) -> [f64; STATISTICAL_DIM] {
    let mut out = [0.0; STATISTICAL_DIM];
    if trajectories.is_empty() {
        return out;
    }
    let (w, h) = (frame_dims.0 as f64, frame_dims.1 as f64);
    let (mut sx, mut sy, mut sxx, mut syy, mut npts) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut arc, mut ndx, mut ndy, mut nd) = (0.0, 0.0, 0.0, 0.0);
    let mut quadrants = [0.0f64; 4];
    for t in trajectories {
        let inv = 1.0 / scale_factor.powi(t.scale_level as i32);
        for p in &t.points {
            let (x, y) = (p[0] * inv / w, p[1] * inv / h);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            npts += 1.0;
        }
        arc += t.displacements.iter().map(|d| d[0].hypot(d[1])).sum::<f64>() * inv;
        let first = t.points[0];
        let last = t.points[t.points.len() - 1];
        let (dx, dy) = ((last[0] - first[0]) * inv, (last[1] - first[1]) * inv);
        ndx += dx.abs();
        ndy += dy.abs();
        nd += dx.hypot(dy);
        quadrants[quadrant(dx, dy)] += 1.0;
    }
    let n = trajectories.len() as f64;
    let (mx, my) = (sx / npts, sy / npts);
    out[0] = n.ln_1p();
    out[1] = mx;
    out[2] = (sxx / npts - mx * mx).max(0.0).sqrt();
    out[3] = my;
    out[4] = (syy / npts - my * my).max(0.0).sqrt();
    out[5] = (arc / n).ln_1p();
    out[6] = (ndx / n).ln_1p();
    out[7] = (ndy / n).ln_1p();
    for (o, q) in out[8..12].iter_mut().zip(quadrants) {
        *o = q / n;
    }
    out[12] = (nd / n).ln_1p();
    out
}

/// Closed quadrants numbered counter-clockwise from `(+, +)`; ties go to the lower index.
pub fn quadrant(dx: f64, dy: f64) -> usize {
    if dx >= 0.0 && dy >= 0.0 {
        0
    } else if dx <= 0.0 && dy >= 0.0 {
        1
    } else if dx <= 0.0 && dy <= 0.0 {
        2
    } else {
        3
    }
}

/// Camera-motion summary of one window before flattening.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraActivity {
    /// Translations divided by the sum of their magnitudes.
    pub normalized: Vec<[f64; 2]>,
    /// `|Σ Δc|` in pixels.
    pub net_displacement: f64,
    /// `Σ |Δc|` in pixels.
    pub path_length: f64,
    pub mean_step: f64,
    pub std_step: f64,
    /// Window means of (div, curl), (div, shear), (curl, shear).
    pub kinematic_pairs: [f64; 6],
}

impl CameraActivity {
    pub fn dim(span: usize) -> usize {
        2 * (span - 1) + 10
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.normalized.iter().flat_map(|p| *p).collect();
        v.push(self.net_displacement.ln_1p());
        v.push(self.path_length.ln_1p());
        v.push(self.mean_step);
        v.push(self.std_step);
        v.extend_from_slice(&self.kinematic_pairs);
        v
    }
}

/// Camera-activity feature from the `M` frame-to-frame translations of a
/// window and per-frame mean `(div, curl, shear)` of the global flow.
/// Only the first `M - 1` translations enter the normalized sequence.
pub fn camera_activity(translations: &[[f64; 2]], kinematic_means: &[[f64; 3]]) -> Result<CameraActivity> {
    if translations.len() < 2 {
        return Err(Error::Input(format!(
            "camera activity needs at least 2 translations, got {}",
            translations.len()
        )));
    }
    if kinematic_means.len() != translations.len() {
        return Err(Error::DimensionMismatch {
            expected: translations.len(),
            actual: kinematic_means.len(),
        });
    }
    let used = &translations[..translations.len() - 1];
    let norms: Vec<f64> = used.iter().map(|c| c[0].hypot(c[1])).collect();
    let path_length: f64 = norms.iter().sum();
    let normalized = if path_length < 1e-6 {
        vec![[0.0, 0.0]; used.len()]
    } else {
        used.iter().map(|c| [c[0] / path_length, c[1] / path_length]).collect()
    };
    let (sx, sy) = used.iter().fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
    let n = norms.len() as f64;
    let mean_step = path_length / n;
    let std_step = (norms.iter().map(|m| (m - mean_step).powi(2)).sum::<f64>() / n).sqrt();
    let k = kinematic_means.len() as f64;
    let mut mean = [0.0f64; 3];
    for m in kinematic_means {
        for (a, v) in mean.iter_mut().zip(m) {
            *a += v / k;
        }
    }
    let [div, curl, shear] = mean;
    Ok(CameraActivity {
        normalized,
        net_displacement: sx.hypot(sy),
        path_length,
        mean_step,
        std_step,
        kinematic_pairs: [div, curl, div, shear, curl, shear],
    })
}

/// Frame-wide mean of `(div, curl, shear)`.
pub fn mean_kinematics(g: &FlowGradients) -> [f64; 3] {
    let n = g.du_dx.len() as f64;
    let mut acc = [0.0f64; 3];
    for i in 0..g.du_dx.len() {
        let q = kinematic_quantities([g.du_dx[i], g.du_dy[i], g.dv_dx[i], g.dv_dy[i]]);
        acc[0] += q[0];
        acc[1] += q[1];
        acc[2] += q[2];
    }
    acc.map(|v| v / n)
}

/// Per-trajectory descriptor vectors, stored single-precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorBundle {
    pub shape: Vec<f32>,
    pub hog: Vec<f32>,
    pub hof: Vec<f32>,
    pub mbhx: Vec<f32>,
    pub mbhy: Vec<f32>,
    pub kinematic: Vec<f32>,
}

impl DescriptorBundle {
    pub fn channel(&self, c: Channel) -> &[f32] {
        match c {
            Channel::Shape => &self.shape,
            Channel::Hog => &self.hog,
            Channel::Hof => &self.hof,
            Channel::MbhX => &self.mbhx,
            Channel::MbhY => &self.mbhy,
            Channel::Kinematic => &self.kinematic,
        }
    }
}

pub(crate) fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Descriptor rows of one channel in the `DSC1` layout:
/// magic, channel id (u8), dim (u32), count (u64), then little-endian f32 rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorDump {
    pub channel: Channel,
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl DescriptorDump {
    pub fn new(channel: Channel, dim: usize) -> Self {
        Self {
            channel,
            dim,
            rows: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        self.rows.extend_from_slice(row);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.rows.chunks_exact(self.dim.max(1))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"DSC1")?;
        w.write_all(&[self.channel.id()])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.rows.len() * 4);
        for v in &self.rows {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut head = [0u8; 17];
        r.read_exact(&mut head)?;
        if &head[..4] != b"DSC1" {
            return Err(bad("bad DSC1 magic"));
        }
        let channel = Channel::from_id(head[4]).ok_or_else(|| bad("unknown channel id"))?;
        let dim = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[9..17].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; dim * count * 4];
        r.read_exact(&mut buf)?;
        let rows = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { channel, dim, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Appends rows to a DSC1 file without holding them in memory.
pub struct DescriptorDumpWriter {
    path: std::path::PathBuf,
    file: std::io::BufWriter<std::fs::File>,
    dim: usize,
    count: u64,
}

impl DescriptorDumpWriter {
    pub fn create(path: &Path, channel: Channel, dim: usize) -> Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut file = std::io::BufWriter::new(f);
        let mut head = Vec::with_capacity(17);
        head.extend_from_slice(b"DSC1");
        head.push(channel.id());
        head.extend_from_slice(&(dim as u32).to_le_bytes());
        head.extend_from_slice(&0u64.to_le_bytes());
        file.write_all(&head).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            dim,
            count: 0,
        })
    }

    /// Appends `rows` (flat, a multiple of `dim`).
    pub fn push_rows(&mut self, rows: &[f32]) -> Result<()> {
        if self.dim == 0 || rows.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: rows.len(),
            });
        }
        let mut buf = Vec::with_capacity(rows.len() * 4);
        for v in rows {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.count += (rows.len() / self.dim) as u64;
        Ok(())
    }

    /// Patches the row count into the header.
    pub fn finish(mut self) -> Result<u64> {
        use std::io::{Seek, SeekFrom};
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.file.flush().map_err(io)?;
        let mut f = self.file.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        f.seek(SeekFrom::Start(9)).map_err(io)?;
        f.write_all(&self.count.to_le_bytes()).map_err(io)?;
        Ok(self.count)
    }
}

/// Sequential reader over a DSC1 file.
pub struct DescriptorDumpReader {
    path: std::path::PathBuf,
    file: std::io::BufReader<std::fs::File>,
    pub channel: Channel,
    pub dim: usize,
    pub count: u64,
    read: u64,
}

impl DescriptorDumpReader {
    pub fn open(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut file = std::io::BufReader::new(f);
        let mut head = [0u8; 17];
        file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        if &head[..4] != b"DSC1" {
            return Err(Error::format(path, "bad DSC1 magic"));
        }
        let channel = Channel::from_id(head[4]).ok_or_else(|| Error::format(path, "unknown channel id"))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            channel,
            dim: u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize,
            count: u64::from_le_bytes(head[9..17].try_into().unwrap()),
            read: 0,
        })
    }

    /// Reads the next `n` rows into `out` (replacing its contents).
    pub fn read_rows(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        if self.read + n as u64 > self.count {
            return Err(Error::format(&self.path, "fewer descriptor rows than indexed"));
        }
        let mut buf = vec![0u8; n * self.dim * 4];
        self.file.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        out.clear();
        out.extend(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        self.read += n as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::flow_gradients;
    use crate::trajectory::Direction;

    fn static_traj(x: f64, y: f64) -> Trajectory {
        Trajectory::from_points(0, Direction::Forward, 0, vec![[x, y]; 16])
    }

    fn traj_with_steps(steps: &[[f64; 2]]) -> Trajectory {
        let mut pts = vec![[50.0, 50.0]];
        for s in steps {
            let p = *pts.last().unwrap();
            pts.push([p[0] + s[0], p[1] + s[1]]);
        }
        Trajectory::from_points(0, Direction::Forward, 0, pts)
    }

    #[test]
    fn streamed_dump_matches_in_memory_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hog.dsc");
        let mut w = DescriptorDumpWriter::create(&path, Channel::Hog, 3).unwrap();
        w.push_rows(&[1.0, 2.0, 3.0]).unwrap();
        w.push_rows(&[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        assert!(w.push_rows(&[1.0]).is_err());
        assert_eq!(w.finish().unwrap(), 3);
        let d = DescriptorDump::load(&path).unwrap();
        assert_eq!((d.channel, d.count()), (Channel::Hog, 3));
        let mut r = DescriptorDumpReader::open(&path).unwrap();
        let mut buf = Vec::new();
        r.read_rows(2, &mut buf).unwrap();
        assert_eq!(buf, d.rows[..6].to_vec());
        assert!(r.read_rows(2, &mut buf).is_err());
    }

    #[test]
    fn channel_dims_match_defaults() {
        let cfg = DescriptorConfig::default();
        let dims: Vec<usize> = Channel::ALL.iter().map(|c| c.dim(&cfg, 15)).collect();
        assert_eq!(dims, vec![30, 96, 108, 96, 96, 48]);
    }

    #[test]
    fn orientation_bins() {
        assert_eq!(orientation_bin(1.0, 0.0, 8), 0);
        assert_eq!(orientation_bin(0.0, 1.0, 8), 2);
        assert_eq!(orientation_bin(-1.0, 0.0, 8), 4);
        assert_eq!(orientation_bin(0.0, -1.0, 8), 6);
        assert_eq!(orientation_bin(1.0, -0.1, 8), 0);
    }

    #[test]
    fn shape_of_constant_and_alternating_steps() {
        let t = traj_with_steps(&[[1.0, 0.0]; 15]);
        let s = traj_shape(&t, 15).unwrap();
        for p in s.chunks(2) {
            assert!((p[0] - 1.0 / 15.0).abs() < 1e-15 && p[1] == 0.0);
        }
        let alt: Vec<[f64; 2]> = (0..15).map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [-1.0, 0.0] }).collect();
        let s = traj_shape(&traj_with_steps(&alt), 15).unwrap();
        assert!((s.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(traj_shape(&traj_with_steps(&alt[..4]), 15).is_err());
        assert!(traj_shape(&static_traj(3.0, 3.0), 15).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn volume_cells_at_centre_and_border() {
        let cfg = DescriptorConfig::default();
        let c = volume_cells(&static_traj(160.0, 120.0), (320, 240), &cfg);
        assert_eq!(c.num_cells(), 12);
        assert_eq!(c.frames.len(), 15);
        for t in 0..3 {
            for r in 0..2 {
                for col in 0..2 {
                    assert_eq!(c.cell_volume(t, r, col), 16 * 16 * 5);
                }
            }
        }
        let c = volume_cells(&static_traj(5.0, 5.0), (320, 240), &cfg);
        assert_eq!(c.num_cells(), 12);
        assert_eq!(c.frames[0].rects[0], CellRect { x0: 0, y0: 0, x1: 5, y1: 5 });
        assert_eq!(c.frames[0].rects[3], CellRect { x0: 5, y0: 5, x1: 21, y1: 21 });
        assert!(c.frames.iter().all(|f| f.rects == c.frames[0].rects));
    }

    fn fields_of(f: &OrientedField) -> Vec<&OrientedField> {
        vec![f; 15]
    }

    #[test]
    fn hog_of_constant_and_ramps() {
        let cfg = DescriptorConfig::default();
        let cells = volume_cells(&static_traj(32.0, 32.0), (64, 64), &cfg);
        let flat = OrientedField::hog(&GrayImage::constant(64, 64, 0.5), 8);
        assert!(hog_descriptor(&fields_of(&flat), &cells, &cfg).iter().all(|&v| v == 0.0));

        let ramp_x = OrientedField::hog(&GrayImage::from_fn(64, 64, |x, _| x as f32 / 64.0), 8);
        let hx = hog_descriptor(&fields_of(&ramp_x), &cells, &cfg);
        assert!((hx.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        for cell in hx.chunks(8) {
            assert!(cell[0] > 0.0 && cell[1..].iter().all(|&v| v == 0.0));
        }
        let ramp_y = OrientedField::hog(&GrayImage::from_fn(64, 64, |_, y| y as f32 / 64.0), 8);
        let hy = hog_descriptor(&fields_of(&ramp_y), &cells, &cfg);
        for (a, b) in hx.chunks(8).zip(hy.chunks(8)) {
            for k in 0..8 {
                assert!((a[k] - b[(k + 2) % 8]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hof_zero_and_uniform_flow() {
        let cfg = DescriptorConfig::default();
        let cells = volume_cells(&static_traj(32.0, 32.0), (64, 64), &cfg);
        let zero = OrientedField::hof(&FlowField::zeros(64, 64), 9, 0.4);
        let h = hof_descriptor(&fields_of(&zero), &cells, &cfg);
        assert_eq!(h.len(), 108);
        let nonzero: Vec<f64> = h.iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(nonzero.len(), 12);
        assert!(nonzero.iter().all(|&v| (v - nonzero[0]).abs() < 1e-15));
        assert!(h.chunks(9).all(|c| c[8] > 0.0));
        let right = OrientedField::hof(&FlowField::constant(64, 64, 2.0, 0.0), 9, 0.4);
        let h = hof_descriptor(&fields_of(&right), &cells, &cfg);
        assert!(h.chunks(9).all(|c| c[0] > 0.0 && c[1..].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mbh_cancels_constant_flow() {
        let cfg = DescriptorConfig::default();
        let cells = volume_cells(&static_traj(32.0, 32.0), (64, 64), &cfg);
        let g = flow_gradients(&FlowField::constant(64, 64, 5.0, 5.0)).unwrap();
        let (fx, fy) = OrientedField::mbh(&g, 8);
        let (x, y) = mbh_descriptor(&fields_of(&fx), &fields_of(&fy), &cells, &cfg);
        assert!(x.iter().chain(&y).all(|&v| v == 0.0));

        let g = flow_gradients(&FlowField::from_fn(64, 64, |x, _| (x as f32, 0.0))).unwrap();
        let (fx, fy) = OrientedField::mbh(&g, 8);
        let (x, y) = mbh_descriptor(&fields_of(&fx), &fields_of(&fy), &cells, &cfg);
        assert!(x.chunks(8).all(|c| c[0] > 0.0 && c[1..].iter().all(|&v| v == 0.0)));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kinematic_quantities_of_linear_fields() {
        assert_eq!(kinematic_quantities([1.0, 0.0, 0.0, 1.0]), [2.0, 0.0, 0.0, 0.0]);
        assert_eq!(kinematic_quantities([0.0, -1.0, 1.0, 0.0]), [0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn kinematic_rotation_invariance() {
        // Rotating the flow field by 90 degrees keeps div and curl and
        // maps (hyp1, hyp2) to (-hyp1, -hyp2).
        let g = [0.3f32, -0.7, 1.1, 0.2];
        let [ux, uy, vx, vy] = g;
        // u'(x,y) = -v(R^T p), v'(x,y) = u(R^T p) with R a 90° rotation.
        let rotated = [vy, -vx, -uy, ux];
        let a = kinematic_quantities(g);
        let b = kinematic_quantities(rotated);
        assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        assert!((a[2] + b[2]).abs() < 1e-6 && (a[3] + b[3]).abs() < 1e-6);
    }

    #[test]
    fn kinematic_bins_cover_signs() {
        assert_eq!(kinematic_bin(0.0), 5);
        assert_eq!(kinematic_bin(0.009), 5);
        assert_eq!(kinematic_bin(-0.009), 5);
        assert_eq!(kinematic_bin(0.02), 6);
        assert_eq!(kinematic_bin(-0.02), 4);
        assert_eq!(kinematic_bin(2.0), 10);
        assert_eq!(kinematic_bin(-2.0), 0);
        assert_eq!(kinematic_bin(7.0), 11);
        assert_eq!(kinematic_bin(f64::NAN), 11);
    }

    #[test]
    fn kinematic_descriptor_of_zero_flow() {
        let d = kinematic_descriptor(&[[0.0; 4]; 15]);
        assert_eq!(d.len(), 48);
        for q in 0..4 {
            assert!((d[q * 12 + 5] - 0.25).abs() < 1e-15);
        }
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn statistics_of_empty_and_single_quadrant() {
        assert_eq!(statistical_features(&[], (100, 100), 0.7), [0.0; 13]);
        let t = traj_with_steps(&[[2.0, 2.0]; 15]);
        let s = statistical_features(&vec![t; 10], (200, 200), 0.7);
        assert_eq!(&s[8..12], &[1.0, 0.0, 0.0, 0.0]);
        assert!((s[0] - 11f64.ln()).abs() < 1e-12);
        assert!((s[2] - s[4]).abs() < 1e-12);
    }

    #[test]
    fn statistics_quadrants_symmetric() {
        let ts: Vec<Trajectory> = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]
            .iter()
            .map(|d| traj_with_steps(&vec![[d[0] / 15.0, d[1] / 15.0]; 15]))
            .collect();
        let s = statistical_features(&ts, (100, 100), 0.7);
        for q in &s[8..12] {
            assert!((q - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn camera_activity_cases() {
        let km = vec![[0.0; 3]; 30];
        let c = camera_activity(&vec![[1.0, 0.0]; 30], &km).unwrap();
        assert_eq!(c.normalized.len(), 29);
        assert!(c.normalized.iter().all(|p| (p[0] - 1.0 / 29.0).abs() < 1e-15 && p[1] == 0.0));
        assert!((c.net_displacement - 29.0).abs() < 1e-12);
        assert_eq!(c.to_vector().len(), 68);

        let c = camera_activity(&vec![[0.0, 0.0]; 30], &km).unwrap();
        assert!(c.to_vector().iter().all(|&v| v == 0.0));

        let alt: Vec<[f64; 2]> = (0..30).map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [-1.0, 0.0] }).collect();
        let c = camera_activity(&alt, &km).unwrap();
        assert!(c.net_displacement == 0.0 || c.net_displacement == 1.0);
        assert!((c.path_length - 29.0).abs() < 1e-12);
        for (i, p) in c.normalized.iter().enumerate() {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((p[0] - s / 29.0).abs() < 1e-15);
        }
        assert!(camera_activity(&alt[..1], &km[..1]).is_err());
        assert!(camera_activity(&alt, &km[..3]).is_err());
    }

    #[test]
    fn dump_roundtrip() {
        let mut d = DescriptorDump::new(Channel::Hof, 3);
        d.push(&[1.0, 2.0, 3.0]).unwrap();
        d.push(&[4.0, 5.0, 6.0]).unwrap();
        assert!(d.push(&[1.0]).is_err());
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DSC1");
        assert_eq!(buf[4], 2);
        assert_eq!(buf.len(), 17 + 24);
        assert_eq!(DescriptorDump::read_from(&mut buf.as_slice()).unwrap(), d);
    }
}
