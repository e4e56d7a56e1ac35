//! Synthetic egocentric-style clips: a textured patch following a motion
//! program over a textured background, seen by a jittering camera.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::AffineTransform;
use crate::pipeline::annotations::{ActionAnnotation, Segment};
use crate::pipeline::texture::ValueNoise;
use crate::video::{FrameSequence, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MotionKind {
    /// Patch slides left to right.
    TranslateRight,
    /// Patch circles around a fixed centre.
    Stir,
    /// Patch bobs vertically while tilting.
    Pour,
}

impl MotionKind {
    pub const ALL: [MotionKind; 3] = [MotionKind::TranslateRight, MotionKind::Stir, MotionKind::Pour];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::TranslateRight => "translate-right",
            MotionKind::Stir => "stir",
            MotionKind::Pour => "pour",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSpec {
    pub kind: MotionKind,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Rendered back to back, each with freshly drawn motion parameters.
    pub actions: Vec<ActionSpec>,
    pub patch_size: usize,
    /// Maximum per-frame camera shift in pixels (rotation scales with it).
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn single(kind: MotionKind, frames: usize, seed: u64) -> Self {
        Self {
            width: 112,
            height: 84,
            actions: vec![ActionSpec { kind, frames }],
            patch_size: 28,
            jitter: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.is_empty() || self.actions.iter().any(|a| a.frames == 0) {
            return Err(Error::Config("synthetic spec needs at least one non-empty action".into()));
        }
        if self.patch_size < 4 || self.width < 2 * self.patch_size + 8 || self.height < 2 * self.patch_size + 8 {
            return Err(Error::Config("frame too small for the patch".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config("jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// Patch pose in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchPose {
    pub cx: f64,
    pub cy: f64,
    pub angle: f64,
}

pub struct SyntheticVideo {
    pub frames: FrameSequence,
    pub annotation: ActionAnnotation,
    /// World-to-image transform of each frame.
    pub camera: Vec<AffineTransform>,
    pub patch: Vec<PatchPose>,
}

struct Program {
    kind: MotionKind,
    a: [f64; 6],
}

impl Program {
    fn draw(kind: MotionKind, frames: usize, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (spec.width as f64, spec.height as f64);
        let half = spec.patch_size as f64 / 2.0;
        let a = match kind {
            MotionKind::TranslateRight => {
                let lo = half + 2.0;
                let range = w - 2.0 * lo;
                let v = rng.random_range(1.0..1.3);
                let slack = (range - v * (frames.saturating_sub(1)) as f64).max(0.0);
                [lo, range, rng.random_range(0.0..=slack), v, h / 2.0 + rng.random_range(-6.0..6.0), 0.0]
            }
            MotionKind::Stir => {
                let max_r = (h / 2.0 - half - 4.0).min(18.0);
                [
                    w / 2.0 + rng.random_range(-6.0..6.0),
                    h / 2.0 + rng.random_range(-2.0..2.0),
                    rng.random_range(max_r * 0.8..=max_r),
                    rng.random_range(24.0..36.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    if rng.random::<bool>() { 1.0 } else { -1.0 },
                ]
            }
            MotionKind::Pour => {
                let max_a = (h / 2.0 - half - 6.0).min(16.0);
                [
                    w / 2.0 + rng.random_range(-8.0..8.0),
                    h / 2.0,
                    rng.random_range(max_a * 0.75..=max_a),
                    rng.random_range(24.0..36.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.25..0.4),
                ]
            }
        };
        Self { kind, a }
    }

    fn pose(&self, t: f64) -> PatchPose {
        let a = &self.a;
        match self.kind {
            MotionKind::TranslateRight => PatchPose {
                cx: a[0] + (a[2] + a[3] * t).rem_euclid(a[1]),
                cy: a[4],
                angle: 0.0,
            },
            MotionKind::Stir => {
                let phi = a[4] + a[5] * std::f64::consts::TAU * t / a[3];
                PatchPose {
                    cx: a[0] + a[2] * phi.cos(),
                    cy: a[1] + a[2] * phi.sin(),
                    angle: 0.0,
                }
            }
            MotionKind::Pour => {
                let s = (a[4] + std::f64::consts::TAU * t / a[3]).sin();
                PatchPose {
                    cx: a[0],
                    cy: a[1] + a[2] * s,
                    angle: a[5] * s,
                }
            }
        }
    }
}

pub fn render(spec: &SyntheticSpec) -> Result<SyntheticVideo> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = ValueNoise::new(spec.seed);
    let texture = ValueNoise::with_octaves(spec.seed ^ 0x5EED_F00D, vec![(6.0, 0.55), (3.0, 0.45)]);
    let half = spec.patch_size as f64 / 2.0;
    let centre = (spec.width as f64 / 2.0, spec.height as f64 / 2.0);

    let (mut frames, mut camera, mut patch, mut segments) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for action in &spec.actions {
        let program = Program::draw(action.kind, action.frames, spec, &mut rng);
        let start = frames.len() as u32 + 1;
        for t in 0..action.frames {
            let pose = program.pose(t as f64);
            let j = spec.jitter;
            let cam = AffineTransform::similarity(
                rng.random_range(-1.0..=1.0) * j * 0.3f64.to_radians(),
                1.0,
                centre,
                (rng.random_range(-1.0..=1.0) * j, rng.random_range(-1.0..=1.0) * j),
            );
            let inv = cam.inverse().ok_or_else(|| Error::Numerical("singular camera transform".into()))?;
            let (sin, cos) = pose.angle.sin_cos();
            let img = GrayImage::from_fn(spec.width, spec.height, |x, y| {
                let (wx, wy) = inv.apply(x as f64, y as f64);
                let (dx, dy) = (wx - pose.cx, wy - pose.cy);
                // Object coordinates: rotate the offset back by the patch angle.
                let (ox, oy) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let v = if ox.abs() <= half && oy.abs() <= half {
                    0.05 + 0.9 * texture.eval(ox + 100.0, oy + 100.0)
                } else {
                    0.25 + 0.5 * background.eval(wx, wy)
                };
                v as f32
            });
            // Quantize now so frames equal what a reload from disk yields.
            frames.push(GrayImage::from_u8(spec.width, spec.height, &img.to_u8())?);
            camera.push(cam);
            patch.push(pose);
        }
        segments.push(Segment {
            start,
            end: frames.len() as u32,
            label: action.kind.name().to_string(),
        });
    }
    let n = frames.len() as u32;
    Ok(SyntheticVideo {
        frames: FrameSequence::new(frames, (1..=n).collect())?,
        annotation: ActionAnnotation::new(segments)?,
        camera,
        patch,
    })
}

impl SyntheticVideo {
    /// Writes `frame_%06d.pgm`, `annotations.csv`, `camera.csv` and `patch.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames.save(dir, "frame_", "pgm")?;
        self.annotation.save(&dir.join("annotations.csv"))?;
        let path = dir.join("camera.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(&path, e.to_string());
        w.write_record(["frame", "a11", "a12", "tx", "a21", "a22", "ty"]).map_err(err)?;
        for (id, c) in self.frames.frame_ids().iter().zip(&self.camera) {
            let row = [c.a11, c.a12, c.tx, c.a21, c.a22, c.ty].map(|v| v.to_string());
            w.write_record(std::iter::once(id.to_string()).chain(row)).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("patch.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(&path, e.to_string());
        w.write_record(["frame", "cx", "cy", "angle"]).map_err(err)?;
        for (id, p) in self.frames.frame_ids().iter().zip(&self.patch) {
            w.write_record([id.to_string(), p.cx.to_string(), p.cy.to_string(), p.angle.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}
