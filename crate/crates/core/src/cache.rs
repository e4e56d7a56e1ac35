//! Per-video motion cache and window-level descriptor extraction.
//!
//! Flow, pyramids and per-pixel histogram votes are computed once per frame
//! (pair) and reused by every window that covers them. The cache only keeps
//! the frames of the window being processed; small per-pair results
//! (camera affine, translation, global HOF) are kept for the whole video.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::descriptor::{
    camera_activity, hof_descriptor, hog_descriptor, kinematic_descriptor, mbh_descriptor, mean_kinematics,
    statistical_features, to_f32, traj_shape, volume_cells, CameraActivity, DescriptorBundle, DescriptorConfig,
    OrientedField, STATISTICAL_DIM,
};
use crate::error::{Error, Result};
use crate::flow::{dense_flow, flow_gradients, median_filter_flow, FlowConfig, FlowField, FlowGradients};
use crate::motion::{camera_translation, cancel_head_motion, estimate_affine_with, AffineFitConfig, AffineTransform};
use crate::segmentation::{global_hof, FlowHistogram};
use crate::trajectory::{min_eigen_map, track_window, Direction, TrackerConfig, TrackingSource, Trajectory, TrajectorySet};
use crate::video::{build_pyramid, pyramid_dims, FrameSequence, FrameWindow, GrayImage};

/// Everything needed to turn frames into trajectories and descriptors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtractConfig {
    pub flow: FlowConfig,
    pub tracker: TrackerConfig,
    pub descriptor: DescriptorConfig,
    pub affine: AffineFitConfig,
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.descriptor.validate(self.tracker.traj_length)
    }
}

struct FrameData {
    levels: Vec<GrayImage>,
    eigen: Vec<Vec<f32>>,
    hog: Vec<OrientedField>,
}

struct PairData {
    track: Vec<FlowField>,
    hof: Vec<OrientedField>,
    mbhx: Vec<OrientedField>,
    mbhy: Vec<OrientedField>,
    grads: Vec<FlowGradients>,
}

/// Global motion between two frames, measured at full resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMotion {
    pub affine: AffineTransform,
    pub translation: [f64; 2],
    /// Frame means of (div, curl, shear) of the raw flow.
    pub kinematic_means: [f64; 3],
}

pub struct VideoCache<'a> {
    seq: &'a FrameSequence,
    cfg: ExtractConfig,
    dims: Vec<(usize, usize)>,
    frames: BTreeMap<usize, FrameData>,
    pairs: BTreeMap<(usize, usize), PairData>,
    motion: BTreeMap<(usize, usize), PairMotion>,
    hofs: BTreeMap<usize, FlowHistogram>,
}

impl<'a> VideoCache<'a> {
    pub fn new(seq: &'a FrameSequence, cfg: &ExtractConfig) -> Result<Self> {
        cfg.validate()?;
        let (w, h) = seq.dims();
        let dims = pyramid_dims(w, h, cfg.tracker.num_scales, cfg.tracker.scale_factor);
        Ok(Self {
            seq,
            cfg: cfg.clone(),
            dims,
            frames: BTreeMap::new(),
            pairs: BTreeMap::new(),
            motion: BTreeMap::new(),
            hofs: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExtractConfig {
        &self.cfg
    }

    pub fn sequence(&self) -> &FrameSequence {
        self.seq
    }

    /// Makes every frame of `indices` and every consecutive pair (both
    /// playback directions) available, dropping data no longer needed.
    pub fn prepare(&mut self, indices: &[usize]) -> Result<()> {
        let need_frames: BTreeSet<usize> = indices.iter().copied().collect();
        let mut need_pairs = BTreeSet::new();
        for w in indices.windows(2) {
            need_pairs.insert((w[0], w[1]));
            need_pairs.insert((w[1], w[0]));
        }
        self.frames.retain(|k, _| need_frames.contains(k));
        self.pairs.retain(|k, _| need_pairs.contains(k));

        let missing: Vec<usize> = need_frames.iter().copied().filter(|k| !self.frames.contains_key(k)).collect();
        let built: Vec<(usize, FrameData)> = missing
            .into_par_iter()
            .map(|i| self.build_frame(i).map(|d| (i, d)))
            .collect::<Result<_>>()?;
        self.frames.extend(built);

        let missing: Vec<(usize, usize)> = need_pairs.iter().copied().filter(|k| !self.pairs.contains_key(k)).collect();
        let built: Vec<((usize, usize), PairData, Option<(PairMotion, FlowHistogram)>)> = missing
            .into_par_iter()
            .map(|p| self.build_pair(p).map(|(d, m)| (p, d, m)))
            .collect::<Result<_>>()?;
        let last = self.seq.len() - 1;
        for (p, d, m) in built {
            if let Some((motion, hof)) = m {
                self.motion.insert(p, motion);
                if p.1 == p.0 + 1 {
                    if p.1 == last {
                        self.hofs.insert(p.1, hof.clone());
                    }
                    self.hofs.insert(p.0, hof);
                }
            }
            self.pairs.insert(p, d);
        }
        Ok(())
    }

    fn build_frame(&self, i: usize) -> Result<FrameData> {
        let frame = self.seq.frames().get(i).ok_or_else(|| Error::Input(format!("frame index {i} out of range")))?;
        let pyr = build_pyramid(frame, self.dims.len(), self.cfg.tracker.scale_factor)?;
        let eigen = pyr.levels.iter().map(min_eigen_map).collect();
        let hog = pyr
            .levels
            .iter()
            .map(|l| OrientedField::hog(l, self.cfg.descriptor.hog_bins))
            .collect();
        Ok(FrameData {
            levels: pyr.levels,
            eigen,
            hog,
        })
    }

    fn build_pair(&self, (a, b): (usize, usize)) -> Result<(PairData, Option<(PairMotion, FlowHistogram)>)> {
        let (fa, fb) = (&self.frames[&a], &self.frames[&b]);
        let dc = &self.cfg.descriptor;
        let mut data = PairData {
            track: Vec::new(),
            hof: Vec::new(),
            mbhx: Vec::new(),
            mbhy: Vec::new(),
            grads: Vec::new(),
        };
        let mut global = None;
        for s in 0..self.dims.len() {
            let raw = dense_flow(&fa.levels[s], &fb.levels[s], &self.cfg.flow)?;
            let grads = flow_gradients(&raw)?;
            let (mx, my) = OrientedField::mbh(&grads, dc.mbh_bins);
            data.track.push(median_filter_flow(&raw, self.cfg.tracker.median_kernel)?);
            data.hof.push(OrientedField::hof(&raw, dc.hof_bins, dc.zero_flow_thresh));
            data.mbhx.push(mx);
            data.mbhy.push(my);
            if s == 0 && !self.motion.contains_key(&(a, b)) {
                let affine = estimate_affine_with(&raw, None, &self.cfg.affine)?;
                let (tx, ty) = camera_translation(&affine, self.dims[0]);
                let motion = PairMotion {
                    affine,
                    translation: [tx, ty],
                    kinematic_means: mean_kinematics(&grads),
                };
                global = Some((motion, global_hof(&raw, dc.hof_bins, dc.zero_flow_thresh)));
            }
            data.grads.push(grads);
        }
        Ok((data, global))
    }

    /// Full-resolution motion of a prepared (or previously prepared) pair.
    pub fn pair_motion(&self, from: usize, to: usize) -> Option<&PairMotion> {
        self.motion.get(&(from, to))
    }

    /// Global HOF of every frame seen so far, keyed by sequence index.
    pub fn global_hofs(&self) -> &BTreeMap<usize, FlowHistogram> {
        &self.hofs
    }

    /// Tracks and describes the window centred at sequence index `center`.
    pub fn extract_window(&mut self, indices: &[usize], center: usize) -> Result<WindowDescriptors> {
        let l = self.cfg.tracker.traj_length;
        if indices.len() < l + 1 {
            return Err(Error::Input(format!(
                "window of {} frames shorter than trajectory length {} + 1",
                indices.len(),
                l
            )));
        }
        self.prepare(indices)?;
        let set = track_window(&*self, indices, center, &self.cfg.tracker);
        let reversed: Vec<usize> = indices.iter().rev().copied().collect();
        let this = &*self;
        let bundles: Vec<DescriptorBundle> = set
            .trajectories
            .par_iter()
            .map(|t| {
                let order = match t.direction {
                    Direction::Forward => indices,
                    Direction::Backward => reversed.as_slice(),
                };
                this.describe(t, &order[t.start_frame..=t.start_frame + l])
            })
            .collect::<Result<_>>()?;

        let mut translations = Vec::with_capacity(indices.len() - 1);
        let mut kinematics = Vec::with_capacity(indices.len() - 1);
        for w in indices.windows(2) {
            let m = self.motion[&(w[0], w[1])];
            translations.push(m.translation);
            kinematics.push(m.kinematic_means);
        }
        let camera = camera_activity(&translations, &kinematics)?;
        let statistical = statistical_features(&set.trajectories, self.dims[0], self.cfg.tracker.scale_factor as f64);
        Ok(WindowDescriptors {
            center,
            window_len: indices.len(),
            trajectories: set.trajectories,
            bundles,
            statistical,
            camera,
        })
    }

    /// All descriptors of one trajectory; `frames` are the sequence indices
    /// of its `L + 1` points in playback order.
    fn describe(&self, t: &Trajectory, frames: &[usize]) -> Result<DescriptorBundle> {
        let s = t.scale_level;
        let l = t.len();
        let dc = &self.cfg.descriptor;
        let cells = volume_cells(t, self.dims[s], dc);
        let hog: Vec<&OrientedField> = frames[..l].iter().map(|f| &self.frames[f].hog[s]).collect();
        let pairs: Vec<&PairData> = frames.windows(2).map(|w| &self.pairs[&(w[0], w[1])]).collect();
        let hof: Vec<&OrientedField> = pairs.iter().map(|p| &p.hof[s]).collect();
        let mbhx: Vec<&OrientedField> = pairs.iter().map(|p| &p.mbhx[s]).collect();
        let mbhy: Vec<&OrientedField> = pairs.iter().map(|p| &p.mbhy[s]).collect();
        let (mx, my) = mbh_descriptor(&mbhx, &mbhy, &cells, dc);

        let (w, h) = self.dims[s];
        let samples: Vec<[f32; 4]> = pairs
            .iter()
            .zip(&t.points)
            .map(|(p, q)| {
                let x = (q[0].round().max(0.0) as usize).min(w - 1);
                let y = (q[1].round().max(0.0) as usize).min(h - 1);
                p.grads[s].at(x, y)
            })
            .collect();

        let affines: Vec<AffineTransform> = frames.windows(2).map(|w| self.motion[&(w[0], w[1])].affine).collect();
        let compensated = cancel_head_motion(t, &affines, self.cfg.tracker.level_scale(s))?;
        Ok(DescriptorBundle {
            shape: to_f32(traj_shape(&compensated, l)?),
            hog: to_f32(hog_descriptor(&hog, &cells, dc)),
            hof: to_f32(hof_descriptor(&hof, &cells, dc)),
            mbhx: to_f32(mx),
            mbhy: to_f32(my),
            kinematic: to_f32(kinematic_descriptor(&samples)),
        })
    }
}

impl TrackingSource for VideoCache<'_> {
    fn num_scales(&self) -> usize {
        self.dims.len()
    }

    fn frame_dims(&self, scale: usize) -> (usize, usize) {
        self.dims[scale]
    }

    fn eigen_map(&self, scale: usize, frame: usize) -> &[f32] {
        &self.frames[&frame].eigen[scale]
    }

    fn tracking_flow(&self, scale: usize, from: usize, to: usize) -> &FlowField {
        &self.pairs[&(from, to)].track[scale]
    }
}

/// Trajectories of one window with their descriptors and the window globals.
#[derive(Clone, Debug)]
pub struct WindowDescriptors {
    pub center: usize,
    pub window_len: usize,
    pub trajectories: Vec<Trajectory>,
    pub bundles: Vec<DescriptorBundle>,
    pub statistical: [f64; STATISTICAL_DIM],
    pub camera: CameraActivity,
}

impl WindowDescriptors {
    /// Window position (forward time) of each trajectory's first frame.
    pub fn positions(&self) -> Vec<usize> {
        self.trajectories.iter().map(|t| t.window_position(self.window_len)).collect()
    }
}

/// Forward and reversed-playback trajectories of a standalone window.
/// Flow is computed afresh on the window's frames in both directions.
pub fn extract_bidirectional(window: &FrameWindow, cfg: &TrackerConfig) -> Result<TrajectorySet> {
    if window.len() < cfg.traj_length + 1 {
        return Err(Error::Input(format!(
            "window of {} frames shorter than trajectory length {} + 1",
            window.len(),
            cfg.traj_length
        )));
    }
    let seq = FrameSequence::from_frames(window.frames.iter().map(|f| (*f).clone()).collect())?;
    let ecfg = ExtractConfig {
        tracker: cfg.clone(),
        ..Default::default()
    };
    let mut cache = VideoCache::new(&seq, &ecfg)?;
    let indices: Vec<usize> = (0..seq.len()).collect();
    cache.prepare(&indices)?;
    let mut set = track_window(&cache, &indices, window.center, cfg);
    set.window_center = window.center;
    Ok(set)
}
