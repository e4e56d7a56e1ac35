//! Per-video extraction output: descriptor dumps plus CSV indexes.
//!
//! Directory layout:
//! - `config.ini`: configuration used for extraction
//! - `windows.csv`: one row per window with its globals
//! - `trajectories.csv`: one row per trajectory, in dump order
//! - `<channel>.dsc`: DSC1 descriptor rows for each channel
//! - `global_hof.csv`: per-frame global flow histogram

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::cache::{VideoCache, WindowDescriptors};
use crate::descriptor::{Channel, DescriptorDumpReader, DescriptorDumpWriter};
use crate::encoding::WindowData;
use crate::error::{Error, Result};
use crate::pipeline::config::PipelineConfig;
use crate::segmentation::FlowHistogram;
use crate::video::{sliding_window, FrameSequence};

/// Runs extraction over every window of `seq` (one per frame, in order) and
/// returns the per-frame global HOFs.
pub fn for_each_window(
    seq: &FrameSequence,
    cfg: &PipelineConfig,
    mut f: impl FnMut(&WindowDescriptors, u32) -> Result<()>,
) -> Result<Vec<FlowHistogram>> {
    cfg.validate()?;
    if seq.len() < 2 {
        return Err(Error::Input("need at least two frames".into()));
    }
    let mut cache = VideoCache::new(seq, &cfg.extract)?;
    for c in 0..seq.len() {
        let w = sliding_window(seq, c, cfg.window_span)?;
        let d = cache.extract_window(&w.indices, c)?;
        f(&d, seq.frame_ids()[c])?;
    }
    (0..seq.len())
        .map(|i| {
            cache
                .global_hofs()
                .get(&i)
                .cloned()
                .ok_or_else(|| Error::Numerical(format!("no global flow histogram for frame index {i}")))
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

fn fmt_row(prefix: impl IntoIterator<Item = String>, values: &[f64]) -> Vec<String> {
    prefix.into_iter().chain(values.iter().map(|v| v.to_string())).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExtractionSummary {
    pub windows: usize,
    pub trajectories: usize,
}

/// Extracts `seq` into `out`, which is created if needed.
pub fn extract_to_dir(seq: &FrameSequence, cfg: &PipelineConfig, out: &Path) -> Result<ExtractionSummary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.ini"))?;
    let l = cfg.extract.tracker.traj_length;
    let mut dumps = Channel::ALL
        .iter()
        .map(|&c| DescriptorDumpWriter::create(&out.join(format!("{}.dsc", c.name())), c, c.dim(&cfg.extract.descriptor, l)))
        .collect::<Result<Vec<_>>>()?;

    let wpath = out.join("windows.csv");
    let tpath = out.join("trajectories.csv");
    let mut windows = csv::Writer::from_path(&wpath).map_err(csv_err(&wpath))?;
    let mut trajs = csv::Writer::from_path(&tpath).map_err(csv_err(&tpath))?;
    trajs
        .write_record(["window", "position", "scale", "direction", "start_frame"])
        .map_err(csv_err(&tpath))?;
    let mut summary = ExtractionSummary::default();
    let mut header_done = false;

    let hofs = for_each_window(seq, cfg, |d, frame_id| {
        let camera = d.camera.to_vector();
        if !header_done {
            let mut h: Vec<String> = ["window", "center_frame", "window_len", "num_trajectories"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            h.extend((0..d.statistical.len()).map(|i| format!("stat_{i}")));
            h.extend((0..camera.len()).map(|i| format!("cam_{i}")));
            windows.write_record(&h).map_err(csv_err(&wpath))?;
            header_done = true;
        }
        let mut globals = d.statistical.to_vec();
        globals.extend_from_slice(&camera);
        let prefix = [d.center, frame_id as usize, d.window_len, d.trajectories.len()].map(|v| v.to_string());
        windows.write_record(fmt_row(prefix, &globals)).map_err(csv_err(&wpath))?;
        for (t, pos) in d.trajectories.iter().zip(d.positions()) {
            trajs
                .write_record([
                    d.center.to_string(),
                    pos.to_string(),
                    t.scale_level.to_string(),
                    t.direction.as_str().to_string(),
                    t.start_frame.to_string(),
                ])
                .map_err(csv_err(&tpath))?;
        }
        for (dump, &c) in dumps.iter_mut().zip(Channel::ALL.iter()) {
            let rows: Vec<f32> = d.bundles.iter().flat_map(|b| b.channel(c).iter().copied()).collect();
            dump.push_rows(&rows)?;
        }
        summary.windows += 1;
        summary.trajectories += d.trajectories.len();
        Ok(())
    })?;
    windows.flush().map_err(|e| Error::io(&wpath, e))?;
    trajs.flush().map_err(|e| Error::io(&tpath, e))?;
    for d in dumps {
        d.finish()?;
    }
    write_global_hofs(&out.join("global_hof.csv"), seq.frame_ids(), &hofs)?;
    Ok(summary)
}

pub fn write_global_hofs(path: &Path, frame_ids: &[u32], hofs: &[FlowHistogram]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let bins = hofs.first().map_or(0, |h| h.0.len());
    let mut h = vec!["frame".to_string()];
    h.extend((0..bins).map(|i| format!("h{i}")));
    w.write_record(&h).map_err(csv_err(path))?;
    for (id, hof) in frame_ids.iter().zip(hofs) {
        w.write_record(fmt_row([id.to_string()], &hof.0)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_global_hofs(path: &Path) -> Result<(Vec<u32>, Vec<FlowHistogram>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?;
    let expected = std::iter::once("frame".to_string()).chain((0..headers.len().saturating_sub(1)).map(|i| format!("h{i}")));
    if headers.len() < 2 || !headers.iter().eq(expected) {
        return Err(Error::format(path, "expected columns frame,h0,h1,..."));
    }
    let (mut ids, mut hofs) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let mut it = rec.iter();
        let id = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, "bad frame id"))?;
        let h = it
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, "bad histogram value"))?;
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::format(path, "histogram values must be finite and non-negative"));
        }
        ids.push(id);
        hofs.push(FlowHistogram(h));
    }
    Ok((ids, hofs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowMeta {
    pub window: usize,
    pub center_frame: u32,
    pub window_len: usize,
    pub num_trajectories: usize,
    pub statistical: Vec<f64>,
    pub camera: Vec<f64>,
}

/// Read access to an extraction directory.
pub struct ExtractionReader {
    pub dir: PathBuf,
    pub config: PipelineConfig,
    pub windows: Vec<WindowMeta>,
    positions: Vec<Vec<usize>>,
}

impl ExtractionReader {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Input(format!("{} is not an extraction directory", dir.display())));
        }
        let config = PipelineConfig::load(&dir.join("config.ini"))?;
        let wpath = dir.join("windows.csv");
        let mut r = csv::Reader::from_path(&wpath).map_err(csv_err(&wpath))?;
        let headers = r.headers().map_err(csv_err(&wpath))?.clone();
        let n_stat = headers.iter().filter(|h| h.starts_with("stat_")).count();
        let mut windows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err(&wpath))?;
            let bad = || Error::format(&wpath, "malformed window row");
            let ints: Vec<usize> = (0..4)
                .map(|i| rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad))
                .collect::<Result<_>>()?;
            let rest: Vec<f64> = rec
                .iter()
                .skip(4)
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if ints[0] != windows.len() {
                return Err(Error::format(&wpath, "windows out of order"));
            }
            windows.push(WindowMeta {
                window: ints[0],
                center_frame: ints[1] as u32,
                window_len: ints[2],
                num_trajectories: ints[3],
                statistical: rest[..n_stat].to_vec(),
                camera: rest[n_stat..].to_vec(),
            });
        }
        if windows.is_empty() {
            return Err(Error::Input(format!("{}: no windows", wpath.display())));
        }
        let tpath = dir.join("trajectories.csv");
        let mut r = csv::Reader::from_path(&tpath).map_err(csv_err(&tpath))?;
        let mut positions = vec![Vec::new(); windows.len()];
        for rec in r.records() {
            let rec = rec.map_err(csv_err(&tpath))?;
            let get = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(&tpath, "malformed trajectory row"))
            };
            let w = get(0)?;
            positions
                .get_mut(w)
                .ok_or_else(|| Error::format(&tpath, "trajectory references unknown window"))?
                .push(get(1)?);
        }
        for (w, p) in windows.iter().zip(&positions) {
            if w.num_trajectories != p.len() {
                return Err(Error::format(&tpath, format!("window {} trajectory count mismatch", w.window)));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            windows,
            positions,
        })
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.windows.iter().map(|w| w.center_frame).collect()
    }

    pub fn global_hofs(&self) -> Result<Vec<FlowHistogram>> {
        let path = self.dir.join("global_hof.csv");
        let (ids, hofs) = read_global_hofs(&path)?;
        if ids != self.frame_ids() {
            return Err(Error::format(&path, "frame ids differ from windows.csv"));
        }
        Ok(hofs)
    }

    /// Streams the windows in order with descriptors of `channels` loaded.
    pub fn for_each(&self, channels: &[Channel], mut f: impl FnMut(&WindowMeta, WindowData) -> Result<()>) -> Result<()> {
        let mut readers: BTreeMap<Channel, DescriptorDumpReader> = BTreeMap::new();
        let total: usize = self.windows.iter().map(|w| w.num_trajectories).sum();
        for &c in channels {
            let path = self.dir.join(format!("{}.dsc", c.name()));
            let r = DescriptorDumpReader::open(&path)?;
            if r.channel != c || r.count != total as u64 {
                return Err(Error::format(&path, "descriptor dump does not match the window index"));
            }
            readers.insert(c, r);
        }
        for (meta, pos) in self.windows.iter().zip(&self.positions) {
            let mut data = WindowData {
                center: meta.window,
                window_len: meta.window_len,
                positions: pos.clone(),
                channels: BTreeMap::new(),
                statistical: meta.statistical.clone(),
                camera: meta.camera.clone(),
            };
            for (&c, r) in readers.iter_mut() {
                let mut rows = Vec::new();
                r.read_rows(meta.num_trajectories, &mut rows)?;
                data.channels.insert(c, rows);
            }
            f(meta, data)?;
        }
        Ok(())
    }
}
