//! Training (codebooks + SVM) from extraction directories, and prediction.

use std::collections::BTreeSet;
use std::path::Path;

use crate::classifier::{train_ovr, SvmModel};
use crate::descriptor::Channel;
use crate::encoding::{assemble_window_feature, kmeans, CodebookSet, Codebook, DescriptorSampler, WindowData};
use crate::error::{Error, Result};
use crate::pipeline::annotations::ActionAnnotation;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::store::{for_each_window, ExtractionReader};
use crate::segmentation::FlowHistogram;
use crate::video::FrameSequence;

/// Codebooks, classifier and the configuration they were built with.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub codebooks: CodebookSet,
    pub svm: SvmModel,
}

/// Rows fed to the classifier, for inspection and CSV export.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// `(video index, centre frame id)` per row.
    pub origins: Vec<(usize, u32)>,
    pub classes: Vec<String>,
    /// Windows dropped for being too close to an annotated boundary.
    pub excluded: usize,
}

impl TrainingSet {
    /// One window per row: `video,center_frame,f0..f{d-1},label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        let dim = self.features.first().map_or(0, Vec::len);
        let mut h = vec!["video".to_string(), "center_frame".to_string()];
        h.extend((0..dim).map(|i| format!("f{i}")));
        h.push("label".into());
        w.write_record(&h).map_err(err)?;
        for ((f, &l), (v, c)) in self.features.iter().zip(&self.labels).zip(&self.origins) {
            let mut row = vec![v.to_string(), c.to_string()];
            row.extend(f.iter().map(|x| x.to_string()));
            row.push(self.classes[l].clone());
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Keys that must agree between extraction and training/prediction.
fn extraction_keys() -> impl Iterator<Item = &'static str> {
    crate::pipeline::config::KEYS.iter().copied().filter(|k| {
        ["flow.", "tracking.", "descriptor.", "affine.", "window.span"]
            .iter()
            .any(|p| k.starts_with(p))
    })
}

/// Takes the extraction settings from `extracted` and everything else from `cfg`.
fn merge_extraction(cfg: &PipelineConfig, extracted: &PipelineConfig) -> PipelineConfig {
    let mut out = cfg.clone();
    out.extract = extracted.extract.clone();
    out.window_span = extracted.window_span;
    out
}

fn check_same_extraction(a: &PipelineConfig, b: &PipelineConfig, what: &Path) -> Result<()> {
    for k in extraction_keys() {
        if a.get(k) != b.get(k) {
            return Err(Error::Config(format!(
                "{}: extracted with {k}={} but {} expected",
                what.display(),
                b.get(k).unwrap_or_default(),
                a.get(k).unwrap_or_default()
            )));
        }
    }
    Ok(())
}

/// Per-window label and usability for one training video.
fn window_labels(reader: &ExtractionReader, ann: &ActionAnnotation, margin: usize) -> (Vec<String>, Vec<bool>) {
    let ids = reader.frame_ids();
    let near = ann.near_boundary(&ids, margin);
    (ann.frame_labels(&ids), near.into_iter().map(|b| !b).collect())
}

/// Builds codebooks on a sample of usable training descriptors, encodes
/// every usable window and trains the one-vs-rest SVM.
pub fn train(videos: &[(ExtractionReader, ActionAnnotation)], cfg: &PipelineConfig) -> Result<(ModelBundle, TrainingSet)> {
    let first = videos.first().ok_or_else(|| Error::Input("no training videos".into()))?;
    let cfg = merge_extraction(cfg, &first.0.config);
    cfg.validate()?;
    for (r, _) in videos {
        check_same_extraction(&cfg, &r.config, &r.dir)?;
    }
    let channels = cfg.channels();
    let margin = cfg.boundary_margin;
    let labelled: Vec<(Vec<String>, Vec<bool>)> = videos.iter().map(|(r, a)| window_labels(r, a, margin)).collect();

    let all_labels: BTreeSet<&str> = labelled.iter().flat_map(|(l, _)| l.iter().map(String::as_str)).collect();
    let classes: Vec<String> = all_labels.iter().map(|s| s.to_string()).collect();
    for c in &classes {
        let usable = labelled
            .iter()
            .flat_map(|(l, u)| l.iter().zip(u))
            .any(|(l, &u)| u && l == c);
        if !usable {
            return Err(Error::Input(format!("class '{c}' has no usable samples after boundary exclusion")));
        }
    }
    if classes.len() < 2 {
        return Err(Error::Input(format!("need at least two classes, found {classes:?}")));
    }

    // Pass 1: uniform descriptor sample per channel, codebooks.
    let l = cfg.extract.tracker.traj_length;
    let mut samplers: Vec<DescriptorSampler> = channels
        .iter()
        .map(|c| DescriptorSampler::new(c.dim(&cfg.extract.descriptor, l), cfg.sample_frac, cfg.kmeans.seed ^ c.id() as u64))
        .collect();
    for ((reader, _), (_, usable)) in videos.iter().zip(&labelled) {
        reader.for_each(&channels, |meta, w| {
            if usable[meta.window] {
                for (s, c) in samplers.iter_mut().zip(&channels) {
                    w.channels[c].chunks_exact(s.dim).for_each(|r| s.push(r));
                }
            }
            Ok(())
        })?;
    }
    let mut codebooks = CodebookSet::new();
    for (s, &c) in samplers.iter().zip(&channels) {
        codebooks.insert(c, kmeans(c, &s.rows, s.dim, &cfg.kmeans)?);
    }

    // Pass 2: window features.
    let mut set = TrainingSet {
        classes: classes.clone(),
        ..Default::default()
    };
    for (v, ((reader, _), (labels, usable))) in videos.iter().zip(&labelled).enumerate() {
        reader.for_each(&channels, |meta, w| {
            if !usable[meta.window] {
                set.excluded += 1;
                return Ok(());
            }
            let f = assemble_window_feature(&w, &codebooks, &cfg.encoding)?;
            set.features.push(f.values);
            set.labels.push(classes.iter().position(|c| *c == labels[meta.window]).expect("label in table"));
            set.origins.push((v, meta.center_frame));
            Ok(())
        })?;
    }
    let layout = cfg.encoding.layout(cfg.kmeans.k, first.0.windows[0].camera.len());
    let svm = train_ovr(&set.features, &set.labels, &classes, &layout.global_mask(), &cfg.train)?;
    Ok((
        ModelBundle {
            config: cfg,
            codebooks,
            svm,
        },
        set,
    ))
}

impl ModelBundle {
    /// Writes `config.ini`, `model.svm` and one `<channel>.cbk` per codebook.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(&dir.join("config.ini"))?;
        self.svm.save(&dir.join("model.svm"))?;
        for (c, cb) in &self.codebooks {
            cb.save(&dir.join(format!("{}.cbk", c.name())))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Input(format!("{} is not a model directory", dir.display())));
        }
        let config = PipelineConfig::load(&dir.join("config.ini"))?;
        let svm = SvmModel::load(&dir.join("model.svm"))?;
        let mut codebooks = CodebookSet::new();
        for c in config.channels() {
            let path = dir.join(format!("{}.cbk", c.name()));
            let cb = Codebook::load(&path)?;
            if cb.channel != c {
                return Err(Error::format(&path, "codebook channel mismatch"));
            }
            codebooks.insert(c, cb);
        }
        Ok(Self { config, codebooks, svm })
    }

    pub fn classify(&self, w: &WindowData) -> Result<(usize, Vec<f64>)> {
        let f = assemble_window_feature(w, &self.codebooks, &self.config.encoding)?;
        self.svm.predict(&f.values)
    }

    fn channels(&self) -> Vec<Channel> {
        self.config.channels()
    }
}

/// Per-frame labels and class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: Vec<String>,
    pub frame_ids: Vec<u32>,
    pub labels: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|&l| self.classes[l].clone()).collect()
    }

    /// `frame,label,score_<class>...`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        let mut h = vec!["frame".to_string(), "label".to_string()];
        h.extend(self.classes.iter().map(|c| format!("score_{c}")));
        w.write_record(&h).map_err(err)?;
        for ((id, &l), s) in self.frame_ids.iter().zip(&self.labels).zip(&self.scores) {
            let mut row = vec![id.to_string(), self.classes[l].clone()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        if headers.get(0) != Some("frame") || headers.get(1) != Some("label") {
            return Err(Error::format(path, "expected columns frame,label,score_..."));
        }
        let classes: Vec<String> = headers
            .iter()
            .skip(2)
            .map(|h| h.strip_prefix("score_").map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::format(path, "score columns must be named score_<class>"))?;
        if classes.is_empty() {
            return Err(Error::Input(format!("{}: prediction file carries no scores", path.display())));
        }
        let mut p = Prediction {
            classes,
            frame_ids: Vec::new(),
            labels: Vec::new(),
            scores: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = || Error::format(path, "malformed prediction row");
            p.frame_ids.push(rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
            let label = rec.get(1).ok_or_else(bad)?;
            p.labels.push(p.classes.iter().position(|c| c == label).ok_or_else(bad)?);
            let s: Vec<f64> = rec
                .iter()
                .skip(2)
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if s.len() != p.classes.len() {
                return Err(Error::Input(format!("{}: missing scores", path.display())));
            }
            p.scores.push(s);
        }
        Ok(p)
    }
}

fn check_frames(model: &ModelBundle, seq_cfg: &PipelineConfig, what: &Path) -> Result<()> {
    check_same_extraction(&model.config, seq_cfg, what)
}

/// Classifies every window of an extraction directory.
pub fn predict_extracted(model: &ModelBundle, reader: &ExtractionReader) -> Result<Prediction> {
    check_frames(model, &reader.config, &reader.dir)?;
    let mut p = Prediction {
        classes: model.svm.classes.clone(),
        frame_ids: Vec::new(),
        labels: Vec::new(),
        scores: Vec::new(),
    };
    reader.for_each(&model.channels(), |meta, w| {
        let (l, s) = model.classify(&w)?;
        p.frame_ids.push(meta.center_frame);
        p.labels.push(l);
        p.scores.push(s);
        Ok(())
    })?;
    Ok(p)
}

/// Extracts and classifies `seq` in one streaming pass; also returns the global HOFs.
pub fn predict_frames(model: &ModelBundle, seq: &FrameSequence) -> Result<(Prediction, Vec<FlowHistogram>)> {
    let channels = model.channels();
    let mut p = Prediction {
        classes: model.svm.classes.clone(),
        frame_ids: Vec::new(),
        labels: Vec::new(),
        scores: Vec::new(),
    };
    let hofs = for_each_window(seq, &model.config, |d, id| {
        let (l, s) = model.classify(&WindowData::from_descriptors(d, &channels))?;
        p.frame_ids.push(id);
        p.labels.push(l);
        p.scores.push(s);
        Ok(())
    })?;
    Ok((p, hofs))
}
