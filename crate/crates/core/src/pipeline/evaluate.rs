//! MRF smoothing of predictions and accuracy reports.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::annotations::ActionAnnotation;
use crate::pipeline::model::Prediction;
use crate::segmentation::{build_mrf, minimize_labeling, FlowHistogram};

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub classes: Vec<String>,
    pub frame_ids: Vec<u32>,
    pub predicted: Vec<usize>,
    pub smoothed: Vec<usize>,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Smooths per-frame predictions with the contrast-sensitive Potts MRF.
pub fn segment(pred: &Prediction, hofs: &[FlowHistogram], lambda: f64, radius: usize) -> Result<Segmentation> {
    if pred.scores.iter().any(|s| s.len() != pred.classes.len()) {
        return Err(Error::Input("predictions lack full score vectors".into()));
    }
    let p = build_mrf(&pred.scores, hofs, lambda, radius)?;
    let init = p.argmax_labels();
    let sol = minimize_labeling(&p, Some(&init))?;
    let (before, after) = (p.energy(&init), sol.energy());
    if after > before + 1e-9 * before.abs().max(1.0) {
        return Err(Error::Numerical(format!("smoothing raised the energy from {before} to {after}")));
    }
    Ok(Segmentation {
        classes: pred.classes.clone(),
        frame_ids: pred.frame_ids.clone(),
        predicted: init,
        smoothed: sol.labels,
        energy_before: before,
        energy_after: after,
    })
}

impl Segmentation {
    /// `frame,predicted_label,smoothed_label`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["frame", "predicted_label", "smoothed_label"]).map_err(err)?;
        for ((id, &a), &b) in self.frame_ids.iter().zip(&self.predicted).zip(&self.smoothed) {
            w.write_record([id.to_string(), self.classes[a].clone(), self.classes[b].clone()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Frame labels read back from a prediction or segmentation CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTrack {
    pub frame_ids: Vec<u32>,
    pub predicted: Vec<String>,
    pub smoothed: Option<Vec<String>>,
}

impl LabelTrack {
    /// Accepts `frame,label,...` (predict output) or
    /// `frame,predicted_label,smoothed_label` (segment output).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        let col = |n: &str| headers.iter().position(|h| h == n);
        let frame = col("frame").ok_or_else(|| Error::format(path, "missing frame column"))?;
        let (pc, sc) = match (col("predicted_label"), col("smoothed_label"), col("label")) {
            (Some(p), Some(s), _) => (p, Some(s)),
            (_, _, Some(l)) => (l, None),
            _ => return Err(Error::format(path, "missing label column")),
        };
        let mut t = LabelTrack {
            frame_ids: Vec::new(),
            predicted: Vec::new(),
            smoothed: sc.map(|_| Vec::new()),
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = || Error::format(path, "malformed row");
            t.frame_ids.push(rec.get(frame).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
            t.predicted.push(rec.get(pc).ok_or_else(bad)?.to_string());
            if let (Some(c), Some(s)) = (sc, t.smoothed.as_mut()) {
                s.push(rec.get(c).ok_or_else(bad)?.to_string());
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Row/column order of `confusion`.
    pub labels: Vec<String>,
    pub frames: usize,
    pub frame_accuracy: f64,
    pub segments: usize,
    /// Majority vote of frame predictions per annotated segment; `None` without segments.
    pub segment_accuracy: Option<f64>,
    pub post_mrf_accuracy: Option<f64>,
    /// `confusion[truth][predicted]` over frames, before smoothing.
    pub confusion: Vec<Vec<usize>>,
}

fn accuracy(truth: &[String], pred: &[String]) -> f64 {
    let ok = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    ok as f64 / truth.len() as f64
}

/// Most frequent label; ties go to the label sorting first.
fn majority<'a>(labels: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    let mut counts: std::collections::BTreeMap<&String, usize> = Default::default();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(l, _)| l)
}

pub fn evaluate(track: &LabelTrack, ann: &ActionAnnotation) -> Result<EvalReport> {
    let n = track.frame_ids.len();
    if n == 0 {
        return Err(Error::Input("no predicted frames".into()));
    }
    if track.frame_ids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("predicted frame ids must be strictly increasing".into()));
    }
    let (lo, hi) = (track.frame_ids[0], track.frame_ids[n - 1]);
    if let Some(s) = ann.segments.iter().find(|s| s.start < lo || s.end > hi) {
        return Err(Error::Input(format!(
            "annotated segment {}..{} lies outside predicted frames {lo}..{hi}",
            s.start, s.end
        )));
    }
    let truth = ann.frame_labels(&track.frame_ids);
    let labels: Vec<String> = truth
        .iter()
        .chain(&track.predicted)
        .chain(track.smoothed.iter().flatten())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .cloned()
        .collect();
    let idx = |l: &String| labels.binary_search(l).expect("label collected");
    let mut confusion = vec![vec![0; labels.len()]; labels.len()];
    for (t, p) in truth.iter().zip(&track.predicted) {
        confusion[idx(t)][idx(p)] += 1;
    }
    let mut correct_segments = 0;
    for s in &ann.segments {
        let votes = track
            .frame_ids
            .iter()
            .zip(&track.predicted)
            .filter(|(f, _)| (s.start..=s.end).contains(*f))
            .map(|(_, p)| p);
        if majority(votes).is_some_and(|m| *m == s.label) {
            correct_segments += 1;
        }
    }
    let segments = ann.segments.len();
    Ok(EvalReport {
        labels,
        frames: n,
        frame_accuracy: accuracy(&truth, &track.predicted),
        segments,
        segment_accuracy: (segments > 0).then(|| correct_segments as f64 / segments as f64),
        post_mrf_accuracy: track.smoothed.as_ref().map(|s| accuracy(&truth, s)),
        confusion,
    })
}

impl EvalReport {
    /// `key=value` summary lines followed by the confusion matrix as CSV.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let mut s = format!(
            "frames={}\nframe_accuracy={:.6}\nsegments={}\nsegment_accuracy={}\npost_mrf_accuracy={}\n\nconfusion (rows: truth, columns: predicted)\ntruth",
            self.frames,
            self.frame_accuracy,
            self.segments,
            opt(self.segment_accuracy),
            opt(self.post_mrf_accuracy)
        );
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            s.push_str(l);
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::annotations::Segment;

    fn track(pred: &[&str]) -> LabelTrack {
        LabelTrack {
            frame_ids: (1..=pred.len() as u32).collect(),
            predicted: pred.iter().map(|s| s.to_string()).collect(),
            smoothed: None,
        }
    }

    fn ann(segs: &[(u32, u32, &str)]) -> ActionAnnotation {
        ActionAnnotation::new(
            segs.iter()
                .map(|&(start, end, l)| Segment {
                    start,
                    end,
                    label: l.into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let a = ann(&[(1, 5, "a"), (6, 10, "b")]);
        let r = evaluate(&track(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]), &a).unwrap();
        assert_eq!((r.frame_accuracy, r.segment_accuracy), (1.0, Some(1.0)));
        assert_eq!(r.confusion, vec![vec![5, 0], vec![0, 5]]);
    }

    #[test]
    fn ten_wrong_of_hundred() {
        let mut p = vec!["a"; 100];
        p[..10].iter_mut().for_each(|v| *v = "b");
        let r = evaluate(&track(&p), &ann(&[(1, 100, "a")])).unwrap();
        assert!((r.frame_accuracy - 0.9).abs() < 1e-12);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 100);
        assert_eq!(r.confusion[0].iter().sum::<usize>(), 100);
    }

    #[test]
    fn segment_majority() {
        let mut p = vec!["a"; 11];
        p.extend(vec!["b"; 9]);
        let r = evaluate(&track(&p), &ann(&[(1, 20, "a")])).unwrap();
        assert_eq!(r.segment_accuracy, Some(1.0));
        assert!((r.frame_accuracy - 0.55).abs() < 1e-12);
    }

    #[test]
    fn background_and_range_checks() {
        let r = evaluate(&track(&["background", "a", "a"]), &ann(&[(2, 3, "a")])).unwrap();
        assert_eq!(r.frame_accuracy, 1.0);
        assert_eq!(r.labels, vec!["a".to_string(), "background".to_string()]);
        assert!(evaluate(&track(&["a", "a"]), &ann(&[(1, 5, "a")])).is_err());
    }

    fn prediction(scores: Vec<Vec<f64>>) -> Prediction {
        Prediction {
            classes: vec!["x".into(), "y".into()],
            frame_ids: (1..=scores.len() as u32).collect(),
            labels: scores.iter().map(|s| usize::from(s[1] > s[0])).collect(),
            scores,
        }
    }

    #[test]
    fn segment_lambda_extremes() {
        let scores: Vec<Vec<f64>> = (0..12)
            .map(|i| if i % 5 == 2 { vec![-0.1, 0.1] } else { vec![1.0, -1.0] })
            .collect();
        let hofs = vec![FlowHistogram(vec![0.0, 1.0]); 12];
        let p = prediction(scores);
        let s0 = segment(&p, &hofs, 0.0, 5).unwrap();
        assert_eq!(s0.smoothed, p.labels);
        let big = segment(&p, &hofs, 1e4, 5).unwrap();
        assert!(big.smoothed.iter().all(|&l| l == 0));
        assert!(big.energy_after <= big.energy_before);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.csv");
        big.write_csv(&path).unwrap();
        let t = LabelTrack::read_csv(&path).unwrap();
        assert_eq!(t.smoothed.unwrap(), vec!["x".to_string(); 12]);
    }

    #[test]
    fn prediction_csv_roundtrip() {
        let p = prediction(vec![vec![0.5, -0.5], vec![-0.25, 0.25]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(Prediction::read_csv(&path).unwrap(), p);
        assert_eq!(LabelTrack::read_csv(&path).unwrap().predicted, vec!["x", "y"]);
    }
}
