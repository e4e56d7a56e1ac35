//! Action annotations: inclusive, non-overlapping frame ranges with labels.

use std::path::Path;

use crate::error::{Error, Result};

pub const BACKGROUND: &str = "background";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: u32,
    pub end: u32,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActionAnnotation {
    pub segments: Vec<Segment>,
}

impl ActionAnnotation {
    /// Sorts the segments and checks they are well formed and disjoint.
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by_key(|s| s.start);
        for s in &segments {
            if s.start > s.end {
                return Err(Error::Input(format!("segment {}..{} ends before it starts", s.start, s.end)));
            }
            if s.label.trim().is_empty() {
                return Err(Error::Input(format!("segment {}..{} has an empty label", s.start, s.end)));
            }
        }
        for w in segments.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::Input(format!(
                    "segments {}..{} and {}..{} overlap",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(Self { segments })
    }

    /// Reads `start_frame,end_frame,label` CSV.
    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers().map_err(|e| Error::Input(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("annotation CSV lacks column '{name}'")))
        };
        let (cs, ce, cl) = (col("start_frame")?, col("end_frame")?, col("label")?);
        let mut segments = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
            let num = |c: usize| -> Result<u32> {
                rec.get(c)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Input(format!("annotation row {}: bad frame number", line + 2)))
            };
            segments.push(Segment {
                start: num(cs)?,
                end: num(ce)?,
                label: rec.get(cl).unwrap_or_default().to_string(),
            });
        }
        Self::new(segments)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn write_to(&self, w: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Input(e.to_string());
        wtr.write_record(["start_frame", "end_frame", "label"]).map_err(io)?;
        for s in &self.segments {
            wtr.write_record([s.start.to_string(), s.end.to_string(), s.label.clone()])
                .map_err(io)?;
        }
        wtr.flush().map_err(|e| Error::Input(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(f)
    }

    /// Index of the segment covering `frame`, if any.
    pub fn segment_index(&self, frame: u32) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.end < frame);
        (i < self.segments.len() && self.segments[i].start <= frame).then_some(i)
    }

    pub fn label_at(&self, frame: u32) -> &str {
        self.segment_index(frame)
            .map_or(BACKGROUND, |i| self.segments[i].label.as_str())
    }

    /// Label of every frame; uncovered frames are background.
    pub fn frame_labels(&self, frame_ids: &[u32]) -> Vec<String> {
        frame_ids.iter().map(|&f| self.label_at(f).to_string()).collect()
    }

    /// Positions `i` such that frames `i` and `i + 1` of `frame_ids` lie in
    /// different segments (unannotated gaps count as segments of their own).
    pub fn boundaries(&self, frame_ids: &[u32]) -> Vec<usize> {
        let seg: Vec<Option<usize>> = frame_ids.iter().map(|&f| self.segment_index(f)).collect();
        (0..frame_ids.len().saturating_sub(1))
            .filter(|&i| seg[i] != seg[i + 1])
            .collect()
    }

    /// Per-frame flag: true where a window of radius `margin` centred on the
    /// frame would contain both sides of an annotated boundary.
    pub fn near_boundary(&self, frame_ids: &[u32], margin: usize) -> Vec<bool> {
        let mut out = vec![false; frame_ids.len()];
        for b in self.boundaries(frame_ids) {
            // Frames b and b + 1 straddle the boundary; centres c with
            // c - margin <= b and c + margin >= b + 1 see both.
            let lo = (b + 1).saturating_sub(margin);
            let hi = (b + margin).min(frame_ids.len() - 1);
            out[lo..=hi].iter_mut().for_each(|v| *v = true);
        }
        out
    }
}
