//! Frame I/O, grayscale images, scale pyramids and reflection-padded
//! sliding windows.
//!
//! Frames live on disk as `frame_%06d.pgm` or `frame_%06d.png`, 1-based.
//! RGB input is reduced to luma with 0.299/0.587/0.114 weights; all pixel
//! values are stored as `f32` in `[0, 1]`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Smallest pyramid level kept, in pixels per side.
pub const MIN_LEVEL_SIZE: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("empty image".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from a closure evaluated at every pixel; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at continuous coordinates, replicated borders.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    /// Resamples to `width`×`height` with pixel-centre-aligned bilinear interpolation.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                let fx = (x as f32 + 0.5) * sx - 0.5;
                data.push(self.sample(fx, fy).clamp(0.0, 1.0));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Quantizes to 8 bits, as stored on disk.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Self::new(width, height, data)
    }

    /// Writes the image as 8-bit PGM or PNG depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }

    /// Reads a PGM or PNG file, converting colour input to luma.
    pub fn load(path: &Path) -> Result<Self> {
        let decoded = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let data: Vec<f32> = match decoded {
            image::DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|p| p as f32 / 255.0).collect(),
            image::DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
            image::DynamicImage::ImageLuma16(g) => {
                g.into_raw().into_iter().map(|p| p as f32 / 65535.0).collect()
            }
            other => other
                .to_rgb8()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    ((0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0).clamp(0.0, 1.0)
                })
                .collect(),
        };
        GrayImage::new(w, h, data).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Bilinear interpolation on a row-major buffer with replicated borders.
#[inline]
pub(crate) fn bilinear(data: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = data[y0 * width + x0] * (1.0 - fx) + data[y0 * width + x1] * fx;
    let bottom = data[y1 * width + x0] * (1.0 - fx) + data[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Ordered frames of one video, all the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<GrayImage>,
    frame_ids: Vec<u32>,
}

impl FrameSequence {
    pub fn new(frames: Vec<GrayImage>, frame_ids: Vec<u32>) -> Result<Self> {
        if frames.len() != frame_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: frames.len(),
                actual: frame_ids.len(),
            });
        }
        if frames.len() < 2 {
            return Err(Error::Input(format!(
                "need at least 2 frames, found {}",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::Input(format!(
                "mixed dimensions: frame {} is {}x{}, expected {}x{}",
                frame_ids[i], f.width, f.height, dims.0, dims.1
            )));
        }
        if frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("frame ids must be strictly increasing".into()));
        }
        Ok(Self { frames, frame_ids })
    }

    /// Sequence with ids `1..=n`.
    pub fn from_frames(frames: Vec<GrayImage>) -> Result<Self> {
        let ids = (1..=frames.len() as u32).collect();
        Self::new(frames, ids)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn frame_ids(&self) -> &[u32] {
        &self.frame_ids
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Writes every frame as `<prefix><id:06>.<ext>` into `dir`.
    pub fn save(&self, dir: &Path, prefix: &str, ext: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames
            .par_iter()
            .zip(self.frame_ids.par_iter())
            .try_for_each(|(f, id)| f.save(&dir.join(format!("{prefix}{id:06}.{ext}"))))
    }
}

/// Splits a printf-style template such as `frame_%06d` into prefix and suffix.
fn split_template(pattern: &str) -> Result<(String, String)> {
    let start = pattern
        .find('%')
        .ok_or_else(|| Error::Config(format!("frame template '{pattern}' has no %d field")))?;
    let rest = &pattern[start..];
    let end = rest
        .find('d')
        .ok_or_else(|| Error::Config(format!("frame template '{pattern}' has no %d field")))?;
    Ok((pattern[..start].to_string(), rest[end + 1..].to_string()))
}

/// Loads `<prefix><index><suffix>.{pgm,png}` files from `dir`, sorted by index.
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<FrameSequence> {
    let (prefix, suffix) = split_template(pattern)?;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "pgm" | "png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some(digits) = stem
            .strip_prefix(prefix.as_str())
            .and_then(|s| s.strip_suffix(suffix.as_str()))
        else {
            continue;
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let Ok(index) = digits.parse::<u32>() else {
            continue;
        };
        found.push((index, path));
    }
    found.sort();
    if let Some(w) = found.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Input(format!(
            "duplicate frame index {} ({} and {})",
            w[0].0,
            w[0].1.display(),
            w[1].1.display()
        )));
    }
    if found.len() < 2 {
        return Err(Error::Input(format!(
            "{}: need at least 2 frames matching '{pattern}', found {}",
            dir.display(),
            found.len()
        )));
    }
    let frames = found
        .par_iter()
        .map(|(_, p)| GrayImage::load(p))
        .collect::<Result<Vec<_>>>()?;
    let dims = frames[0].dims();
    for ((_, path), f) in found.iter().zip(&frames) {
        if f.dims() != dims {
            return Err(Error::Input(format!(
                "mixed dimensions: {} is {}x{}, expected {}x{}",
                path.display(),
                f.width,
                f.height,
                dims.0,
                dims.1
            )));
        }
    }
    FrameSequence::new(frames, found.into_iter().map(|(i, _)| i).collect())
}

/// Multi-scale representation of one frame; level 0 is the input.
#[derive(Clone, Debug)]
pub struct ScalePyramid {
    pub levels: Vec<GrayImage>,
    pub scale_factor: f32,
}

impl ScalePyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Dimensions of every pyramid level kept for a `width`×`height` base image.
pub fn pyramid_dims(width: usize, height: usize, num_levels: usize, factor: f32) -> Vec<(usize, usize)> {
    let mut dims = vec![(width, height)];
    for i in 1..num_levels {
        let s = (factor as f64).powi(i as i32);
        let w = (width as f64 * s).round() as usize;
        let h = (height as f64 * s).round() as usize;
        if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
            break;
        }
        dims.push((w, h));
    }
    dims
}

pub fn build_pyramid(img: &GrayImage, num_levels: usize, factor: f32) -> Result<ScalePyramid> {
    if img.data.is_empty() {
        return Err(Error::Input("empty image".into()));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Config(format!("pyramid factor {factor} outside (0, 1)")));
    }
    if num_levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let dims = pyramid_dims(img.width, img.height, num_levels, factor);
    let mut levels = Vec::with_capacity(dims.len());
    levels.push(img.clone());
    for &(w, h) in &dims[1..] {
        let next = levels.last().unwrap().resize_bilinear(w, h);
        levels.push(next);
    }
    Ok(ScalePyramid {
        levels,
        scale_factor: factor,
    })
}

/// Maps an out-of-range index into `0..n` by mirror reflection without
/// repeating the boundary frame: `-1 -> 1`, `n -> n-2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r >= n as isize {
        (period - r) as usize
    } else {
        r as usize
    }
}

/// `M + 1` consecutive frames centred on one frame of a sequence.
#[derive(Clone, Debug)]
pub struct FrameWindow<'a> {
    pub center: usize,
    /// Positions in the source sequence, after reflection.
    pub indices: Vec<usize>,
    pub frames: Vec<&'a GrayImage>,
    pub frame_ids: Vec<u32>,
}

impl FrameWindow<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.indices.len() / 2
    }
}

/// Window of `span + 1` frames centred at sequence position `center`.
pub fn sliding_window(seq: &FrameSequence, center: usize, span: usize) -> Result<FrameWindow<'_>> {
    if center >= seq.len() {
        return Err(Error::Input(format!(
            "window centre {center} outside sequence of {} frames",
            seq.len()
        )));
    }
    if span % 2 != 0 {
        return Err(Error::Config(format!("window span {span} must be even")));
    }
    let half = (span / 2) as isize;
    let indices: Vec<usize> = (-half..=half)
        .map(|o| reflect_index(center as isize + o, seq.len()))
        .collect();
    Ok(FrameWindow {
        center,
        frames: indices.iter().map(|&i| &seq.frames[i]).collect(),
        frame_ids: indices.iter().map(|&i| seq.frame_ids[i]).collect(),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> FrameSequence {
        FrameSequence::from_frames((0..n).map(|_| GrayImage::constant(4, 4, 0.5)).collect()).unwrap()
    }

    #[test]
    fn pyramid_truncates_below_minimum() {
        let img = GrayImage::constant(320, 240, 0.3);
        let p = build_pyramid(&img, 8, std::f32::consts::FRAC_1_SQRT_2).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| l.dims()).collect();
        assert_eq!(dims, vec![(320, 240), (226, 170), (160, 120), (113, 85), (80, 60)]);
        for l in &p.levels {
            assert!(l.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn pyramid_of_minimum_size_has_one_level() {
        let img = GrayImage::constant(48, 48, 0.1);
        let p = build_pyramid(&img, 8, std::f32::consts::FRAC_1_SQRT_2).unwrap();
        assert_eq!(p.num_levels(), 1);
    }

    #[test]
    fn pyramid_rejects_bad_factor() {
        let img = GrayImage::constant(64, 64, 0.1);
        assert!(build_pyramid(&img, 3, 1.0).is_err());
        assert!(build_pyramid(&img, 0, 0.5).is_err());
    }

    #[test]
    fn interior_window() {
        let s = seq(100);
        let w = sliding_window(&s, 50, 30).unwrap();
        assert_eq!(w.indices, (35..=65).collect::<Vec<_>>());
    }

    #[test]
    fn border_window_reflects() {
        let s = seq(100);
        let w = sliding_window(&s, 0, 30).unwrap();
        let expected: Vec<usize> = (1..=15).rev().chain(0..=15).collect();
        assert_eq!(w.indices, expected);
        let rev: Vec<_> = w.indices.iter().rev().copied().collect();
        assert_eq!(rev, w.indices);
        let w = sliding_window(&s, 99, 30).unwrap();
        assert_eq!(w.indices[30], 84);
        assert_eq!(w.indices[16], 98);
    }

    #[test]
    fn exact_fit_window() {
        let s = seq(31);
        let w = sliding_window(&s, 15, 30).unwrap();
        assert_eq!(w.indices, (0..31).collect::<Vec<_>>());
    }

    #[test]
    fn window_errors() {
        let s = seq(10);
        assert!(sliding_window(&s, 10, 30).is_err());
        assert!(sliding_window(&s, 3, 29).is_err());
    }

    #[test]
    fn reflection_of_short_sequences_stays_in_range() {
        for n in 2..6 {
            for i in -40..40 {
                assert!(reflect_index(i, n) < n);
            }
        }
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
    }

    #[test]
    fn image_rejects_out_of_range_values() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0]).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_dimensions() {
        let r = FrameSequence::from_frames(vec![
            GrayImage::constant(4, 4, 0.0),
            GrayImage::constant(5, 4, 0.0),
        ]);
        assert!(r.unwrap_err().to_string().contains("mixed dimensions"));
    }

    #[test]
    fn template_split() {
        assert_eq!(
            split_template("frame_%06d").unwrap(),
            ("frame_".to_string(), String::new())
        );
        assert!(split_template("frame").is_err());
    }
}
