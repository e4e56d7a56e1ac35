//! Dense optical flow, median filtering and flow derivatives.

mod farneback;

use std::io::{Read, Write};
use std::path::Path;

pub use farneback::{dense_flow, FlowConfig};

use crate::error::{Error, Result};

/// Per-pixel displacement `(u, v)` from one frame to the next, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                out.u[y * width + x] = u;
                out.v[y * width + x] = v;
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Rescales displacements, e.g. when moving between pyramid levels.
    pub fn scaled(&self, s: f32) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|v| v * s).collect(),
            v: self.v.iter().map(|v| v * s).collect(),
        }
    }

    /// Writes the little-endian `FLO1` dump: magic, width, height, then `(u, v)` pairs.
    pub fn write_flo(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"FLO1")?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.len() * 8);
        for (u, v) in self.u.iter().zip(&self.v) {
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_flo(r: &mut impl Read) -> std::io::Result<FlowField> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != b"FLO1" {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad FLO1 magic"));
        }
        let width = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; width * height * 8];
        r.read_exact(&mut buf)?;
        let mut out = FlowField::zeros(width, height);
        for (i, c) in buf.chunks_exact(8).enumerate() {
            out.u[i] = f32::from_le_bytes(c[..4].try_into().unwrap());
            out.v[i] = f32::from_le_bytes(c[4..].try_into().unwrap());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_flo(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FlowField> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_flo(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Spatial derivatives of both flow components.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGradients {
    pub width: usize,
    pub height: usize,
    pub du_dx: Vec<f32>,
    pub du_dy: Vec<f32>,
    pub dv_dx: Vec<f32>,
    pub dv_dy: Vec<f32>,
}

impl FlowGradients {
    /// `(du_dx, du_dy, dv_dx, dv_dy)` at pixel `(x, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f32; 4] {
        let i = y * self.width + x;
        [self.du_dx[i], self.du_dy[i], self.dv_dx[i], self.dv_dy[i]]
    }
}

/// Replaces each component by its `k`×`k` median, replicating borders.
pub fn median_filter_flow(flow: &FlowField, k: usize) -> Result<FlowField> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::Config(format!("median kernel size {k} must be odd and >= 3")));
    }
    Ok(FlowField {
        width: flow.width,
        height: flow.height,
        u: median_plane(&flow.u, flow.width, flow.height, k),
        v: median_plane(&flow.v, flow.width, flow.height, k),
    })
}

fn median_plane(src: &[f32], width: usize, height: usize, k: usize) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0f32; src.len()];
    let mut buf = Vec::with_capacity(k * k);
    for y in 0..height as isize {
        for x in 0..width as isize {
            buf.clear();
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, height as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, width as isize - 1) as usize;
                    buf.push(src[yy * width + xx]);
                }
            }
            let mid = buf.len() / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            out[y as usize * width + x as usize] = *m;
        }
    }
    out
}

/// Central differences in the interior, one-sided differences on the border.
pub fn flow_gradients(flow: &FlowField) -> Result<FlowGradients> {
    let (w, h) = (flow.width, flow.height);
    if w < 3 || h < 3 {
        return Err(Error::Input(format!("flow field {w}x{h} too small for gradients")));
    }
    let (du_dx, du_dy) = plane_gradients(&flow.u, w, h);
    let (dv_dx, dv_dy) = plane_gradients(&flow.v, w, h);
    Ok(FlowGradients {
        width: w,
        height: h,
        du_dx,
        du_dy,
        dv_dx,
        dv_dy,
    })
}

fn plane_gradients(p: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; p.len()];
    let mut gy = vec![0.0f32; p.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x == 0 {
                p[i + 1] - p[i]
            } else if x == w - 1 {
                p[i] - p[i - 1]
            } else {
                (p[i + 1] - p[i - 1]) * 0.5
            };
            gy[i] = if y == 0 {
                p[i + w] - p[i]
            } else if y == h - 1 {
                p[i] - p[i - w]
            } else {
                (p[i + w] - p[i - w]) * 0.5
            };
        }
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_rejects_single_outlier() {
        let mut f = FlowField::constant(7, 7, 1.0, 0.0);
        f.u[3 * 7 + 3] = 100.0;
        let m = median_filter_flow(&f, 3).unwrap();
        assert!(m.u.iter().all(|&u| u == 1.0));
    }

    #[test]
    fn median_rejects_even_kernel() {
        let f = FlowField::zeros(5, 5);
        assert!(median_filter_flow(&f, 4).is_err());
        assert!(median_filter_flow(&f, 1).is_err());
    }

    #[test]
    fn median_of_checkerboard_matches_naive() {
        let f = FlowField::from_fn(9, 8, |x, y| (if (x + y) % 2 == 0 { 0.0 } else { 2.0 }, 0.0));
        let m = median_filter_flow(&f, 3).unwrap();
        for y in 1..7 {
            for x in 1..8 {
                let mut s: Vec<f32> = Vec::new();
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        s.push(f.u[yy * 9 + xx]);
                    }
                }
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(m.u[y * 9 + x], s[4]);
            }
        }
    }

    #[test]
    fn gradient_of_ramp_and_square() {
        let f = FlowField::from_fn(10, 6, |x, _| (x as f32, 0.0));
        let g = flow_gradients(&f).unwrap();
        for y in 1..5 {
            for x in 1..9 {
                assert_eq!(g.at(x, y), [1.0, 0.0, 0.0, 0.0]);
            }
        }
        let f = FlowField::from_fn(10, 6, |x, _| ((x * x) as f32, 0.0));
        let g = flow_gradients(&f).unwrap();
        assert_eq!(g.du_dx[2 * 10 + 5], 10.0);
    }

    #[test]
    fn gradient_requires_three_pixels() {
        assert!(flow_gradients(&FlowField::zeros(2, 5)).is_err());
    }

    #[test]
    fn flo_roundtrip() {
        let f = FlowField::from_fn(5, 3, |x, y| (x as f32 * 0.5, -(y as f32)));
        let mut buf = Vec::new();
        f.write_flo(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FLO1");
        assert_eq!(buf.len(), 12 + 5 * 3 * 8);
        assert_eq!(FlowField::read_flo(&mut buf.as_slice()).unwrap(), f);
    }
}
