// Farnebäck two-frame motion estimation based on polynomial expansion.
//
// Each frame is locally approximated by f(z) ~ z'Az + b'z + c using a
// Gaussian-weighted least-squares fit over a (2n+1)^2 neighbourhood. A
// translation d between the frames satisfies A d = -(b2 - b1) / 2; this
// constraint is accumulated over a box window and solved per pixel, refined
// iteratively and coarse-to-fine over an image pyramid.

use nalgebra::{SMatrix, SVector};

use super::FlowField;
use crate::error::{Error, Result};
use crate::imgproc::{box_blur, correlate_cols, correlate_rows, gaussian_blur};
use crate::video::{bilinear, GrayImage};

/// Parameters of the dense flow solver.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Internal pyramid levels.
    pub levels: usize,
    pub pyr_scale: f32,
    /// Side of the box window the displacement constraints are averaged over.
    pub window: usize,
    pub iterations: usize,
    /// Neighbourhood radius of the polynomial fit.
    pub poly_radius: usize,
    pub poly_sigma: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            pyr_scale: 0.5,
            window: 15,
            iterations: 5,
            poly_radius: 5,
            poly_sigma: 1.1,
        }
    }
}

const MIN_SIDE: usize = 16;
const BORDER_WEIGHTS: [f32; 5] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

/// Per-pixel quadratic coefficients: `[b_x, b_y, a_xx, a_yy, a_xy]`.
struct PolyPlanes {
    width: usize,
    height: usize,
    planes: [Vec<f32>; 5],
}

pub fn dense_flow(prev: &GrayImage, next: &GrayImage, cfg: &FlowConfig) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(Error::Input(format!(
            "flow frames differ in size: {:?} vs {:?}",
            prev.dims(),
            next.dims()
        )));
    }
    let (w, h) = prev.dims();
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Input(format!("flow frames {w}x{h} smaller than {MIN_SIDE}x{MIN_SIDE}")));
    }
    if cfg.window < 1 || cfg.window % 2 == 0 {
        return Err(Error::Config(format!("flow window {} must be odd", cfg.window)));
    }
    if !(cfg.pyr_scale > 0.0 && cfg.pyr_scale < 1.0) || cfg.levels == 0 {
        return Err(Error::Config("flow pyramid needs levels >= 1 and scale in (0, 1)".into()));
    }

    // Work in 0..255 intensities so the solver's regularizer has a fixed scale.
    let a0: Vec<f32> = prev.data().iter().map(|v| v * 255.0).collect();
    let b0: Vec<f32> = next.data().iter().map(|v| v * 255.0).collect();

    let mut sizes = vec![(w, h, 1.0f64)];
    for k in 1..cfg.levels {
        let s = (cfg.pyr_scale as f64).powi(k as i32);
        let (lw, lh) = ((w as f64 * s).round() as usize, (h as f64 * s).round() as usize);
        if lw < MIN_SIDE || lh < MIN_SIDE {
            break;
        }
        sizes.push((lw, lh, s));
    }

    let basis = PolyBasis::new(cfg.poly_radius, cfg.poly_sigma);
    let mut flow: Option<FlowField> = None;
    for &(lw, lh, s) in sizes.iter().rev() {
        let (pa, pb) = if s == 1.0 {
            (a0.clone(), b0.clone())
        } else {
            let sigma = (1.0 / s - 1.0) * 0.5;
            (
                resize_plane(&gaussian_blur(&a0, w, h, sigma), w, h, lw, lh),
                resize_plane(&gaussian_blur(&b0, w, h, sigma), w, h, lw, lh),
            )
        };
        let mut cur = match flow.take() {
            None => FlowField::zeros(lw, lh),
            Some(f) => {
                let ratio = lw as f32 / f.width as f32;
                FlowField {
                    width: lw,
                    height: lh,
                    u: resize_plane(&f.u, f.width, f.height, lw, lh)
                        .into_iter()
                        .map(|v| v * ratio)
                        .collect(),
                    v: resize_plane(&f.v, f.width, f.height, lw, lh)
                        .into_iter()
                        .map(|v| v * ratio)
                        .collect(),
                }
            }
        };
        let r0 = basis.expand(&pa, lw, lh);
        let r1 = basis.expand(&pb, lw, lh);
        for _ in 0..cfg.iterations {
            let m = update_matrices(&r0, &r1, &cur);
            cur = solve_flow(m, lw, lh, cfg.window / 2);
        }
        flow = Some(cur);
    }
    Ok(flow.expect("at least one level"))
}

fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let fx = sw as f32 / dw as f32;
    let fy = sh as f32 / dh as f32;
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let sy = (y as f32 + 0.5) * fy - 0.5;
        for x in 0..dw {
            let sx = (x as f32 + 0.5) * fx - 0.5;
            out.push(bilinear(src, sw, sh, sx, sy));
        }
    }
    out
}

struct PolyBasis {
    g: Vec<f64>,
    xg: Vec<f64>,
    xxg: Vec<f64>,
    inv: SMatrix<f64, 6, 6>,
}

impl PolyBasis {
    fn new(radius: usize, sigma: f64) -> Self {
        let r = radius as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let xg: Vec<f64> = (-r..=r).zip(&g).map(|(i, w)| i as f64 * w).collect();
        let xxg: Vec<f64> = (-r..=r).zip(&g).map(|(i, w)| (i * i) as f64 * w).collect();
        // Gram matrix of the basis {1, x, y, x^2, y^2, xy} under the applicability.
        let mut gram = SMatrix::<f64, 6, 6>::zeros();
        for (j, wy) in (-r..=r).zip(&g) {
            for (i, wx) in (-r..=r).zip(&g) {
                let (x, y) = (i as f64, j as f64);
                let b = SVector::<f64, 6>::from([1.0, x, y, x * x, y * y, x * y]);
                gram += b * b.transpose() * (wx * wy);
            }
        }
        let inv = gram.try_inverse().expect("polynomial basis Gram matrix is invertible");
        Self { g, xg, xxg, inv }
    }

    fn expand(&self, src: &[f32], w: usize, h: usize) -> PolyPlanes {
        let h0 = correlate_rows(src, w, h, &self.g);
        let h1 = correlate_rows(src, w, h, &self.xg);
        let h2 = correlate_rows(src, w, h, &self.xxg);
        let c1 = correlate_cols(&h0, w, h, &self.g);
        let cx = correlate_cols(&h1, w, h, &self.g);
        let cy = correlate_cols(&h0, w, h, &self.xg);
        let cxx = correlate_cols(&h2, w, h, &self.g);
        let cyy = correlate_cols(&h0, w, h, &self.xxg);
        let cxy = correlate_cols(&h1, w, h, &self.xg);
        let n = w * h;
        let mut planes: [Vec<f32>; 5] = std::array::from_fn(|_| vec![0.0f32; n]);
        for i in 0..n {
            let c = SVector::<f64, 6>::from([
                c1[i] as f64,
                cx[i] as f64,
                cy[i] as f64,
                cxx[i] as f64,
                cyy[i] as f64,
                cxy[i] as f64,
            ]);
            let r = self.inv * c;
            planes[0][i] = r[1] as f32;
            planes[1][i] = r[2] as f32;
            planes[2][i] = r[3] as f32;
            planes[3][i] = r[4] as f32;
            planes[4][i] = (r[5] * 0.5) as f32;
        }
        PolyPlanes {
            width: w,
            height: h,
            planes,
        }
    }
}

fn border_weight(i: usize, n: usize) -> f32 {
    let d = i.min(n - 1 - i);
    if d < BORDER_WEIGHTS.len() {
        BORDER_WEIGHTS[d]
    } else {
        1.0
    }
}

/// Per-pixel normal equations `[g11, g12, g22, h1, h2]` for the current flow estimate.
fn update_matrices(r0: &PolyPlanes, r1: &PolyPlanes, flow: &FlowField) -> [Vec<f32>; 5] {
    let (w, h) = (r0.width, r0.height);
    let mut m: [Vec<f32>; 5] = std::array::from_fn(|_| vec![0.0f32; w * h]);
    for y in 0..h {
        let wy = border_weight(y, h);
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.u[i], flow.v[i]);
            let fx = x as f32 + dx;
            let fy = y as f32 + dy;
            let s = |k: usize| bilinear(&r1.planes[k], w, h, fx, fy);
            let b2x = s(0);
            let b2y = s(1);
            let a11 = (r0.planes[2][i] + s(2)) * 0.5;
            let a22 = (r0.planes[3][i] + s(3)) * 0.5;
            let a12 = (r0.planes[4][i] + s(4)) * 0.5;
            let dbx = -0.5 * (b2x - r0.planes[0][i]) + a11 * dx + a12 * dy;
            let dby = -0.5 * (b2y - r0.planes[1][i]) + a12 * dx + a22 * dy;
            let wgt = wy * border_weight(x, w);
            m[0][i] = wgt * (a11 * a11 + a12 * a12);
            m[1][i] = wgt * (a11 * a12 + a12 * a22);
            m[2][i] = wgt * (a12 * a12 + a22 * a22);
            m[3][i] = wgt * (a11 * dbx + a12 * dby);
            m[4][i] = wgt * (a12 * dbx + a22 * dby);
        }
    }
    m
}

fn solve_flow(m: [Vec<f32>; 5], w: usize, h: usize, radius: usize) -> FlowField {
    let blurred: Vec<Vec<f32>> = m.iter().map(|p| box_blur(p, w, h, radius)).collect();
    let mut out = FlowField::zeros(w, h);
    for i in 0..w * h {
        let (g11, g12, g22) = (blurred[0][i] as f64, blurred[1][i] as f64, blurred[2][i] as f64);
        let (h1, h2) = (blurred[3][i] as f64, blurred[4][i] as f64);
        let idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
        out.u[i] = ((g22 * h1 - g12 * h2) * idet) as f32;
        out.v[i] = ((g11 * h2 - g12 * h1) * idet) as f32;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, ox: f32, oy: f32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32 + ox, y as f32 + oy);
            0.5 + 0.2 * (x * 0.31).sin() * (y * 0.23).cos() + 0.15 * ((x + 2.0 * y) * 0.13).sin()
        })
    }

    #[test]
    fn polynomial_expansion_recovers_quadratic() {
        let (w, h) = (32, 32);
        let src: Vec<f32> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32, (i / w) as f32);
                0.5 * x * x + 0.25 * y * y + 0.3 * x * y + 2.0 * x - y + 3.0
            })
            .collect();
        let p = PolyBasis::new(5, 1.1).expand(&src, w, h);
        let i = 16 * w + 16;
        let (x, y) = (16.0f32, 16.0f32);
        // Coefficients are expressed relative to the pixel itself.
        assert!((p.planes[2][i] - 0.5).abs() < 1e-3);
        assert!((p.planes[3][i] - 0.25).abs() < 1e-3);
        assert!((p.planes[4][i] - 0.15).abs() < 1e-3);
        assert!((p.planes[0][i] - (2.0 + x + 0.3 * y)).abs() < 1e-2);
        assert!((p.planes[1][i] - (-1.0 + 0.5 * y + 0.3 * x)).abs() < 1e-2);
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(48, 40, 0.0, 0.0);
        let f = dense_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn constant_frames_give_zero_flow() {
        let a = GrayImage::constant(32, 32, 0.4);
        let f = dense_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_small_or_mismatched_frames() {
        let a = GrayImage::constant(8, 8, 0.4);
        assert!(dense_flow(&a, &a, &FlowConfig::default()).is_err());
        let b = GrayImage::constant(32, 32, 0.4);
        let c = GrayImage::constant(33, 32, 0.4);
        assert!(dense_flow(&b, &c, &FlowConfig::default()).is_err());
    }

    #[test]
    fn smooth_translation() {
        let a = texture(64, 64, 0.0, 0.0);
        let b = texture(64, 64, -1.5, 0.5);
        let f = dense_flow(&a, &b, &FlowConfig::default()).unwrap();
        let mut us: Vec<f32> = Vec::new();
        let mut vs: Vec<f32> = Vec::new();
        for y in 12..52 {
            for x in 12..52 {
                us.push(f.u[y * 64 + x]);
                vs.push(f.v[y * 64 + x]);
            }
        }
        us.sort_by(f32::total_cmp);
        vs.sort_by(f32::total_cmp);
        assert!((us[us.len() / 2] - 1.5).abs() < 0.1, "u {}", us[us.len() / 2]);
        assert!((vs[vs.len() / 2] + 0.5).abs() < 0.1, "v {}", vs[vs.len() / 2]);
    }
}
