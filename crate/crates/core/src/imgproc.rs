//! Small separable filters over row-major `f32` planes.

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Correlates each row with `kernel` (centred), replicating borders.
pub(crate) fn correlate_rows(src: &[f32], width: usize, height: usize, kernel: &[f64]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0f32; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0f64;
            for (k, &w) in kernel.iter().enumerate() {
                let xi = (x as isize + k as isize - r).clamp(0, width as isize - 1) as usize;
                acc += w * row[xi] as f64;
            }
            out[y * width + x] = acc as f32;
        }
    }
    out
}

/// Correlates each column with `kernel` (centred), replicating borders.
pub(crate) fn correlate_cols(src: &[f32], width: usize, height: usize, kernel: &[f64]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0f32; src.len()];
    let mut acc = vec![0.0f64; width];
    for y in 0..height {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, &w) in kernel.iter().enumerate() {
            let yi = (y as isize + k as isize - r).clamp(0, height as isize - 1) as usize;
            let row = &src[yi * width..(yi + 1) * width];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += w * v as f64;
            }
        }
        for (o, a) in out[y * width..(y + 1) * width].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    out
}

pub(crate) fn gaussian_blur(src: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = ((sigma * 3.0).ceil() as usize).max(1);
    let k = gaussian_kernel(sigma, radius);
    let tmp = correlate_rows(src, width, height, &k);
    correlate_cols(&tmp, width, height, &k)
}

/// Mean over a `(2r+1)`×`(2r+1)` box with replicated borders.
pub(crate) fn box_blur(src: &[f32], width: usize, height: usize, radius: usize) -> Vec<f32> {
    let k = vec![1.0 / (2 * radius + 1) as f64; 2 * radius + 1];
    let tmp = correlate_rows(src, width, height, &k);
    correlate_cols(&tmp, width, height, &k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let src = vec![0.25f32; 7 * 5];
        for v in gaussian_blur(&src, 7, 5, 1.3) {
            assert!((v - 0.25).abs() < 1e-6);
        }
        for v in box_blur(&src, 7, 5, 2) {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.1, 5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }
}
