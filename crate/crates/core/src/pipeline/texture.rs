//! Stateless multi-octave value noise used to texture synthetic scenes.

/// Smooth random texture defined on the whole plane, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ValueNoise {
    seed: u64,
    /// `(cell size in px, amplitude)` per octave.
    octaves: Vec<(f64, f64)>,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self::with_octaves(seed, vec![(16.0, 0.45), (8.0, 0.3), (4.0, 0.25)])
    }

    pub fn with_octaves(seed: u64, octaves: Vec<(f64, f64)>) -> Self {
        Self { seed, octaves }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let total: f64 = self.octaves.iter().map(|o| o.1).sum();
        let mut acc = 0.0;
        for (k, &(cell, amp)) in self.octaves.iter().enumerate() {
            acc += amp * self.lattice(k as u64, x / cell, y / cell);
        }
        (acc / total).clamp(0.0, 1.0)
    }

    fn lattice(&self, octave: u64, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (smooth(x - x0), smooth(y - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v = |dx: i64, dy: i64| self.hash(octave, ix + dx, iy + dy);
        let top = v(0, 0) * (1.0 - fx) + v(1, 0) * fx;
        let bottom = v(0, 1) * (1.0 - fx) + v(1, 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn hash(&self, octave: u64, x: i64, y: i64) -> f64 {
        let mut z = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(octave.wrapping_mul(0xD1B5_4A32_D192_ED03))
            .wrapping_add((x as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
            .wrapping_add((y as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        // splitmix64 finalizer
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
