//! Visual vocabularies, hard quantization and temporal-pyramid bag-of-words.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cache::WindowDescriptors;
use crate::descriptor::{Channel, DescriptorBundle};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2000,
            max_iter: 100,
            tol: 1e-4,
            seed: 42,
        }
    }
}

/// k-means centroids for one descriptor channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub channel: Channel,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row-major `k × dim`.
    pub centroids: Vec<f32>,
    /// Sum of squared distances of the training sample to its centroids.
    pub inertia: f64,
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = x[l] as f64 - y[l] as f64;
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the nearest centroid (squared Euclidean), ties to the lowest index.
    pub fn quantize(&self, d: &[f32]) -> Result<usize> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: d.len(),
            });
        }
        Ok(self.nearest(d).0)
    }

    fn nearest(&self, d: &[f32]) -> (usize, f64) {
        nearest_row(&self.centroids, self.dim, d)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"CBK1")?;
        w.write_all(&[self.channel.id()])?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.centroids.len() * 4);
        for v in &self.centroids {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Codebook> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut head = [0u8; 21];
        r.read_exact(&mut head)?;
        if &head[..4] != b"CBK1" {
            return Err(bad("bad CBK1 magic"));
        }
        let channel = Channel::from_id(head[4]).ok_or_else(|| bad("unknown channel id"))?;
        let k = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(head[13..21].try_into().unwrap());
        let mut buf = vec![0u8; k * dim * 4];
        r.read_exact(&mut buf)?;
        let centroids: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if k < 2 || centroids.iter().any(|v| !v.is_finite()) {
            return Err(bad("codebook needs k >= 2 finite centroids"));
        }
        Ok(Codebook {
            channel,
            k,
            dim,
            seed,
            centroids,
            inertia: f64::NAN,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Codebook> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// [`sq_dist`], or `None` once a partial sum shows it cannot be below `bound`.
/// Returned values are bit-identical to `sq_dist`.
#[inline]
fn sq_dist_below(a: &[f32], b: &[f32], bound: f64) -> Option<f64> {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (n, (x, y)) in (&mut ca).zip(&mut cb).enumerate() {
        for l in 0..4 {
            let d = x[l] as f64 - y[l] as f64;
            acc[l] += d * d;
        }
        if n % 8 == 7 && (acc[0] + acc[1]) + (acc[2] + acc[3]) >= bound {
            return None;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    Some((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail)
}

fn nearest_row(centroids: &[f32], dim: usize, d: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        if let Some(dist) = sq_dist_below(d, c, best.1) {
            if dist < best.1 {
                best = (i, dist);
            }
        }
    }
    best
}

/// Streaming uniform subsample: every pushed row is kept with probability `frac`.
#[derive(Clone, Debug)]
pub struct DescriptorSampler {
    rng: ChaCha8Rng,
    frac: f64,
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl DescriptorSampler {
    pub fn new(dim: usize, frac: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            frac,
            dim,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        if self.rng.random::<f64>() < self.frac {
            self.rows.extend_from_slice(row);
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Subsamples `sample_frac` of `rows` (flat, `dim` wide) and clusters them.
pub fn build_codebook(
    channel: Channel,
    rows: &[f32],
    dim: usize,
    sample_frac: f64,
    cfg: &KMeansConfig,
) -> Result<Codebook> {
    if dim == 0 || rows.len() % dim != 0 {
        return Err(Error::Input(format!("descriptor buffer not a multiple of dim {dim}")));
    }
    let mut sampler = DescriptorSampler::new(dim, sample_frac, cfg.seed);
    rows.chunks_exact(dim).for_each(|r| sampler.push(r));
    kmeans(channel, &sampler.rows, dim, cfg)
}

/// k-means with k-means++ seeding; empty clusters are re-seeded from the
/// point farthest from its centroid.
pub fn kmeans(channel: Channel, data: &[f32], dim: usize, cfg: &KMeansConfig) -> Result<Codebook> {
    if cfg.k < 2 {
        return Err(Error::Config(format!("codebook size {} must be >= 2", cfg.k)));
    }
    let n = data.len() / dim.max(1);
    if dim == 0 || n < cfg.k {
        return Err(Error::Input(format!(
            "{} descriptors sampled for channel {}, need at least k = {}",
            n,
            channel.name(),
            cfg.k
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite {} descriptor", channel.name())));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.k;

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            // Guard against landing on a zero-weight tail point through rounding.
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        let c = centroids[start..].to_vec();
        d2.par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(sq_dist(row(i), &c)));
    }

    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut prev = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        assign
            .par_iter_mut()
            .zip(dist.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a, d))| {
                let (j, dd) = nearest_row(&centroids, dim, row(i));
                *a = j;
                *d = dd;
            });
        inertia = dist.iter().sum();
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assign[i];
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += *v as f64;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                taken[far] = true;
                dist[far] = 0.0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
            }
        }
        if prev.is_finite() && (prev - inertia) <= cfg.tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = inertia;
    }
    // Final inertia against the returned centroids.
    let final_d: Vec<f64> = (0..n).into_par_iter().map(|i| nearest_row(&centroids, dim, row(i)).1).collect();
    let final_inertia: f64 = final_d.iter().sum();
    if final_inertia.is_finite() {
        inertia = final_inertia;
    }
    Ok(Codebook {
        channel,
        k,
        dim,
        seed: cfg.seed,
        centroids,
        inertia,
    })
}

/// Temporal pyramid histogram of quantized words.
///
/// `positions` are window positions (forward time) of each word's trajectory.
/// Level `l` splits the window into `2^l` equal segments; each level block is
/// L1-normalized separately.
pub fn pyramid_histogram(words: &[usize], positions: &[usize], k: usize, levels: usize, window_len: usize) -> Vec<f64> {
    assert_eq!(words.len(), positions.len());
    let mut out = vec![0.0; k * ((1 << levels) - 1)];
    let mut offset = 0;
    for l in 0..levels {
        let segs = 1usize << l;
        let block = &mut out[offset..offset + k * segs];
        for (&w, &p) in words.iter().zip(positions) {
            let s = (p * segs / window_len).min(segs - 1);
            block[s * k + w] += 1.0;
        }
        let total: f64 = block.iter().sum();
        if total > 0.0 {
            block.iter_mut().for_each(|v| *v /= total);
        }
        offset += k * segs;
    }
    out
}

/// One histogram channel of the window feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelSpec {
    pub channel: Channel,
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodingConfig {
    /// Histogram channels in feature order.
    pub channels: Vec<ChannelSpec>,
    pub statistical: bool,
    pub camera: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        let spec = |channel, levels| ChannelSpec { channel, levels };
        Self {
            channels: vec![
                spec(Channel::Hog, 3),
                spec(Channel::Hof, 3),
                spec(Channel::MbhX, 1),
                spec(Channel::MbhY, 1),
                spec(Channel::Kinematic, 1),
            ],
            statistical: true,
            camera: true,
        }
    }
}

impl EncodingConfig {
    /// Enables or disables a histogram channel, keeping the fixed block order.
    pub fn set_channel(&mut self, channel: Channel, levels: Option<usize>) {
        self.channels.retain(|c| c.channel != channel);
        if let Some(levels) = levels {
            self.channels.push(ChannelSpec { channel, levels });
        }
        self.channels.sort_by_key(|c| c.channel);
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|c| c.levels == 0 || c.levels > 8) {
            return Err(Error::Config("pyramid levels must be in 1..=8".into()));
        }
        if self.channels.is_empty() && !self.statistical && !self.camera {
            return Err(Error::Config("no feature blocks enabled".into()));
        }
        Ok(())
    }

    pub fn layout(&self, k: usize, camera_dim: usize) -> FeatureLayout {
        let mut blocks = Vec::new();
        let mut off = 0;
        for c in &self.channels {
            let d = k * ((1 << c.levels) - 1);
            blocks.push((BlockKind::Histogram(c.channel), off..off + d));
            off += d;
        }
        if self.statistical {
            blocks.push((BlockKind::Statistical, off..off + crate::descriptor::STATISTICAL_DIM));
            off += crate::descriptor::STATISTICAL_DIM;
        }
        if self.camera {
            blocks.push((BlockKind::Camera, off..off + camera_dim));
            off += camera_dim;
        }
        FeatureLayout { blocks, total_dim: off }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Histogram(Channel),
    Statistical,
    Camera,
}

impl BlockKind {
    pub fn is_histogram(self) -> bool {
        matches!(self, BlockKind::Histogram(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayout {
    pub blocks: Vec<(BlockKind, std::ops::Range<usize>)>,
    pub total_dim: usize,
}

impl FeatureLayout {
    /// Per-dimension flag: true for dimensions outside histogram blocks.
    pub fn global_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.total_dim];
        for (kind, r) in &self.blocks {
            if !kind.is_histogram() {
                m[r.clone()].iter_mut().for_each(|v| *v = true);
            }
        }
        m
    }
}

/// Per-window trajectory descriptors and globals, independent of how they were produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowData {
    /// Sequence index of the window centre.
    pub center: usize,
    pub window_len: usize,
    /// Window position (forward time) of each trajectory.
    pub positions: Vec<usize>,
    /// Flat `trajectories × dim` rows per channel.
    pub channels: BTreeMap<Channel, Vec<f32>>,
    pub statistical: Vec<f64>,
    pub camera: Vec<f64>,
}

impl WindowData {
    pub fn from_descriptors(d: &WindowDescriptors, keep: &[Channel]) -> Self {
        let mut channels = BTreeMap::new();
        for &c in keep {
            let rows: Vec<f32> = d.bundles.iter().flat_map(|b: &DescriptorBundle| b.channel(c).iter().copied()).collect();
            channels.insert(c, rows);
        }
        Self {
            center: d.center,
            window_len: d.window_len,
            positions: d.positions(),
            channels,
            statistical: d.statistical.to_vec(),
            camera: d.camera.to_vector(),
        }
    }

    pub fn num_trajectories(&self) -> usize {
        self.positions.len()
    }
}

/// Final per-window vector with its block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowFeature {
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

impl WindowFeature {
    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&[f64]> {
        self.layout
            .blocks
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, r)| &self.values[r.clone()])
    }
}

/// Codebooks keyed by channel.
pub type CodebookSet = BTreeMap<Channel, Codebook>;

/// Pools both trajectory directions into the same per-channel pyramid
/// histograms and appends the window globals, in fixed block order.
pub fn assemble_window_feature(w: &WindowData, codebooks: &CodebookSet, cfg: &EncodingConfig) -> Result<WindowFeature> {
    let k = cfg
        .channels
        .first()
        .map(|c| {
            codebooks
                .get(&c.channel)
                .map(|cb| cb.k)
                .ok_or_else(|| Error::Config(format!("missing codebook for channel {}", c.channel.name())))
        })
        .transpose()?
        .unwrap_or(0);
    let mut values = Vec::new();
    for spec in &cfg.channels {
        let cb = codebooks
            .get(&spec.channel)
            .ok_or_else(|| Error::Config(format!("missing codebook for channel {}", spec.channel.name())))?;
        if cb.k != k {
            return Err(Error::Config("all codebooks must share the same size".into()));
        }
        let rows = w
            .channels
            .get(&spec.channel)
            .ok_or_else(|| Error::Input(format!("window lacks {} descriptors", spec.channel.name())))?;
        if rows.len() != w.num_trajectories() * cb.dim {
            return Err(Error::DimensionMismatch {
                expected: w.num_trajectories() * cb.dim,
                actual: rows.len(),
            });
        }
        let words: Vec<usize> = rows.chunks_exact(cb.dim).map(|r| cb.nearest(r).0).collect();
        values.extend(pyramid_histogram(&words, &w.positions, k, spec.levels, w.window_len));
    }
    if cfg.statistical {
        values.extend_from_slice(&w.statistical);
    }
    if cfg.camera {
        values.extend_from_slice(&w.camera);
    }
    let layout = cfg.layout(k, w.camera.len());
    debug_assert_eq!(layout.total_dim, values.len());
    Ok(WindowFeature { layout, values })
}

/// Writes feature rows as CSV: `frame,f0,...,f{D-1},label`.
pub fn write_feature_csv(
    w: &mut impl Write,
    rows: &[(u32, &[f64], Option<&str>)],
) -> std::io::Result<()> {
    let dim = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let mut line = String::from("frame");
    for i in 0..dim {
        line.push_str(&format!(",f{i}"));
    }
    line.push_str(",label\n");
    w.write_all(line.as_bytes())?;
    for (frame, values, label) in rows {
        let mut line = frame.to_string();
        for v in values.iter() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push(',');
        line.push_str(label.unwrap_or(""));
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_quantize(cb: &Codebook, d: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..cb.k {
            let dist: f64 = cb
                .centroid(i)
                .iter()
                .zip(d)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            if dist < best_d {
                best = i;
                best_d = dist;
            }
        }
        best
    }

    fn codebook(centroids: Vec<f32>, dim: usize) -> Codebook {
        Codebook {
            channel: Channel::Hog,
            k: centroids.len() / dim,
            dim,
            seed: 0,
            centroids,
            inertia: 0.0,
        }
    }

    #[test]
    fn bounded_distance_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [1usize, 5, 32, 33, 96, 108] {
            let a: Vec<f32> = (0..dim).map(|_| rng.random()).collect();
            let b: Vec<f32> = (0..dim).map(|_| rng.random()).collect();
            let full = sq_dist(&a, &b);
            assert_eq!(sq_dist_below(&a, &b, f64::INFINITY), Some(full));
            assert_eq!(sq_dist_below(&a, &b, full.next_up()), Some(full));
            if dim >= 32 {
                assert_eq!(sq_dist_below(&a, &b, 1e-9), None);
            }
        }
    }

    #[test]
    fn quantize_exact_and_ties() {
        let cb = codebook((0..10).flat_map(|i| [i as f32, 0.0]).collect(), 2);
        assert_eq!(cb.quantize(&[7.0, 0.0]).unwrap(), 7);
        let cb = codebook(vec![9.0, 9.0, 9.0, 9.0, 0.0, 0.0, 9.0, 9.0, 9.0, 9.0, 2.0, 0.0], 2);
        assert_eq!(cb.quantize(&[1.0, 0.0]).unwrap(), 2);
        assert!(cb.quantize(&[1.0]).is_err());
    }

    #[test]
    fn quantize_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cb = codebook((0..50 * 13).map(|_| rng.random::<f32>()).collect(), 13);
        for _ in 0..500 {
            let d: Vec<f32> = (0..13).map(|_| rng.random()).collect();
            assert_eq!(cb.quantize(&d).unwrap(), brute_quantize(&cb, &d));
        }
        for i in 0..cb.k {
            assert_eq!(cb.quantize(cb.centroid(i)).unwrap(), i);
        }
    }

    #[test]
    fn kmeans_exact_cover() {
        let pts: Vec<f32> = (0..6).flat_map(|i| [i as f32 * 1.5, (i * i) as f32]).collect();
        let cfg = KMeansConfig { k: 6, ..Default::default() };
        let cb = kmeans(Channel::Hof, &pts, 2, &cfg).unwrap();
        assert_eq!(cb.inertia, 0.0);
        let mut got: Vec<(i64, i64)> = cb.centroids.chunks(2).map(|c| ((c[0] * 10.0) as i64, c[1] as i64)).collect();
        let mut want: Vec<(i64, i64)> = pts.chunks(2).map(|c| ((c[0] * 10.0) as i64, c[1] as i64)).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn kmeans_needs_k_samples() {
        let cfg = KMeansConfig { k: 5, ..Default::default() };
        assert!(kmeans(Channel::Hof, &[0.0; 8], 2, &cfg).is_err());
        assert!(build_codebook(Channel::Hof, &[0.0; 20], 2, 0.1, &cfg).is_err());
    }

    #[test]
    fn kmeans_handles_duplicate_points() {
        let mut pts = vec![0.0f32; 10];
        pts.extend_from_slice(&[5.0, 5.0]);
        pts.extend_from_slice(&[0.1, 0.0]);
        let cfg = KMeansConfig { k: 3, ..Default::default() };
        let cb = kmeans(Channel::Hof, &pts, 2, &cfg).unwrap();
        assert!(cb.centroids.iter().all(|v| v.is_finite()));
        assert_eq!(cb.inertia, 0.0);
    }

    #[test]
    fn pyramid_dims_and_single_word() {
        let h = pyramid_histogram(&[4], &[20], 2000, 3, 31);
        assert_eq!(h.len(), 14000);
        let nz: Vec<(usize, f64)> = h.iter().copied().enumerate().filter(|x| x.1 != 0.0).collect();
        assert_eq!(nz, vec![(4, 1.0), (2000 + 2000 + 4, 1.0), (6000 + 2 * 2000 + 4, 1.0)]);
    }

    #[test]
    fn pyramid_first_half_only() {
        let h = pyramid_histogram(&[0, 1, 2], &[0, 7, 15], 3, 2, 31);
        assert!(h[6..9].iter().all(|&v| v == 0.0));
        assert!((h[3..6].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn codebook_roundtrip() {
        let mut cb = codebook(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
        cb.seed = 99;
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CBK1");
        let back = Codebook::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!((back.k, back.dim, back.seed, &back.centroids), (2, 3, 99, &cb.centroids));
    }

    #[test]
    fn default_layout_dims() {
        let l = EncodingConfig::default().layout(2000, 68);
        assert_eq!(l.total_dim, 34081);
        let dims: Vec<usize> = l.blocks.iter().map(|(_, r)| r.len()).collect();
        assert_eq!(dims, vec![14000, 14000, 2000, 2000, 2000, 13, 68]);
    }

    #[test]
    fn assemble_empty_window_keeps_globals() {
        let cfg = EncodingConfig::default();
        let mut books = CodebookSet::new();
        for spec in &cfg.channels {
            let dim = spec.channel.dim(&Default::default(), 15);
            let mut cb = codebook(vec![0.0; 3 * dim], dim);
            cb.channel = spec.channel;
            books.insert(spec.channel, cb);
        }
        let w = WindowData {
            center: 0,
            window_len: 31,
            positions: vec![],
            channels: cfg.channels.iter().map(|c| (c.channel, vec![])).collect(),
            statistical: vec![0.5; 13],
            camera: vec![0.25; 68],
        };
        let f = assemble_window_feature(&w, &books, &cfg).unwrap();
        assert_eq!(f.total_dim(), 3 * 7 * 2 + 3 * 3 + 13 + 68);
        assert!(f.block(BlockKind::Histogram(Channel::Hog)).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(f.block(BlockKind::Camera).unwrap(), &[0.25; 68][..]);
        books.remove(&Channel::Hof);
        assert!(assemble_window_feature(&w, &books, &cfg).is_err());
    }
}
