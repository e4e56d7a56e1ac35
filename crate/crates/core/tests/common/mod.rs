#![allow(dead_code)]

use std::path::{Path, PathBuf};

use egoact::descriptor::{Channel, DescriptorDumpWriter};
use egoact::motion::AffineTransform;
use egoact::pipeline::texture::ValueNoise;
use egoact::pipeline::PipelineConfig;
use egoact::video::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints one acceptance line and fails the test when `ok` is false.
///
/// Writes to stderr directly so the line shows up without `--nocapture`.
pub fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    use std::io::Write;
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion:>2} [{status}] {name}: {detail}");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

/// Frame showing `noise` seen through `world_to_image`.
pub fn warped_texture(noise: &ValueNoise, w: usize, h: usize, world_to_image: &AffineTransform) -> GrayImage {
    let inv = world_to_image.inverse().expect("invertible");
    GrayImage::from_fn(w, h, |x, y| {
        let (wx, wy) = inv.apply(x as f64, y as f64);
        noise.eval(wx + 500.0, wy + 500.0) as f32
    })
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Writes an extraction directory with random descriptors, one window per
/// frame id in `1..=frames` and `per_window` trajectories each.
pub fn fake_extraction(dir: &Path, cfg: &PipelineConfig, frames: usize, per_window: usize, seed: u64) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    cfg.save(&dir.join("config.ini")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = cfg.extract.tracker.traj_length;
    let window_len = cfg.window_span + 1;
    let cam_dim = egoact::descriptor::CameraActivity::dim(cfg.window_span);
    let stat_dim = egoact::descriptor::STATISTICAL_DIM;

    let mut windows = csv::Writer::from_path(dir.join("windows.csv")).unwrap();
    let mut header: Vec<String> = ["window", "center_frame", "window_len", "num_trajectories"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..stat_dim).map(|i| format!("stat_{i}")));
    header.extend((0..cam_dim).map(|i| format!("cam_{i}")));
    windows.write_record(&header).unwrap();
    let mut trajs = csv::Writer::from_path(dir.join("trajectories.csv")).unwrap();
    trajs
        .write_record(["window", "position", "scale", "direction", "start_frame"])
        .unwrap();
    let mut dumps: Vec<DescriptorDumpWriter> = Channel::ALL
        .iter()
        .map(|&c| {
            DescriptorDumpWriter::create(&dir.join(format!("{}.dsc", c.name())), c, c.dim(&cfg.extract.descriptor, l))
                .unwrap()
        })
        .collect();
    let mut hof = csv::Writer::from_path(dir.join("global_hof.csv")).unwrap();
    hof.write_record(["frame", "h0", "h1"]).unwrap();
    for w in 0..frames {
        let mut row = vec![w.to_string(), (w + 1).to_string(), window_len.to_string(), per_window.to_string()];
        row.extend((0..stat_dim + cam_dim).map(|_| rng.random::<f64>().to_string()));
        windows.write_record(&row).unwrap();
        for _ in 0..per_window {
            let pos = rng.random_range(0..window_len - l);
            trajs
                .write_record([w.to_string(), pos.to_string(), "0".into(), "forward".into(), pos.to_string()])
                .unwrap();
        }
        for (d, &c) in dumps.iter_mut().zip(Channel::ALL.iter()) {
            let dim = c.dim(&cfg.extract.descriptor, l);
            let rows: Vec<f32> = (0..per_window * dim).map(|_| rng.random()).collect();
            d.push_rows(&rows).unwrap();
        }
        hof.write_record([(w + 1).to_string(), "0.5".into(), "0.5".into()]).unwrap();
    }
    windows.flush().unwrap();
    trajs.flush().unwrap();
    hof.flush().unwrap();
    for d in dumps {
        d.finish().unwrap();
    }
    dir.to_path_buf()
}

/// Lists every file below `root` with its contents, sorted by relative path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
