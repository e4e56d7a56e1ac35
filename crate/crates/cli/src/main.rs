use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egoact::pipeline::{
    evaluate, extract_to_dir, predict_extracted, predict_frames, render, segment, train, ActionAnnotation,
    ActionSpec, ExtractionReader, LabelTrack, ModelBundle, MotionKind, PipelineConfig, Prediction, SyntheticSpec,
};
use egoact::pipeline::store::{read_global_hofs, write_global_hofs};
use egoact::video::load_frame_sequence;
use egoact::{Error, Result};

#[derive(Parser)]
#[command(name = "egoact", version, about = "Action recognition and temporal segmentation for first-person video")]
struct Cli {
    /// INI configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set encoding.k=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract trajectory descriptors for every window of a frame directory.
    Extract {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value = "frame_%06d")]
        pattern: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build codebooks and train the classifier.
    Train {
        /// Extraction directory; repeat once per video.
        #[arg(long, required = true)]
        features: Vec<PathBuf>,
        /// Annotation CSV for each `--features`, in the same order.
        #[arg(long, required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the encoded training windows as CSV, label last.
        #[arg(long)]
        features_csv: Option<PathBuf>,
    },
    /// Label every frame with the trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: PredictInput,
        #[arg(long, default_value = "frame_%06d")]
        pattern: String,
        #[arg(long)]
        out: PathBuf,
        /// Where to write per-frame global HOFs when predicting from frames.
        #[arg(long)]
        hof_out: Option<PathBuf>,
    },
    /// Smooth predicted labels with the temporal MRF.
    Segment {
        #[arg(long)]
        predictions: PathBuf,
        /// `global_hof.csv` from extraction or `predict --hof-out`.
        #[arg(long)]
        hof: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        radius: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted or smoothed labels against annotations.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic clip with annotations and ground-truth camera motion.
    Synth {
        /// `<class>:<frames>`, repeat to chain actions.
        /// Classes: translate-right, stir, pour.
        #[arg(long = "action", required = true)]
        actions: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct PredictInput {
    /// Extraction directory.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Frame directory, extracted on the fly.
    #[arg(long)]
    frames: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_action(s: &str) -> Result<ActionSpec> {
    let (name, frames) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("action '{s}' must look like <class>:<frames>")))?;
    let kind = MotionKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown synthetic class '{name}'")))?;
    let frames = frames
        .parse()
        .map_err(|_| Error::Config(format!("bad frame count in '{s}'")))?;
    Ok(ActionSpec { kind, frames })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Extract { frames, pattern, out } => {
            let cfg = load_config(cli)?;
            let seq = load_frame_sequence(frames, pattern)?;
            let s = extract_to_dir(&seq, &cfg, out)?;
            println!("{} windows, {} trajectories -> {}", s.windows, s.trajectories, out.display());
        }
        Command::Train {
            features,
            annotations,
            out,
            features_csv,
        } => {
            if features.len() != annotations.len() {
                return Err(Error::Input(format!(
                    "{} feature directories but {} annotation files",
                    features.len(),
                    annotations.len()
                )));
            }
            let cfg = load_config(cli)?;
            let videos = features
                .iter()
                .zip(annotations)
                .map(|(f, a)| Ok((ExtractionReader::open(f)?, ActionAnnotation::load(a)?)))
                .collect::<Result<Vec<_>>>()?;
            let (model, set) = train(&videos, &cfg)?;
            model.save(out)?;
            if let Some(p) = features_csv {
                set.write_csv(p)?;
            }
            println!(
                "{} classes {:?}, {} training windows ({} excluded near boundaries), C={} gamma={:.6}",
                model.svm.classes.len(),
                model.svm.classes,
                set.features.len(),
                set.excluded,
                model.svm.c,
                model.svm.gamma
            );
            for (c, acc) in &model.svm.cv_accuracy {
                println!("  cv C={c}: {acc:.4}");
            }
        }
        Command::Predict {
            model,
            input,
            pattern,
            out,
            hof_out,
        } => {
            let model = ModelBundle::load(model)?;
            let pred = match (&input.features, &input.frames) {
                (Some(dir), _) => {
                    let reader = ExtractionReader::open(dir)?;
                    if let Some(h) = hof_out {
                        write_global_hofs(h, &reader.frame_ids(), &reader.global_hofs()?)?;
                    }
                    predict_extracted(&model, &reader)?
                }
                (None, Some(dir)) => {
                    let seq = load_frame_sequence(dir, pattern)?;
                    let (p, hofs) = predict_frames(&model, &seq)?;
                    if let Some(h) = hof_out {
                        write_global_hofs(h, &p.frame_ids, &hofs)?;
                    }
                    p
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            pred.write_csv(out)?;
            println!("{} frames -> {}", pred.frame_ids.len(), out.display());
        }
        Command::Segment {
            predictions,
            hof,
            lambda,
            radius,
            out,
        } => {
            let cfg = load_config(cli)?;
            let pred = Prediction::read_csv(predictions)?;
            let (ids, hofs) = read_global_hofs(hof)?;
            if ids != pred.frame_ids {
                return Err(Error::Input(format!(
                    "{} and {} cover different frames",
                    predictions.display(),
                    hof.display()
                )));
            }
            let seg = segment(&pred, &hofs, lambda.unwrap_or(cfg.lambda), radius.unwrap_or(cfg.radius))?;
            seg.write_csv(out)?;
            let changed = seg.predicted.iter().zip(&seg.smoothed).filter(|(a, b)| a != b).count();
            println!(
                "energy {:.6} -> {:.6}, {changed} frames relabelled -> {}",
                seg.energy_before,
                seg.energy_after,
                out.display()
            );
        }
        Command::Eval {
            predictions,
            annotations,
            out,
        } => {
            let report = evaluate(&LabelTrack::read_csv(predictions)?, &ActionAnnotation::load(annotations)?)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                write_file(p, &text)?;
            }
        }
        Command::Synth {
            actions,
            seed,
            jitter,
            width,
            height,
            out,
        } => {
            let actions = actions.iter().map(|a| parse_action(a)).collect::<Result<Vec<_>>>()?;
            let mut spec = SyntheticSpec::single(actions[0].kind, actions[0].frames, *seed);
            spec.actions = actions;
            spec.jitter = jitter.unwrap_or(spec.jitter);
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            let video = render(&spec)?;
            video.save(out)?;
            println!("{} frames -> {}", video.frames.len(), out.display());
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
