use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use rapforge_core::checkpoint::load_patch;
use rapforge_core::dataset::{load_image_dir, load_manifest, write_dataset};
use rapforge_core::detector::{self, Detector};
use rapforge_core::eval::{
    evaluate, make_uniform_dataset, positional_heatmaps, transfer_matrix, write_report_csv, Corner, EvalConfig,
    HeatmapConfig, Outcome, ReportRow, TransferRun, UniformDatasetSpec,
};
use rapforge_core::optimizer::{stall_report, train, AttackConfig, TrainOptions};
use rapforge_core::par::Exec;
use rapforge_core::patch::{Patch, Placement};
use rapforge_core::synth::{self, SceneSpec};

#[derive(Parser)]
#[command(name = "rapforge", version, about = "Remote adversarial patches against face detectors")]
struct Cli {
    /// Run per-image work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CornerArg {
    TopLeft,
    TopRight,
}

#[derive(Subcommand)]
enum Command {
    /// Train a patch from a TOML run file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a patch (or no patch) on a manifest and write a report row.
    Eval {
        /// Omit to evaluate the clean images.
        #[arg(long)]
        patch: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "toy")]
        detector: String,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to the patch sidecar's value, else 5.58.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        theta_d: f64,
        /// Place one untiled copy at X,Y instead of tiling.
        #[arg(long, value_parser = parse_xy)]
        fixed: Option<(i64, i64)>,
        #[arg(long, default_value = "proposed")]
        method: String,
        /// Dataset column of the report; defaults to the manifest stem.
        #[arg(long)]
        label: Option<String>,
    },
    /// Build a coordinate-uniform dataset from a directory of images.
    UniformDataset {
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 25)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "toy")]
        detector: String,
        #[arg(long, default_value_t = 0.0)]
        fill: f64,
    },
    /// Positional TP/FN/FP heat-maps.
    Heatmap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patch: Option<PathBuf>,
        #[arg(long, default_value = "toy")]
        detector: String,
        #[arg(long)]
        out: PathBuf,
        /// Bin side in pixels; defaults to the stride found in the manifest, else 25.
        #[arg(long)]
        bin: Option<usize>,
        #[arg(long, value_enum, default_value_t = CornerArg::TopLeft)]
        corner: CornerArg,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_parser = parse_xy)]
        fixed: Option<(i64, i64)>,
    },
    /// Cross-dataset table for several trained patches.
    Transfer {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic single-face scenes with masks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Use the rendered squares as ground truth instead of the toy
        /// detector's clean-image detections.
        #[arg(long)]
        true_boxes: bool,
        /// Write only images and masks, no manifest.
        #[arg(long)]
        images_only: bool,
    },
}

fn parse_xy(s: &str) -> std::result::Result<(i64, i64), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    Ok((
        x.trim().parse().map_err(|e| format!("{e}"))?,
        y.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn placement(fixed: Option<(i64, i64)>) -> Placement {
    match fixed {
        Some((x, y)) => Placement::Fixed { x, y },
        None => Placement::default(),
    }
}

fn open_patch(path: &Path, alpha: Option<f64>) -> Result<(Patch, f64)> {
    let (patch, meta) = load_patch(path).with_context(|| format!("loading patch {}", path.display()))?;
    let alpha = alpha.or(meta.map(|m| m.alpha)).unwrap_or(5.58);
    Ok((patch, alpha))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    dataset: PathBuf,
    validation: Option<PathBuf>,
    #[serde(default = "toy")]
    detector: String,
    #[serde(default)]
    attack: AttackConfig,
}

fn toy() -> String {
    "toy".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferFile {
    #[serde(default = "toy_list")]
    detectors: Vec<String>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_theta_d")]
    theta_d: f64,
    run: Vec<RunEntry>,
    test: Vec<TestEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunEntry {
    method: String,
    train_dataset: String,
    patch: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TestEntry {
    name: String,
    manifest: PathBuf,
}

fn toy_list() -> Vec<String> {
    vec![toy()]
}

fn default_alpha() -> f64 {
    5.58
}

fn default_theta_d() -> f64 {
    0.5
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };

    match cli.command {
        Command::Train { config, out } => {
            let run: TrainFile = read_toml(&config)?;
            run.attack.validate()?;
            let base = config.parent().unwrap_or(Path::new("."));
            let det = detector::by_name(&run.detector)?;
            let samples = load_manifest(&resolve(base, &run.dataset))?;
            let validation = match &run.validation {
                Some(p) => Some(load_manifest(&resolve(base, p))?),
                None => None,
            };
            log::info!("training on {} images for {} iterations", samples.len(), run.attack.iterations);
            let outcome = train(
                &samples,
                det.as_ref(),
                &run.attack,
                &TrainOptions {
                    validation: validation.as_deref(),
                    out_dir: Some(out.clone()),
                    exec,
                },
            )?;
            if !outcome.history.is_empty() {
                let s = stall_report(&outcome.history)?;
                log::info!(
                    "zero-loss steps {:.1}%, longest streak {}, first nonzero loss at {:?}",
                    100.0 * s.zero_fraction,
                    s.longest_zero_streak,
                    s.first_nonzero_iteration
                );
            }
            println!("{}", out.join("patch.png").display());
        }
        Command::Eval {
            patch,
            dataset,
            detector,
            report,
            alpha,
            theta_d,
            fixed,
            method,
            label,
        } => {
            let det = detector::by_name(&detector)?;
            let samples = load_manifest(&dataset)?;
            let (patch, alpha) = match &patch {
                Some(p) => {
                    let (patch, a) = open_patch(p, alpha)?;
                    (Some(patch), a)
                }
                None => (None, alpha.unwrap_or(5.58)),
            };
            let cfg = EvalConfig {
                theta_d,
                alpha,
                placement: placement(fixed),
            };
            let r = evaluate(&samples, patch.as_ref(), det.as_ref(), &cfg, exec)?;
            let label = label.unwrap_or_else(|| stem(&dataset));
            let method = if patch.is_some() { method } else { "none".into() };
            let row = ReportRow::from_report(&label, &method, &det.handle().name, &r);
            write_report_csv(&report, std::slice::from_ref(&row))?;
            println!(
                "F={:.3} AP={:.3} GT={} TP={} FP={}",
                row.f, row.ap, row.gt, row.tp, row.fp
            );
        }
        Command::UniformDataset {
            src,
            stride,
            out,
            detector,
            fill,
        } => {
            let det = detector::by_name(&detector)?;
            let sources = load_image_dir(&src)?;
            if sources.is_empty() {
                bail!("no PNG images in {}", src.display());
            }
            let u = make_uniform_dataset(&sources, &UniformDatasetSpec { stride, fill }, det.as_ref(), exec)?;
            write_dataset(&out, &u.samples)?;
            println!(
                "{} samples from {} sources ({} positions each, {} sources skipped)",
                u.samples.len(),
                sources.len() - u.skipped_sources.len(),
                u.candidate_positions,
                u.skipped_sources.len()
            );
        }
        Command::Heatmap {
            manifest,
            patch,
            detector,
            out,
            bin,
            corner,
            alpha,
            fixed,
        } => {
            let det = detector::by_name(&detector)?;
            let samples = load_manifest(&manifest)?;
            let (patch, alpha) = match &patch {
                Some(p) => {
                    let (patch, a) = open_patch(p, alpha)?;
                    (Some(patch), a)
                }
                None => (None, alpha.unwrap_or(5.58)),
            };
            let bin = bin.or_else(|| infer_stride(&samples)).unwrap_or(25);
            let cfg = HeatmapConfig {
                eval: EvalConfig {
                    theta_d: 0.5,
                    alpha,
                    placement: placement(fixed),
                },
                bin,
                corner: match corner {
                    CornerArg::TopLeft => Corner::TopLeft,
                    CornerArg::TopRight => Corner::TopRight,
                },
            };
            let grid = positional_heatmaps(&samples, patch.as_ref(), det.as_ref(), &cfg, exec)?;
            grid.write_all(&out)?;
            let q = grid.quadrant_fractions(Outcome::Fn);
            println!(
                "TP={} FN={} FP={} FN quadrants (TL,TR,BL,BR)={:.3},{:.3},{:.3},{:.3}",
                grid.total(Outcome::Tp),
                grid.total(Outcome::Fn),
                grid.total(Outcome::Fp),
                q[0],
                q[1],
                q[2],
                q[3]
            );
        }
        Command::Transfer { runs, out } => {
            let spec: TransferFile = read_toml(&runs)?;
            let base = runs.parent().unwrap_or(Path::new("."));
            let detectors = spec
                .detectors
                .iter()
                .map(|n| detector::by_name(n))
                .collect::<rapforge_core::Result<Vec<_>>>()?;
            let patches = spec
                .run
                .iter()
                .map(|r| Ok(open_patch(&resolve(base, &r.patch), Some(spec.alpha))?.0))
                .collect::<Result<Vec<_>>>()?;
            let train_runs: Vec<TransferRun<'_>> = spec
                .run
                .iter()
                .zip(&patches)
                .map(|(r, p)| TransferRun {
                    method: r.method.clone(),
                    train_dataset: r.train_dataset.clone(),
                    patch: p,
                })
                .collect();
            let tests = spec
                .test
                .iter()
                .map(|t| Ok((t.name.clone(), load_manifest(&resolve(base, &t.manifest))?)))
                .collect::<Result<Vec<_>>>()?;
            let test_refs: Vec<(String, &[_])> = tests.iter().map(|(n, s)| (n.clone(), s.as_slice())).collect();
            let det_refs: Vec<&dyn Detector> = detectors.iter().map(|d| d.as_ref()).collect();
            let cfg = EvalConfig {
                theta_d: spec.theta_d,
                alpha: spec.alpha,
                placement: Placement::default(),
            };
            let rows = transfer_matrix(&train_runs, &test_refs, &det_refs, &cfg, exec)?;
            write_report_csv(&out, &rows)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Synth {
            out,
            count,
            seed,
            size,
            true_boxes,
            images_only,
        } => {
            let spec = SceneSpec {
                width: size,
                height: size,
                ..SceneSpec::default()
            };
            let mut samples = synth::generate(&spec, count, seed)?;
            if !true_boxes {
                let det = detector::by_name("toy")?;
                let (kept, dropped) = synth::label_with_detector(samples, det.as_ref(), exec)?;
                if !dropped.is_empty() {
                    log::warn!("{} scenes without a toy detection dropped", dropped.len());
                }
                samples = kept;
            }
            if images_only {
                fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                for s in &samples {
                    s.image.save_png(out.join(format!("{}.png", s.id)))?;
                    s.mask.save_png(out.join(format!("{}.mask.png", s.id)))?;
                }
            } else {
                write_dataset(&out, &samples)?;
            }
            println!("{} scenes written", samples.len());
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Smallest nonzero grid step among recorded shifts.
fn infer_stride(samples: &[rapforge_core::dataset::Sample]) -> Option<usize> {
    samples
        .iter()
        .filter_map(|s| s.shift)
        .flat_map(|s| [s.dx, s.dy])
        .filter(|&v| v > 0)
        .min()
        .map(|v| v as usize)
}
