use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tamperscope::degrade::Degradation;
use tamperscope::ffd::{generate_hint, DetectorKind};
use tamperscope::imaging::load_image;
use tamperscope::mllm::classify_type;
use tamperscope::pipeline::{
    build_manifest, degrade_manifest, evaluate_dataset, judge_records, load_records, run, EvalOptions, Manifest,
    PairingConvention, PipelineConfig, ServiceOptions, Services,
};

#[derive(Parser)]
#[command(
    name = "tamperscope",
    version,
    about = "Training-free image forgery detection and localization"
)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of canned backend replies; no network access is made.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Skip the remote segmentation service and use the box fallback.
    #[arg(long, global = true)]
    no_remote_seg: bool,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Block,
    Keypoint,
    Noise,
}

impl From<Method> for DetectorKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Block => DetectorKind::Block,
            Method::Keypoint => DetectorKind::Keypoint,
            Method::Noise => DetectorKind::Noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Jpeg,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    PairedDirs,
    Suffix,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one image.
    Analyze {
        image: PathBuf,
        /// Directory for report.json, mask.png, probability.png and hint.png.
        #[arg(long, default_value = "tamperscope-out")]
        out: PathBuf,
    },
    /// Predict the manipulation category of one image.
    Classify { image: PathBuf },
    /// Run a classical forgery feature detector and render its hint.
    Ffd {
        image: PathBuf,
        #[arg(long, value_enum, default_value = "keypoint")]
        method: Method,
        /// Directory for matches.json, map.png and hint.png.
        #[arg(long, default_value = "tamperscope-ffd")]
        out: PathBuf,
    },
    /// Evaluate every sample of a manifest.
    Evaluate {
        manifest: PathBuf,
        /// Parent of the per-configuration run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Write degraded copies of a manifest's images and a derived manifest.
    Degrade {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, required_if_eq("kind", "jpeg"))]
        quality: Option<u8>,
        #[arg(long, required_if_eq("kind", "gaussian"))]
        variance: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Derived manifest path; defaults to `<manifest stem>.<tag>.jsonl` beside the input.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a manifest by scanning a dataset directory.
    Manifest {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "paired-dirs")]
        convention: Convention,
        /// Output path; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score the explanations of an earlier evaluation with the judge backend.
    Judge {
        manifest: PathBuf,
        /// `results.jsonl` from an evaluation run.
        results: PathBuf,
        /// Directory for the judged results; defaults to `judged/` beside the results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn services(cli: &Cli, cfg: &PipelineConfig) -> Result<Services> {
    let opts = ServiceOptions {
        mock_dir: cli.mock.clone(),
        no_remote_seg: cli.no_remote_seg,
    };
    Ok(Services::from_config(cfg, &opts)?)
}

fn analyze(cli: &Cli, image: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let services = services(cli, &cfg)?;
    let img = Arc::new(load_image(image)?);
    match run(&img, &cfg, &services) {
        Ok(report) => {
            report.write_artifacts(out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary())?);
            Ok(())
        }
        Err(failure) => {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("failure.json"), serde_json::to_string_pretty(&failure)?)?;
            Err(failure.into())
        }
    }
}

fn ffd(cli: &Cli, image: &Path, method: DetectorKind, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let img = load_image(image)?;
    let hint = generate_hint(&img, method, &cfg.ffd.params)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("matches.json"), serde_json::to_string_pretty(&hint.matches)?)?;
    std::fs::write(out.join("map.png"), hint.region_map.encode_png16()?)?;
    hint.image.save_png(out.join("hint.png"))?;
    let summary = serde_json::json!({
        "method": method,
        "pairs": hint.matches.pairs.len(),
        "dominant_offset": hint.matches.dominant_offset(),
        "max_score": hint.region_map.max(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn evaluate(cli: &Cli, manifest: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let services = services(cli, &cfg)?;
    let manifest = Manifest::load(manifest)?;
    let eval = evaluate_dataset(
        &manifest,
        &cfg,
        &services,
        &EvalOptions {
            output_root: Some(out.to_path_buf()),
        },
    )?;
    print!("{}", eval.summary.to_table());
    if let Some(dir) = &eval.run_dir {
        println!("results written to {}", dir.display());
    }
    Ok(())
}

fn degrade(manifest_path: &Path, d: Degradation, output: Option<PathBuf>) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let derived = degrade_manifest(&manifest, &d)?;
    let output = output.unwrap_or_else(|| {
        let stem = manifest_path.file_stem().unwrap_or_default().to_string_lossy();
        manifest_path.with_file_name(format!("{stem}.{}.jsonl", d.tag()))
    });
    derived.save(&output)?;
    println!(
        "{} records degraded with {d}; manifest written to {}",
        derived.records.len(),
        output.display()
    );
    Ok(())
}

fn judge(cli: &Cli, manifest: &Path, results: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(cli)?;
    cfg.judge.enabled = true;
    let services = services(cli, &cfg)?;
    let manifest = Manifest::load(manifest)?;
    let records = load_records(results)?;
    let eval = judge_records(&manifest, &records, &cfg, &services)?;
    let out = out.unwrap_or_else(|| results.with_file_name("judged"));
    eval.save(&out, &cfg)?;
    print!("{}", eval.summary.to_table());
    println!("judged results written to {}", out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze { image, out } => analyze(cli, image, out),
        Command::Classify { image } => {
            let cfg = load_config(cli)?;
            let services = services(cli, &cfg)?;
            let img = Arc::new(load_image(image)?);
            let ty = classify_type(services.mllm.as_ref(), &services.prompts, &img)?;
            println!("{ty}");
            Ok(())
        }
        Command::Ffd { image, method, out } => ffd(cli, image, (*method).into(), out),
        Command::Evaluate { manifest, out } => evaluate(cli, manifest, out),
        Command::Degrade {
            manifest,
            kind,
            quality,
            variance,
            seed,
            output,
        } => {
            let d = match (kind, quality, variance) {
                (Kind::Jpeg, Some(quality), None) => Degradation::Jpeg { quality: *quality },
                (Kind::Gaussian, None, Some(variance)) => Degradation::Gaussian {
                    variance: *variance,
                    seed: *seed,
                },
                (Kind::Jpeg, _, Some(_)) => bail!("--variance applies to --kind gaussian only"),
                (Kind::Gaussian, Some(_), _) => bail!("--quality applies to --kind jpeg only"),
                _ => unreachable!("clap enforces the required parameter"),
            };
            d.validate()?;
            degrade(manifest, d, output.clone())
        }
        Command::Manifest {
            dir,
            convention,
            output,
        } => {
            let conv = match convention {
                Convention::PairedDirs => PairingConvention::PairedDirs,
                Convention::Suffix => PairingConvention::Suffix,
            };
            let m = build_manifest(dir, conv)?;
            match output {
                Some(path) => {
                    m.save(path)?;
                    eprintln!("{} records written to {}", m.records.len(), path.display());
                }
                None => print!("{}", m.to_jsonl()),
            }
            Ok(())
        }
        Command::Judge { manifest, results, out } => judge(cli, manifest, results, out.clone()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
