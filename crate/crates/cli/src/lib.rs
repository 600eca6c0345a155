//! Command-line front end: dataset synthesis, burst alignment,
//! reconstruction, evaluation and operator self-tests.
//!
//! Commands communicate only through files in a scene directory:
//! `meta.json`, `gt.btf`, `frame_NN.btf`, and the `warps.json` written by
//! `align`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

pub mod align;
pub mod evaluate;
pub mod manifest;
pub mod reconstruct;
pub mod selftest;
pub mod synthesize;

#[derive(Debug, Parser)]
#[command(
    name = "burstsr",
    version,
    about = "Raw burst super-resolution toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic raw-burst dataset from sRGB PNGs.
    Synthesize(SynthesizeArgs),
    /// Estimate per-frame warps for a scene with ECC.
    Align(AlignArgs),
    /// Reconstruct the HR linear image of a scene.
    Reconstruct(ReconstructArgs),
    /// Compare reconstructions against ground truth.
    Evaluate(EvaluateArgs),
    /// Check operator adjoints, the spectral bound and MM descent.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Directory of PNG images, or a single PNG.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 14)]
    pub burst: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest translation, HR pixels.
    #[arg(long = "max-trans", default_value_t = 4.0)]
    pub max_trans: f64,
    /// Largest rotation, degrees.
    #[arg(long = "max-rot", default_value_t = 1.0)]
    pub max_rot: f64,
    /// Shot-noise range `lo,hi` (log-uniform), or a single value.
    #[arg(long = "noise-shot", default_value = "1e-4,1e-2", value_parser = parse_range)]
    pub noise_shot: (f64, f64),
    #[arg(long = "noise-read", default_value = "1e-6,1e-4", value_parser = parse_range)]
    pub noise_read: (f64, f64),
    /// Scenes processed in parallel; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// `euclidean` or `translation`.
    #[arg(long, default_value = "euclidean")]
    pub model: String,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("warp_source").required(true)))]
pub struct ReconstructArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Solver configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the warps recorded in `meta.json`.
    #[arg(long = "use-gt-warps", group = "warp_source")]
    pub use_gt_warps: bool,
    /// Use the warps in `warps.json` written by `align`.
    #[arg(long = "use-estimated-warps", group = "warp_source")]
    pub use_estimated_warps: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional sRGB preview.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scene directory; repeat together with `--sr` for several scenes.
    #[arg(long, required = true)]
    pub scene: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub sr: Vec<PathBuf>,
    /// Where to write metrics.json; defaults to the scene directory when
    /// there is one scene.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replaces the warp adjoint with the inverse warp (negative control).
    #[arg(long = "break-warp-adjoint", hide = true)]
    pub break_warp_adjoint: bool,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number {v:?}: {e}"))
    };
    match s.split_once(',') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synthesize(a) => synthesize::run(&a),
        Command::Align(a) => align::run(&a),
        Command::Reconstruct(a) => reconstruct::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Selftest(a) => selftest::run(&a),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, S>(args: I) -> Result<i32>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("burstsr"))
        .chain(args.into_iter().map(Into::into));
    run(Cli::try_parse_from(argv)?)
}

pub(crate) fn write_json<T: serde::Serialize>(value: &T, path: &std::path::Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn scene_name(dir: &std::path::Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub(crate) fn check_version(found: u32, what: &str) -> Result<()> {
    if found != manifest::VERSION {
        bail!("{what}: unsupported version {found}");
    }
    Ok(())
}
