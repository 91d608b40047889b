mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uvface::geometry::Resolution;

/// Command-line argument problems found after parsing; exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "uvface", version, about = "UV-space face texture completion and attribute generation")]
pub struct Cli {
    /// Seed for every random choice the command makes. Training commands
    /// fall back to the config file's seed when this is absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Position map and partial texture of a mesh seen in a photograph.
    Uvmap(UvmapArgs),
    /// Fill the occluded texels of a partial texture.
    Complete(CompleteArgs),
    /// Add an attribute to a texture and optionally re-render it.
    Generate(GenerateArgs),
    /// Write a synthetic dataset of procedural heads.
    SynthData(SynthArgs),
    /// Train (or resume / fine-tune) the completion model.
    TrainTc(TrainTcArgs),
    /// Train one phase of the attribute model.
    TrainAttr(TrainAttrArgs),
    /// Metrics: FID, attribute F1, verification TAR@FAR.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Finite-difference check of every op, loss and network.
    Gradcheck,
}

fn parse_resolution(s: &str) -> Result<Resolution, String> {
    let r: usize = s.parse().map_err(|e| format!("{e}"))?;
    Resolution::new(r).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct UvmapArgs {
    /// OBJ or XYZ file.
    pub mesh: PathBuf,
    /// PNG photograph of the mesh.
    pub image: PathBuf,
    /// Yaw of the head in the photograph, degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub pose: f64,
    #[arg(long, default_value = "32", value_parser = parse_resolution)]
    pub res: Resolution,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Partial texture (UVT, 1×3×R×R).
    pub texture: PathBuf,
    /// Position map (UVT, 1×3×R×R).
    pub position: PathBuf,
    /// Completion checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output UVT file; a PNG preview is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub texture: PathBuf,
    pub position: PathBuf,
    /// Attribute to switch on: SG, LS, SH, SM or BA.
    #[arg(long)]
    pub attr: Option<String>,
    /// Original code as five 0/1 digits in SG LS SH SM BA order.
    #[arg(long, default_value = "00000")]
    pub code: String,
    /// Attribute checkpoint directory.
    #[arg(long, required_unless_present = "identity")]
    pub ckpt: Option<PathBuf>,
    /// Pass the texture through unchanged instead of running a generator.
    #[arg(long, conflicts_with = "ckpt")]
    pub identity: bool,
    /// Yaw angles to re-render the result at.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub render_yaw: Vec<f64>,
    /// Side of the rendered images; defaults to 4R.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "32", value_parser = parse_resolution)]
    pub res: Resolution,
    /// Yaw angles of the partial views; defaults to ±15° … ±75°.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub poses: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainShared {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML or JSON training config.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint with its stored config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Learning-rate override, e.g. for fine-tuning a resumed model.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epoch-count override (for `train-attr`, of the selected phase).
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainTcArgs {
    #[command(flatten)]
    pub shared: TrainShared,
}

#[derive(Debug, Args)]
pub struct TrainAttrArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub phase: u8,
    /// Restrict phase 2 to one attribute.
    #[arg(long)]
    pub attr: Option<String>,
    #[command(flatten)]
    pub shared: TrainShared,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Fréchet distance between two feature sets. Each side is a UVT
    /// feature matrix (N×d) or a directory of PNG/UVT images embedded with
    /// the built-in seeded embedder.
    Fid {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F1 of a synthetic attribute classifier (trained on a dataset's
    /// ground-truth textures) over a directory of textures.
    F1 {
        /// Dataset to train the classifier on.
        #[arg(long)]
        data: PathBuf,
        /// Directory of UVT or PNG textures to classify.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        attr: String,
        /// CSV `file,label` with files relative to `--inputs`; without it
        /// every input is expected to carry the attribute.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cosine-similarity verification over a pair list.
    Verify {
        /// CSV `path_a,path_b,same_id`; relative paths resolve against the
        /// CSV's directory.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "0.01")]
        far: f64,
        /// Per-pair scores as CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 1 for usage, 3 for numerical failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<uvface::Error>() {
            return match e {
                uvface::Error::UnknownAttribute(_) => 1,
                uvface::Error::Numerical { .. } | uvface::Error::NonFinite { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    log::info!("resolved arguments: {cli:?}");
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
