mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dect_core::admm::Method;

#[derive(Parser, Debug)]
#[command(name = "dect", version, about = "Dual-energy CT simulation and Compton/photoelectric reconstruction")]
struct Cli {
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, env = "DECT_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a phantom and simulate dual-energy measurements.
    Simulate(SimulateArgs),
    /// Reconstruct Compton and photoelectric images from simulated data.
    Recon(ReconArgs),
    /// Normalized error in dB of reconstructed images against a reference.
    Metrics(MetricsArgs),
    /// Write the preconditioner PSF and gains for a geometry.
    PrecondDump(PrecondArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// `desk`, `paper` or `WxH:A:D`.
    #[arg(long, default_value = "desk")]
    pub geometry: String,
    /// `sim18`, `clutter` or a phantom file.
    #[arg(long, default_value = "sim18")]
    pub phantom: String,
    /// Material table replacing the built-in one.
    #[arg(long)]
    pub materials: Option<PathBuf>,
    /// Unattenuated photons per ray in each spectrum.
    #[arg(long, default_value_t = 1e5)]
    pub photons: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Expected counts without Poisson noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Monochromatic spectra at `HIGH,LOW` keV.
    #[arg(long, value_name = "HIGH,LOW")]
    pub mono: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "admm-pcg")]
    pub method: Method,
    #[arg(long, default_value_t = 5)]
    pub cg_iters: usize,
    #[arg(long, default_value_t = 1)]
    pub lm_iters: usize,
    /// Per-ray LM iterations in the decomposition step.
    #[arg(long, default_value_t = 50)]
    pub udm_iters: usize,
    /// TV weight for both bases.
    #[arg(long, default_value_t = 1e-5)]
    pub lambda: f64,
    /// TV weight for the Compton basis; overrides `--lambda`.
    #[arg(long)]
    pub lambda_c: Option<f64>,
    /// TV weight for the photoelectric basis; overrides `--lambda`.
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub rho0: f64,
    /// Keep the penalty fixed at `--rho0`.
    #[arg(long)]
    pub fixed_rho: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative change of both images below which iteration stops; 0 disables.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Photoelectric start as a multiple of the Compton start.
    #[arg(long, default_value_t = 1e3)]
    pub pe_init_scale: f64,
    /// Reference images as a stem with `_c.raw` and `_p.raw`; defaults to the simulated truth.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Disable error telemetry against any reference.
    #[arg(long, conflicts_with = "reference")]
    pub no_reference: bool,
    /// Radius in pixels of a centred disc restricting the telemetry error.
    #[arg(long)]
    pub roi_radius: Option<f64>,
    /// Exit with status 2 when more rays than this fail to converge.
    #[arg(long, default_value_t = 0)]
    pub max_unconverged: usize,
    /// Write `ray<TAB>reason` lines for unconverged rays.
    #[arg(long)]
    pub failure_report: Option<PathBuf>,
    /// Omit wall-clock times from the telemetry file.
    #[arg(long)]
    pub untimed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Image file, or a stem completed with `_c.raw` and `_p.raw`.
    pub image: PathBuf,
    /// Reference file or stem, matching `image`.
    pub reference: PathBuf,
    /// Radius in pixels of a centred disc for an additional ROI error.
    #[arg(long)]
    pub roi_radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PrecondArgs {
    #[arg(long, default_value = "desk")]
    pub geometry: String,
    /// Take the geometry from a `simulate` directory instead.
    #[arg(long, conflicts_with = "geometry")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a).map(|_| ExitCode::SUCCESS),
        Command::Recon(a) => commands::recon(&a),
        Command::Metrics(a) => commands::metrics(&a).map(|_| ExitCode::SUCCESS),
        Command::PrecondDump(a) => commands::precond_dump(&a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
