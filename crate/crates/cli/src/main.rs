use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vms_core::commands::{self, Engine, ProteinSelection};
use vms_core::io::{resolve_device, RunConfig};
use vms_core::kernel::{PipelineSpec, StageSpec};
use vms_core::model::{Dims, SyntheticSpec};
use vms_core::perfmodel::Workload;
use vms_core::VmsError;

#[derive(Parser, Debug)]
#[command(name = "vms", version, about = "Virtual molecule screening: prediction, quantization and accelerator modeling")]
struct Cli {
    /// RNG seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct DimsArgs {
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 32)]
    latent: usize,
    #[arg(long, default_value_t = 1024)]
    features: usize,
    #[arg(long, default_value_t = 64)]
    proteins: usize,
}

impl DimsArgs {
    fn dims(&self) -> Dims {
        Dims::new(self.samples, self.latent, self.features, self.proteins)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct WorkloadArgs {
    #[command(flatten)]
    dims: DimsArgs,
    #[arg(long, default_value_t = 1000)]
    molecules: u64,
    /// Active features per fingerprint
    #[arg(long, default_value_t = 64)]
    nnz: u64,
}

impl WorkloadArgs {
    fn workload(&self) -> Workload {
        Workload {
            n_molecules: self.molecules,
            dims: self.dims.dims(),
            nnz: self.nnz,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EngineArg {
    Reference,
    Blocked,
    Dataflow,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Reference => Engine::Reference,
            EngineArg::Blocked => Engine::Blocked,
            EngineArg::Dataflow => Engine::Dataflow,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic model and fingerprint set
    Gen {
        #[command(flatten)]
        dims: DimsArgs,
        #[arg(long, default_value_t = 1.0 / 16.0)]
        density: f64,
        #[arg(long, default_value_t = 100)]
        molecules: usize,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        fingerprints_out: PathBuf,
    },
    /// Predict activity scores for a fingerprint file
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fingerprints: PathBuf,
        /// "all" or a comma-separated list of protein indices
        #[arg(long, default_value = "all", value_parser = parse_proteins)]
        proteins: ProteinSelection,
        #[arg(long, value_enum, default_value = "reference")]
        engine: EngineArg,
        #[arg(long)]
        out: PathBuf,
        /// Simulation report path (dataflow engine)
        #[arg(long)]
        sim_report: Option<PathBuf>,
    },
    /// Search fixed-point formats under an accuracy budget
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        budget: Option<f64>,
        /// Candidate widths, widest first
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<u32>>,
        #[arg(long)]
        plan_out: PathBuf,
        #[arg(long)]
        quantized_out: Option<PathBuf>,
    },
    /// Autotune kernel dimensions for a device
    Tune {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Bundled descriptor name or descriptor file
        #[arg(long)]
        device: Option<String>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Device comparison table and optimization-step ledger
    Report {
        #[arg(long = "device", required = true, num_args = 1..)]
        devices: Vec<String>,
        /// Achieved GF/s per device, in --device order
        #[arg(long, value_delimiter = ',')]
        achieved: Vec<f64>,
        #[arg(long, default_value = "paper-fpga")]
        ledger_device: String,
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cycle-simulate a pipeline
    Sim {
        #[arg(long, default_value_t = 100)]
        tokens: usize,
        /// Stage as LATENCY:II; repeat for a chain (default: config pipeline)
        #[arg(long = "stage", value_parser = parse_stage)]
        stages: Vec<(u32, u32)>,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_proteins(s: &str) -> Result<ProteinSelection, String> {
    s.parse().map_err(|e: VmsError| e.to_string())
}

fn parse_stage(s: &str) -> Result<(u32, u32), String> {
    let (l, ii) = s.split_once(':').ok_or("expected LATENCY:II")?;
    Ok((
        l.parse().map_err(|_| format!("bad latency {l:?}"))?,
        ii.parse().map_err(|_| format!("bad ii {ii:?}"))?,
    ))
}

fn configure_threads(n: Option<usize>) -> Result<(), VmsError> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(VmsError::Validation("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| VmsError::Validation(format!("thread pool: {e}")))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), VmsError> {
    configure_threads(cli.threads)?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Gen {
            dims,
            density,
            molecules,
            model_out,
            fingerprints_out,
        } => commands::cmd_gen(&commands::GenArgs {
            spec: SyntheticSpec {
                seed: cfg.seed,
                dims: dims.dims(),
                density,
                n_molecules: molecules,
            },
            model_out,
            fingerprints_out,
        }),
        Command::Predict {
            model,
            fingerprints,
            proteins,
            engine,
            out,
            sim_report,
        } => {
            let outcome = commands::cmd_predict(&commands::PredictArgs {
                model,
                fingerprints,
                proteins,
                out,
                engine: engine.into(),
                config: cfg,
                sim_report,
            })?;
            if let Some(r) = outcome.sim {
                print!("{r}");
            }
            Ok(())
        }
        Command::Calibrate {
            model,
            calibration,
            budget,
            widths,
            plan_out,
            quantized_out,
        } => {
            let plan = commands::cmd_calibrate(&commands::CalibrateArgs {
                model,
                calibration,
                budget: budget.unwrap_or(cfg.budget),
                widths: widths.unwrap_or(cfg.widths),
                plan_out,
                quantized_out,
            })?;
            print!("{}", plan.to_toml());
            Ok(())
        }
        Command::Tune {
            workload,
            device,
            plan,
            out,
        } => {
            let plan = plan.as_deref().map(commands::read_plan).transpose()?;
            let report = commands::cmd_tune(&commands::TuneArgs {
                workload: workload.workload(),
                device: resolve_device(device.as_deref().unwrap_or(&cfg.device))?,
                widths: commands::plan_widths(plan.as_ref()),
                search: cfg.search,
                out,
            })?;
            print!("{}", report.to_toml());
            Ok(())
        }
        Command::Report {
            devices,
            achieved,
            ledger_device,
            workload,
            plan,
            out_dir,
        } => {
            let plan = plan.as_deref().map(commands::read_plan).transpose()?;
            let devices = devices.iter().map(|d| resolve_device(d)).collect::<Result<Vec<_>, _>>()?;
            let outcome = commands::cmd_report(&commands::ReportArgs {
                achieved: achieved.into_iter().map(Some).collect(),
                devices,
                ledger_device: resolve_device(&ledger_device)?,
                workload: workload.workload(),
                widths: commands::plan_widths(plan.as_ref()),
                search: cfg.search,
                out_dir,
            })?;
            print!("{}", outcome.text);
            Ok(())
        }
        Command::Sim {
            tokens,
            stages,
            depth,
            out,
        } => {
            let pipeline = if stages.is_empty() {
                cfg.pipeline
            } else {
                let specs = stages
                    .iter()
                    .enumerate()
                    .map(|(i, &(l, ii))| StageSpec::new(format!("S{i}"), l, ii))
                    .collect::<Vec<_>>();
                let n = specs.len();
                PipelineSpec::new(specs, vec![depth; n - 1])?
            };
            let report = commands::cmd_sim(&commands::SimArgs {
                pipeline,
                n_tokens: tokens,
                out,
            })?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
