//! Batch commands behind the `vms` binary. Each reads its inputs from
//! files, writes its outputs to files and returns a summary value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Result, VmsError};
use crate::io::{self, format_g9, RunConfig, StoredModel};
use crate::kernel::{self, sim_pipeline, PipelineSpec, SimReport};
use crate::model::{self, generate_synthetic, Prediction, SyntheticSpec};
use crate::perfmodel::{
    autotune, energy_efficiency, peak_performance, pct_peak_rounded, step_ledger, DeviceDescriptor,
    Estimate, KernelConfig, OperandWidths, SearchSpace, StepLedger, Workload,
};
use crate::quantize::{quantize_model, refine_bitwidths, QuantizationPlan};

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub spec: SyntheticSpec,
    pub model_out: PathBuf,
    pub fingerprints_out: PathBuf,
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let (m, fps) = generate_synthetic(&a.spec)?;
    io::write_model(&a.model_out, &StoredModel::Float(m))?;
    io::write_file(&a.fingerprints_out, io::write_fingerprints(&fps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Reference,
    Blocked,
    Dataflow,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Reference, Engine::Blocked, Engine::Dataflow];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Reference => "reference",
            Engine::Blocked => "blocked",
            Engine::Dataflow => "dataflow",
        }
    }
}

impl FromStr for Engine {
    type Err = VmsError;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| VmsError::validation(format!("unknown engine {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ProteinSelection {
    #[default]
    All,
    List(Vec<usize>),
}

impl ProteinSelection {
    pub fn resolve(&self, n_proteins: usize) -> Result<Vec<usize>> {
        match self {
            ProteinSelection::All => Ok((0..n_proteins).collect()),
            ProteinSelection::List(v) => {
                let mut seen = vec![false; n_proteins];
                for &p in v {
                    if p >= n_proteins {
                        return Err(VmsError::validation(format!("protein {p} >= P={n_proteins}")));
                    }
                    if std::mem::replace(&mut seen[p], true) {
                        return Err(VmsError::validation(format!("protein {p} listed twice")));
                    }
                }
                Ok(v.clone())
            }
        }
    }
}

impl FromStr for ProteinSelection {
    type Err = VmsError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ProteinSelection::All);
        }
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| VmsError::validation(format!("bad protein index {t:?}")))
            })
            .collect::<Result<_>>()
            .map(ProteinSelection::List)
    }
}

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub model: PathBuf,
    pub fingerprints: PathBuf,
    pub proteins: ProteinSelection,
    pub out: PathBuf,
    pub engine: Engine,
    pub config: RunConfig,
    /// Where the dataflow engine writes its simulation report.
    pub sim_report: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub rows: usize,
    pub sim: Option<SimReport>,
}

pub fn cmd_predict(a: &PredictArgs) -> Result<PredictOutcome> {
    let stored = io::read_model(&a.model)?;
    let dims = stored.dims();
    let fps = io::read_fingerprints(&a.fingerprints, Some(dims.features))?;
    let proteins = a.proteins.resolve(dims.proteins)?;
    let block = a.config.block.clamped(dims);
    let mut sim = None;
    let per_molecule: Vec<Vec<Prediction>> = match (&stored, a.engine) {
        (StoredModel::Float(m), Engine::Reference) => model::screen(m, &fps, &proteins)?,
        (StoredModel::Float(_), e) => {
            return Err(VmsError::validation(format!(
                "engine {} needs a quantized model; run calibrate first",
                e.name()
            )))
        }
        (StoredModel::Quantized(q), Engine::Reference) => kernel::run_unblocked(q, &fps)?.predictions(&fps, &proteins),
        (StoredModel::Quantized(q), Engine::Blocked) => {
            kernel::run_blocked(q, &fps, &block)?.predictions(&fps, &proteins)
        }
        (StoredModel::Quantized(q), Engine::Dataflow) => {
            let (screen, report) = kernel::run_dataflow(q, &fps, &a.config.pipeline, &block)?;
            sim = Some(report);
            screen.predictions(&fps, &proteins)
        }
    };
    let rows: Vec<Prediction> = per_molecule.into_iter().flatten().collect();
    io::write_file(&a.out, io::write_predictions(&rows))?;
    if let (Some(path), Some(report)) = (&a.sim_report, &sim) {
        io::write_file(path, report.to_string())?;
    }
    Ok(PredictOutcome { rows: rows.len(), sim })
}

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub model: PathBuf,
    pub calibration: PathBuf,
    pub budget: f64,
    pub widths: Vec<u32>,
    pub plan_out: PathBuf,
    pub quantized_out: Option<PathBuf>,
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<QuantizationPlan> {
    let StoredModel::Float(m) = io::read_model(&a.model)? else {
        return Err(VmsError::validation(format!(
            "{}: calibration needs a float64 model",
            a.model.display()
        )));
    };
    let calib = io::read_fingerprints(&a.calibration, Some(m.dims().features))?;
    let plan = refine_bitwidths(&m, &calib, a.budget, &a.widths)?;
    io::write_file(&a.plan_out, plan.to_toml())?;
    if let Some(path) = &a.quantized_out {
        io::write_model(path, &StoredModel::Quantized(quantize_model(&m, &plan)?))?;
    }
    Ok(plan)
}

pub fn read_plan(path: &Path) -> Result<QuantizationPlan> {
    QuantizationPlan::from_toml(&io::read_text(path)?)
        .map_err(|e| VmsError::parse(path.display().to_string(), 0, e.to_string()))
}

#[derive(Debug, Clone)]
pub struct TuneArgs {
    pub workload: Workload,
    pub device: DeviceDescriptor,
    pub widths: OperandWidths,
    pub search: SearchSpace,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub device: String,
    pub workload: Workload,
    pub config: KernelConfig,
    pub estimate: Estimate,
}

impl TuneReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

pub fn cmd_tune(a: &TuneArgs) -> Result<TuneReport> {
    let (config, estimate) = autotune(&a.workload, &a.device, a.widths, &a.search)?;
    let report = TuneReport {
        device: a.device.name.clone(),
        workload: a.workload,
        config,
        estimate,
    };
    if let Some(path) = &a.out {
        io::write_file(path, report.to_toml())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub device: String,
    pub peak_gflops: f64,
    pub achieved_gflops: f64,
    pub pct_peak: i64,
    pub power_watts: f64,
    pub efficiency: f64,
    pub reported_efficiency: Option<f64>,
}

/// Builds one comparison row per device. `achieved[i]` overrides the
/// descriptor's reported achieved throughput.
pub fn comparison_table(devices: &[DeviceDescriptor], achieved: &[Option<f64>]) -> Result<Vec<TableRow>> {
    if devices.is_empty() {
        return Err(VmsError::validation("no devices given"));
    }
    devices
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let peak = peak_performance(d)?;
            let ach = achieved
                .get(i)
                .copied()
                .flatten()
                .or(d.reported_achieved_gflops)
                .ok_or_else(|| VmsError::validation(format!("no achieved GF/s for device {}", d.name)))?;
            Ok(TableRow {
                device: d.name.clone(),
                peak_gflops: peak,
                achieved_gflops: ach,
                pct_peak: pct_peak_rounded(ach, peak)?,
                power_watts: d.power_watts,
                efficiency: energy_efficiency(ach, d.power_watts)?,
                reported_efficiency: d.reported_efficiency,
            })
        })
        .collect()
}

fn opt_g9(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), format_g9)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("device,peak_gflops,achieved_gflops,pct_peak,power_watts,gflops_per_watt,reported_gflops_per_watt\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.device,
            format_g9(r.peak_gflops),
            format_g9(r.achieved_gflops),
            r.pct_peak,
            format_g9(r.power_watts),
            format_g9(r.efficiency),
            opt_g9(r.reported_efficiency)
        )
        .unwrap();
    }
    s
}

pub fn table_text(rows: &[TableRow]) -> String {
    let mut s = String::new();
    let label_w = 28;
    let col_w = rows.iter().map(|r| r.device.len()).max().unwrap_or(0).max(10);
    let mut line = |label: &str, cells: Vec<String>| {
        write!(s, "{label:<label_w$}").unwrap();
        for c in cells {
            write!(s, " {c:>col_w$}").unwrap();
        }
        s.push('\n');
    };
    line("", rows.iter().map(|r| r.device.clone()).collect());
    line("Peak (GF/s)", rows.iter().map(|r| format!("{:.0}", r.peak_gflops)).collect());
    line("Achieved (GF/s)", rows.iter().map(|r| format!("{:.0}", r.achieved_gflops)).collect());
    line("% of peak", rows.iter().map(|r| format!("{}%", r.pct_peak)).collect());
    line("Power (W)", rows.iter().map(|r| format!("{:.0}", r.power_watts)).collect());
    line("GF/s/W (achieved / power)", rows.iter().map(|r| format!("{:.2}", r.efficiency)).collect());
    line(
        "GF/s/W (reported)",
        rows.iter()
            .map(|r| r.reported_efficiency.map_or("-".into(), |e| format!("{e}")))
            .collect(),
    );
    s
}

pub fn ledger_csv(ledger: &StepLedger, dev: &DeviceDescriptor) -> String {
    let mut s = String::from(
        "step,name,factor,cumulative,seconds,achieved_gflops,pct_peak,dsp_used,pct_dsp,\
         unroll_latent,unroll_samples,unroll_proteins,unroll_features,compounds,instances,ii,overlap\n",
    );
    for (i, st) in ledger.steps.iter().enumerate() {
        let c = &st.config;
        let e = &st.estimate;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            st.name,
            format_g9(st.factor),
            format_g9(st.cumulative),
            format_g9(e.seconds),
            format_g9(e.achieved_gflops),
            format_g9(e.pct_peak),
            format_g9(e.dsp_used),
            format_g9(100.0 * e.dsp_used / dev.dsp_total as f64),
            c.unroll_latent,
            c.unroll_samples,
            c.unroll_proteins,
            c.unroll_features,
            c.compounds_per_invocation,
            c.n_instances,
            c.initiation_interval,
            st.overlap
        )
        .unwrap();
    }
    s
}

pub fn ledger_text(ledger: &StepLedger, dev: &DeviceDescriptor) -> String {
    let mut s = format!("optimization steps on {}\n", dev.name);
    writeln!(
        s,
        "{:<34} {:>10} {:>12} {:>12} {:>8} {:>10}",
        "step", "factor", "cumulative", "seconds", "%peak", "DSP"
    )
    .unwrap();
    for st in &ledger.steps {
        writeln!(
            s,
            "{:<34} {:>10.3} {:>12.3} {:>12.4e} {:>8.2} {:>10.1}",
            st.name, st.factor, st.cumulative, st.estimate.seconds, st.estimate.pct_peak, st.estimate.dsp_used
        )
        .unwrap();
    }
    writeln!(
        s,
        "model total {:.1}x speedup, {:.1}x DSP growth (published reference: {}x speedup, {}x resources; not asserted)",
        ledger.total_factor(),
        ledger.resource_growth,
        ledger.published_speedup,
        ledger.published_resource_growth
    )
    .unwrap();
    s
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub devices: Vec<DeviceDescriptor>,
    pub achieved: Vec<Option<f64>>,
    pub ledger_device: DeviceDescriptor,
    pub workload: Workload,
    pub widths: OperandWidths,
    pub search: SearchSpace,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub table: Vec<TableRow>,
    pub ledger: StepLedger,
    pub text: String,
}

/// Writes `table.csv`, `table.txt`, `ledger.csv` and `ledger.txt` into
/// `out_dir`.
pub fn cmd_report(a: &ReportArgs) -> Result<ReportOutcome> {
    let table = comparison_table(&a.devices, &a.achieved)?;
    let ledger = step_ledger(&a.workload, &a.ledger_device, a.widths, &a.search)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| VmsError::io(&a.out_dir, e))?;
    let ttext = table_text(&table);
    let ltext = ledger_text(&ledger, &a.ledger_device);
    io::write_file(&a.out_dir.join("table.csv"), table_csv(&table))?;
    io::write_file(&a.out_dir.join("table.txt"), &ttext)?;
    io::write_file(&a.out_dir.join("ledger.csv"), ledger_csv(&ledger, &a.ledger_device))?;
    io::write_file(&a.out_dir.join("ledger.txt"), &ltext)?;
    Ok(ReportOutcome {
        table,
        ledger,
        text: format!("{ttext}\n{ltext}"),
    })
}

#[derive(Debug, Clone)]
pub struct SimArgs {
    pub pipeline: PipelineSpec,
    pub n_tokens: usize,
    pub out: Option<PathBuf>,
}

pub fn cmd_sim(a: &SimArgs) -> Result<SimReport> {
    let report = sim_pipeline(&a.pipeline, a.n_tokens)?;
    if let Some(path) = &a.out {
        io::write_file(path, report.to_string())?;
    }
    Ok(report)
}

/// Widths used by tune and report: the plan's, else uniform 16 bits.
pub fn plan_widths(plan: Option<&QuantizationPlan>) -> OperandWidths {
    plan.map_or_else(OperandWidths::default, OperandWidths::from_plan)
}
