//! Analytical accelerator model: peak throughput, DSP and on-chip storage
//! feasibility, time and energy estimates with invocation overhead and
//! compute/transfer overlap, an exhaustive kernel-dimension autotuner and
//! the cumulative optimization-step ledger.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};
use crate::exec::{self, Execution};
use crate::model::Dims;
use crate::quantize::QuantizationPlan;

/// Overall speedup printed for the FPGA optimization sequence. Annotation
/// only; never asserted against model output.
pub const PUBLISHED_TOTAL_SPEEDUP: f64 = 1351.0;
/// Overall DSP-usage growth printed for the same sequence.
pub const PUBLISHED_RESOURCE_GROWTH: f64 = 280.0;

/// Bytes streamed per active fingerprint index.
pub const BYTES_PER_INDEX: u64 = 4;
/// Initiation interval of the unblocked accumulation loop (loop-carried
/// dependency through the adder).
pub const BASELINE_II: u32 = 4;
/// Operand width of the unoptimized double-precision kernel.
pub const BASELINE_WIDTH: u32 = 64;
/// Per-dimension unroll cap of the fixed parallelism preset.
pub const PRESET_UNROLL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitingFactor {
    Compute,
    Bandwidth,
    OnchipStorage,
    Dsp,
}

impl fmt::Display for LimitingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitingFactor::Compute => "compute",
            LimitingFactor::Bandwidth => "bandwidth",
            LimitingFactor::OnchipStorage => "onchip_storage",
            LimitingFactor::Dsp => "dsp",
        })
    }
}

/// DSP slices per MAC for operands up to `max_width` bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspCost {
    pub max_width: u32,
    pub dsp: f64,
}

pub fn default_dsp_table() -> Vec<DspCost> {
    [(8, 0.5), (18, 1.0), (27, 2.0), (36, 4.0), (64, 10.0)]
        .into_iter()
        .map(|(max_width, dsp)| DspCost { max_width, dsp })
        .collect()
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub name: String,
    /// MACs issuable per cycle.
    pub mac_units: u64,
    pub clock_ghz: f64,
    #[serde(default = "one_u32")]
    pub flops_per_mac: u32,
    pub dsp_total: u64,
    #[serde(default = "default_dsp_table")]
    pub dsp_per_mac: Vec<DspCost>,
    pub onchip_bits: u64,
    pub dram_bandwidth_gbs: f64,
    /// Independent kernel regions, each with its own memory interface.
    pub n_regions: u32,
    pub power_watts: f64,
    pub invocation_overhead_s: f64,
    /// Peak pinned to a published value instead of derived from the MAC
    /// count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_gflops: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_achieved_gflops: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_efficiency: Option<f64>,
}

impl DeviceDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(VmsError::validation(format!("device {}: {what} must be positive", self.name)));
        if self.mac_units == 0 {
            return bad("mac_units");
        }
        if !(self.clock_ghz > 0.0 && self.clock_ghz.is_finite()) {
            return bad("clock_ghz");
        }
        if self.flops_per_mac == 0 {
            return bad("flops_per_mac");
        }
        if self.dsp_total == 0 {
            return bad("dsp_total");
        }
        if self.onchip_bits == 0 {
            return bad("onchip_bits");
        }
        if !(self.dram_bandwidth_gbs > 0.0) {
            return bad("dram_bandwidth_gbs");
        }
        if self.n_regions == 0 {
            return bad("n_regions");
        }
        if !(self.power_watts > 0.0) {
            return bad("power_watts");
        }
        if !(self.invocation_overhead_s >= 0.0) {
            return Err(VmsError::validation(format!(
                "device {}: invocation_overhead_s must be >= 0",
                self.name
            )));
        }
        if self.peak_gflops.is_some_and(|p| !(p > 0.0)) {
            return bad("peak_gflops");
        }
        if self.dsp_per_mac.is_empty() {
            return Err(VmsError::validation(format!("device {}: empty dsp_per_mac table", self.name)));
        }
        for w in self.dsp_per_mac.windows(2) {
            if w[0].max_width >= w[1].max_width || w[0].dsp > w[1].dsp {
                return Err(VmsError::validation(format!(
                    "device {}: dsp_per_mac must be sorted by width and non-decreasing",
                    self.name
                )));
            }
        }
        if self.dsp_per_mac.iter().any(|c| !(c.dsp > 0.0)) {
            return bad("dsp_per_mac cost");
        }
        Ok(())
    }

    /// DSP cost of one MAC at `width` bits; `None` when wider than the table.
    pub fn dsp_per_mac(&self, width: u32) -> Option<f64> {
        self.dsp_per_mac.iter().find(|c| width <= c.max_width).map(|c| c.dsp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let d: DeviceDescriptor =
            toml::from_str(text).map_err(|e| VmsError::validation(format!("device descriptor: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub const BUNDLED: [&'static str; 3] = ["paper-cpu", "paper-gpu", "paper-fpga"];

    /// Descriptors carrying the published CPU/GPU/FPGA comparison values.
    /// The FPGA peak is derived (6840 MACs at 100 MHz); CPU and GPU peaks
    /// are pinned.
    pub fn bundled(name: &str) -> Option<Self> {
        let d = match name {
            "paper-cpu" => DeviceDescriptor {
                name: name.into(),
                mac_units: 384,
                clock_ghz: 2.7,
                flops_per_mac: 2,
                dsp_total: 384,
                dsp_per_mac: default_dsp_table(),
                onchip_bits: 33 * 8 * 1024 * 1024,
                dram_bandwidth_gbs: 128.0,
                n_regions: 1,
                power_watts: 205.0,
                invocation_overhead_s: 1e-6,
                peak_gflops: Some(3072.0),
                reported_achieved_gflops: Some(402.0),
                reported_efficiency: Some(1.8),
            },
            "paper-gpu" => DeviceDescriptor {
                name: name.into(),
                mac_units: 6912,
                clock_ghz: 1.41,
                flops_per_mac: 2,
                dsp_total: 6912,
                dsp_per_mac: default_dsp_table(),
                onchip_bits: 40 * 8 * 1024 * 1024,
                dram_bandwidth_gbs: 1555.0,
                n_regions: 1,
                power_watts: 200.0,
                invocation_overhead_s: 1e-5,
                peak_gflops: Some(19500.0),
                reported_achieved_gflops: Some(3265.0),
                reported_efficiency: Some(10.0),
            },
            "paper-fpga" => DeviceDescriptor {
                name: name.into(),
                mac_units: 6840,
                clock_ghz: 0.1,
                flops_per_mac: 1,
                dsp_total: 6840,
                dsp_per_mac: default_dsp_table(),
                onchip_bits: 345_900_000,
                dram_bandwidth_gbs: 77.0,
                n_regions: 3,
                power_watts: 37.0,
                invocation_overhead_s: 2e-5,
                peak_gflops: None,
                reported_achieved_gflops: Some(260.0),
                reported_efficiency: Some(3.0),
            },
            _ => return None,
        };
        Some(d)
    }
}

/// Peak GF/s: pinned value if present, else MACs/cycle × clock × flops/MAC.
pub fn peak_performance(dev: &DeviceDescriptor) -> Result<f64> {
    dev.validate()?;
    Ok(match dev.peak_gflops {
        Some(p) => p,
        None => dev.mac_units as f64 * dev.clock_ghz * dev.flops_per_mac as f64,
    })
}

pub fn pct_peak(achieved: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(VmsError::validation(format!("peak must be > 0, got {peak}")));
    }
    Ok(100.0 * achieved / peak)
}

/// Percent of peak rounded to an integer, as printed in comparison tables.
pub fn pct_peak_rounded(achieved: f64, peak: f64) -> Result<i64> {
    Ok(pct_peak(achieved, peak)?.round() as i64)
}

pub fn energy_efficiency(achieved: f64, power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(VmsError::validation(format!("power must be > 0, got {power}")));
    }
    Ok(achieved / power)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub n_molecules: u64,
    pub dims: Dims,
    /// Active features per fingerprint.
    pub nnz: u64,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.n_molecules == 0 || self.nnz == 0 {
            return Err(VmsError::validation("workload molecules and nnz must be >= 1"));
        }
        Ok(())
    }
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            n_molecules: 1000,
            dims: Dims::default(),
            nnz: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacCounting {
    /// One MAC per gathered link element plus the protein dot products.
    #[default]
    Sparse,
    /// Treats the latent stage as a dense K×F matrix-vector product.
    DenseFeatures,
}

pub fn workload_macs(w: &Workload) -> u64 {
    workload_macs_counted(w, MacCounting::Sparse)
}

pub fn workload_macs_counted(w: &Workload, counting: MacCounting) -> u64 {
    let d = &w.dims;
    let feat = match counting {
        MacCounting::Sparse => w.nnz,
        MacCounting::DenseFeatures => d.features as u64,
    };
    w.n_molecules * d.samples as u64 * (feat * d.latent as u64 + (d.proteins * d.latent) as u64)
}

/// Operand widths in bits of the four kernel tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandWidths {
    pub link: u32,
    pub prot_latent: u32,
    pub latent: u32,
    pub output: u32,
}

impl OperandWidths {
    pub fn uniform(w: u32) -> Self {
        OperandWidths {
            link: w,
            prot_latent: w,
            latent: w,
            output: w,
        }
    }

    pub fn from_plan(plan: &QuantizationPlan) -> Self {
        let f = &plan.formats;
        OperandWidths {
            link: f.link.width(),
            prot_latent: f.prot_latent.width(),
            latent: f.latent_intermediate.width(),
            output: f.output.width(),
        }
    }

    /// Widest multiplier operand.
    pub fn mac_width(&self) -> u32 {
        self.link.max(self.prot_latent).max(self.latent)
    }
}

impl Default for OperandWidths {
    fn default() -> Self {
        OperandWidths::uniform(16)
    }
}

fn default_ii() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub unroll_latent: usize,
    pub unroll_samples: usize,
    pub unroll_proteins: usize,
    pub unroll_features: usize,
    pub compounds_per_invocation: u64,
    pub n_instances: u32,
    pub widths: OperandWidths,
    /// Cycles per lane operation in steady state.
    #[serde(default = "default_ii")]
    pub initiation_interval: u32,
}

impl KernelConfig {
    /// All unrolls 1, one compound per call, one instance.
    pub fn minimal(widths: OperandWidths) -> Self {
        KernelConfig {
            unroll_latent: 1,
            unroll_samples: 1,
            unroll_proteins: 1,
            unroll_features: 1,
            compounds_per_invocation: 1,
            n_instances: 1,
            widths,
            initiation_interval: 1,
        }
    }

    /// Parallel MAC lanes, instances × Us × Uk × (Uf + Up).
    pub fn lanes(&self) -> u64 {
        self.n_instances as u64
            * (self.unroll_samples * self.unroll_latent * (self.unroll_features + self.unroll_proteins)) as u64
    }

    pub fn validate(&self, dev: &DeviceDescriptor) -> Result<()> {
        if self.unroll_latent == 0
            || self.unroll_samples == 0
            || self.unroll_proteins == 0
            || self.unroll_features == 0
            || self.compounds_per_invocation == 0
            || self.initiation_interval == 0
        {
            return Err(VmsError::validation("kernel unrolls, compounds and ii must be >= 1"));
        }
        if self.n_instances == 0 || self.n_instances > dev.n_regions {
            return Err(VmsError::validation(format!(
                "n_instances {} must lie in 1..={} (device regions)",
                self.n_instances, dev.n_regions
            )));
        }
        Ok(())
    }

    fn tuple(&self) -> (usize, usize, usize, usize, u64, u32) {
        (
            self.unroll_latent,
            self.unroll_samples,
            self.unroll_proteins,
            self.unroll_features,
            self.compounds_per_invocation,
            self.n_instances,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceUsage {
    /// Infinite when the operand width exceeds the device's DSP table.
    pub dsp_used: f64,
    pub onchip_bits_used: u64,
}

pub fn estimate_resources(cfg: &KernelConfig, dims: Dims, dev: &DeviceDescriptor) -> ResourceUsage {
    let per_lane = dev.dsp_per_mac(cfg.widths.mac_width()).unwrap_or(f64::INFINITY);
    let lanes = cfg.lanes() as f64;
    let per_instance = (dims.samples * dims.latent * dims.features) as u64 * cfg.widths.link as u64
        + (dims.samples * dims.proteins * dims.latent) as u64 * cfg.widths.prot_latent as u64;
    ResourceUsage {
        dsp_used: lanes * per_lane,
        onchip_bits_used: per_instance * cfg.n_instances as u64,
    }
}

/// First violated resource, DSP before storage.
pub fn check_feasible(usage: &ResourceUsage, dev: &DeviceDescriptor) -> Option<LimitingFactor> {
    if usage.dsp_used > dev.dsp_total as f64 {
        Some(LimitingFactor::Dsp)
    } else if usage.onchip_bits_used > dev.onchip_bits {
        Some(LimitingFactor::OnchipStorage)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub macs_total: u64,
    pub cycles: f64,
    pub compute_seconds: f64,
    pub transfer_seconds: f64,
    pub n_invocations: u64,
    pub seconds: f64,
    pub achieved_gflops: f64,
    pub peak_gflops: f64,
    pub pct_peak: f64,
    pub energy_joules: f64,
    pub gflops_per_watt: f64,
    pub dsp_used: f64,
    pub onchip_bits_used: u64,
    pub feasible: bool,
    pub limiting_factor: LimitingFactor,
}

/// Streamed bytes: fingerprint indices in, mean and std per protein out.
pub fn bytes_streamed(w: &Workload, widths: &OperandWidths) -> u64 {
    let out_bytes = 2 * (widths.output as u64).div_ceil(8);
    w.n_molecules * (w.nnz * BYTES_PER_INDEX + w.dims.proteins as u64 * out_bytes)
}

pub fn estimate_time(cfg: &KernelConfig, w: &Workload, dev: &DeviceDescriptor, overlap: bool) -> Result<Estimate> {
    dev.validate()?;
    w.validate()?;
    cfg.validate(dev)?;
    let usage = estimate_resources(cfg, w.dims, dev);
    if let Some(factor) = check_feasible(&usage, dev) {
        return Err(VmsError::Infeasible {
            factor,
            message: format!(
                "config uses {} DSP of {} and {} on-chip bits of {}",
                usage.dsp_used, dev.dsp_total, usage.onchip_bits_used, dev.onchip_bits
            ),
        });
    }
    Ok(estimate_unchecked(cfg, w, dev, overlap, usage))
}

fn estimate_unchecked(
    cfg: &KernelConfig,
    w: &Workload,
    dev: &DeviceDescriptor,
    overlap: bool,
    usage: ResourceUsage,
) -> Estimate {
    let macs = workload_macs(w);
    let cycles = macs as f64 / cfg.lanes() as f64 * cfg.initiation_interval as f64;
    let compute_seconds = cycles / (dev.clock_ghz * 1e9);
    let transfer_seconds = bytes_streamed(w, &cfg.widths) as f64 / (dev.dram_bandwidth_gbs * 1e9);
    let n_invocations = w.n_molecules.div_ceil(cfg.compounds_per_invocation);
    let body = if overlap {
        compute_seconds.max(transfer_seconds)
    } else {
        compute_seconds + transfer_seconds
    };
    let seconds = n_invocations as f64 * dev.invocation_overhead_s + body;
    let achieved = if seconds > 0.0 {
        macs as f64 * dev.flops_per_mac as f64 / seconds / 1e9
    } else {
        0.0
    };
    let peak = peak_performance(dev).expect("validated");
    Estimate {
        macs_total: macs,
        cycles,
        compute_seconds,
        transfer_seconds,
        n_invocations,
        seconds,
        achieved_gflops: achieved,
        peak_gflops: peak,
        pct_peak: 100.0 * achieved / peak,
        energy_joules: seconds * dev.power_watts,
        gflops_per_watt: achieved / dev.power_watts,
        dsp_used: usage.dsp_used,
        onchip_bits_used: usage.onchip_bits_used,
        feasible: true,
        limiting_factor: if compute_seconds >= transfer_seconds {
            LimitingFactor::Compute
        } else {
            LimitingFactor::Bandwidth
        },
    }
}

/// Autotuner search bounds. Unroll candidates are the divisors of each
/// dimension up to the bound; compounds per invocation are powers of two up
/// to the molecule count; instances run up to the device region count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_unroll_latent: usize,
    pub max_unroll_samples: usize,
    pub max_unroll_proteins: usize,
    pub max_unroll_features: usize,
    pub max_instances: u32,
    pub overlap: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            max_unroll_latent: 64,
            max_unroll_samples: 64,
            max_unroll_proteins: 64,
            max_unroll_features: 64,
            max_instances: u32::MAX,
            overlap: true,
        }
    }
}

pub fn divisors_up_to(n: usize, bound: usize) -> Vec<usize> {
    (1..=n.min(bound)).filter(|&d| n.is_multiple_of(d)).collect()
}

pub fn powers_of_two_up_to(n: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |&c| c.checked_mul(2))
        .take_while(|&c| c <= n)
        .collect()
}

/// Candidate lists in tuple order (Uk, Us, Up, Uf, C, instances).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    pub latent: Vec<usize>,
    pub samples: Vec<usize>,
    pub proteins: Vec<usize>,
    pub features: Vec<usize>,
    pub compounds: Vec<u64>,
    pub instances: Vec<u32>,
}

impl Candidates {
    pub fn new(w: &Workload, dev: &DeviceDescriptor, space: &SearchSpace) -> Self {
        let d = &w.dims;
        Candidates {
            latent: divisors_up_to(d.latent, space.max_unroll_latent),
            samples: divisors_up_to(d.samples, space.max_unroll_samples),
            proteins: divisors_up_to(d.proteins, space.max_unroll_proteins),
            features: divisors_up_to(d.features, space.max_unroll_features),
            compounds: powers_of_two_up_to(w.n_molecules),
            instances: (1..=dev.n_regions.min(space.max_instances)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.latent.len()
            * self.samples.len()
            * self.proteins.len()
            * self.features.len()
            * self.compounds.len()
            * self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Config at lexicographic position `i`.
    pub fn config(&self, mut i: usize, widths: OperandWidths) -> KernelConfig {
        let mut pick = |n: usize| {
            let r = i % n;
            i /= n;
            r
        };
        let inst = pick(self.instances.len());
        let c = pick(self.compounds.len());
        let uf = pick(self.features.len());
        let up = pick(self.proteins.len());
        let us = pick(self.samples.len());
        let uk = pick(self.latent.len());
        KernelConfig {
            unroll_latent: self.latent[uk],
            unroll_samples: self.samples[us],
            unroll_proteins: self.proteins[up],
            unroll_features: self.features[uf],
            compounds_per_invocation: self.compounds[c],
            n_instances: self.instances[inst],
            widths,
            initiation_interval: 1,
        }
    }
}

/// Selection order: fewer seconds, then fewer DSPs, then the
/// lexicographically smallest (Uk, Us, Up, Uf, C, instances).
pub fn compare_choice(a: &(KernelConfig, Estimate), b: &(KernelConfig, Estimate)) -> Ordering {
    a.1.seconds
        .total_cmp(&b.1.seconds)
        .then(a.1.dsp_used.total_cmp(&b.1.dsp_used))
        .then(a.0.tuple().cmp(&b.0.tuple()))
}

pub fn autotune(
    w: &Workload,
    dev: &DeviceDescriptor,
    widths: OperandWidths,
    space: &SearchSpace,
) -> Result<(KernelConfig, Estimate)> {
    autotune_with(Execution::default(), w, dev, widths, space)
}

/// Exhaustive search for the fastest feasible config.
pub fn autotune_with(
    exec: Execution,
    w: &Workload,
    dev: &DeviceDescriptor,
    widths: OperandWidths,
    space: &SearchSpace,
) -> Result<(KernelConfig, Estimate)> {
    dev.validate()?;
    w.validate()?;
    let cands = Candidates::new(w, dev, space);
    if cands.is_empty() {
        return Err(VmsError::validation("empty autotune search space"));
    }
    let best = exec::min_by(
        exec,
        cands.len(),
        |i| {
            let cfg = cands.config(i, widths);
            let usage = estimate_resources(&cfg, w.dims, dev);
            if check_feasible(&usage, dev).is_some() {
                return None;
            }
            Some((cfg, estimate_unchecked(&cfg, w, dev, space.overlap, usage)))
        },
        compare_choice,
    );
    best.ok_or_else(|| {
        // the all-ones single-instance config is the least demanding point
        let min_cfg = KernelConfig::minimal(widths);
        let u = estimate_resources(&min_cfg, w.dims, dev);
        let dsp_ratio = u.dsp_used / dev.dsp_total as f64;
        let mem_ratio = u.onchip_bits_used as f64 / dev.onchip_bits as f64;
        let factor = if dsp_ratio > 1.0 && dsp_ratio >= mem_ratio {
            LimitingFactor::Dsp
        } else {
            LimitingFactor::OnchipStorage
        };
        VmsError::Infeasible {
            factor,
            message: format!(
                "no feasible config among {}; smallest needs {} DSP of {} and {} on-chip bits of {}",
                cands.len(),
                u.dsp_used,
                dev.dsp_total,
                u.onchip_bits_used,
                dev.onchip_bits
            ),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerStep {
    pub name: &'static str,
    pub config: KernelConfig,
    pub overlap: bool,
    pub estimate: Estimate,
    /// Speedup over the previous step (1 for the baseline).
    pub factor: f64,
    /// Running product of the per-step factors.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLedger {
    pub steps: Vec<LedgerStep>,
    pub resource_growth: f64,
    pub published_speedup: f64,
    pub published_resource_growth: f64,
}

impl StepLedger {
    pub fn total_factor(&self) -> f64 {
        self.steps.last().map_or(1.0, |s| s.cumulative)
    }
}

fn largest_divisor_up_to(n: usize, cap: usize) -> usize {
    *divisors_up_to(n, cap).last().expect("1 divides everything")
}

/// Evaluates the six cumulative optimization steps: baseline, blocking,
/// bit-width reduction, parallelism preset, streaming overlap, and
/// autotuned kernel dimensions with multiple instances.
pub fn step_ledger(
    w: &Workload,
    dev: &DeviceDescriptor,
    widths: OperandWidths,
    space: &SearchSpace,
) -> Result<StepLedger> {
    let d = w.dims;
    let mut cfg = KernelConfig::minimal(OperandWidths::uniform(BASELINE_WIDTH));
    cfg.initiation_interval = BASELINE_II;
    let mut plan: Vec<(&'static str, KernelConfig, bool)> = vec![("baseline", cfg, false)];

    cfg.initiation_interval = 1;
    plan.push(("loop blocking", cfg, false));

    cfg.widths = widths;
    plan.push(("bit-width reduction", cfg, false));

    cfg.unroll_latent = largest_divisor_up_to(d.latent, PRESET_UNROLL);
    cfg.unroll_proteins = largest_divisor_up_to(d.proteins, PRESET_UNROLL);
    cfg.unroll_features = largest_divisor_up_to(d.features, PRESET_UNROLL);
    plan.push(("parallelism", cfg, false));
    plan.push(("memory streaming", cfg, true));

    let (tuned, _) = autotune(w, dev, widths, &SearchSpace { overlap: true, ..*space })?;
    plan.push(("kernel dimensions and instances", tuned, true));

    let mut steps: Vec<LedgerStep> = Vec::with_capacity(plan.len());
    for (name, cfg, overlap) in plan {
        let est = estimate_time(&cfg, w, dev, overlap)?;
        let (factor, cumulative) = match steps.last() {
            None => (1.0, 1.0),
            Some(prev) => {
                let f = prev.estimate.seconds / est.seconds;
                (f, prev.cumulative * f)
            }
        };
        steps.push(LedgerStep {
            name,
            config: cfg,
            overlap,
            estimate: est,
            factor,
            cumulative,
        });
    }
    let resource_growth = steps.last().unwrap().estimate.dsp_used / steps[0].estimate.dsp_used;
    Ok(StepLedger {
        steps,
        resource_growth,
        published_speedup: PUBLISHED_TOTAL_SPEEDUP,
        published_resource_growth: PUBLISHED_RESOURCE_GROWTH,
    })
}
