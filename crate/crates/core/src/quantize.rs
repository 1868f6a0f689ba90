//! Range profiling and greedy fixed-point bit-width refinement.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};
use crate::exec::{self, Execution};
use crate::fixedpoint::{quantize_raw, FixedFormat, MAX_STORAGE_WIDTH};
use crate::kernel;
use crate::model::{self, Dims, Fingerprint, ScreeningModel};

/// The four tensors that get their own fixed-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TensorId {
    Link,
    ProtLatent,
    LatentIntermediate,
    Output,
}

impl TensorId {
    /// Refinement order, most storage-critical first.
    pub const ALL: [TensorId; 4] = [
        TensorId::Link,
        TensorId::ProtLatent,
        TensorId::LatentIntermediate,
        TensorId::Output,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TensorId::Link => "LINK",
            TensorId::ProtLatent => "PROT_LATENT",
            TensorId::LatentIntermediate => "LATENT_INTERMEDIATE",
            TensorId::Output => "OUTPUT",
        }
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorStats {
    pub tensor: TensorId,
    pub absmax: f64,
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

impl TensorStats {
    fn empty(tensor: TensorId) -> Self {
        TensorStats {
            tensor,
            absmax: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }

    fn observe(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.count += 1;
    }

    fn merge(&mut self, other: &TensorStats) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
    }

    fn finish(mut self) -> Self {
        self.absmax = self.min.abs().max(self.max.abs());
        self
    }

    /// Whether `x` lies inside the observed `[min, max]`.
    pub fn covers(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

/// Per-tensor formats of a refined plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub struct TensorFormats {
    pub link: FixedFormat,
    pub prot_latent: FixedFormat,
    pub latent_intermediate: FixedFormat,
    pub output: FixedFormat,
}

impl TensorFormats {
    pub fn get(&self, t: TensorId) -> FixedFormat {
        match t {
            TensorId::Link => self.link,
            TensorId::ProtLatent => self.prot_latent,
            TensorId::LatentIntermediate => self.latent_intermediate,
            TensorId::Output => self.output,
        }
    }

    pub fn set(&mut self, t: TensorId, f: FixedFormat) {
        match t {
            TensorId::Link => self.link = f,
            TensorId::ProtLatent => self.prot_latent = f,
            TensorId::LatentIntermediate => self.latent_intermediate = f,
            TensorId::Output => self.output = f,
        }
    }

    pub fn uniform(f: FixedFormat) -> Self {
        TensorFormats {
            link: f,
            prot_latent: f,
            latent_intermediate: f,
            output: f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationPlan {
    pub formats: TensorFormats,
    pub achieved_rmse: f64,
    /// Free-form description of the calibration set.
    pub reference: String,
}

impl QuantizationPlan {
    pub fn validate(&self) -> Result<()> {
        for t in TensorId::ALL {
            let f = self.formats.get(t);
            FixedFormat::new(f.width(), f.frac())?;
        }
        if !(self.achieved_rmse >= 0.0) {
            return Err(VmsError::validation(format!(
                "plan rmse must be >= 0, got {}",
                self.achieved_rmse
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: QuantizationPlan =
            toml::from_str(text).map_err(|e| VmsError::validation(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Model weights re-encoded as raw integers under a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    dims: Dims,
    link: Vec<i32>,
    protein_latents: Vec<i32>,
    plan: QuantizationPlan,
}

impl QuantizedModel {
    pub fn from_raw(dims: Dims, link: Vec<i32>, protein_latents: Vec<i32>, plan: QuantizationPlan) -> Result<Self> {
        dims.validate()?;
        plan.validate()?;
        if link.len() != dims.link_len() || protein_latents.len() != dims.protein_len() {
            return Err(VmsError::validation("quantized payload does not match dimensions"));
        }
        let check = |raws: &[i32], f: FixedFormat, t: TensorId| -> Result<()> {
            match raws.iter().find(|&&r| (r as i64) < f.raw_min() || (r as i64) > f.raw_max()) {
                Some(r) => Err(VmsError::validation(format!("{t} raw {r} outside {f}"))),
                None => Ok(()),
            }
        };
        check(&link, plan.formats.link, TensorId::Link)?;
        check(&protein_latents, plan.formats.prot_latent, TensorId::ProtLatent)?;
        Ok(QuantizedModel {
            dims,
            link,
            protein_latents,
            plan,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn plan(&self) -> &QuantizationPlan {
        &self.plan
    }

    pub fn formats(&self) -> &TensorFormats {
        &self.plan.formats
    }

    /// Raw link values, `[s][k][f]` row-major.
    pub fn link_raw(&self) -> &[i32] {
        &self.link
    }

    /// Raw protein latents, `[s][p][k]` row-major.
    pub fn protein_raw(&self) -> &[i32] {
        &self.protein_latents
    }

    pub fn dequantize(&self) -> ScreeningModel {
        let lr = self.plan.formats.link.resolution();
        let pr = self.plan.formats.prot_latent.resolution();
        ScreeningModel::new(
            self.dims,
            self.link.iter().map(|&r| r as f64 * lr).collect(),
            self.protein_latents.iter().map(|&r| r as f64 * pr).collect(),
        )
        .expect("dequantized values are finite")
    }
}

/// Weight statistics plus replayed intermediate/output ranges over `calib`.
pub fn profile_ranges(model: &ScreeningModel, calib: &[Fingerprint]) -> Result<Vec<TensorStats>> {
    if calib.is_empty() {
        return Err(VmsError::validation("calibration set is empty"));
    }
    let d = model.dims();
    for fp in calib {
        fp.validate(d.features)?;
    }
    let mut link = TensorStats::empty(TensorId::Link);
    model.link().iter().for_each(|&x| link.observe(x));
    let mut prot = TensorStats::empty(TensorId::ProtLatent);
    model.protein_latents().iter().for_each(|&x| prot.observe(x));

    let partials = exec::map_range(Execution::default(), calib.len(), |i| {
        let mut lat = TensorStats::empty(TensorId::LatentIntermediate);
        let mut out = TensorStats::empty(TensorId::Output);
        for s in 0..d.samples {
            let u = model::compute_latent(model, s, &calib[i]).expect("validated");
            u.values().iter().for_each(|&x| lat.observe(x));
            for p in 0..d.proteins {
                let row = model.protein_row(s, p);
                let mut y = 0.0;
                for (a, b) in u.values().iter().zip(row) {
                    y += a * b;
                }
                out.observe(y);
            }
        }
        (lat, out)
    });
    let mut lat = TensorStats::empty(TensorId::LatentIntermediate);
    let mut out = TensorStats::empty(TensorId::Output);
    for (l, o) in &partials {
        lat.merge(l);
        out.merge(o);
    }
    Ok(vec![link.finish(), prot.finish(), lat.finish(), out.finish()])
}

/// Smallest integer-bit count covering `absmax`, remaining bits to the
/// fraction.
pub fn select_format(stats: &TensorStats, width: u32) -> Result<FixedFormat> {
    if !(2..=MAX_STORAGE_WIDTH).contains(&width) {
        return Err(VmsError::validation(format!("width {width} outside 2..={MAX_STORAGE_WIDTH}")));
    }
    let mut int_bits: i64 = if stats.absmax > 0.0 {
        (stats.absmax.log2().ceil() as i64).max(0)
    } else {
        0
    };
    // guard against log2 landing one ulp low
    while 2f64.powi(int_bits as i32) < stats.absmax {
        int_bits += 1;
    }
    let frac = width as i64 - 1 - int_bits;
    if frac < 0 {
        return Err(VmsError::validation(format!(
            "{}: absmax {} needs {} integer bits, width {} too small",
            stats.tensor, stats.absmax, int_bits, width
        )));
    }
    FixedFormat::new(width, frac as u32)
}

pub fn quantize_model(model: &ScreeningModel, plan: &QuantizationPlan) -> Result<QuantizedModel> {
    plan.validate()?;
    let q = |xs: &[f64], f: FixedFormat| -> Vec<i32> {
        xs.iter()
            .map(|&x| quantize_raw(x, f).expect("model values are finite") as i32)
            .collect()
    };
    Ok(QuantizedModel {
        dims: model.dims(),
        link: q(model.link(), plan.formats.link),
        protein_latents: q(model.protein_latents(), plan.formats.prot_latent),
        plan: plan.clone(),
    })
}

/// Float reference means over `calib` × all proteins, molecule-major.
pub fn reference_means(model: &ScreeningModel, calib: &[Fingerprint]) -> Result<Vec<f64>> {
    let proteins: Vec<usize> = (0..model.dims().proteins).collect();
    Ok(model::screen(model, calib, &proteins)?
        .into_iter()
        .flatten()
        .map(|p| p.mean)
        .collect())
}

/// End-to-end RMSE of quantized means against `reference` for `formats`.
pub fn evaluate_formats(
    model: &ScreeningModel,
    calib: &[Fingerprint],
    reference: &[f64],
    formats: TensorFormats,
) -> Result<f64> {
    let plan = QuantizationPlan {
        formats,
        achieved_rmse: 0.0,
        reference: String::new(),
    };
    let qm = quantize_model(model, &plan)?;
    let means = kernel::run_unblocked(&qm, calib)?.means();
    model::rmse(&means, reference)
}

fn calibration_descriptor(d: Dims, n: usize) -> String {
    format!(
        "molecules={} S={} K={} F={} P={}",
        n, d.samples, d.latent, d.features, d.proteins
    )
}

/// Greedy refinement: all tensors start at the widest candidate, then each
/// tensor in [`TensorId::ALL`] order steps down while the RMSE of the means
/// stays within `budget`.
pub fn refine_bitwidths(
    model: &ScreeningModel,
    calib: &[Fingerprint],
    budget: f64,
    widths: &[u32],
) -> Result<QuantizationPlan> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(VmsError::validation(format!("budget must be finite and > 0, got {budget}")));
    }
    if widths.is_empty() {
        return Err(VmsError::validation("empty width candidate list"));
    }
    if widths.windows(2).any(|w| w[0] <= w[1]) {
        return Err(VmsError::validation(format!("width candidates must be strictly descending: {widths:?}")));
    }
    let stats = profile_ranges(model, calib)?;
    let reference = reference_means(model, calib)?;

    let widest = widths[0];
    let mut formats = TensorFormats::uniform(FixedFormat::new(widest, 0)?);
    for (t, st) in TensorId::ALL.iter().zip(&stats) {
        match select_format(st, widest) {
            Ok(f) => formats.set(*t, f),
            Err(_) => {
                return Err(VmsError::BudgetInfeasible {
                    budget,
                    rmse: f64::INFINITY,
                })
            }
        }
    }
    let mut rmse = evaluate_formats(model, calib, &reference, formats)?;
    if rmse > budget {
        return Err(VmsError::BudgetInfeasible { budget, rmse });
    }

    for (t, st) in TensorId::ALL.iter().zip(&stats) {
        for &w in &widths[1..] {
            let Ok(f) = select_format(st, w) else { break };
            let mut trial = formats;
            trial.set(*t, f);
            let r = evaluate_formats(model, calib, &reference, trial)?;
            if r > budget {
                break;
            }
            formats = trial;
            rmse = r;
        }
    }

    Ok(QuantizationPlan {
        formats,
        achieved_rmse: rmse,
        reference: calibration_descriptor(model.dims(), calib.len()),
    })
}
