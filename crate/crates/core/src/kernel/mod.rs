//! Fixed-point kernel forms: canonical, blocked (tiled) and dataflow.
//!
//! Every form produces the same per-sample raw scores. The reduction order
//! per output is fixed (features ascending for a latent element, latent
//! index ascending for a score) and blocking only restructures the loop
//! control, so results are bit-identical across forms and block shapes.

mod dataflow;
mod sim;

pub use dataflow::run_dataflow;
pub use sim::{
    sim_pipeline, simulate, LinkStats, PipelineSpec, SimReport, StageKind, StageSpec, StageStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};
use crate::exec::{self, Execution};
use crate::fixedpoint::{round_raw_to, Accumulator, FixedFormat};
use crate::model::{Dims, Fingerprint, Prediction};
use crate::quantize::QuantizedModel;

const LATENT_CTX: &str = "latent gather-sum";
const SCORE_CTX: &str = "score dot product";

/// Tile sizes along molecules, proteins, samples and latent dimension.
/// Tail tiles are allowed; sizes need not divide the dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub molecules: usize,
    pub proteins: usize,
    pub samples: usize,
    pub latent: usize,
}

impl BlockConfig {
    pub const fn new(molecules: usize, proteins: usize, samples: usize, latent: usize) -> Self {
        BlockConfig {
            molecules,
            proteins,
            samples,
            latent,
        }
    }

    pub fn ones() -> Self {
        BlockConfig::new(1, 1, 1, 1)
    }

    /// One block spanning everything.
    pub fn full(dims: Dims, n_molecules: usize) -> Self {
        BlockConfig::new(n_molecules.max(1), dims.proteins, dims.samples, dims.latent)
    }

    /// Caps each block size at its dimension; zero sizes are left for
    /// [`validate`](Self::validate) to reject.
    pub fn clamped(&self, dims: Dims) -> Self {
        BlockConfig::new(
            self.molecules,
            self.proteins.min(dims.proteins),
            self.samples.min(dims.samples),
            self.latent.min(dims.latent),
        )
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        let checks = [
            ("molecules", self.molecules, usize::MAX),
            ("proteins", self.proteins, dims.proteins),
            ("samples", self.samples, dims.samples),
            ("latent", self.latent, dims.latent),
        ];
        for (name, v, bound) in checks {
            if v == 0 || v > bound {
                return Err(VmsError::validation(format!(
                    "block size {name}={v} must lie in 1..={bound}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig::new(8, 16, 4, 8)
    }
}

/// Raw per-sample scores of a fixed-point screen over all proteins, laid out
/// `[molecule][protein][sample]` in the plan's OUTPUT format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedScreen {
    pub dims: Dims,
    pub n_molecules: usize,
    pub output: FixedFormat,
    pub scores: Vec<i64>,
}

impl FixedScreen {
    pub fn sample_scores(&self, molecule: usize, protein: usize) -> &[i64] {
        let s = self.dims.samples;
        let start = (molecule * self.dims.proteins + protein) * s;
        &self.scores[start..start + s]
    }

    /// Mean and standard deviation of one (molecule, protein) pair, derived
    /// from exact integer sums so every engine agrees bit for bit.
    pub fn mean_std(&self, molecule: usize, protein: usize) -> (f64, f64) {
        aggregate(self.sample_scores(molecule, protein), self.output)
    }

    /// Means, molecule-major then protein ascending.
    pub fn means(&self) -> Vec<f64> {
        (0..self.n_molecules)
            .flat_map(|m| (0..self.dims.proteins).map(move |p| (m, p)))
            .map(|(m, p)| self.mean_std(m, p).0)
            .collect()
    }

    pub fn predictions(&self, fps: &[Fingerprint], proteins: &[usize]) -> Vec<Vec<Prediction>> {
        (0..self.n_molecules)
            .map(|m| {
                proteins
                    .iter()
                    .map(|&p| {
                        let (mean, std) = self.mean_std(m, p);
                        Prediction {
                            molecule_id: fps[m].molecule_id.clone(),
                            protein_idx: p,
                            mean,
                            std,
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean and (S−1) standard deviation of raw scores in `fmt`.
pub fn aggregate(raws: &[i64], fmt: FixedFormat) -> (f64, f64) {
    let n = raws.len() as i128;
    let sum: i128 = raws.iter().map(|&r| r as i128).sum();
    let mean = (sum as f64 / n as f64) * fmt.resolution();
    if n < 2 {
        return (mean, 0.0);
    }
    let sum_sq: i128 = raws.iter().map(|&r| (r as i128) * (r as i128)).sum();
    let var_num = n * sum_sq - sum * sum;
    let var = var_num as f64 / (n * (n - 1)) as f64;
    (mean, var.sqrt() * fmt.resolution())
}

fn validate_inputs(qm: &QuantizedModel, fps: &[Fingerprint]) -> Result<()> {
    for fp in fps {
        fp.validate(qm.dims().features)?;
    }
    Ok(())
}

/// Narrowed latent element `k` of `sample` for `fp`.
#[inline]
fn latent_element(qm: &QuantizedModel, sample: usize, k: usize, fp: &Fingerprint) -> Result<i64> {
    let d = qm.dims();
    let f = qm.formats();
    let row = &qm.link_raw()[(sample * d.latent + k) * d.features..][..d.features];
    let mut acc = Accumulator::new(f.link.frac(), LATENT_CTX);
    for &feat in &fp.active {
        acc.add_aligned(row[feat as usize] as i128)?;
    }
    Ok(round_raw_to(acc.raw(), acc.frac(), f.latent_intermediate))
}

fn score_frac(qm: &QuantizedModel) -> u32 {
    qm.formats().latent_intermediate.frac() + qm.formats().prot_latent.frac()
}

/// Canonical evaluation: per molecule and sample the full latent vector,
/// then each protein's dot product. The oracle for the other forms.
pub fn run_unblocked(qm: &QuantizedModel, fps: &[Fingerprint]) -> Result<FixedScreen> {
    validate_inputs(qm, fps)?;
    let d = qm.dims();
    let out_fmt = qm.formats().output;
    let frac = score_frac(qm);
    let rows = exec::try_map_range(Execution::default(), fps.len(), |m| -> Result<Vec<i64>> {
        let mut out = vec![0i64; d.proteins * d.samples];
        for s in 0..d.samples {
            let u = (0..d.latent)
                .map(|k| latent_element(qm, s, k, &fps[m]))
                .collect::<Result<Vec<_>>>()?;
            for p in 0..d.proteins {
                let v = &qm.protein_raw()[(s * d.proteins + p) * d.latent..][..d.latent];
                let mut acc = Accumulator::new(frac, SCORE_CTX);
                for k in 0..d.latent {
                    acc.add_aligned(u[k] as i128 * v[k] as i128)?;
                }
                out[p * d.samples + s] = round_raw_to(acc.raw(), frac, out_fmt);
            }
        }
        Ok(out)
    })?;
    Ok(FixedScreen {
        dims: d,
        n_molecules: fps.len(),
        output: out_fmt,
        scores: rows.concat(),
    })
}

pub fn run_blocked(qm: &QuantizedModel, fps: &[Fingerprint], cfg: &BlockConfig) -> Result<FixedScreen> {
    run_blocked_with(Execution::default(), qm, fps, cfg)
}

/// Tiled evaluation. Molecule tiles are independent and may run in
/// parallel; inside a tile the loop nest is samples → latent → proteins,
/// with score partial sums carried across latent tiles.
pub fn run_blocked_with(
    exec: Execution,
    qm: &QuantizedModel,
    fps: &[Fingerprint],
    cfg: &BlockConfig,
) -> Result<FixedScreen> {
    let d = qm.dims();
    cfg.validate(d)?;
    validate_inputs(qm, fps)?;
    let out_fmt = qm.formats().output;
    let frac = score_frac(qm);
    let n_tiles = fps.len().div_ceil(cfg.molecules);
    let tiles = exec::try_map_range(exec, n_tiles, |t| {
        let m0 = t * cfg.molecules;
        let m1 = (m0 + cfg.molecules).min(fps.len());
        blocked_tile(qm, &fps[m0..m1], cfg, frac, out_fmt)
    })?;
    Ok(FixedScreen {
        dims: d,
        n_molecules: fps.len(),
        output: out_fmt,
        scores: tiles.concat(),
    })
}

fn blocked_tile(
    qm: &QuantizedModel,
    fps: &[Fingerprint],
    cfg: &BlockConfig,
    frac: u32,
    out_fmt: FixedFormat,
) -> Result<Vec<i64>> {
    let d = qm.dims();
    let nm = fps.len();
    let mut out = vec![0i64; nm * d.proteins * d.samples];
    let prot = qm.protein_raw();

    for s0 in (0..d.samples).step_by(cfg.samples) {
        let s1 = (s0 + cfg.samples).min(d.samples);
        let ns = s1 - s0;
        // score partial sums for this (molecule tile, sample tile), [m][s][p]
        let mut acc = vec![Accumulator::new(frac, SCORE_CTX); nm * ns * d.proteins];
        for k0 in (0..d.latent).step_by(cfg.latent) {
            let k1 = (k0 + cfg.latent).min(d.latent);
            let nk = k1 - k0;
            let mut lat = vec![0i64; nm * ns * nk];
            for m in 0..nm {
                for s in s0..s1 {
                    for k in k0..k1 {
                        lat[(m * ns + (s - s0)) * nk + (k - k0)] = latent_element(qm, s, k, &fps[m])?;
                    }
                }
            }
            for p0 in (0..d.proteins).step_by(cfg.proteins) {
                let p1 = (p0 + cfg.proteins).min(d.proteins);
                for m in 0..nm {
                    for s in s0..s1 {
                        let u = &lat[(m * ns + (s - s0)) * nk..][..nk];
                        for p in p0..p1 {
                            let v = &prot[(s * d.proteins + p) * d.latent + k0..][..nk];
                            let a = &mut acc[(m * ns + (s - s0)) * d.proteins + p];
                            for (x, y) in u.iter().zip(v) {
                                a.add_aligned(*x as i128 * *y as i128)?;
                            }
                        }
                    }
                }
            }
        }
        for m in 0..nm {
            for s in s0..s1 {
                for p in 0..d.proteins {
                    let a = &acc[(m * ns + (s - s0)) * d.proteins + p];
                    out[(m * d.proteins + p) * d.samples + s] = round_raw_to(a.raw(), frac, out_fmt);
                }
            }
        }
    }
    Ok(out)
}

/// Latent vectors of `fp` for the samples in `samples`, computed in latent
/// tiles of `bk`; `[s][k]` layout.
pub(crate) fn latent_block(
    qm: &QuantizedModel,
    fp: &Fingerprint,
    samples: std::ops::Range<usize>,
    bk: usize,
) -> Result<Vec<i64>> {
    let d = qm.dims();
    let mut out = vec![0i64; samples.len() * d.latent];
    for k0 in (0..d.latent).step_by(bk) {
        let k1 = (k0 + bk).min(d.latent);
        for (i, s) in samples.clone().enumerate() {
            for k in k0..k1 {
                out[i * d.latent + k] = latent_element(qm, s, k, fp)?;
            }
        }
    }
    Ok(out)
}

/// Scores for `samples` × all proteins from latents laid out `[s][k]`,
/// tiled by `bp` proteins and `bk` latent elements; `[p][s]` layout.
pub(crate) fn score_block(
    qm: &QuantizedModel,
    latents: &[i64],
    samples: std::ops::Range<usize>,
    bp: usize,
    bk: usize,
) -> Result<Vec<i64>> {
    let d = qm.dims();
    let frac = score_frac(qm);
    let ns = samples.len();
    let mut acc = vec![Accumulator::new(frac, SCORE_CTX); d.proteins * ns];
    for k0 in (0..d.latent).step_by(bk) {
        let k1 = (k0 + bk).min(d.latent);
        for p0 in (0..d.proteins).step_by(bp) {
            let p1 = (p0 + bp).min(d.proteins);
            for p in p0..p1 {
                for (i, s) in samples.clone().enumerate() {
                    let u = &latents[i * d.latent + k0..i * d.latent + k1];
                    let v = &qm.protein_raw()[(s * d.proteins + p) * d.latent + k0..][..k1 - k0];
                    let a = &mut acc[p * ns + i];
                    for (x, y) in u.iter().zip(v) {
                        a.add_aligned(*x as i128 * *y as i128)?;
                    }
                }
            }
        }
    }
    let out_fmt = qm.formats().output;
    Ok(acc.iter().map(|a| round_raw_to(a.raw(), frac, out_fmt)).collect())
}
