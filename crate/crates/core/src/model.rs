//! Screening model, fingerprints and the double-precision reference kernel.
//!
//! The reference kernel is the numeric oracle for every other engine in the
//! crate. Its summation order is fixed (ascending feature index for latents,
//! ascending latent index for scores, ascending sample index for the
//! aggregate), so identical inputs always give bit-identical outputs.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};
use crate::exec::{self, Execution};

/// Model dimensions: Gibbs samples, latent size, fingerprint length, proteins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub samples: usize,
    pub latent: usize,
    pub features: usize,
    pub proteins: usize,
}

impl Dims {
    pub const fn new(samples: usize, latent: usize, features: usize, proteins: usize) -> Self {
        Dims {
            samples,
            latent,
            features,
            proteins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.latent == 0 || self.features == 0 || self.proteins == 0 {
            return Err(VmsError::validation(format!(
                "all dimensions must be >= 1, got S={} K={} F={} P={}",
                self.samples, self.latent, self.features, self.proteins
            )));
        }
        Ok(())
    }

    pub fn link_len(&self) -> usize {
        self.samples * self.latent * self.features
    }

    pub fn protein_len(&self) -> usize {
        self.samples * self.proteins * self.latent
    }
}

impl Default for Dims {
    /// Desk-scale defaults: S=16, K=32, F=1024, P=64.
    fn default() -> Self {
        Dims::new(16, 32, 1024, 64)
    }
}

/// Frozen posterior samples: per sample a K×F link matrix and a P×K
/// protein-latent matrix, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningModel {
    dims: Dims,
    link: Vec<f64>,
    protein_latents: Vec<f64>,
}

impl ScreeningModel {
    pub fn new(dims: Dims, link: Vec<f64>, protein_latents: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if link.len() != dims.link_len() {
            return Err(VmsError::validation(format!(
                "link payload has {} values, expected S*K*F = {}",
                link.len(),
                dims.link_len()
            )));
        }
        if protein_latents.len() != dims.protein_len() {
            return Err(VmsError::validation(format!(
                "protein latent payload has {} values, expected S*P*K = {}",
                protein_latents.len(),
                dims.protein_len()
            )));
        }
        if let Some(i) = link.iter().position(|v| !v.is_finite()) {
            return Err(VmsError::validation(format!("non-finite link value at offset {i}")));
        }
        if let Some(i) = protein_latents.iter().position(|v| !v.is_finite()) {
            return Err(VmsError::validation(format!(
                "non-finite protein latent at offset {i}"
            )));
        }
        Ok(ScreeningModel {
            dims,
            link,
            protein_latents,
        })
    }

    /// Builds a model from element generators `link(s, k, f)` and
    /// `protein(s, p, k)`.
    pub fn from_fn(
        dims: Dims,
        mut link: impl FnMut(usize, usize, usize) -> f64,
        mut protein: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        dims.validate()?;
        let mut l = Vec::with_capacity(dims.link_len());
        for s in 0..dims.samples {
            for k in 0..dims.latent {
                for f in 0..dims.features {
                    l.push(link(s, k, f));
                }
            }
        }
        let mut v = Vec::with_capacity(dims.protein_len());
        for s in 0..dims.samples {
            for p in 0..dims.proteins {
                for k in 0..dims.latent {
                    v.push(protein(s, p, k));
                }
            }
        }
        ScreeningModel::new(dims, l, v)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn link(&self) -> &[f64] {
        &self.link
    }

    pub fn protein_latents(&self) -> &[f64] {
        &self.protein_latents
    }

    #[inline]
    pub fn link_at(&self, sample: usize, k: usize, f: usize) -> f64 {
        let d = &self.dims;
        self.link[(sample * d.latent + k) * d.features + f]
    }

    /// Latent row of `protein` in `sample`.
    #[inline]
    pub fn protein_row(&self, sample: usize, protein: usize) -> &[f64] {
        let d = &self.dims;
        let start = (sample * d.proteins + protein) * d.latent;
        &self.protein_latents[start..start + d.latent]
    }
}

/// Binary chemical fingerprint: the sorted set of active feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub molecule_id: String,
    pub active: Vec<u32>,
}

impl Fingerprint {
    pub fn new(molecule_id: impl Into<String>, active: Vec<u32>) -> Self {
        Fingerprint {
            molecule_id: molecule_id.into(),
            active,
        }
    }

    /// Checks strict ordering and the `< n_features` bound.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        for w in self.active.windows(2) {
            if w[0] >= w[1] {
                return Err(VmsError::validation(format!(
                    "molecule {}: feature indices not strictly increasing ({} then {})",
                    self.molecule_id, w[0], w[1]
                )));
            }
        }
        if let Some(&last) = self.active.last() {
            if last as usize >= n_features {
                return Err(VmsError::validation(format!(
                    "molecule {}: feature index {} out of range (F = {})",
                    self.molecule_id, last, n_features
                )));
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.active.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub molecule_id: String,
    pub protein_idx: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn check_sample(model: &ScreeningModel, sample: usize) -> Result<()> {
    if sample >= model.dims.samples {
        return Err(VmsError::validation(format!(
            "sample index {sample} out of range (S = {})",
            model.dims.samples
        )));
    }
    Ok(())
}

fn check_protein(model: &ScreeningModel, protein: usize) -> Result<()> {
    if protein >= model.dims.proteins {
        return Err(VmsError::validation(format!(
            "protein index {protein} out of range (P = {})",
            model.dims.proteins
        )));
    }
    Ok(())
}

/// Gather-sum of the link-matrix columns selected by the fingerprint.
pub fn compute_latent(model: &ScreeningModel, sample: usize, fp: &Fingerprint) -> Result<LatentVector> {
    check_sample(model, sample)?;
    fp.validate(model.dims.features)?;
    Ok(LatentVector(latent_unchecked(model, sample, fp, &mut 0)))
}

fn latent_unchecked(model: &ScreeningModel, sample: usize, fp: &Fingerprint, macs: &mut u64) -> Vec<f64> {
    let d = &model.dims;
    let mut u = vec![0.0; d.latent];
    for (k, uk) in u.iter_mut().enumerate() {
        let row = &model.link[(sample * d.latent + k) * d.features..][..d.features];
        for &f in &fp.active {
            *uk += row[f as usize];
        }
    }
    *macs += (d.latent * fp.active.len()) as u64;
    u
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Mean and sample standard deviation (S−1 denominator, 0 for one sample).
pub fn mean_std(scores: &[f64]) -> (f64, f64) {
    let n = scores.len();
    let mut sum = 0.0;
    for &y in scores {
        sum += y;
    }
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for &y in scores {
        ss += (y - mean) * (y - mean);
    }
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn predict_one(model: &ScreeningModel, fp: &Fingerprint, protein: usize) -> Result<Prediction> {
    check_protein(model, protein)?;
    fp.validate(model.dims.features)?;
    let scores: Vec<f64> = (0..model.dims.samples)
        .map(|s| {
            let u = latent_unchecked(model, s, fp, &mut 0);
            dot(&u, model.protein_row(s, protein))
        })
        .collect();
    let (mean, std) = mean_std(&scores);
    Ok(Prediction {
        molecule_id: fp.molecule_id.clone(),
        protein_idx: protein,
        mean,
        std,
    })
}

/// Per-sample scores `y[s][j]` of one molecule against `proteins`, counting
/// accumulations into `macs`.
#[allow(clippy::needless_range_loop)]
fn molecule_scores(model: &ScreeningModel, fp: &Fingerprint, proteins: &[usize], macs: &mut u64) -> Vec<Vec<f64>> {
    let d = &model.dims;
    let mut scores = vec![vec![0.0; d.samples]; proteins.len()];
    for s in 0..d.samples {
        let u = latent_unchecked(model, s, fp, macs);
        for (j, &p) in proteins.iter().enumerate() {
            scores[j][s] = dot(&u, model.protein_row(s, p));
        }
        *macs += (proteins.len() * d.latent) as u64;
    }
    scores
}

fn validate_batch(model: &ScreeningModel, fps: &[Fingerprint], proteins: &[usize]) -> Result<()> {
    for fp in fps {
        fp.validate(model.dims.features)?;
    }
    for &p in proteins {
        check_protein(model, p)?;
    }
    Ok(())
}

/// Virtual screen: one row per fingerprint, one column per requested protein.
pub fn screen(model: &ScreeningModel, fps: &[Fingerprint], proteins: &[usize]) -> Result<Vec<Vec<Prediction>>> {
    screen_with(Execution::default(), model, fps, proteins)
}

pub fn screen_with(
    exec: Execution,
    model: &ScreeningModel,
    fps: &[Fingerprint],
    proteins: &[usize],
) -> Result<Vec<Vec<Prediction>>> {
    validate_batch(model, fps, proteins)?;
    Ok(exec::map_range(exec, fps.len(), |i| {
        let fp = &fps[i];
        molecule_scores(model, fp, proteins, &mut 0)
            .iter()
            .zip(proteins)
            .map(|(ys, &p)| {
                let (mean, std) = mean_std(ys);
                Prediction {
                    molecule_id: fp.molecule_id.clone(),
                    protein_idx: p,
                    mean,
                    std,
                }
            })
            .collect()
    }))
}

/// Number of multiply-accumulates (gather-adds included) the reference
/// screen executes over all proteins, counted by the kernel loop itself.
pub fn reference_mac_count(model: &ScreeningModel, fps: &[Fingerprint]) -> Result<u64> {
    let proteins: Vec<usize> = (0..model.dims.proteins).collect();
    validate_batch(model, fps, &proteins)?;
    let mut macs = 0;
    for fp in fps {
        molecule_scores(model, fp, &proteins, &mut macs);
    }
    Ok(macs)
}

/// Parameters of the seeded synthetic model/fingerprint generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub dims: Dims,
    pub density: f64,
    pub n_molecules: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            dims: Dims::default(),
            density: 1.0 / 16.0,
            n_molecules: 100,
        }
    }
}

impl SyntheticSpec {
    /// Active features per fingerprint, `ceil(density * F)`.
    pub fn nnz(&self) -> usize {
        // tolerance absorbs products like 0.1 * 30 = 3.0000000000000004
        let raw = self.density * self.dims.features as f64 - 1e-9;
        (raw.ceil().max(1.0) as usize).min(self.dims.features)
    }
}

/// Deterministic Gaussian model with entries N(0, 1/K) and fingerprints
/// holding `ceil(density * F)` distinct random features each.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(ScreeningModel, Vec<Fingerprint>)> {
    spec.dims.validate()?;
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(VmsError::validation(format!(
            "density must lie in (0, 1], got {}",
            spec.density
        )));
    }
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0 / (d.latent as f64).sqrt())
        .map_err(|e| VmsError::validation(e.to_string()))?;
    let link: Vec<f64> = (0..d.link_len()).map(|_| normal.sample(&mut rng)).collect();
    let prot: Vec<f64> = (0..d.protein_len()).map(|_| normal.sample(&mut rng)).collect();
    let model = ScreeningModel::new(d, link, prot)?;

    let nnz = spec.nnz();
    let fps = (0..spec.n_molecules)
        .map(|i| {
            let mut active: Vec<u32> = index::sample(&mut rng, d.features, nnz)
                .into_iter()
                .map(|f| f as u32)
                .collect();
            active.sort_unstable();
            Fingerprint::new(format!("mol{i:05}"), active)
        })
        .collect();
    Ok((model, fps))
}

/// Root-mean-square difference of two equally long, non-empty series.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(VmsError::validation(format!(
            "rmse length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(VmsError::validation("rmse of empty series"));
    }
    let mut ss = 0.0;
    for (x, y) in a.iter().zip(b) {
        ss += (x - y) * (x - y);
    }
    Ok((ss / a.len() as f64).sqrt())
}
