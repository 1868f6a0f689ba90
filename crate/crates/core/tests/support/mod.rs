//! Independent oracles shared by integration and acceptance tests. None of
//! them call the code paths they check.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vms_core::fixedpoint::FixedFormat;
use vms_core::kernel::BlockConfig;
use vms_core::model::{generate_synthetic, Dims, Fingerprint, ScreeningModel, SyntheticSpec};
use vms_core::perfmodel::{
    estimate_resources, estimate_time, DeviceDescriptor, KernelConfig, OperandWidths, SearchSpace, Workload,
};
use vms_core::quantize::{profile_ranges, quantize_model, select_format, QuantizationPlan, QuantizedModel, TensorFormats};

/// Rounds `raw / 2^shift` to nearest, ties to even, for any sign of shift.
pub fn shift_round_even(raw: i128, shift: i64) -> i128 {
    if shift <= 0 {
        return raw << (-shift);
    }
    let div = 1i128 << shift;
    let q = raw.div_euclid(div);
    let r = raw.rem_euclid(div);
    let half = div / 2;
    if r > half || (r == half && q % 2 != 0) {
        q + 1
    } else {
        q
    }
}

pub fn saturate(raw: i128, fmt: FixedFormat) -> i64 {
    let hi = (1i128 << (fmt.width() - 1)) - 1;
    let lo = -(1i128 << (fmt.width() - 1));
    raw.clamp(lo, hi) as i64
}

/// Per-sample raw scores `[m][p][s]` in the OUTPUT format, recomputed with
/// plain integer arithmetic.
pub fn oracle_scores(qm: &QuantizedModel, fps: &[Fingerprint]) -> Vec<i64> {
    let d = qm.dims();
    let f = *qm.formats();
    let (fl, fp) = (f.link.frac() as i64, f.prot_latent.frac() as i64);
    let (fi, fo) = (f.latent_intermediate.frac() as i64, f.output.frac() as i64);
    let link = qm.link_raw();
    let prot = qm.protein_raw();
    let mut out = Vec::with_capacity(fps.len() * d.proteins * d.samples);
    for fpr in fps {
        let mut scores = vec![0i64; d.proteins * d.samples];
        for s in 0..d.samples {
            let latent: Vec<i128> = (0..d.latent)
                .map(|k| {
                    let base = (s * d.latent + k) * d.features;
                    let sum: i128 = fpr.active.iter().map(|&a| link[base + a as usize] as i128).sum();
                    saturate(shift_round_even(sum, fl - fi), f.latent_intermediate) as i128
                })
                .collect();
            for p in 0..d.proteins {
                let row = &prot[(s * d.proteins + p) * d.latent..][..d.latent];
                let dot: i128 = latent.iter().zip(row).map(|(&u, &v)| u * v as i128).sum();
                scores[p * d.samples + s] = saturate(shift_round_even(dot, fi + fp - fo), f.output);
            }
        }
        out.extend(scores);
    }
    out
}

/// Means `[m][p]` of oracle scores.
pub fn oracle_means(qm: &QuantizedModel, fps: &[Fingerprint]) -> Vec<f64> {
    let s = qm.dims().samples;
    let res = qm.formats().output.resolution();
    oracle_scores(qm, fps)
        .chunks(s)
        .map(|c| c.iter().map(|&r| r as i128).sum::<i128>() as f64 / s as f64 * res)
        .collect()
}

/// Float64 means `[m][p]` by direct loops.
pub fn float_means(m: &ScreeningModel, fps: &[Fingerprint]) -> Vec<f64> {
    let d = m.dims();
    let mut out = Vec::new();
    for fp in fps {
        let latents: Vec<Vec<f64>> = (0..d.samples)
            .map(|s| {
                (0..d.latent)
                    .map(|k| fp.active.iter().map(|&a| m.link()[(s * d.latent + k) * d.features + a as usize]).sum())
                    .collect()
            })
            .collect();
        for p in 0..d.proteins {
            let total: f64 = (0..d.samples)
                .map(|s| {
                    let row = &m.protein_latents()[(s * d.proteins + p) * d.latent..][..d.latent];
                    latents[s].iter().zip(row).map(|(u, v)| u * v).sum::<f64>()
                })
                .sum();
            out.push(total / d.samples as f64);
        }
    }
    out
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Random desk-scale model, fingerprints and a quantization plan with
/// per-tensor widths in 6..=24.
pub fn random_case(rng: &mut ChaCha8Rng) -> (ScreeningModel, QuantizedModel, Vec<Fingerprint>) {
    let dims = Dims::new(
        rng.gen_range(1..=16),
        rng.gen_range(1..=32),
        rng.gen_range(1..=1024),
        rng.gen_range(1..=64),
    );
    let spec = SyntheticSpec {
        seed: rng.gen(),
        dims,
        density: rng.gen_range(0.0..0.2),
        n_molecules: rng.gen_range(1..=6),
    };
    let (m, fps) = generate_synthetic(&spec).unwrap();
    let stats = profile_ranges(&m, &fps).unwrap();
    let mut formats = TensorFormats::uniform(FixedFormat::new(16, 8).unwrap());
    for st in &stats {
        let w = rng.gen_range(6..=24);
        let f = select_format(st, w).unwrap_or(FixedFormat::new(w, 0).unwrap());
        formats.set(st.tensor, f);
    }
    let plan = QuantizationPlan {
        formats,
        achieved_rmse: 0.0,
        reference: String::new(),
    };
    let qm = quantize_model(&m, &plan).unwrap();
    (m, qm, fps)
}

pub fn random_block(rng: &mut ChaCha8Rng, d: Dims) -> BlockConfig {
    BlockConfig::new(
        rng.gen_range(1..=8),
        rng.gen_range(1..=d.proteins),
        rng.gen_range(1..=d.samples),
        rng.gen_range(1..=d.latent),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Completion cycle of `n` unit tokens through a rate-1 chain of
/// (latency, ii) stages with the given FIFO depths, by the max-plus
/// recurrence
/// `t[i][j] = max(t[i][j-1] + ii[i], t[i-1][j] + lat[i-1], t[i+1][j-depth[i]])`.
pub fn maxplus_cycles(stages: &[(u32, u32)], depths: &[usize], n: usize) -> u64 {
    if n == 0 {
        return 0;
    }
    let k = stages.len();
    let mut t = vec![vec![0u64; n]; k];
    for j in 0..n {
        for i in 0..k {
            let mut v = 0;
            if j > 0 {
                v = v.max(t[i][j - 1] + stages[i].1 as u64);
            }
            if i > 0 {
                v = v.max(t[i - 1][j] + stages[i - 1].0 as u64);
            }
            if i + 1 < k && j >= depths[i] {
                v = v.max(t[i + 1][j - depths[i]]);
            }
            t[i][j] = v;
        }
    }
    t[k - 1][n - 1] + stages[k - 1].0 as u64
}

fn divisors(n: usize, bound: usize) -> Vec<usize> {
    let mut v = Vec::new();
    for d in 1..=n {
        if d <= bound && n.is_multiple_of(d) {
            v.push(d);
        }
    }
    v
}

/// Fastest feasible config by nested loops in lexicographic order,
/// replacing only on strictly better (seconds, dsp).
pub fn exhaustive_tune(
    w: &Workload,
    dev: &DeviceDescriptor,
    widths: OperandWidths,
    space: &SearchSpace,
) -> Option<(KernelConfig, f64, f64)> {
    let mut cs = Vec::new();
    let mut c = 1u64;
    while c <= w.n_molecules {
        cs.push(c);
        c *= 2;
    }
    let mut best: Option<(KernelConfig, f64, f64)> = None;
    let d = w.dims;
    for uk in divisors(d.latent, space.max_unroll_latent) {
        for us in divisors(d.samples, space.max_unroll_samples) {
            for up in divisors(d.proteins, space.max_unroll_proteins) {
                for uf in divisors(d.features, space.max_unroll_features) {
                    for &c in &cs {
                        for inst in 1..=dev.n_regions.min(space.max_instances) {
                            let cfg = KernelConfig {
                                unroll_latent: uk,
                                unroll_samples: us,
                                unroll_proteins: up,
                                unroll_features: uf,
                                compounds_per_invocation: c,
                                n_instances: inst,
                                widths,
                                initiation_interval: 1,
                            };
                            let Ok(e) = estimate_time(&cfg, w, dev, space.overlap) else {
                                continue;
                            };
                            let dsp = estimate_resources(&cfg, d, dev).dsp_used;
                            let better = match &best {
                                None => true,
                                Some((_, s, q)) => e.seconds < *s || (e.seconds == *s && dsp < *q),
                            };
                            if better {
                                best = Some((cfg, e.seconds, dsp));
                            }
                        }
                    }
                }
            }
        }
    }
    best
}

/// Random workload, device, widths and search bounds for autotuner checks;
/// roughly one in six problems is infeasible.
pub fn random_problem(rng: &mut impl Rng) -> (Workload, DeviceDescriptor, OperandWidths, SearchSpace) {
    let pick = |rng: &mut _, xs: &[usize]| *xs.choose(rng).unwrap();
    let dims = Dims::new(
        pick(rng, &[1, 2, 4, 6, 8, 12, 16]),
        pick(rng, &[1, 3, 4, 8, 16, 32]),
        pick(rng, &[16, 64, 96, 256, 1024]),
        pick(rng, &[1, 5, 8, 16, 64]),
    );
    let w = Workload {
        n_molecules: rng.gen_range(1..=5000),
        dims,
        nnz: rng.gen_range(1..=dims.features as u64),
    };
    let mut dev = DeviceDescriptor::bundled("paper-fpga").unwrap();
    dev.dsp_total = if rng.gen_bool(0.1) { 1 } else { rng.gen_range(1..=4000) };
    dev.n_regions = rng.gen_range(1..=4);
    dev.onchip_bits = if rng.gen_bool(0.1) { 1_000 } else { rng.gen_range(1_000..=50_000_000) };
    dev.dram_bandwidth_gbs = rng.gen_range(0.5..100.0);
    dev.invocation_overhead_s = [0.0, 1e-6, 2e-5][rng.gen_range(0..3)];
    let widths = OperandWidths {
        link: rng.gen_range(4..=32),
        prot_latent: rng.gen_range(4..=32),
        latent: rng.gen_range(4..=32),
        output: rng.gen_range(4..=32),
    };
    let space = SearchSpace {
        max_unroll_latent: rng.gen_range(1..=16),
        max_unroll_samples: rng.gen_range(1..=16),
        max_unroll_proteins: rng.gen_range(1..=16),
        max_unroll_features: rng.gen_range(1..=16),
        max_instances: rng.gen_range(1..=4),
        overlap: rng.gen(),
    };
    (w, dev, widths, space)
}
