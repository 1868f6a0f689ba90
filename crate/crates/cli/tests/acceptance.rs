//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use vms_core::commands::plan_widths;
use vms_core::fixedpoint::{dequantize_raw, quantize_raw, FixedFormat};
use vms_core::io::{
    encode_model, parse_fingerprints, parse_predictions, read_model, write_fingerprints, write_predictions,
};
use vms_core::kernel::{run_blocked, run_dataflow, run_unblocked, sim_pipeline, PipelineSpec, StageSpec};
use vms_core::model::{generate_synthetic, Dims, Fingerprint, ScreeningModel, SyntheticSpec};
use vms_core::perfmodel::{
    autotune, pct_peak_rounded, peak_performance, step_ledger, Candidates, DeviceDescriptor, SearchSpace, Workload,
};
use vms_core::quantize::{quantize_model, refine_bitwidths, QuantizationPlan};
use vms_core::VmsError;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn table_closure() -> Result<String, String> {
    let mut got = Vec::new();
    for (name, want) in [("paper-cpu", 13), ("paper-gpu", 17), ("paper-fpga", 38)] {
        let d = DeviceDescriptor::bundled(name).ok_or("missing descriptor")?;
        let peak = peak_performance(&d).map_err(|e| e.to_string())?;
        let ach = d.reported_achieved_gflops.ok_or("missing achieved")?;
        let pct = pct_peak_rounded(ach, peak).map_err(|e| e.to_string())?;
        ensure!(pct == want, "{name}: {pct}% != {want}%");
        got.push(format!("{pct}%"));
    }
    Ok(got.join("/"))
}

fn peak_closure() -> Result<String, String> {
    let d = DeviceDescriptor::bundled("paper-fpga").ok_or("missing descriptor")?;
    ensure!(d.mac_units == 6840 && d.clock_ghz == 0.1 && d.flops_per_mac == 1, "descriptor drifted: {d:?}");
    let peak = peak_performance(&d).map_err(|e| e.to_string())?;
    ensure!(peak == 684.0, "peak {peak}");
    Ok("684 GF/s".into())
}

const SUITE_SEED: u64 = 0xB10C;
const SUITE_LEN: usize = 200;

fn blocking_transparency() -> Result<String, String> {
    let mut rng = support::rng(SUITE_SEED);
    let mut non_divisible = 0;
    for i in 0..SUITE_LEN {
        let (_, qm, fps) = support::random_case(&mut rng);
        let cfg = support::random_block(&mut rng, qm.dims());
        let d = qm.dims();
        if d.proteins % cfg.proteins != 0 || d.samples % cfg.samples != 0 || d.latent % cfg.latent != 0 {
            non_divisible += 1;
        }
        let want = run_unblocked(&qm, &fps).map_err(|e| e.to_string())?;
        let got = run_blocked(&qm, &fps, &cfg).map_err(|e| e.to_string())?;
        ensure!(got == want, "case {i}: {cfg:?} differs");
        ensure!(want.scores == support::oracle_scores(&qm, &fps), "case {i}: canonical kernel differs from oracle");
    }
    ensure!(non_divisible > 0, "suite has no tail blocks");
    Ok(format!("{SUITE_LEN} triples, {non_divisible} with tail blocks"))
}

fn dataflow_equivalence() -> Result<String, String> {
    let mut rng = support::rng(SUITE_SEED);
    for i in 0..SUITE_LEN {
        let (_, qm, fps) = support::random_case(&mut rng);
        let cfg = support::random_block(&mut rng, qm.dims());
        let (got, _) = run_dataflow(&qm, &fps, &PipelineSpec::default(), &cfg).map_err(|e| e.to_string())?;
        ensure!(got == run_blocked(&qm, &fps, &cfg).unwrap(), "case {i}: dataflow differs");
    }

    let mut rng = support::rng(4);
    for _ in 0..100 {
        let (l, ii, n) = (rng.gen_range(1..=20u32), rng.gen_range(1..=5u32), rng.gen_range(1..=200u64));
        let r = sim_pipeline(&PipelineSpec::single(StageSpec::new("S", l, ii)), n as usize).unwrap();
        ensure!(r.total_cycles == l as u64 + (n - 1) * ii as u64, "single stage L={l} II={ii} n={n}: {}", r.total_cycles);
    }

    let mut specs = 0;
    for _ in 0..50 {
        let k = rng.gen_range(2..=4);
        let stages: Vec<(u32, u32)> = (0..k).map(|_| (rng.gen_range(1..=8), rng.gen_range(1..=3))).collect();
        let depths: Vec<usize> = (0..k - 1).map(|_| rng.gen_range(1..=3)).collect();
        let n = rng.gen_range(1..=20u64);
        let pipe = PipelineSpec::new(
            stages.iter().enumerate().map(|(i, &(l, ii))| StageSpec::new(format!("S{i}"), l, ii)).collect(),
            depths.clone(),
        )
        .unwrap();
        let total = sim_pipeline(&pipe, n as usize).unwrap().total_cycles;
        let lat: u64 = stages.iter().map(|s| s.0 as u64).sum();
        let max_ii = stages.iter().map(|s| s.1 as u64).max().unwrap();
        ensure!(total >= lat + (n - 1) * max_ii, "{stages:?}: {total} below bound");
        let oracle = support::maxplus_cycles(&stages, &depths, n as usize);
        ensure!(total == oracle, "{stages:?} {depths:?} n={n}: sim {total}, hand-stepped {oracle}");
        specs += 1;
    }
    Ok(format!("{SUITE_LEN} numeric cases, 100 single-stage, {specs} multi-stage specs"))
}

fn grid_model() -> (ScreeningModel, Vec<Fingerprint>) {
    let dims = Dims::new(2, 2, 4, 2);
    let m = ScreeningModel::from_fn(
        dims,
        |s, k, f| ((s + 2 * k + 3 * f) % 7) as f64 / 4.0 - 0.75,
        |s, p, k| ((s + p + k) % 3) as f64 / 2.0 - 0.5,
    )
    .unwrap();
    let fps = (0u32..16)
        .map(|mask| Fingerprint::new(format!("g{mask}"), (0..4).filter(|b| mask >> b & 1 == 1).collect()))
        .collect();
    (m, fps)
}

fn quantization_soundness() -> Result<String, String> {
    let mut rng = support::rng(5);
    let formats = ["W2F0", "W4F3", "W8F7", "W8F4", "W8F0", "W12F6", "W16F8", "W16F15", "W24F12", "W32F16", "W32F31"];
    for f in formats {
        let fmt: FixedFormat = f.parse().unwrap();
        let bound = 2f64.powi(-(fmt.frac() as i32) - 1);
        for _ in 0..100_000 {
            let x = rng.gen_range(fmt.real_min()..=fmt.real_max());
            let back = dequantize_raw(quantize_raw(x, fmt).unwrap(), fmt);
            ensure!((back - x).abs() <= bound, "{f}: x={x} -> {back}");
        }
    }

    let mut plans = 0;
    for seed in 0..24u64 {
        let spec = SyntheticSpec {
            seed,
            dims: Dims::new(4, 8, 256, 8),
            density: 0.05,
            n_molecules: 16,
        };
        let (m, fps) = generate_synthetic(&spec).unwrap();
        let budget = [1e-4, 1e-3, 1e-2][seed as usize % 3];
        let plan = refine_bitwidths(&m, &fps, budget, &[24, 16, 12, 8]).map_err(|e| format!("seed {seed}: {e}"))?;
        let qm = quantize_model(&m, &plan).unwrap();
        let r = support::rmse(&support::float_means(&m, &fps), &support::oracle_means(&qm, &fps));
        ensure!(r <= budget, "seed {seed}: re-evaluated rmse {r} > budget {budget}");
        plans += 1;
    }

    let (m, fps) = grid_model();
    let plan = refine_bitwidths(&m, &fps, 1e-12, &[16, 12, 8]).map_err(|e| e.to_string())?;
    let widths = plan_widths(Some(&plan));
    ensure!(
        [widths.link, widths.prot_latent, widths.latent, widths.output] == [8; 4],
        "grid model plan {}",
        plan.to_toml()
    );
    ensure!(plan.achieved_rmse == 0.0, "grid rmse {}", plan.achieved_rmse);
    let qm = quantize_model(&m, &plan).unwrap();
    ensure!(support::oracle_means(&qm, &fps) == support::float_means(&m, &fps), "grid means differ");
    Ok(format!("{} formats x 1e5 draws, {plans} budget plans, W8 grid rmse 0", formats.len()))
}

fn bitwidth_viability() -> Result<String, String> {
    let (m, fps) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let reference = support::float_means(&m, &fps);
    let w16 = refine_bitwidths(&m, &fps, 1e300, &[16]).map_err(|e| e.to_string())?;
    let r16 = support::rmse(&reference, &support::oracle_means(&quantize_model(&m, &w16).unwrap(), &fps));
    ensure!(r16 <= 1e-3, "W16 rmse {r16}");
    let mixed = refine_bitwidths(&m, &fps, 1e-2, &[16, 8]).map_err(|e| format!("mixed search: {e}"))?;
    let rm = support::rmse(&reference, &support::oracle_means(&quantize_model(&m, &mixed).unwrap(), &fps));
    ensure!(rm <= 1e-2, "mixed plan rmse {rm}");
    let w = plan_widths(Some(&mixed));
    Ok(format!(
        "W16 rmse {r16:.2e}; mixed plan {}/{}/{}/{} bits rmse {rm:.2e}",
        w.link, w.prot_latent, w.latent, w.output
    ))
}

fn autotuner_correctness() -> Result<String, String> {
    let mut rng = support::rng(7);
    let (mut feasible, mut infeasible) = (0, 0);
    while feasible + infeasible < 80 {
        let (w, dev, widths, space) = support::random_problem(&mut rng);
        if Candidates::new(&w, &dev, &space).len() > 10_000 {
            continue;
        }
        match (autotune(&w, &dev, widths, &space), support::exhaustive_tune(&w, &dev, widths, &space)) {
            (Ok((cfg, est)), Some((ocfg, secs, dsp))) => {
                ensure!(cfg == ocfg && est.seconds == secs && est.dsp_used == dsp, "{cfg:?} vs {ocfg:?}");
                feasible += 1;
            }
            (Err(VmsError::Infeasible { .. }), None) => infeasible += 1,
            (got, want) => return Err(format!("{got:?} vs {want:?}")),
        }
    }
    ensure!(infeasible > 0, "no infeasible spaces drawn");
    Ok(format!("{feasible} feasible + {infeasible} infeasible spaces"))
}

fn ledger_structure() -> Result<String, String> {
    let dev = DeviceDescriptor::bundled("paper-fpga").unwrap();
    let ledger = step_ledger(&Workload::default(), &dev, plan_widths(None), &SearchSpace::default())
        .map_err(|e| e.to_string())?;
    ensure!(ledger.steps.len() == 6, "{} steps", ledger.steps.len());
    let mut prod = 1.0;
    for s in &ledger.steps {
        ensure!(s.factor >= 1.0, "{} factor {}", s.name, s.factor);
        prod *= s.factor;
        ensure!(prod == s.cumulative, "{}: product {prod} != cumulative {}", s.name, s.cumulative);
    }
    let text = vms_core::commands::ledger_text(&ledger, &dev);
    ensure!(text.contains("1351") && text.contains("280"), "annotation missing");
    Ok(format!(
        "model {:.0}x speedup, {:.0}x DSP (published 1351x/280x, annotated only)",
        ledger.total_factor(),
        ledger.resource_growth
    ))
}

fn vms(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vms"))
        .current_dir(dir)
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "vms {}: {}\n{}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn end_to_end() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let read = |n: &str| std::fs::read(dir.join(n)).unwrap();
    let text = |n: &str| String::from_utf8(read(n)).unwrap();

    vms(dir, &["gen", "--model-out", "m.bin", "--fingerprints-out", "f.tsv"])?;
    vms(dir, &["gen", "--model-out", "m2.bin", "--fingerprints-out", "f2.tsv"])?;
    ensure!(read("m.bin") == read("m2.bin") && read("f.tsv") == read("f2.tsv"), "gen not deterministic");
    vms(
        dir,
        &["calibrate", "--model", "m.bin", "--calibration", "f.tsv", "--plan-out", "plan.toml", "--quantized-out", "q.bin"],
    )?;
    for e in ["reference", "blocked", "dataflow"] {
        vms(
            dir,
            &["predict", "--model", "q.bin", "--fingerprints", "f.tsv", "--engine", e, "--out", &format!("{e}.csv")],
        )?;
    }
    ensure!(read("reference.csv") == read("blocked.csv"), "reference vs blocked CSV differ");
    ensure!(read("reference.csv") == read("dataflow.csv"), "reference vs dataflow CSV differ");
    vms(dir, &["tune", "--plan", "plan.toml", "--out", "tune.toml"])?;
    vms(
        dir,
        &["report", "--device", "paper-cpu", "paper-gpu", "paper-fpga", "--plan", "plan.toml", "--out-dir", "report"],
    )?;
    for f in ["report/table.csv", "report/table.txt", "report/ledger.csv", "report/ledger.txt"] {
        ensure!(dir.join(f).exists(), "{f} missing");
    }

    for name in ["m.bin", "q.bin"] {
        let m = read_model(&dir.join(name)).map_err(|e| e.to_string())?;
        ensure!(encode_model(&m) == read(name), "{name} not byte-stable");
    }
    let fps = parse_fingerprints(&text("f.tsv"), "f.tsv", None).map_err(|e| e.to_string())?;
    ensure!(write_fingerprints(&fps) == text("f.tsv"), "fingerprints not byte-stable");
    let plan = QuantizationPlan::from_toml(&text("plan.toml")).map_err(|e| e.to_string())?;
    ensure!(plan.to_toml() == text("plan.toml"), "plan not byte-stable");
    let rows = parse_predictions(&text("reference.csv"), "reference.csv").map_err(|e| e.to_string())?;
    ensure!(write_predictions(&rows) == text("reference.csv"), "predictions not byte-stable");
    ensure!(rows.len() == fps.len() * Dims::default().proteins, "{} rows", rows.len());
    Ok(format!("{} prediction rows, three engines identical", rows.len()))
}

fn main() {
    let criteria: [(&str, Check, Duration); 9] = [
        ("table metric closure", table_closure, Duration::from_secs(1)),
        ("peak-definition closure", peak_closure, Duration::from_secs(1)),
        ("blocking transparency", blocking_transparency, Duration::from_secs(60)),
        ("dataflow equivalence and timing", dataflow_equivalence, Duration::from_secs(60)),
        ("quantization soundness", quantization_soundness, Duration::from_secs(120)),
        ("16/8-bit viability", bitwidth_viability, Duration::from_secs(120)),
        ("autotuner correctness", autotuner_correctness, Duration::from_secs(60)),
        ("step-ledger structure", ledger_structure, Duration::from_secs(10)),
        ("end-to-end CLI", end_to_end, Duration::from_secs(300)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}. {name}: {why} ({elapsed:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
