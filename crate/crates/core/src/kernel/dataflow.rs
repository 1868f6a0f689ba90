//! Five-stage streaming form of the kernel, driven by the cycle simulator.
//!
//! FETCH reads one fingerprint per firing. LATENT splits the Gibbs samples
//! into `produce` equal groups and emits one latent token per group;
//! PREDICT turns each into per-protein scores; AGGREGATE regroups the
//! `consume` tokens of one molecule; EMIT streams the result out.

use super::sim::{simulate, PipelineSpec, SimReport, StageKind};
use super::{latent_block, score_block, BlockConfig, FixedScreen};
use crate::error::{Result, VmsError};
use crate::model::Fingerprint;
use crate::quantize::QuantizedModel;

enum Token {
    Molecule(usize),
    Latent {
        molecule: usize,
        samples: std::ops::Range<usize>,
        values: Vec<i64>,
    },
    Scores {
        molecule: usize,
        samples: std::ops::Range<usize>,
        values: Vec<i64>,
    },
    Done {
        molecule: usize,
        values: Vec<i64>,
    },
}

fn check_rates(pipe: &PipelineSpec, n_samples: usize) -> Result<usize> {
    pipe.validate_dataflow()?;
    let rate = |k: StageKind| {
        let s = pipe.stage(k);
        (s.consume as usize, s.produce as usize)
    };
    let groups = rate(StageKind::Latent).1;
    let ok = rate(StageKind::Fetch) == (1, 1)
        && rate(StageKind::Latent).0 == 1
        && rate(StageKind::Predict) == (1, 1)
        && rate(StageKind::Aggregate) == (groups, 1)
        && rate(StageKind::Emit) == (1, 1)
        && n_samples.is_multiple_of(groups);
    if !ok {
        return Err(VmsError::validation(format!(
            "dataflow rates must be FETCH 1/1, LATENT 1/g, PREDICT 1/1, AGGREGATE g/1, EMIT 1/1 \
             with g dividing S={n_samples}; got g={groups}"
        )));
    }
    Ok(groups)
}

/// Streams `fps` through the five-stage pipeline. Numerics are identical
/// to [`super::run_blocked`]; the report carries the simulated timing.
pub fn run_dataflow(
    qm: &QuantizedModel,
    fps: &[Fingerprint],
    pipe: &PipelineSpec,
    cfg: &BlockConfig,
) -> Result<(FixedScreen, SimReport)> {
    let d = qm.dims();
    cfg.validate(d)?;
    for fp in fps {
        fp.validate(d.features)?;
    }
    let groups = check_rates(pipe, d.samples)?;
    let per_group = d.samples / groups;

    let inputs: Vec<Token> = (0..fps.len()).map(Token::Molecule).collect();
    let (out, report) = simulate(pipe, inputs, |stage, tokens| match StageKind::ORDER[stage] {
        StageKind::Fetch | StageKind::Emit => Ok(tokens),
        StageKind::Latent => {
            let Some(Token::Molecule(m)) = tokens.into_iter().next() else {
                unreachable!("LATENT receives molecules")
            };
            (0..groups)
                .map(|g| {
                    let samples = g * per_group..(g + 1) * per_group;
                    let values = latent_block(qm, &fps[m], samples.clone(), cfg.latent)?;
                    Ok(Token::Latent {
                        molecule: m,
                        samples,
                        values,
                    })
                })
                .collect()
        }
        StageKind::Predict => {
            let Some(Token::Latent {
                molecule,
                samples,
                values,
            }) = tokens.into_iter().next()
            else {
                unreachable!("PREDICT receives latents")
            };
            let values = score_block(qm, &values, samples.clone(), cfg.proteins, cfg.latent)?;
            Ok(vec![Token::Scores {
                molecule,
                samples,
                values,
            }])
        }
        StageKind::Aggregate => {
            let mut full = vec![0i64; d.proteins * d.samples];
            let mut molecule = None;
            for t in tokens {
                let Token::Scores {
                    molecule: m,
                    samples,
                    values,
                } = t
                else {
                    unreachable!("AGGREGATE receives scores")
                };
                if molecule.is_some_and(|prev| prev != m) {
                    return Err(VmsError::validation("AGGREGATE received tokens of different molecules"));
                }
                molecule = Some(m);
                let ns = samples.len();
                for p in 0..d.proteins {
                    for (i, s) in samples.clone().enumerate() {
                        full[p * d.samples + s] = values[p * ns + i];
                    }
                }
            }
            Ok(vec![Token::Done {
                molecule: molecule.expect("consume >= 1"),
                values: full,
            }])
        }
    })?;

    let mut scores = Vec::with_capacity(fps.len() * d.proteins * d.samples);
    for (expected, t) in out.into_iter().enumerate() {
        let Token::Done { molecule, values } = t else {
            unreachable!("sink receives results")
        };
        debug_assert_eq!(molecule, expected);
        scores.extend(values);
    }
    Ok((
        FixedScreen {
            dims: d,
            n_molecules: fps.len(),
            output: qm.formats().output,
            scores,
        },
        report,
    ))
}
