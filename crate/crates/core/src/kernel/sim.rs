//! Cycle-stepped model of a chain of pipelined stages joined by bounded
//! FIFOs.
//!
//! Each cycle runs two phases. First, results whose latency has elapsed are
//! delivered into their output FIFO (or the sink after the last stage).
//! Then stages are visited from last to first; a stage fires when it is not
//! inside the initiation interval of its previous firing, its input holds at
//! least `consume` tokens, and its output FIFO has `produce` free slots.
//! Slots are reserved at firing time, so results in flight count against
//! the FIFO depth and occupancy can never exceed it. Visiting downstream
//! stages first lets a slot freed by a consumer be reused by its producer in
//! the same cycle.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Fetch,
    Latent,
    Predict,
    Aggregate,
    Emit,
}

impl StageKind {
    pub const ORDER: [StageKind; 5] = [
        StageKind::Fetch,
        StageKind::Latent,
        StageKind::Predict,
        StageKind::Aggregate,
        StageKind::Emit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Fetch => "FETCH",
            StageKind::Latent => "LATENT",
            StageKind::Predict => "PREDICT",
            StageKind::Aggregate => "AGGREGATE",
            StageKind::Emit => "EMIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub latency: u32,
    pub ii: u32,
    #[serde(default = "one")]
    pub consume: u32,
    #[serde(default = "one")]
    pub produce: u32,
}

fn one() -> u32 {
    1
}

impl StageSpec {
    pub fn new(name: impl Into<String>, latency: u32, ii: u32) -> Self {
        StageSpec {
            name: name.into(),
            latency,
            ii,
            consume: 1,
            produce: 1,
        }
    }

    pub fn with_rates(mut self, consume: u32, produce: u32) -> Self {
        self.consume = consume;
        self.produce = produce;
        self
    }
}

/// A chain of stages with one FIFO depth per adjacent pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    pub fifo_depths: Vec<usize>,
}

impl PipelineSpec {
    pub fn new(stages: Vec<StageSpec>, fifo_depths: Vec<usize>) -> Result<Self> {
        let p = PipelineSpec { stages, fifo_depths };
        p.validate()?;
        Ok(p)
    }

    /// Single-stage chain.
    pub fn single(stage: StageSpec) -> Self {
        PipelineSpec {
            stages: vec![stage],
            fifo_depths: vec![],
        }
    }

    /// Structural checks shared by every chain.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(VmsError::validation("pipeline has no stages"));
        }
        if self.fifo_depths.len() + 1 != self.stages.len() {
            return Err(VmsError::validation(format!(
                "{} stages need {} FIFO depths, got {}",
                self.stages.len(),
                self.stages.len() - 1,
                self.fifo_depths.len()
            )));
        }
        if let Some(i) = self.fifo_depths.iter().position(|&d| d == 0) {
            return Err(VmsError::validation(format!("FIFO depth {i} must be >= 1")));
        }
        for st in &self.stages {
            if st.ii == 0 || st.consume == 0 || st.produce == 0 {
                return Err(VmsError::validation(format!(
                    "stage {}: ii, consume and produce must be >= 1",
                    st.name
                )));
            }
        }
        Ok(())
    }

    /// Checks the five-stage FETCH → LATENT → PREDICT → AGGREGATE → EMIT
    /// shape used by the dataflow kernel.
    pub fn validate_dataflow(&self) -> Result<()> {
        self.validate()?;
        let names: Vec<&str> = self.stages.iter().map(|s| s.name.as_str()).collect();
        let expected: Vec<&str> = StageKind::ORDER.iter().map(|k| k.name()).collect();
        if names != expected {
            return Err(VmsError::validation(format!(
                "dataflow pipeline must have stages {expected:?}, got {names:?}"
            )));
        }
        Ok(())
    }

    pub fn stage(&self, kind: StageKind) -> &StageSpec {
        let i = StageKind::ORDER.iter().position(|k| *k == kind).unwrap();
        &self.stages[i]
    }

    fn link_name(&self, link: usize) -> String {
        if link == 0 {
            format!("source->{}", self.stages[0].name)
        } else {
            format!("{}->{}", self.stages[link - 1].name, self.stages[link].name)
        }
    }
}

impl Default for PipelineSpec {
    /// Molecule-granular five-stage chain with FIFO depth 2.
    fn default() -> Self {
        PipelineSpec {
            stages: vec![
                StageSpec::new("FETCH", 2, 1),
                StageSpec::new("LATENT", 6, 1),
                StageSpec::new("PREDICT", 8, 1),
                StageSpec::new("AGGREGATE", 3, 1),
                StageSpec::new("EMIT", 1, 1),
            ],
            fifo_depths: vec![2; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageStats {
    pub name: String,
    pub firings: u64,
    pub busy: u64,
    /// Cycles spent waiting for input while tokens were still upstream.
    pub stall_input: u64,
    /// Cycles with input ready but no free output slot.
    pub stall_output: u64,
}

impl StageStats {
    pub fn stall(&self) -> u64 {
        self.stall_input + self.stall_output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkStats {
    pub name: String,
    pub depth: usize,
    pub max_occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub total_cycles: u64,
    pub stages: Vec<StageStats>,
    pub links: Vec<LinkStats>,
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total_cycles {}", self.total_cycles)?;
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>12} {:>12}",
            "stage", "firings", "busy", "stall_in", "stall_out"
        )?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<12} {:>10} {:>10} {:>12} {:>12}",
                s.name, s.firings, s.busy, s.stall_input, s.stall_output
            )?;
        }
        writeln!(f, "{:<24} {:>6} {:>14}", "link", "depth", "max_occupancy")?;
        for l in &self.links {
            writeln!(f, "{:<24} {:>6} {:>14}", l.name, l.depth, l.max_occupancy)?;
        }
        Ok(())
    }
}

/// Runs `inputs` through the chain, calling `fire(stage, tokens)` once per
/// firing with exactly `consume` tokens; it must return `produce` tokens.
/// Returns the sink contents in arrival order.
pub fn simulate<T, F>(pipe: &PipelineSpec, inputs: Vec<T>, mut fire: F) -> Result<(Vec<T>, SimReport)>
where
    F: FnMut(usize, Vec<T>) -> Result<Vec<T>>,
{
    pipe.validate()?;
    let n = pipe.stages.len();
    let mut source: VecDeque<T> = inputs.into();
    let mut fifos: Vec<VecDeque<T>> = (0..n - 1).map(|_| VecDeque::new()).collect();
    let mut reserved = vec![0usize; n - 1];
    let mut inflight: Vec<VecDeque<(u64, Vec<T>)>> = (0..n).map(|_| VecDeque::new()).collect();
    let mut next_issue = vec![0u64; n];
    let mut sink = Vec::new();
    let mut stats: Vec<StageStats> = pipe
        .stages
        .iter()
        .map(|s| StageStats {
            name: s.name.clone(),
            ..StageStats::default()
        })
        .collect();
    let mut max_occ = vec![0usize; n - 1];
    let mut cycle: u64 = 0;

    loop {
        for i in 0..n {
            while inflight[i].front().is_some_and(|(ready, _)| *ready <= cycle) {
                let (_, tokens) = inflight[i].pop_front().unwrap();
                if i + 1 < n {
                    reserved[i] -= tokens.len();
                    fifos[i].extend(tokens);
                    max_occ[i] = max_occ[i].max(fifos[i].len());
                } else {
                    sink.extend(tokens);
                }
            }
        }
        let idle = inflight.iter().all(VecDeque::is_empty);
        if idle && source.is_empty() && fifos.iter().all(VecDeque::is_empty) {
            break;
        }

        // tokens that have not yet reached stage i's input
        let mut upstream = vec![false; n];
        let mut pending = !source.is_empty();
        for i in 0..n {
            if i > 0 {
                pending |= !inflight[i - 1].is_empty();
                if i > 1 {
                    pending |= !fifos[i - 2].is_empty();
                }
            }
            upstream[i] = pending;
        }

        let mut fired = false;
        let mut any_ready = false;
        for i in (0..n).rev() {
            let st = &pipe.stages[i];
            let avail = if i == 0 { source.len() } else { fifos[i - 1].len() };
            let has_input = avail >= st.consume as usize;
            let has_credit = i + 1 == n
                || fifos[i].len() + reserved[i] + st.produce as usize <= pipe.fifo_depths[i];
            any_ready |= has_input && has_credit;
            if cycle < next_issue[i] {
                stats[i].busy += 1;
                continue;
            }
            if has_input && has_credit {
                let input = if i == 0 { &mut source } else { &mut fifos[i - 1] };
                let tokens: Vec<T> = input.drain(..st.consume as usize).collect();
                let out = fire(i, tokens)?;
                if out.len() != st.produce as usize {
                    return Err(VmsError::validation(format!(
                        "stage {} produced {} tokens, declared {}",
                        st.name,
                        out.len(),
                        st.produce
                    )));
                }
                if i + 1 < n {
                    reserved[i] += out.len();
                }
                inflight[i].push_back((cycle + st.latency as u64, out));
                next_issue[i] = cycle + st.ii as u64;
                stats[i].firings += 1;
                stats[i].busy += 1;
                fired = true;
            } else if has_input {
                stats[i].stall_output += 1;
            } else if avail > 0 || upstream[i] {
                stats[i].stall_input += 1;
            }
        }

        if !fired && !any_ready && inflight.iter().all(VecDeque::is_empty) {
            return Err(VmsError::Deadlock {
                cycle,
                diagnostic: deadlock_diagnostic(pipe, source.len(), &fifos, &reserved),
            });
        }
        cycle += 1;
    }

    let links = (0..n - 1)
        .map(|i| LinkStats {
            name: pipe.link_name(i + 1),
            depth: pipe.fifo_depths[i],
            max_occupancy: max_occ[i],
        })
        .collect();
    Ok((
        sink,
        SimReport {
            total_cycles: cycle,
            stages: stats,
            links,
        },
    ))
}

fn deadlock_diagnostic<T>(pipe: &PipelineSpec, source_len: usize, fifos: &[VecDeque<T>], reserved: &[usize]) -> String {
    for (i, st) in pipe.stages.iter().enumerate() {
        let avail = if i == 0 { source_len } else { fifos[i - 1].len() };
        if avail == 0 {
            continue;
        }
        if avail < st.consume as usize {
            return format!(
                "link {} holds {} token(s) but stage {} consumes {}",
                pipe.link_name(i),
                avail,
                st.name,
                st.consume
            );
        }
        if i + 1 < pipe.stages.len() {
            return format!(
                "link {} has {} of {} slots used, stage {} needs {} free",
                pipe.link_name(i + 1),
                fifos[i].len() + reserved[i],
                pipe.fifo_depths[i],
                st.name,
                st.produce
            );
        }
    }
    "no stage can fire".to_string()
}

/// Timing-only simulation of `n_items` unit tokens.
pub fn sim_pipeline(pipe: &PipelineSpec, n_items: usize) -> Result<SimReport> {
    let (_, report) = simulate(pipe, vec![(); n_items], |i, _| {
        Ok(vec![(); pipe.stages[i].produce as usize])
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_takes_zero_cycles() {
        let r = sim_pipeline(&PipelineSpec::default(), 0).unwrap();
        assert_eq!(r.total_cycles, 0);
    }

    #[test]
    fn single_stage_fill_formula() {
        let p = PipelineSpec::single(StageSpec::new("S", 10, 1));
        assert_eq!(sim_pipeline(&p, 100).unwrap().total_cycles, 109);
        let p = PipelineSpec::single(StageSpec::new("S", 3, 3));
        assert_eq!(sim_pipeline(&p, 5).unwrap().total_cycles, 15);
    }

    #[test]
    fn two_stage_hand_stepped() {
        // A: L=4 II=1, B: L=6 II=2, depth 2. Stepping by hand:
        //   item  0  1  2  3  4  5  6  7  8  9
        //   A     0  1  4  6  8 10 12 14 16 18
        //   B     4  6  8 10 12 14 16 18 20 22
        // last result lands at 22 + 6 = 28.
        let p = PipelineSpec::new(
            vec![StageSpec::new("A", 4, 1), StageSpec::new("B", 6, 2)],
            vec![2],
        )
        .unwrap();
        let r = sim_pipeline(&p, 10).unwrap();
        assert_eq!(r.total_cycles, 28);
        assert_eq!(r.stages[0].firings, 10);
        assert_eq!(r.links[0].max_occupancy, 1);
    }

    #[test]
    fn single_molecule_fills_pipeline() {
        let p = PipelineSpec::default();
        let sum_l: u64 = p.stages.iter().map(|s| s.latency as u64).sum();
        assert_eq!(sim_pipeline(&p, 1).unwrap().total_cycles, sum_l);
    }

    #[test]
    fn rate_change_and_regroup() {
        // splitter 1 -> 4, merger 4 -> 1
        let p = PipelineSpec::new(
            vec![
                StageSpec::new("split", 1, 1).with_rates(1, 4),
                StageSpec::new("work", 2, 1),
                StageSpec::new("merge", 1, 1).with_rates(4, 1),
            ],
            vec![4, 4],
        )
        .unwrap();
        let r = sim_pipeline(&p, 3).unwrap();
        assert_eq!(r.stages[1].firings, 12);
        assert_eq!(r.stages[2].firings, 3);
        for l in &r.links {
            assert!(l.max_occupancy <= l.depth);
        }
    }

    #[test]
    fn deadlock_names_the_link() {
        // producer emits 3 per firing into a depth-2 FIFO
        let p = PipelineSpec::new(
            vec![StageSpec::new("A", 1, 1).with_rates(1, 3), StageSpec::new("B", 1, 1)],
            vec![2],
        )
        .unwrap();
        match sim_pipeline(&p, 1) {
            Err(VmsError::Deadlock { diagnostic, .. }) => assert!(diagnostic.contains("A->B"), "{diagnostic}"),
            other => panic!("expected deadlock, got {other:?}"),
        }
        // consumer waits for 2 tokens, only 1 ever arrives
        let p = PipelineSpec::new(
            vec![StageSpec::new("A", 1, 1), StageSpec::new("B", 1, 1).with_rates(2, 1)],
            vec![2],
        )
        .unwrap();
        match sim_pipeline(&p, 3) {
            Err(VmsError::Deadlock { diagnostic, .. }) => {
                assert!(diagnostic.contains("A->B holds 1"), "{diagnostic}")
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn stats_are_bounded() {
        let p = PipelineSpec::new(
            vec![
                StageSpec::new("A", 2, 1),
                StageSpec::new("B", 5, 3),
                StageSpec::new("C", 1, 1),
            ],
            vec![1, 3],
        )
        .unwrap();
        let r = sim_pipeline(&p, 40).unwrap();
        for s in &r.stages {
            assert!(s.busy + s.stall() <= r.total_cycles, "{s:?}");
        }
        assert!(r.stages[0].stall_output > 0);
    }

    #[test]
    fn validation() {
        assert!(PipelineSpec::new(vec![], vec![]).is_err());
        assert!(PipelineSpec::new(vec![StageSpec::new("A", 1, 0)], vec![]).is_err());
        assert!(PipelineSpec::new(vec![StageSpec::new("A", 1, 1)], vec![1]).is_err());
        assert!(PipelineSpec::new(
            vec![StageSpec::new("A", 1, 1), StageSpec::new("B", 1, 1)],
            vec![0]
        )
        .is_err());
        assert!(PipelineSpec::default().validate_dataflow().is_ok());
        let mut p = PipelineSpec::default();
        p.stages.swap(1, 2);
        assert!(p.validate_dataflow().is_err());
    }
}
