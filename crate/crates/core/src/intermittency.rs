//! Power-failure injection for frame-structured workloads.
//!
//! A workload is a [`FrameProgram`]: a sequence of stages, each split into
//! frames that fill per-element NV accumulators. Every `K` frames the dirty
//! accumulators are checkpointed one by one (shadow write, then pointer
//! flip) and a progress record naming the next frame is written the same
//! way. At the end of a stage its results are committed into a fresh input
//! bank and the record moves to the next stage.
//!
//! Time is counted in powered cycles. When an on-interval runs out in the
//! middle of an operation the operation is abandoned, volatile state is
//! dropped, and on the next power-on every accumulator restores from NV and
//! execution resumes at the recorded frame. Restore is modeled as
//! instantaneous, so a power loss and its restore share a cycle stamp.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::accumulator::{AccumulatorConfig, NvAccumulatorState, NvMode};
use crate::costmodel::checkpoint_cycles;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerTrace {
    AlwaysOn,
    Periodic { on: u64, off: u64 },
    Exponential { seed: u64, mean_on: f64, mean_off: f64 },
    Explicit { intervals: Vec<(u64, u64)> },
}

impl PowerTrace {
    pub fn always_on() -> Self {
        PowerTrace::AlwaysOn
    }

    pub fn periodic(on: u64, off: u64) -> Result<Self> {
        let t = PowerTrace::Periodic { on, off };
        t.validate()?;
        Ok(t)
    }

    pub fn exponential(seed: u64, mean_on: f64, mean_off: f64) -> Result<Self> {
        let t = PowerTrace::Exponential { seed, mean_on, mean_off };
        t.validate()?;
        Ok(t)
    }

    pub fn explicit(intervals: Vec<(u64, u64)>) -> Result<Self> {
        let t = PowerTrace::Explicit { intervals };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PowerTrace::AlwaysOn => true,
            PowerTrace::Periodic { on, off } => *on > 0 && *off > 0,
            PowerTrace::Exponential { mean_on, mean_off, .. } => {
                *mean_on >= 1.0 && *mean_off >= 1.0 && mean_on.is_finite() && mean_off.is_finite()
            }
            PowerTrace::Explicit { intervals } => intervals.iter().all(|&(on, off)| on > 0 && off > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("power trace durations must be positive: {self:?}")))
        }
    }

    /// `(on, off)` intervals in order. Always-on yields a single unbounded interval.
    pub fn intervals(&self) -> TraceIter {
        match self {
            PowerTrace::AlwaysOn => TraceIter::Explicit(vec![(u64::MAX, 1)].into_iter()),
            PowerTrace::Periodic { on, off } => TraceIter::Periodic(*on, *off),
            PowerTrace::Exponential { seed, mean_on, mean_off } => TraceIter::Exponential {
                rng: Box::new(ChaCha8Rng::seed_from_u64(*seed)),
                on: Exp::new(1.0 / mean_on).expect("validated mean"),
                off: Exp::new(1.0 / mean_off).expect("validated mean"),
            },
            PowerTrace::Explicit { intervals } => TraceIter::Explicit(intervals.clone().into_iter()),
        }
    }

    /// First `count` intervals as `on,off` CSV with a header row.
    pub fn to_csv(&self, count: usize) -> String {
        let mut s = String::from("on,off\n");
        for (on, off) in self.intervals().take(count) {
            s.push_str(&format!("{on},{off}\n"));
        }
        s
    }

    /// Parses `on,off` rows; a header row and blank lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut intervals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<u64> {
                s.map(str::trim)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("trace line {}: expected `on,off`, got `{line}`", i + 1)))
            };
            let mut parts = line.split(',');
            let on = parse(parts.next())?;
            let off = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Format(format!("trace line {}: too many fields", i + 1)));
            }
            intervals.push((on, off));
        }
        Self::explicit(intervals)
    }
}

pub enum TraceIter {
    Periodic(u64, u64),
    Exponential { rng: Box<ChaCha8Rng>, on: Exp<f64>, off: Exp<f64> },
    Explicit(std::vec::IntoIter<(u64, u64)>),
}

impl Iterator for TraceIter {
    type Item = (u64, u64);

    fn next(&mut self) -> Option<(u64, u64)> {
        match self {
            TraceIter::Periodic(on, off) => Some((*on, *off)),
            TraceIter::Exponential { rng, on, off } => {
                let a = (on.sample(rng.as_mut()).ceil() as u64).max(1);
                let b = (off.sample(rng.as_mut()).ceil() as u64).max(1);
                Some((a, b))
            }
            TraceIter::Explicit(it) => it.next(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FrameComplete,
    Checkpoint,
    CheckpointTorn,
    StageCommit,
    CommitTorn,
    PowerLoss,
    Restore,
    ColdStart,
    ReplayStart,
    ReplayEnd,
    Finished,
    Incomplete,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

/// Event payload. `value` depends on the kind: wasted cycles for
/// `power_loss`, frames to replay for `restore` and `replay_start`,
/// accumulators written for `checkpoint`, powered cycles for `finished` and
/// `incomplete`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub cycle: u64,
    pub kind: EventKind,
    pub detail: EventDetail,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionJournal {
    pub events: Vec<Event>,
}

impl ExecutionJournal {
    fn push(&mut self, cycle: u64, kind: EventKind, stage: usize, frame: usize, value: Option<u64>) {
        self.events.push(Event {
            cycle,
            kind,
            detail: EventDetail {
                stage: Some(stage),
                frame: Some(frame),
                value,
            },
        });
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("plain data"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("journal line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Self { events })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressStats {
    /// Distinct frames completed (replays excluded).
    pub completed_frames: u64,
    pub replayed_frames: u64,
    pub restores: u64,
    pub cold_starts: u64,
    pub checkpoints: u64,
    pub torn_checkpoints: u64,
    pub max_replay_per_restore: u64,
    pub wasted_cycles: u64,
    pub powered_cycles: u64,
    pub wasted_cycle_fraction: f64,
    pub finished: bool,
}

fn integrity(i: usize, msg: &str) -> Error {
    Error::Integrity(format!("event {i}: {msg}"))
}

/// Validates the journal grammar and summarizes it.
///
/// Rules: stamps never decrease; every `power_loss` is immediately followed
/// by `restore` (or by `incomplete` when the trace ran out); `cold_start` and
/// `replay_start` only directly after a restore; the journal ends with
/// exactly one `finished` or `incomplete`.
pub fn progress_stats(j: &ExecutionJournal) -> Result<ProgressStats> {
    let ev = &j.events;
    let mut s = ProgressStats::default();
    let Some(last) = ev.last() else {
        return Err(Error::Integrity("empty journal".into()));
    };
    let mut replaying = false;
    for (i, e) in ev.iter().enumerate() {
        if i > 0 && e.cycle < ev[i - 1].cycle {
            return Err(integrity(i, "cycle stamp decreases"));
        }
        let prev = (i > 0).then(|| ev[i - 1].kind);
        if prev == Some(EventKind::PowerLoss) && !matches!(e.kind, EventKind::Restore | EventKind::Incomplete) {
            return Err(integrity(i, "power loss not followed by restore"));
        }
        match e.kind {
            EventKind::FrameComplete => {
                if replaying {
                    s.replayed_frames += 1;
                } else {
                    s.completed_frames += 1;
                }
            }
            EventKind::Checkpoint => s.checkpoints += 1,
            EventKind::CheckpointTorn => s.torn_checkpoints += 1,
            EventKind::StageCommit | EventKind::CommitTorn => {}
            EventKind::PowerLoss => {
                replaying = false;
                s.wasted_cycles += e.detail.value.ok_or_else(|| integrity(i, "power loss without wasted cycles"))?;
            }
            EventKind::Restore => {
                if prev != Some(EventKind::PowerLoss) {
                    return Err(integrity(i, "restore without power loss"));
                }
                s.restores += 1;
                s.max_replay_per_restore = s.max_replay_per_restore.max(e.detail.value.unwrap_or(0));
            }
            EventKind::ColdStart => {
                if prev != Some(EventKind::Restore) {
                    return Err(integrity(i, "cold start outside a restore"));
                }
                s.cold_starts += 1;
            }
            EventKind::ReplayStart => {
                if !matches!(prev, Some(EventKind::Restore | EventKind::ColdStart)) {
                    return Err(integrity(i, "replay does not follow a restore"));
                }
                replaying = true;
            }
            EventKind::ReplayEnd => {
                if !replaying {
                    return Err(integrity(i, "replay end without replay start"));
                }
                replaying = false;
            }
            EventKind::Finished | EventKind::Incomplete => {
                if i + 1 != ev.len() {
                    return Err(integrity(i, "events after the end of the run"));
                }
                s.finished = e.kind == EventKind::Finished;
            }
        }
    }
    if !matches!(last.kind, EventKind::Finished | EventKind::Incomplete) {
        return Err(Error::Integrity("journal does not end with finished or incomplete".into()));
    }
    s.powered_cycles = last.cycle;
    if s.wasted_cycles > s.powered_cycles {
        return Err(Error::Integrity(format!(
            "{} wasted cycles exceed {} powered cycles",
            s.wasted_cycles, s.powered_cycles
        )));
    }
    s.wasted_cycle_fraction = if s.powered_cycles == 0 {
        0.0
    } else {
        s.wasted_cycles as f64 / s.powered_cycles as f64
    };
    Ok(s)
}

/// A workload split into stages and frames.
///
/// Frame `f` of a stage owns accumulators `f*w .. (f+1)*w` (with
/// `w = frame_width`) and NV scratch cells `f*s .. (f+1)*s`. Scratch cells
/// live in non-volatile memory and are written directly, so rewriting them on
/// replay is harmless.
pub trait FrameProgram {
    type Bank: Clone;
    type Output;

    fn stages(&self) -> usize;
    fn frames(&self, stage: usize) -> usize;
    fn frame_width(&self, stage: usize) -> usize;
    fn frame_scratch(&self, stage: usize) -> usize;
    fn accumulator_width(&self) -> u32;
    fn frame_cycles(&self, stage: usize, frame: usize) -> u64;
    /// Cycles to post-process a finished stage into the next input bank.
    fn commit_cycles(&self, stage: usize) -> u64;
    fn initial_bank(&self) -> Self::Bank;
    /// Rebuilds any volatile per-stage state from the stage's input bank.
    fn begin_stage(&mut self, stage: usize, input: &Self::Bank) -> Result<()>;
    /// Computes one frame into freshly reset accumulators and its scratch cells.
    fn run_frame(&mut self, stage: usize, frame: usize, accs: &mut [NvAccumulatorState], scratch: &mut [f64]) -> Result<()>;
    fn commit(&mut self, stage: usize, input: &Self::Bank, accs: &[NvAccumulatorState], scratch: &[f64]) -> Result<Self::Bank>;
    fn finish(&self, last: &Self::Bank) -> Self::Output;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermittencyPolicy {
    pub checkpoint_interval: u32,
    pub nv_mode: NvMode,
    /// Power-on intervals allowed before the run is declared incomplete.
    pub max_intervals: u64,
}

impl Default for IntermittencyPolicy {
    fn default() -> Self {
        Self {
            checkpoint_interval: 20,
            nv_mode: NvMode::TwoFf,
            max_intervals: 1_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome<O> {
    /// `None` when the trace ran out or the interval limit was hit.
    pub output: Option<O>,
    pub journal: ExecutionJournal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cursor {
    stage: usize,
    frame: usize,
    bank: usize,
}

/// Volatile and NV state of one run.
struct Machine<'p, P: FrameProgram> {
    program: &'p mut P,
    policy: IntermittencyPolicy,
    banks: [Option<P::Bank>; 2],
    records: [Cursor; 2],
    active_record: usize,
    record_written: bool,
    accs: Vec<NvAccumulatorState>,
    scratch: Vec<f64>,
    // volatile
    stage: usize,
    frame: usize,
    replay_until: Option<usize>,
    cycle: u64,
    on_left: u64,
    journal: ExecutionJournal,
}

enum Step {
    Done,
    Lost,
}

impl<'p, P: FrameProgram> Machine<'p, P> {
    fn record(&self) -> Cursor {
        self.records[self.active_record]
    }

    fn acc_config(&self) -> AccumulatorConfig {
        AccumulatorConfig {
            width: self.program.accumulator_width(),
            checkpoint_interval: self.policy.checkpoint_interval,
            mode: self.policy.nv_mode,
        }
    }

    fn setup_stage_storage(&mut self) {
        let s = self.stage;
        let frames = self.program.frames(s);
        self.accs = vec![NvAccumulatorState::new(self.acc_config()); frames * self.program.frame_width(s)];
        self.scratch = vec![0.0; frames * self.program.frame_scratch(s)];
    }

    fn bank(&self) -> &P::Bank {
        self.banks[self.record().bank].as_ref().expect("active bank present")
    }

    fn begin_stage(&mut self) -> Result<()> {
        if self.stage < self.program.stages() {
            let bank = self.banks[self.record().bank].clone().expect("active bank present");
            self.program.begin_stage(self.stage, &bank)?;
        }
        Ok(())
    }

    /// Spends `cycles` if power lasts; otherwise burns the rest of the interval.
    fn spend(&mut self, cycles: u64) -> bool {
        if self.on_left >= cycles {
            self.on_left -= cycles;
            self.cycle += cycles;
            true
        } else {
            false
        }
    }

    fn burn(&mut self) -> u64 {
        let left = self.on_left;
        self.cycle += left;
        self.on_left = 0;
        left
    }

    fn checkpoint_due(&self) -> bool {
        let rec = self.record();
        let since = self.frame - rec.frame;
        since > 0 && (since >= self.policy.checkpoint_interval as usize || self.frame == self.program.frames(self.stage))
    }

    fn run_frame(&mut self) -> Result<Step> {
        let (s, f) = (self.stage, self.frame);
        let cost = self.program.frame_cycles(s, f);
        if !self.spend(cost) {
            return Ok(Step::Lost);
        }
        let w = self.program.frame_width(s);
        let sw = self.program.frame_scratch(s);
        let accs = &mut self.accs[f * w..(f + 1) * w];
        accs.iter_mut().for_each(NvAccumulatorState::reset);
        self.program.run_frame(s, f, accs, &mut self.scratch[f * sw..(f + 1) * sw])?;
        self.frame += 1;
        self.journal.push(self.cycle, EventKind::FrameComplete, s, f, None);
        if self.replay_until.is_some_and(|t| self.frame >= t) {
            self.replay_until = None;
            self.journal.push(self.cycle, EventKind::ReplayEnd, s, self.frame, None);
        }
        Ok(Step::Done)
    }

    fn checkpoint(&mut self) -> Step {
        let rec = self.record();
        let w = self.program.frame_width(self.stage);
        let range = rec.frame * w..self.frame * w;
        let dirty = range.len();
        for i in range {
            if !self.spend(1) {
                return Step::Lost;
            }
            self.accs[i].begin_checkpoint();
            if !self.spend(1) {
                return Step::Lost;
            }
            self.accs[i].commit_checkpoint();
        }
        let next = Cursor { frame: self.frame, ..rec };
        // shadow record write, then pointer flip
        if !self.spend(2) {
            return Step::Lost;
        }
        let shadow = 1 - self.active_record;
        self.records[shadow] = next;
        self.active_record = shadow;
        self.record_written = true;
        debug_assert_eq!(checkpoint_cycles(dirty), 2 * dirty as u64 + 2);
        self.journal
            .push(self.cycle, EventKind::Checkpoint, self.stage, self.frame, Some(dirty as u64));
        Step::Done
    }

    fn commit(&mut self) -> Result<Step> {
        let s = self.stage;
        if !self.spend(self.program.commit_cycles(s) + 2) {
            return Ok(Step::Lost);
        }
        let rec = self.record();
        let input = self.bank().clone();
        let out = self.program.commit(s, &input, &self.accs, &self.scratch)?;
        let slot = 1 - rec.bank;
        self.banks[slot] = Some(out);
        let shadow = 1 - self.active_record;
        self.records[shadow] = Cursor {
            stage: s + 1,
            frame: 0,
            bank: slot,
        };
        self.active_record = shadow;
        self.record_written = true;
        self.journal.push(self.cycle, EventKind::StageCommit, s, self.frame, None);
        self.stage += 1;
        self.frame = 0;
        if self.stage < self.program.stages() {
            self.setup_stage_storage();
            self.begin_stage()?;
        }
        Ok(Step::Done)
    }

    /// Power fails during the current operation. Returns false when the trace
    /// has no further power-on interval.
    fn power_loss(&mut self, in_op: EventKind, op_start: u64, intervals: &mut impl Iterator<Item = (u64, u64)>, used: &mut u64) -> Result<bool> {
        self.burn();
        let (s, f) = (self.stage, self.frame);
        if matches!(in_op, EventKind::CheckpointTorn | EventKind::CommitTorn) {
            self.journal.push(self.cycle, in_op, s, f, None);
        }
        let rec = self.record();
        let discarded: u64 = (rec.frame..f).map(|i| self.program.frame_cycles(s, i)).sum();
        let wasted = discarded + (self.cycle - op_start);
        self.journal.push(self.cycle, EventKind::PowerLoss, s, f, Some(wasted));
        self.accs.iter_mut().for_each(NvAccumulatorState::power_loss);

        *used += 1;
        let next = if *used > self.policy.max_intervals { None } else { intervals.next() };
        let Some((on, _off)) = next else {
            return Ok(false);
        };
        self.on_left = on;

        // power on: restore from NV
        let target = self.replay_until.unwrap_or(0).max(f);
        self.stage = rec.stage;
        self.frame = rec.frame;
        let w = self.program.frame_width(self.stage);
        for (i, acc) in self.accs.iter_mut().enumerate() {
            match acc.restore() {
                Ok(()) => {}
                Err(Error::ColdStart) if i >= rec.frame * w => {}
                Err(Error::ColdStart) => {
                    return Err(Error::Integrity(format!(
                        "accumulator {i} of stage {} lost its checkpoint",
                        self.stage
                    )))
                }
                Err(e) => return Err(e),
            }
        }
        let replay = (target - rec.frame) as u64;
        self.journal
            .push(self.cycle, EventKind::Restore, self.stage, self.frame, Some(replay));
        if !self.record_written {
            self.journal.push(self.cycle, EventKind::ColdStart, self.stage, self.frame, None);
        }
        self.begin_stage()?;
        if replay > 0 {
            self.replay_until = Some(target);
            self.journal
                .push(self.cycle, EventKind::ReplayStart, self.stage, self.frame, Some(replay));
        } else {
            self.replay_until = None;
        }
        Ok(true)
    }
}

/// Runs `program` under `trace`, checkpointing every `K` frames.
pub fn run_with_trace<P: FrameProgram>(program: &mut P, trace: &PowerTrace, policy: &IntermittencyPolicy) -> Result<RunOutcome<P::Output>> {
    trace.validate()?;
    if policy.checkpoint_interval == 0 {
        return Err(Error::Parameter("checkpoint interval must be >= 1".into()));
    }
    let mut intervals = trace.intervals();
    let initial = program.initial_bank();
    let start = Cursor { stage: 0, frame: 0, bank: 0 };
    let mut m = Machine {
        program,
        policy: *policy,
        banks: [Some(initial), None],
        records: [start, start],
        active_record: 0,
        record_written: false,
        accs: Vec::new(),
        scratch: Vec::new(),
        stage: 0,
        frame: 0,
        replay_until: None,
        cycle: 0,
        on_left: 0,
        journal: ExecutionJournal::default(),
    };
    let mut used = 1u64;
    match intervals.next() {
        Some((on, _)) => m.on_left = on,
        None => {
            m.journal.push(0, EventKind::Incomplete, 0, 0, Some(0));
            return Ok(RunOutcome {
                output: None,
                journal: m.journal,
            });
        }
    }
    if m.program.stages() > 0 {
        m.setup_stage_storage();
        m.begin_stage()?;
    }
    loop {
        if m.stage >= m.program.stages() {
            let out = m.program.finish(m.bank());
            m.journal
                .push(m.cycle, EventKind::Finished, m.stage, 0, Some(m.cycle));
            return Ok(RunOutcome {
                output: Some(out),
                journal: m.journal,
            });
        }
        let op_start = m.cycle;
        let (step, kind) = if m.checkpoint_due() {
            (m.checkpoint(), EventKind::CheckpointTorn)
        } else if m.frame < m.program.frames(m.stage) {
            (m.run_frame()?, EventKind::FrameComplete)
        } else {
            (m.commit()?, EventKind::CommitTorn)
        };
        if let Step::Lost = step {
            if !m.power_loss(kind, op_start, &mut intervals, &mut used)? {
                m.journal
                    .push(m.cycle, EventKind::Incomplete, m.stage, m.frame, Some(m.cycle));
                return Ok(RunOutcome {
                    output: None,
                    journal: m.journal,
                });
            }
        }
    }
}
