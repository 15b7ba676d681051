//! Discrete-event simulation of device-side classification with optional
//! server offloading over a serialized uplink.
//!
//! Every frame runs the device model (fixed inference plus calibration
//! latency). Offloaded frames occupy the uplink one at a time in commit
//! order; the server result returns after the transmission, server time,
//! and return latency. A frame's outcome records where its answer came
//! from: a frame whose offload result misses the deadline falls back to the
//! already-available local answer and is counted as a violation.
//!
//! Events at the same millisecond process in a fixed kind order (result
//! return, transmit completion, device completion, arrival, deadline) and
//! then by frame, so runs are deterministic.

use crate::error::{CboError, Result};
use crate::optimal::{choice_contribution, expected_accuracy_of, Schedule};
use crate::policies::{
    cbo_decide, largest_feasible_resolution, server_resolution_choice, Anchor, BufferedFrame,
    PolicyKind,
};
use crate::time::TimeMs;
use crate::workload::{
    generate_trace, AccuracyProfile, Choice, FrameTrace, NetworkModel, TimingConfig, TraceSpec,
};
use rayon::prelude::*;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

/// Device-side latencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub npu_time_s: f64,
    pub calibration_time_s: f64,
}

impl Default for SimParams {
    fn default() -> SimParams {
        SimParams {
            npu_time_s: 0.020,
            calibration_time_s: 0.008,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.npu_time_s >= 0.0 && self.npu_time_s.is_finite()) {
            return Err(CboError::invalid("npu time must be finite and non-negative"));
        }
        if !(self.calibration_time_s >= 0.0 && self.calibration_time_s.is_finite()) {
            return Err(CboError::invalid(
                "calibration time must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn local_done_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.npu_time_s) + TimeMs::from_secs_f64(self.calibration_time_s)
    }
}

/// Where one frame's answer came from and when.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    /// 1-based frame index.
    pub frame_index: usize,
    /// Source of the delivered answer; a late offload counts as `Local`.
    pub choice: Choice,
    pub completion: TimeMs,
    /// Profile accuracy of the delivered answer under the frame's true
    /// calibrated confidence.
    pub expected_contribution: f64,
    pub empirical_correct: bool,
    pub deadline_violated: bool,
}

/// Aggregate results of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: String,
    pub frames: Vec<FrameOutcome>,
    pub expected_accuracy: f64,
    pub empirical_accuracy: f64,
    pub offload_fraction: f64,
    pub deadline_violations: usize,
    pub bytes_sent: u64,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ResultBack,
    TxDone,
    NpuDone,
    FrameArrival,
    DeadlineExpiry,
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::ResultBack => 0,
            EventKind::TxDone => 1,
            EventKind::NpuDone => 2,
            EventKind::FrameArrival => 3,
            EventKind::DeadlineExpiry => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: TimeMs,
    kind: EventKind,
    frame: usize,
}

impl Ord for Event {
    fn cmp(&self, other: &Event) -> std::cmp::Ordering {
        (self.time, self.kind.rank(), self.frame).cmp(&(
            other.time,
            other.kind.rank(),
            other.frame,
        ))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Event) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

enum Mode {
    Policy(PolicyKind),
    Replay(Vec<Choice>),
}

struct Engine<'a> {
    trace: &'a FrameTrace,
    profile: &'a AccuracyProfile,
    network: &'a NetworkModel,
    timing: &'a TimingConfig,
    mode: Mode,
    heap: BinaryHeap<Reverse<Event>>,
    /// Answer source once decided.
    answer: Vec<Option<Choice>>,
    completion: Vec<Option<TimeMs>>,
    correct: Vec<bool>,
    violated: Vec<bool>,
    /// Resolution committed for transmission, if any.
    committed: Vec<Option<usize>>,
    /// Frames holding a local result while awaiting an offload slot.
    buffer: Vec<usize>,
    held: Vec<bool>,
    queue: VecDeque<(usize, usize)>,
    tx_busy: Option<(usize, usize)>,
    /// Earliest start for a newly committed transmission.
    uplink_clear: TimeMs,
    bytes_sent: u64,
}

impl<'a> Engine<'a> {
    fn tx_time(&self, frame: usize, r: usize) -> Result<TimeMs> {
        self.network
            .tx_time_ms(self.trace.frames[frame].size_bytes[r])
            .ok_or_else(|| CboError::invalid("transmission scheduled with zero bandwidth"))
    }

    fn believed_confidence(&self, frame: usize) -> f64 {
        let f = &self.trace.frames[frame];
        let use_calibrated = match &self.mode {
            Mode::Policy(p) => p.uses_calibrated(),
            Mode::Replay(_) => true,
        };
        if use_calibrated {
            f.calibrated_confidence
        } else {
            f.raw_confidence
        }
    }

    fn commit_offload(&mut self, frame: usize, r: usize, now: TimeMs) -> Result<()> {
        self.committed[frame] = Some(r);
        let start = if self.uplink_clear < now { now } else { self.uplink_clear };
        self.uplink_clear = start + self.tx_time(frame, r)?;
        self.queue.push_back((frame, r));
        self.try_start_tx(now)
    }

    fn try_start_tx(&mut self, now: TimeMs) -> Result<()> {
        if self.tx_busy.is_none() {
            if let Some((frame, r)) = self.queue.pop_front() {
                self.tx_busy = Some((frame, r));
                let end = now + self.tx_time(frame, r)?;
                self.heap.push(Reverse(Event {
                    time: end,
                    kind: EventKind::TxDone,
                    frame,
                }));
            }
        }
        Ok(())
    }

    fn finalize_local(&mut self, frame: usize, now: TimeMs, violated: bool) {
        self.answer[frame] = Some(Choice::Local);
        self.completion[frame] = Some(now);
        self.correct[frame] = self.trace.frames[frame].local_correct;
        self.violated[frame] = violated;
        self.held[frame] = false;
    }

    fn done(&self, frame: usize) -> bool {
        self.answer[frame].is_some()
    }

    /// Re-plans the held frames; callers guarantee the uplink is idle.
    /// Frames outside the new plan release their local answers now, and the
    /// plan's first transmission starts immediately.
    fn replan(&mut self, now: TimeMs, anchor: Anchor) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let frames: Vec<BufferedFrame> = self
            .buffer
            .iter()
            .map(|&i| BufferedFrame {
                frame_index: i + 1,
                arrival: self.trace.frames[i].arrival_ms(),
                confidence: self.believed_confidence(i),
                size_bytes: self.trace.frames[i].size_bytes.clone(),
            })
            .collect();
        let decision = cbo_decide(&frames, now, self.profile, self.network, self.timing, anchor)?;
        let planned: Vec<usize> = decision.planned.iter().map(|p| p.frame_index - 1).collect();
        for &i in &self.buffer.clone() {
            if !planned.contains(&i) {
                self.finalize_local(i, now, false);
            }
        }
        self.buffer.retain(|&i| planned.contains(&i));
        if let Some(first) = decision.planned.first() {
            let frame = first.frame_index - 1;
            self.buffer.retain(|&i| i != frame);
            self.held[frame] = false;
            self.commit_offload(frame, first.resolution, now)?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, i: usize, now: TimeMs) -> Result<()> {
        let f = &self.trace.frames[i];
        match &self.mode {
            Mode::Policy(PolicyKind::Server) => {
                let next_arrival = self.trace.frames.get(i + 1).map(|n| n.arrival_ms());
                let start = if self.uplink_clear < now { now } else { self.uplink_clear };
                if let Some(r) = server_resolution_choice(
                    f.arrival_ms(),
                    &f.size_bytes,
                    next_arrival,
                    start,
                    self.network,
                    self.timing,
                ) {
                    self.commit_offload(i, r, now)?;
                }
            }
            Mode::Policy(PolicyKind::FastVa) => {
                if self.tx_busy.is_none() && self.queue.is_empty() {
                    if let Some(r) = largest_feasible_resolution(
                        f.arrival_ms(),
                        &f.size_bytes,
                        now,
                        self.network,
                        self.timing,
                    ) {
                        self.commit_offload(i, r, now)?;
                    }
                }
            }
            Mode::Replay(choices) => {
                if let Choice::Offload(r) = choices[i] {
                    self.commit_offload(i, r, now)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn on_npu_done(&mut self, i: usize, now: TimeMs) -> Result<()> {
        match &self.mode {
            Mode::Policy(PolicyKind::Local) => self.finalize_local(i, now, false),
            Mode::Policy(PolicyKind::FixedThreshold { theta, .. }) => {
                let theta = *theta;
                let conf = self.believed_confidence(i);
                let f = &self.trace.frames[i];
                let start = if self.uplink_clear < now { now } else { self.uplink_clear };
                let pick = if conf <= theta {
                    largest_feasible_resolution(
                        f.arrival_ms(),
                        &f.size_bytes,
                        start,
                        self.network,
                        self.timing,
                    )
                } else {
                    None
                };
                match pick {
                    Some(r) => self.commit_offload(i, r, now)?,
                    None => self.finalize_local(i, now, false),
                }
            }
            Mode::Policy(PolicyKind::Cbo { anchor, .. }) => {
                let anchor = *anchor;
                self.held[i] = true;
                self.buffer.push(i);
                if self.tx_busy.is_none() {
                    self.replan(now, anchor)?;
                }
            }
            Mode::Policy(PolicyKind::Server)
            | Mode::Policy(PolicyKind::FastVa)
            | Mode::Replay(_) => {
                if self.committed[i].is_none() {
                    self.finalize_local(i, now, false);
                }
            }
        }
        Ok(())
    }

    fn on_tx_done(&mut self, i: usize, now: TimeMs) -> Result<()> {
        let (frame, r) = self.tx_busy.take().expect("transmit completion without a transmission");
        debug_assert_eq!(frame, i);
        self.bytes_sent += self.trace.frames[frame].size_bytes[r];
        self.heap.push(Reverse(Event {
            time: now + self.network.server_time_ms() + self.network.latency_ms(),
            kind: EventKind::ResultBack,
            frame,
        }));
        self.try_start_tx(now)?;
        if let Mode::Policy(PolicyKind::Cbo { anchor, .. }) = &self.mode {
            let anchor = *anchor;
            if self.tx_busy.is_none() {
                self.replan(now, anchor)?;
            }
        }
        Ok(())
    }

    fn on_result_back(&mut self, i: usize, now: TimeMs) {
        if self.done(i) {
            return;
        }
        let r = self.committed[i].expect("server result for an uncommitted frame");
        self.answer[i] = Some(Choice::Offload(r));
        self.completion[i] = Some(now);
        self.correct[i] = self.trace.frames[i].server_correct[r];
        self.violated[i] = false;
    }

    fn on_deadline(&mut self, i: usize, now: TimeMs) {
        if self.done(i) {
            return;
        }
        if self.committed[i].is_some() {
            // The offload result is late; the local answer stands.
            self.finalize_local(i, now, true);
        } else {
            // A held frame releases its local answer at the deadline.
            self.buffer.retain(|&b| b != i);
            self.finalize_local(i, now, false);
        }
    }
}

fn run_engine(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    sim: &SimParams,
    mode: Mode,
    policy_name: String,
) -> Result<SimReport> {
    trace.validate()?;
    profile.validate()?;
    network.validate()?;
    timing.validate()?;
    sim.validate()?;
    if trace.resolutions != profile.resolutions {
        return Err(CboError::invalid(
            "trace and profile disagree on the resolution ladder",
        ));
    }
    if sim.local_done_ms() > timing.deadline_ms() {
        return Err(CboError::invalid(
            "device inference cannot finish within the frame deadline",
        ));
    }
    if let Mode::Replay(choices) = &mode {
        if choices.len() != trace.frames.len() {
            return Err(CboError::invalid(
                "schedule length differs from trace length",
            ));
        }
    }

    let n = trace.frames.len();
    let mut engine = Engine {
        trace,
        profile,
        network,
        timing,
        mode,
        heap: BinaryHeap::with_capacity(3 * n),
        answer: vec![None; n],
        completion: vec![None; n],
        correct: vec![false; n],
        violated: vec![false; n],
        committed: vec![None; n],
        buffer: Vec::new(),
        held: vec![false; n],
        queue: VecDeque::new(),
        tx_busy: None,
        uplink_clear: TimeMs::ZERO,
        bytes_sent: 0,
    };
    for (i, f) in trace.frames.iter().enumerate() {
        let arr = f.arrival_ms();
        engine.heap.push(Reverse(Event {
            time: arr,
            kind: EventKind::FrameArrival,
            frame: i,
        }));
        engine.heap.push(Reverse(Event {
            time: arr + sim.local_done_ms(),
            kind: EventKind::NpuDone,
            frame: i,
        }));
        engine.heap.push(Reverse(Event {
            time: arr + timing.deadline_ms(),
            kind: EventKind::DeadlineExpiry,
            frame: i,
        }));
    }

    while let Some(Reverse(ev)) = engine.heap.pop() {
        match ev.kind {
            EventKind::ResultBack => engine.on_result_back(ev.frame, ev.time),
            EventKind::TxDone => engine.on_tx_done(ev.frame, ev.time)?,
            EventKind::NpuDone => engine.on_npu_done(ev.frame, ev.time)?,
            EventKind::FrameArrival => engine.on_arrival(ev.frame, ev.time)?,
            EventKind::DeadlineExpiry => engine.on_deadline(ev.frame, ev.time),
        }
    }

    let mut outcomes = Vec::with_capacity(n);
    let mut choices = Vec::with_capacity(n);
    for i in 0..n {
        let choice = engine.answer[i]
            .ok_or_else(|| CboError::invalid(format!("frame {} never completed", i + 1)))?;
        choices.push(choice);
        outcomes.push(FrameOutcome {
            frame_index: i + 1,
            choice,
            completion: engine.completion[i].unwrap(),
            expected_contribution: choice_contribution(&trace.frames[i], choice, profile)?,
            empirical_correct: engine.correct[i],
            deadline_violated: engine.violated[i],
        });
    }
    let offloads = choices.iter().filter(|c| matches!(c, Choice::Offload(_))).count();
    let correct = outcomes.iter().filter(|o| o.empirical_correct).count();
    let violations = outcomes.iter().filter(|o| o.deadline_violated).count();
    let latency_sum: f64 = outcomes
        .iter()
        .zip(&trace.frames)
        .map(|(o, f)| (o.completion - f.arrival_ms()).0 as f64)
        .sum();
    Ok(SimReport {
        policy: policy_name,
        expected_accuracy: expected_accuracy_of(trace, profile, &choices)?,
        empirical_accuracy: correct as f64 / n as f64,
        offload_fraction: offloads as f64 / n as f64,
        deadline_violations: violations,
        bytes_sent: engine.bytes_sent,
        mean_latency_ms: latency_sum / n as f64,
        frames: outcomes,
    })
}

/// Simulates one policy over a trace.
pub fn run(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    sim: &SimParams,
    policy: PolicyKind,
) -> Result<SimReport> {
    run_engine(
        trace,
        profile,
        network,
        timing,
        sim,
        Mode::Policy(policy),
        policy.to_string(),
    )
}

/// Executes a precomputed schedule's choices over a trace. Offloads whose
/// results would return after the deadline fall back to the local answer
/// and count as violations.
pub fn replay_schedule(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    sim: &SimParams,
    schedule: &Schedule,
) -> Result<SimReport> {
    if schedule.resolutions != trace.resolutions {
        return Err(CboError::invalid(
            "schedule and trace disagree on the resolution ladder",
        ));
    }
    if schedule.decisions.len() != trace.frames.len() {
        return Err(CboError::invalid(
            "schedule length differs from trace length",
        ));
    }
    let mut choices = vec![Choice::Local; trace.frames.len()];
    for d in &schedule.decisions {
        let idx = d
            .frame_index
            .checked_sub(1)
            .filter(|&i| i < trace.frames.len())
            .ok_or_else(|| {
                CboError::invalid(format!("schedule names unknown frame {}", d.frame_index))
            })?;
        choices[idx] = d.choice;
    }
    run_engine(
        trace,
        profile,
        network,
        timing,
        sim,
        Mode::Replay(choices),
        "replay".to_string(),
    )
}

/// The swept parameter; values are in the unit noted on each variant.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Bits per second.
    Bandwidth(Vec<f64>),
    /// Frames per second; the trace is regenerated at each rate.
    FrameRate(Vec<f64>),
    /// Result return latency in seconds.
    Latency(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Bandwidth(_) => "bandwidth_bps",
            SweepAxis::FrameRate(_) => "frame_rate_fps",
            SweepAxis::Latency(_) => "latency_s",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Bandwidth(v) | SweepAxis::FrameRate(v) | SweepAxis::Latency(v) => v,
        }
    }
}

/// One (axis value, policy) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub policy: String,
    pub expected_accuracy: f64,
    pub empirical_accuracy: f64,
    pub offload_fraction: f64,
    pub deadline_violations: usize,
    pub mean_latency_ms: f64,
    pub bytes_sent: u64,
}

/// Runs every policy at every axis value. The trace is regenerated from the
/// spec per frame-rate value and shared across policies within a value;
/// rows come back grouped by axis value in input order.
pub fn sweep(
    spec: &TraceSpec,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    sim: &SimParams,
    policies: &[PolicyKind],
    axis: &SweepAxis,
) -> Result<Vec<Vec<SweepRow>>> {
    let points: Result<Vec<Vec<SweepRow>>> = axis
        .values()
        .par_iter()
        .map(|&value| {
            let mut spec = spec.clone();
            let mut network = *network;
            let mut timing = *timing;
            match axis {
                SweepAxis::Bandwidth(_) => network.bandwidth_bps = value,
                SweepAxis::FrameRate(_) => {
                    spec.fps = value;
                    timing = TimingConfig::new(value, timing.deadline_s, timing.frame_count);
                }
                SweepAxis::Latency(_) => network.latency_s = value,
            }
            let trace = generate_trace(&spec, profile)?;
            policies
                .iter()
                .map(|&policy| {
                    let report = run(&trace, profile, &network, &timing, sim, policy)?;
                    Ok(SweepRow {
                        axis_value: value,
                        policy: report.policy.clone(),
                        expected_accuracy: report.expected_accuracy,
                        empirical_accuracy: report.empirical_accuracy,
                        offload_fraction: report.offload_fraction,
                        deadline_violations: report.deadline_violations,
                        mean_latency_ms: report.mean_latency_ms,
                        bytes_sent: report.bytes_sent,
                    })
                })
                .collect()
        })
        .collect();
    points
}
