//! Offline optimal scheduling over a shared uplink.
//!
//! A schedule picks one option per frame (local, or offload at one of the
//! configured resolutions). Offloaded frames serialize on the uplink in
//! frame order; an offload is feasible only when its transmission can end
//! early enough for the server round trip to beat the frame deadline. The
//! layered solver runs a label-correcting pass over frames with Pareto
//! pruning on (finish time, cost); `enumerate_bruteforce` checks every
//! option vector and exists as the solver's independent witness.
//!
//! Node windows bound the time at which an option finishes on the uplink.
//! Pruned mode assumes lower window bounds never bind (true for scheduling
//! instances, whose windows are upper bounds only); exhaustive mode keeps
//! every distinct (time, cost) label and also handles exact-time end
//! windows, which the subset-sum reduction relies on.

use crate::error::{CboError, Result};
use crate::time::TimeMs;
use crate::workload::{
    AccuracyProfile, Choice, Frame, FrameTrace, NetworkModel, Resolution, TimingConfig,
};
use std::path::Path;

/// Bound on (m+1)^n for the exhaustive schedule search.
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

/// One selectable option at one level of the layered graph.
#[derive(Debug, Clone, Copy)]
pub struct DpNode {
    /// Earliest start on the shared resource; the label clamps up to this.
    /// `TimeMs::MIN` means the option starts whenever the resource frees.
    pub release: TimeMs,
    /// Feasible range for the option's finish time.
    pub window_lo: TimeMs,
    pub window_hi: TimeMs,
    /// Time the option occupies the shared resource. Local work is 0.
    pub duration: TimeMs,
    pub cost: f64,
}

/// A layered selection problem: one node per level must be chosen, labels
/// carry (finish time, accumulated cost), and the final time must land in
/// the end window.
#[derive(Debug, Clone)]
pub struct DpInstance {
    pub start: TimeMs,
    pub levels: Vec<Vec<DpNode>>,
    pub end_lo: TimeMs,
    pub end_hi: TimeMs,
}

/// Solver output: chosen node index per level plus the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredSolution {
    pub cost: f64,
    pub finish: TimeMs,
    pub choices: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Label {
    t: TimeMs,
    cost: f64,
    parent: u32,
    option: u16,
}

/// Minimizes total cost over the layered graph.
///
/// `prune` enables Pareto dominance: a label is dropped when another finishes
/// no later at no greater cost. That is only sound when lower window bounds
/// and the end window's lower edge cannot reject an earlier finish, so
/// callers with exact-time constraints must pass `prune = false`, which
/// still deduplicates labels with identical (time, cost).
pub fn solve_layered(inst: &DpInstance, prune: bool) -> Option<LayeredSolution> {
    let mut arena: Vec<Vec<Label>> = Vec::with_capacity(inst.levels.len());
    let mut frontier = vec![Label {
        t: inst.start,
        cost: 0.0,
        parent: u32::MAX,
        option: u16::MAX,
    }];

    for nodes in &inst.levels {
        let mut next: Vec<Label> = Vec::new();
        for (pi, prev) in frontier.iter().enumerate() {
            for (oi, node) in nodes.iter().enumerate() {
                let started = if prev.t < node.release { node.release } else { prev.t };
                let finish = started + node.duration;
                if finish < node.window_lo || finish > node.window_hi {
                    continue;
                }
                next.push(Label {
                    t: finish,
                    cost: prev.cost + node.cost,
                    parent: pi as u32,
                    option: oi as u16,
                });
            }
        }
        if next.is_empty() {
            return None;
        }
        next = shrink(next, prune);
        arena.push(frontier);
        frontier = next;
    }

    let best = frontier
        .iter()
        .enumerate()
        .filter(|(_, l)| l.t >= inst.end_lo && l.t <= inst.end_hi)
        .min_by(|a, b| {
            (a.1.cost, a.1.t, a.0)
                .partial_cmp(&(b.1.cost, b.1.t, b.0))
                .unwrap()
        })?;

    let mut choices = vec![0usize; inst.levels.len()];
    let mut label = *best.1;
    for level in (0..inst.levels.len()).rev() {
        choices[level] = label.option as usize;
        if level > 0 {
            label = arena[level][label.parent as usize];
        }
    }
    Some(LayeredSolution {
        cost: best.1.cost,
        finish: best.1.t,
        choices,
    })
}

/// Keeps the useful subset of a level's labels. Ordering is stable on the
/// generation index so ties resolve by creation order.
fn shrink(mut labels: Vec<Label>, prune: bool) -> Vec<Label> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        (labels[a].t, labels[a].cost, a)
            .partial_cmp(&(labels[b].t, labels[b].cost, b))
            .unwrap()
    });
    let mut kept: Vec<Label> = Vec::with_capacity(labels.len().min(64));
    if prune {
        let mut best_cost = f64::INFINITY;
        for idx in order {
            let l = labels[idx];
            if l.cost < best_cost {
                best_cost = l.cost;
                kept.push(l);
            }
        }
    } else {
        let mut last: Option<(TimeMs, u64)> = None;
        for idx in order {
            let l = labels[idx];
            let key = (l.t, l.cost.to_bits());
            if last != Some(key) {
                kept.push(l);
                last = Some(key);
            }
        }
    }
    labels.clear();
    labels.extend(kept);
    labels
}

/// Expected accuracy contribution of one frame under one choice, from the
/// accuracy profile and true calibrated confidence.
pub fn choice_contribution(
    frame: &Frame,
    choice: Choice,
    profile: &AccuracyProfile,
) -> Result<f64> {
    match choice {
        Choice::Local => profile.npu_accuracy(frame.calibrated_confidence),
        Choice::Offload(r) => profile.offload_accuracy(r),
    }
}

/// Mean expected contribution over the whole trace, accumulated in frame
/// order so independent computations of the same choice vector agree bit
/// for bit.
pub fn expected_accuracy_of(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    choices: &[Choice],
) -> Result<f64> {
    if choices.len() != trace.frames.len() {
        return Err(CboError::invalid(format!(
            "{} choices for {} frames",
            choices.len(),
            trace.frames.len()
        )));
    }
    let mut sum = 0.0;
    for (frame, &choice) in trace.frames.iter().zip(choices) {
        sum += choice_contribution(frame, choice, profile)?;
    }
    Ok(sum / trace.frames.len() as f64)
}

/// One frame's planned action in an offline schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// 1-based frame index.
    pub frame_index: usize,
    pub choice: Choice,
    /// Uplink occupancy for offloads; `None` for local frames.
    pub tx_start: Option<TimeMs>,
    pub tx_end: Option<TimeMs>,
}

/// A complete offline schedule for a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub resolutions: Vec<Resolution>,
    pub decisions: Vec<Decision>,
    pub expected_accuracy: f64,
}

impl Schedule {
    pub fn choices(&self) -> Vec<Choice> {
        self.decisions.iter().map(|d| d.choice).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("cbo-schedule v1\n");
        out.push_str(&format!("# expected_accuracy={}\n", self.expected_accuracy));
        out.push_str("resolutions");
        for r in &self.resolutions {
            out.push_str(&format!(" {r}"));
        }
        out.push('\n');
        for d in &self.decisions {
            let (s, e) = match (d.tx_start, d.tx_end) {
                (Some(s), Some(e)) => (s.0.to_string(), e.0.to_string()),
                _ => ("-".to_string(), "-".to_string()),
            };
            out.push_str(&format!(
                "{} {} {} {}\n",
                d.frame_index,
                d.choice.format(&self.resolutions),
                s,
                e
            ));
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Schedule> {
        let err = |line: usize, field: &str, message: String| CboError::Parse {
            path: origin.to_string(),
            line,
            field: field.to_string(),
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "header", "empty file".to_string()))?;
        if header.trim() != "cbo-schedule v1" {
            return Err(err(1, "header", format!("expected 'cbo-schedule v1', got {header:?}")));
        }
        let mut expected_accuracy = f64::NAN;
        let mut resolutions: Vec<Resolution> = Vec::new();
        let mut decisions: Vec<Decision> = Vec::new();
        for (i, raw) in lines {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# expected_accuracy=") {
                expected_accuracy = rest
                    .parse()
                    .map_err(|e| err(lineno, "expected_accuracy", format!("{e}")))?;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("resolutions") {
                for tok in rest.split_whitespace() {
                    resolutions.push(Resolution::parse(tok)?);
                }
                continue;
            }
            let mut toks = line.split_whitespace();
            let mut take = |field: &str| {
                toks.next()
                    .ok_or_else(|| err(lineno, field, "missing column".to_string()))
            };
            let frame_index: usize = take("index")?
                .parse()
                .map_err(|e| err(lineno, "index", format!("{e}")))?;
            let choice = Choice::parse(take("choice")?, &resolutions)?;
            let s_tok = take("tx_start")?.to_string();
            let e_tok = take("tx_end")?.to_string();
            let parse_ms = |tok: &str, field: &str| -> Result<Option<TimeMs>> {
                if tok == "-" {
                    Ok(None)
                } else {
                    Ok(Some(TimeMs(
                        tok.parse().map_err(|e| err(lineno, field, format!("{e}")))?,
                    )))
                }
            };
            decisions.push(Decision {
                frame_index,
                choice,
                tx_start: parse_ms(&s_tok, "tx_start")?,
                tx_end: parse_ms(&e_tok, "tx_end")?,
            });
        }
        if expected_accuracy.is_nan() {
            return Err(CboError::invalid(format!(
                "{origin}: missing expected_accuracy header"
            )));
        }
        Ok(Schedule {
            resolutions,
            decisions,
            expected_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Schedule> {
        let text = std::fs::read_to_string(path)?;
        Schedule::from_text(&text, &path.display().to_string())
    }
}

/// Builds the layered instance for a trace: per frame one local node plus
/// one node per resolution whose window upper bound folds the deadline,
/// server time, and return latency into a latest feasible transmit end.
pub fn build_instance(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
) -> Result<DpInstance> {
    trace.validate()?;
    profile.validate()?;
    network.validate()?;
    timing.validate()?;
    if trace.resolutions != profile.resolutions {
        return Err(CboError::invalid(
            "trace and profile disagree on the resolution ladder",
        ));
    }
    let deadline = timing.deadline_ms();
    let return_lag = network.server_time_ms() + network.latency_ms();
    let mut levels = Vec::with_capacity(trace.frames.len());
    for frame in &trace.frames {
        let arr = frame.arrival_ms();
        let mut nodes = vec![DpNode {
            release: TimeMs::MIN,
            window_lo: TimeMs::MIN,
            window_hi: TimeMs::MAX,
            duration: TimeMs::ZERO,
            cost: -choice_contribution(frame, Choice::Local, profile)?,
        }];
        for (r, &size) in frame.size_bytes.iter().enumerate() {
            if let Some(tx) = network.tx_time_ms(size) {
                nodes.push(DpNode {
                    release: arr,
                    window_lo: TimeMs::MIN,
                    window_hi: arr + deadline - return_lag,
                    duration: tx,
                    cost: -choice_contribution(frame, Choice::Offload(r), profile)?,
                });
            }
        }
        levels.push(nodes);
    }
    Ok(DpInstance {
        start: TimeMs::ZERO,
        levels,
        end_lo: TimeMs::MIN,
        end_hi: TimeMs::MAX,
    })
}

/// Replays a choice vector's uplink serialization, returning per-frame
/// transmit windows, or an error naming the first frame whose offload
/// cannot meet its deadline.
pub fn replay_choices(
    trace: &FrameTrace,
    network: &NetworkModel,
    timing: &TimingConfig,
    choices: &[Choice],
) -> Result<Vec<Decision>> {
    if choices.len() != trace.frames.len() {
        return Err(CboError::invalid("choice count differs from frame count"));
    }
    let deadline = timing.deadline_ms();
    let return_lag = network.server_time_ms() + network.latency_ms();
    let mut uplink = TimeMs::ZERO;
    let mut out = Vec::with_capacity(choices.len());
    for (frame, &choice) in trace.frames.iter().zip(choices) {
        let arr = frame.arrival_ms();
        let (tx_start, tx_end) = match choice {
            Choice::Local => (None, None),
            Choice::Offload(r) => {
                let size = *frame.size_bytes.get(r).ok_or_else(|| {
                    CboError::invalid(format!("frame {} has no resolution {r}", frame.index))
                })?;
                let tx = network.tx_time_ms(size).ok_or_else(|| {
                    CboError::invalid("offload scheduled with zero bandwidth")
                })?;
                let start = if uplink < arr { arr } else { uplink };
                let end = start + tx;
                if end + return_lag > arr + deadline {
                    return Err(CboError::invalid(format!(
                        "frame {} misses its deadline when offloaded",
                        frame.index
                    )));
                }
                uplink = end;
                (Some(start), Some(end))
            }
        };
        out.push(Decision {
            frame_index: frame.index,
            choice,
            tx_start,
            tx_end,
        });
    }
    Ok(out)
}

/// Optimal expected-accuracy schedule via the layered solver.
pub fn solve_optimal(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    prune: bool,
) -> Result<Schedule> {
    let inst = build_instance(trace, profile, network, timing)?;
    let sol = solve_layered(&inst, prune)
        .ok_or_else(|| CboError::invalid("scheduling instance has no feasible plan"))?;
    let choices: Vec<Choice> = sol
        .choices
        .iter()
        .map(|&o| if o == 0 { Choice::Local } else { Choice::Offload(o - 1) })
        .collect();
    let decisions = replay_choices(trace, network, timing, &choices)?;
    Ok(Schedule {
        resolutions: trace.resolutions.clone(),
        decisions,
        expected_accuracy: expected_accuracy_of(trace, profile, &choices)?,
    })
}

/// Checks every (m+1)^n option vector; errors when that count exceeds
/// `BRUTEFORCE_LIMIT`. Cost accumulation mirrors the layered solver exactly
/// so both report bit-identical optima.
pub fn enumerate_bruteforce(
    trace: &FrameTrace,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
) -> Result<Schedule> {
    trace.validate()?;
    profile.validate()?;
    let n = trace.frames.len();
    let m = trace.resolutions.len();
    let size = (m as u128 + 1)
        .checked_pow(n as u32)
        .unwrap_or(u128::MAX);
    if size > BRUTEFORCE_LIMIT {
        return Err(CboError::InstanceTooLarge {
            size,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let deadline = timing.deadline_ms();
    let return_lag = network.server_time_ms() + network.latency_ms();

    let mut counters = vec![0usize; n];
    let mut best: Option<(f64, Vec<Choice>)> = None;
    loop {
        let mut cost = 0.0;
        let mut uplink = TimeMs::ZERO;
        let mut feasible = true;
        let mut choices = Vec::with_capacity(n);
        for (frame, &c) in trace.frames.iter().zip(&counters) {
            let choice = if c == 0 { Choice::Local } else { Choice::Offload(c - 1) };
            if let Choice::Offload(r) = choice {
                let tx = match network.tx_time_ms(frame.size_bytes[r]) {
                    Some(tx) => tx,
                    None => {
                        feasible = false;
                        break;
                    }
                };
                let arr = frame.arrival_ms();
                let start = if uplink < arr { arr } else { uplink };
                let end = start + tx;
                if end + return_lag > arr + deadline {
                    feasible = false;
                    break;
                }
                uplink = end;
            }
            cost += -choice_contribution(frame, choice, profile)?;
            choices.push(choice);
        }
        if feasible {
            let better = match &best {
                None => true,
                Some((bc, _)) => cost < *bc,
            };
            if better {
                best = Some((cost, choices));
            }
        }
        // Odometer increment over option counters.
        let mut digit = 0;
        loop {
            if digit == n {
                let (_, choices) = best
                    .ok_or_else(|| CboError::invalid("no feasible schedule exists"))?;
                let decisions = replay_choices(trace, network, timing, &choices)?;
                return Ok(Schedule {
                    resolutions: trace.resolutions.clone(),
                    decisions,
                    expected_accuracy: expected_accuracy_of(trace, profile, &choices)?,
                });
            }
            counters[digit] += 1;
            if counters[digit] <= m {
                break;
            }
            counters[digit] = 0;
            digit += 1;
        }
    }
}

/// Encodes subset-sum as a layered instance: each number contributes a
/// skip node (duration 0) and a take node (duration = the number), every
/// internal window is slack, and the end window pins the final time to the
/// target exactly. Feasible iff some subset sums to the target.
pub fn subset_sum_instance(numbers: &[i64], target: i64) -> DpInstance {
    let span: i64 = numbers.iter().map(|a| a.abs()).sum::<i64>() + target.abs() + 1;
    let levels = numbers
        .iter()
        .map(|&a| {
            vec![
                DpNode {
                    release: TimeMs::MIN,
                    window_lo: TimeMs(-span),
                    window_hi: TimeMs(span),
                    duration: TimeMs::ZERO,
                    cost: 0.0,
                },
                DpNode {
                    release: TimeMs::MIN,
                    window_lo: TimeMs(-span),
                    window_hi: TimeMs(span),
                    duration: TimeMs(a),
                    cost: 0.0,
                },
            ]
        })
        .collect();
    DpInstance {
        start: TimeMs::ZERO,
        levels,
        end_lo: TimeMs(target),
        end_hi: TimeMs(target),
    }
}

/// Subset-sum decision through the layered solver. Exact end windows rule
/// out dominance pruning, so this runs the exhaustive mode.
pub fn subset_sum_feasible(numbers: &[i64], target: i64) -> bool {
    solve_layered(&subset_sum_instance(numbers, target), false).is_some()
}
