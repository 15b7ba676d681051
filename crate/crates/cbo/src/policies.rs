//! Online offloading policies.
//!
//! The confidence-based planner works over the currently buffered frames:
//! it searches subsets and per-frame resolutions, serializing candidate
//! transmissions in confidence-descending order, and keeps the plan with
//! the largest believed accuracy improvement. The plan induces a confidence
//! threshold: the anchor frame's confidence. Simpler baselines (always
//! local, greedy server, fixed threshold, idle-link opportunistic) share
//! the feasibility helpers here.

use crate::error::{CboError, Result};
use crate::time::TimeMs;
use crate::workload::{AccuracyProfile, NetworkModel, TimingConfig};
use std::fmt;
use std::str::FromStr;

/// Which planned frame's confidence becomes the reported threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    #[default]
    HighestConfidence,
    EarliestArrival,
}

impl FromStr for Anchor {
    type Err = CboError;
    fn from_str(s: &str) -> Result<Anchor> {
        match s {
            "highest-confidence" => Ok(Anchor::HighestConfidence),
            "earliest-arrival" => Ok(Anchor::EarliestArrival),
            other => Err(CboError::invalid(format!(
                "unknown anchor {other:?} (expected highest-confidence or earliest-arrival)"
            ))),
        }
    }
}

/// A frame sitting in the offload buffer: classified locally already,
/// awaiting either an offload slot or its deadline.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedFrame {
    /// 1-based frame index.
    pub frame_index: usize,
    pub arrival: TimeMs,
    /// The confidence the policy believes (raw or calibrated).
    pub confidence: f64,
    /// Upload size per resolution, smallest resolution first.
    pub size_bytes: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedOffload {
    pub frame_index: usize,
    pub resolution: usize,
}

/// Outcome of one planning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CboDecision {
    /// Confidence threshold induced by the plan; 0 when nothing is planned.
    pub theta: f64,
    /// Believed accuracy improvement of the plan, never negative.
    pub improvement: f64,
    /// Planned offloads in arrival order.
    pub planned: Vec<PlannedOffload>,
}

impl CboDecision {
    pub fn empty() -> CboDecision {
        CboDecision {
            theta: 0.0,
            improvement: 0.0,
            planned: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    t: TimeMs,
    gain: f64,
    parent: u32,
    /// Resolution taken at this level; `u16::MAX` marks a skip.
    take: u16,
}

const SKIP: u16 = u16::MAX;

/// Plans offloads for the buffered frames.
///
/// `frames` must be in arrival order (non-decreasing). `uplink_free` is the
/// earliest instant a new transmission may start; the caller folds both the
/// current time and the transmit queue into it. Candidate plans serialize
/// their transmissions in confidence-descending order, and a frame at
/// resolution r is admissible only when its transmission ends early enough
/// for the server result to return within the frame's deadline. Dominated
/// (time, gain) pairs are dropped; ties keep the earlier-generated pair, so
/// equal-gain plans prefer skipping and smaller resolutions.
pub fn cbo_decide(
    frames: &[BufferedFrame],
    uplink_free: TimeMs,
    profile: &AccuracyProfile,
    network: &NetworkModel,
    timing: &TimingConfig,
    anchor: Anchor,
) -> Result<CboDecision> {
    if frames.windows(2).any(|w| w[0].arrival > w[1].arrival) {
        return Err(CboError::UnsortedBuffer);
    }
    if frames.is_empty() {
        return Ok(CboDecision::empty());
    }

    // Confidence-descending planning order, deterministic under ties.
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| {
        frames[b]
            .confidence
            .partial_cmp(&frames[a].confidence)
            .unwrap()
            .then(frames[a].arrival.cmp(&frames[b].arrival))
            .then(frames[a].frame_index.cmp(&frames[b].frame_index))
    });

    let deadline = timing.deadline_ms();
    let return_lag = network.server_time_ms() + network.latency_ms();

    let mut arena: Vec<Vec<Pair>> = Vec::with_capacity(order.len());
    let mut frontier = vec![Pair {
        t: uplink_free,
        gain: 0.0,
        parent: u32::MAX,
        take: SKIP,
    }];
    for &fi in &order {
        let frame = &frames[fi];
        let local_acc = profile.npu_accuracy(frame.confidence)?;
        let latest_end = frame.arrival + deadline - return_lag;
        let mut next: Vec<Pair> = Vec::with_capacity(frontier.len() * 2);
        for (pi, prev) in frontier.iter().enumerate() {
            next.push(Pair {
                parent: pi as u32,
                take: SKIP,
                ..*prev
            });
            for (r, &size) in frame.size_bytes.iter().enumerate() {
                let Some(tx) = network.tx_time_ms(size) else { continue };
                let start = if prev.t < frame.arrival { frame.arrival } else { prev.t };
                let end = start + tx;
                if end > latest_end {
                    continue;
                }
                next.push(Pair {
                    t: end,
                    gain: prev.gain + (profile.offload_accuracy(r)? - local_acc),
                    parent: pi as u32,
                    take: r as u16,
                });
            }
        }
        arena.push(frontier);
        frontier = prune_pairs(next);
    }

    // The frontier's gains increase strictly with time, so the best plan is
    // the last pair; the all-skip chain guarantees it is never negative.
    let best_idx = frontier.len() - 1;
    let best = frontier[best_idx];
    if best.gain <= 0.0 {
        return Ok(CboDecision::empty());
    }

    let mut planned: Vec<PlannedOffload> = Vec::new();
    let mut pair = best;
    for level in (0..order.len()).rev() {
        if pair.take != SKIP {
            planned.push(PlannedOffload {
                frame_index: frames[order[level]].frame_index,
                resolution: pair.take as usize,
            });
        }
        if level > 0 {
            pair = arena[level][pair.parent as usize];
        }
    }

    let conf_of = |index: usize| {
        frames
            .iter()
            .find(|f| f.frame_index == index)
            .map(|f| f.confidence)
            .unwrap()
    };
    let theta = match anchor {
        Anchor::HighestConfidence => planned
            .iter()
            .map(|p| conf_of(p.frame_index))
            .fold(0.0f64, f64::max),
        Anchor::EarliestArrival => {
            let earliest = planned
                .iter()
                .min_by_key(|p| {
                    frames
                        .iter()
                        .find(|f| f.frame_index == p.frame_index)
                        .map(|f| (f.arrival, f.frame_index))
                        .unwrap()
                })
                .unwrap();
            conf_of(earliest.frame_index)
        }
    };

    planned.sort_by_key(|p| {
        frames
            .iter()
            .find(|f| f.frame_index == p.frame_index)
            .map(|f| (f.arrival, f.frame_index))
            .unwrap()
    });
    Ok(CboDecision {
        theta,
        improvement: best.gain,
        planned,
    })
}

/// Keeps the Pareto frontier of (time, gain) pairs: a pair survives only if
/// no other pair finishes no later with no smaller gain. Ties keep the
/// earliest-generated pair. The result is strictly increasing in both time
/// and gain.
fn prune_pairs(pairs: Vec<Pair>) -> Vec<Pair> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[a]
            .t
            .cmp(&pairs[b].t)
            .then(pairs[b].gain.partial_cmp(&pairs[a].gain).unwrap())
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Pair> = Vec::new();
    let mut best_gain = f64::NEG_INFINITY;
    for idx in order {
        let p = pairs[idx];
        if p.gain > best_gain {
            best_gain = p.gain;
            kept.push(p);
        }
    }
    kept
}

/// Largest resolution whose transmission, starting no earlier than
/// `earliest_start`, still returns a server result within the deadline.
pub fn largest_feasible_resolution(
    arrival: TimeMs,
    size_bytes: &[u64],
    earliest_start: TimeMs,
    network: &NetworkModel,
    timing: &TimingConfig,
) -> Option<usize> {
    let latest_end = arrival + timing.deadline_ms() - network.server_time_ms() - network.latency_ms();
    let start = if earliest_start < arrival { arrival } else { earliest_start };
    (0..size_bytes.len()).rev().find(|&r| {
        network
            .tx_time_ms(size_bytes[r])
            .is_some_and(|tx| start + tx <= latest_end)
    })
}

/// Resolution pick for the greedy always-offload baseline: the largest
/// deadline-feasible resolution whose transmission also clears the uplink
/// before the next frame arrives, falling back to the smallest
/// deadline-feasible one, or to local when nothing fits. The last frame
/// has nothing behind it, so its clearing constraint is vacuous.
pub fn server_resolution_choice(
    arrival: TimeMs,
    size_bytes: &[u64],
    next_arrival: Option<TimeMs>,
    earliest_start: TimeMs,
    network: &NetworkModel,
    timing: &TimingConfig,
) -> Option<usize> {
    let latest_end = arrival + timing.deadline_ms() - network.server_time_ms() - network.latency_ms();
    let start = if earliest_start < arrival { arrival } else { earliest_start };
    let end_of = |r: usize| network.tx_time_ms(size_bytes[r]).map(|tx| start + tx);
    let deadline_ok = |r: usize| end_of(r).is_some_and(|end| end <= latest_end);

    let next = next_arrival.unwrap_or(TimeMs::MAX);
    if let Some(r) = (0..size_bytes.len())
        .rev()
        .find(|&r| deadline_ok(r) && end_of(r).is_some_and(|end| end <= next))
    {
        return Some(r);
    }
    (0..size_bytes.len()).find(|&r| deadline_ok(r))
}

/// The selectable scheduling policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Classify every frame on the device.
    Local,
    /// Offload every frame the network can carry in time.
    Server,
    /// Offload exactly the frames at or below a fixed confidence threshold.
    FixedThreshold { theta: f64, use_calibrated: bool },
    /// Offload only when the uplink is idle at arrival, largest feasible
    /// resolution, no buffering.
    FastVa,
    /// Re-plan the buffered frames after every local result and every
    /// finished transmission.
    Cbo { use_calibrated: bool, anchor: Anchor },
}

impl PolicyKind {
    /// True when the policy reads calibrated confidence; policies that never
    /// read confidence report true.
    pub fn uses_calibrated(&self) -> bool {
        match self {
            PolicyKind::FixedThreshold { use_calibrated, .. }
            | PolicyKind::Cbo { use_calibrated, .. } => *use_calibrated,
            _ => true,
        }
    }

    pub fn with_anchor(self, anchor: Anchor) -> PolicyKind {
        match self {
            PolicyKind::Cbo { use_calibrated, .. } => PolicyKind::Cbo {
                use_calibrated,
                anchor,
            },
            other => other,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Local => write!(f, "local"),
            PolicyKind::Server => write!(f, "server"),
            PolicyKind::FastVa => write!(f, "fastva"),
            PolicyKind::FixedThreshold {
                theta,
                use_calibrated: true,
            } => write!(f, "fixed:{theta}"),
            PolicyKind::FixedThreshold {
                theta,
                use_calibrated: false,
            } => write!(f, "fixed-raw:{theta}"),
            PolicyKind::Cbo {
                use_calibrated: true,
                ..
            } => write!(f, "cbo"),
            PolicyKind::Cbo {
                use_calibrated: false,
                ..
            } => write!(f, "cbo-raw"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = CboError;
    fn from_str(s: &str) -> Result<PolicyKind> {
        let fixed = |rest: &str, use_calibrated: bool| -> Result<PolicyKind> {
            let theta: f64 = rest
                .parse()
                .map_err(|_| CboError::UnknownPolicy(s.to_string()))?;
            if !(0.0..=1.0).contains(&theta) {
                return Err(CboError::invalid(format!(
                    "threshold {theta} outside [0, 1]"
                )));
            }
            Ok(PolicyKind::FixedThreshold {
                theta,
                use_calibrated,
            })
        };
        match s {
            "local" => Ok(PolicyKind::Local),
            "server" => Ok(PolicyKind::Server),
            "fastva" => Ok(PolicyKind::FastVa),
            "cbo" => Ok(PolicyKind::Cbo {
                use_calibrated: true,
                anchor: Anchor::default(),
            }),
            "cbo-raw" => Ok(PolicyKind::Cbo {
                use_calibrated: false,
                anchor: Anchor::default(),
            }),
            other => {
                if let Some(rest) = other.strip_prefix("fixed-raw:") {
                    fixed(rest, false)
                } else if let Some(rest) = other.strip_prefix("fixed:") {
                    fixed(rest, true)
                } else {
                    Err(CboError::UnknownPolicy(other.to_string()))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn world() -> (AccuracyProfile, NetworkModel, TimingConfig) {
        (
            AccuracyProfile::default_synthetic(),
            NetworkModel::default(),
            TimingConfig::default(),
        )
    }

    fn frame(index: usize, arrival_ms: i64, confidence: f64, size: u64) -> BufferedFrame {
        BufferedFrame {
            frame_index: index,
            arrival: TimeMs(arrival_ms),
            confidence,
            size_bytes: vec![size; 5],
        }
    }

    #[test]
    fn empty_buffer_plans_nothing() {
        let (profile, network, timing) = world();
        let d = cbo_decide(&[], TimeMs::ZERO, &profile, &network, &timing, Anchor::default())
            .unwrap();
        assert_eq!(d, CboDecision::empty());
    }

    #[test]
    fn lone_uncertain_frame_goes_to_the_top_resolution() {
        let (profile, network, timing) = world();
        // 10 kB at 5 Mbps is 16 ms, well inside the 63 ms transmit budget.
        let frames = [frame(1, 0, 0.05, 10_000)];
        let d = cbo_decide(&frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default())
            .unwrap();
        assert_eq!(
            d.planned,
            vec![PlannedOffload {
                frame_index: 1,
                resolution: 4
            }]
        );
        assert_abs_diff_eq!(d.improvement, 0.81 - 0.05, epsilon = 1e-12);
        assert_eq!(d.theta, 0.05);
    }

    #[test]
    fn confident_frame_stays_local() {
        let (profile, network, timing) = world();
        // npu accuracy at 0.95 confidence (0.95) beats every server curve entry.
        let frames = [frame(1, 0, 0.95, 10_000)];
        let d = cbo_decide(&frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default())
            .unwrap();
        assert_eq!(d, CboDecision::empty());
    }

    #[test]
    fn contention_prefers_the_lower_confidence_frame() {
        let (profile, network, timing) = world();
        // 25 kB takes 40 ms; one transmission fits the 63 ms budget, two
        // chained do not (the second would end at 80 ms > 0 + 63 ms).
        let frames = [frame(1, 0, 0.15, 25_000), frame(2, 0, 0.05, 25_000)];
        let d = cbo_decide(&frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default())
            .unwrap();
        assert_eq!(
            d.planned,
            vec![PlannedOffload {
                frame_index: 2,
                resolution: 4
            }]
        );
        assert_abs_diff_eq!(d.improvement, 0.81 - 0.05, epsilon = 1e-12);
    }

    #[test]
    fn anchor_selects_the_reported_threshold() {
        let (profile, network, timing) = world();
        // Small frames so both offloads fit: the plan covers both.
        let frames = [frame(1, 0, 0.35, 3_000), frame(2, 33, 0.15, 3_000)];
        let highest = cbo_decide(
            &frames,
            TimeMs::ZERO,
            &profile,
            &network,
            &timing,
            Anchor::HighestConfidence,
        )
        .unwrap();
        assert_eq!(highest.planned.len(), 2);
        assert_eq!(highest.theta, 0.35);
        let earliest = cbo_decide(
            &frames,
            TimeMs::ZERO,
            &profile,
            &network,
            &timing,
            Anchor::EarliestArrival,
        )
        .unwrap();
        assert_eq!(earliest.theta, 0.35);
        // Swap arrivals so the earliest-arrival anchor is the low-confidence frame.
        let frames = [frame(1, 0, 0.15, 3_000), frame(2, 33, 0.35, 3_000)];
        let earliest = cbo_decide(
            &frames,
            TimeMs::ZERO,
            &profile,
            &network,
            &timing,
            Anchor::EarliestArrival,
        )
        .unwrap();
        assert_eq!(earliest.planned.len(), 2);
        assert_eq!(earliest.theta, 0.15);
    }

    #[test]
    fn buffer_must_be_in_arrival_order() {
        let (profile, network, timing) = world();
        let frames = [frame(1, 50, 0.2, 1_000), frame(2, 0, 0.3, 1_000)];
        assert!(matches!(
            cbo_decide(&frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default()),
            Err(CboError::UnsortedBuffer)
        ));
    }

    #[test]
    fn zero_bandwidth_plans_nothing() {
        let (profile, network, timing) = world();
        let starved = NetworkModel {
            bandwidth_bps: 0.0,
            ..network
        };
        let frames = [frame(1, 0, 0.05, 1_000)];
        let d = cbo_decide(&frames, TimeMs::ZERO, &profile, &starved, &timing, Anchor::default())
            .unwrap();
        assert_eq!(d, CboDecision::empty());
    }

    #[test]
    fn planned_offloads_come_back_in_arrival_order() {
        let (profile, network, timing) = world();
        let frames = [
            frame(1, 0, 0.25, 2_000),
            frame(2, 33, 0.05, 2_000),
            frame(3, 66, 0.15, 2_000),
        ];
        let d = cbo_decide(&frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default())
            .unwrap();
        assert_eq!(d.planned.len(), 3);
        let idxs: Vec<usize> = d.planned.iter().map(|p| p.frame_index).collect();
        assert_eq!(idxs, vec![1, 2, 3]);
    }

    #[test]
    fn feasibility_helper_walks_down_the_ladder() {
        let (_, network, timing) = world();
        // 63 ms budget at defaults; 30 kB needs 48 ms, 50 kB needs 80 ms.
        let sizes = [10_000u64, 20_000, 30_000, 50_000, 80_000];
        let r = largest_feasible_resolution(TimeMs::ZERO, &sizes, TimeMs::ZERO, &network, &timing);
        assert_eq!(r, Some(2));
        // A busy uplink shrinks the budget.
        let r = largest_feasible_resolution(TimeMs::ZERO, &sizes, TimeMs(40), &network, &timing);
        assert_eq!(r, Some(0));
        let r = largest_feasible_resolution(TimeMs::ZERO, &sizes, TimeMs(70), &network, &timing);
        assert_eq!(r, None);
    }

    #[test]
    fn server_choice_respects_the_next_arrival() {
        let (_, network, timing) = world();
        let sizes = [5_000u64, 10_000, 20_000, 30_000, 39_000];
        // Budget 63 ms allows even the top resolution (62.4 -> 62 ms), but
        // only 20 kB (32 ms) clears before a frame due at 33 ms.
        let r = server_resolution_choice(
            TimeMs::ZERO,
            &sizes,
            Some(TimeMs(33)),
            TimeMs::ZERO,
            &network,
            &timing,
        );
        assert_eq!(r, Some(2));
        // Nothing clears 33 ms when the link opens late; falls back to the
        // smallest deadline-feasible resolution.
        let r = server_resolution_choice(
            TimeMs::ZERO,
            &sizes,
            Some(TimeMs(33)),
            TimeMs(30),
            &network,
            &timing,
        );
        assert_eq!(r, Some(0));
    }

    #[test]
    fn policy_names_round_trip() {
        for name in ["local", "server", "fastva", "cbo", "cbo-raw", "fixed:0.5", "fixed-raw:0.35"] {
            let p: PolicyKind = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
    }

    #[test]
    fn policy_parse_rejects_bad_input() {
        assert!(matches!(
            "turbo".parse::<PolicyKind>(),
            Err(CboError::UnknownPolicy(_))
        ));
        assert!("fixed:nope".parse::<PolicyKind>().is_err());
        assert!("fixed:1.5".parse::<PolicyKind>().is_err());
    }

    proptest! {
        /// Every plan is deadline-feasible when chained in the planner's own
        /// confidence-descending order, and never plans a frame twice.
        #[test]
        fn plans_are_feasible_and_duplicate_free(
            confs in proptest::collection::vec(0.0f64..1.0, 1..7),
            sizes in proptest::collection::vec(1_000u64..60_000, 1..7),
            uplink_free in 0i64..200,
        ) {
            let (profile, network, timing) = world();
            let n = confs.len().min(sizes.len());
            let frames: Vec<BufferedFrame> = (0..n)
                .map(|i| frame(i + 1, i as i64 * 33, confs[i], sizes[i]))
                .collect();
            let d = cbo_decide(
                &frames, TimeMs(uplink_free), &profile, &network, &timing, Anchor::default(),
            ).unwrap();
            prop_assert!(d.improvement >= 0.0);
            let mut seen = std::collections::HashSet::new();
            for p in &d.planned {
                prop_assert!(seen.insert(p.frame_index));
            }
            // Re-chain in confidence-descending order and recheck windows.
            let mut chain: Vec<&PlannedOffload> = d.planned.iter().collect();
            chain.sort_by(|a, b| {
                let ca = frames.iter().find(|f| f.frame_index == a.frame_index).unwrap().confidence;
                let cb = frames.iter().find(|f| f.frame_index == b.frame_index).unwrap().confidence;
                cb.partial_cmp(&ca).unwrap()
            });
            let mut t = TimeMs(uplink_free);
            for p in chain {
                let f = frames.iter().find(|f| f.frame_index == p.frame_index).unwrap();
                let tx = network.tx_time_ms(f.size_bytes[p.resolution]).unwrap();
                let start = if t < f.arrival { f.arrival } else { t };
                let end = start + tx;
                let latest = f.arrival + timing.deadline_ms()
                    - network.server_time_ms() - network.latency_ms();
                prop_assert!(end <= latest);
                t = end;
            }
        }

        /// With equal arrivals and identical sizes, the optimum is reached by
        /// offloading the lowest-confidence frames, so the planner's
        /// improvement equals the best over those suffix sets.
        #[test]
        fn uniform_buffers_reduce_to_lowest_confidence_suffixes(
            confs in proptest::collection::vec(0.0f64..1.0, 1..6),
            size in 2_000u64..25_000,
        ) {
            let (profile, network, timing) = world();
            let frames: Vec<BufferedFrame> = confs
                .iter()
                .enumerate()
                .map(|(i, &c)| frame(i + 1, 0, c, size))
                .collect();
            let d = cbo_decide(
                &frames, TimeMs::ZERO, &profile, &network, &timing, Anchor::default(),
            ).unwrap();

            let mut by_conf_desc: Vec<&BufferedFrame> = frames.iter().collect();
            by_conf_desc.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
            let mut best = 0.0f64;
            // k lowest-confidence frames, chained high-to-low, best single
            // resolution shared by all (sizes are identical across frames).
            for k in 1..=frames.len() {
                for r in 0..5 {
                    let tx = network.tx_time_ms(size).unwrap();
                    let mut t = TimeMs::ZERO;
                    let mut gain = 0.0;
                    let mut ok = true;
                    for f in by_conf_desc.iter().skip(frames.len() - k) {
                        let end = t + tx;
                        let latest = f.arrival + timing.deadline_ms()
                            - network.server_time_ms() - network.latency_ms();
                        if end > latest { ok = false; break; }
                        gain += profile.offload_accuracy(r).unwrap()
                            - profile.npu_accuracy(f.confidence).unwrap();
                        t = end;
                    }
                    if ok {
                        best = best.max(gain);
                    }
                }
            }
            prop_assert!((d.improvement - best).abs() <= 1e-9,
                "planner {} vs suffix best {best}", d.improvement);
        }
    }
}
