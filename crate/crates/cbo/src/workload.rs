//! Frame traces, accuracy profiles, network and timing parameters, and the
//! seeded synthetic trace generator.
//!
//! A trace is the unit of replay: per-frame arrival times, raw and calibrated
//! confidences, per-resolution upload sizes and ground-truth correctness for
//! the local model and for the server model at every resolution.

use crate::error::{CboError, Result};
use crate::time::TimeMs;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use std::fmt;
use std::path::Path;

/// Number of fixed-width confidence bins used by NPU accuracy profiles and
/// reliability diagrams. Bin b covers [b/10, (b+1)/10); 1.0 falls in the top bin.
pub const CONFIDENCE_BINS: usize = 10;

/// Maps a confidence in [0, 1] to its bin index.
pub fn confidence_bin(p: f64) -> usize {
    ((p * CONFIDENCE_BINS as f64) as usize).min(CONFIDENCE_BINS - 1)
}

/// An upload resolution in pixels, e.g. 224x224.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Resolution {
        Resolution { width, height }
    }

    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// The textual id used in every file format, e.g. "224x224".
    pub fn label(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }

    pub fn parse(s: &str) -> Result<Resolution> {
        let (w, h) = s
            .split_once('x')
            .ok_or_else(|| CboError::UnknownResolution(s.to_string()))?;
        let width = w
            .parse()
            .map_err(|_| CboError::UnknownResolution(s.to_string()))?;
        let height = h
            .parse()
            .map_err(|_| CboError::UnknownResolution(s.to_string()))?;
        Ok(Resolution { width, height })
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// The five default resolutions, smallest to largest.
pub fn default_resolutions() -> Vec<Resolution> {
    [45, 90, 134, 179, 224]
        .into_iter()
        .map(|s| Resolution::new(s, s))
        .collect()
}

/// What happens to a frame: classified on the device, or uploaded at a
/// resolution (index into the profile's resolution list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    Local,
    Offload(usize),
}

impl Choice {
    pub fn is_offload(&self) -> bool {
        matches!(self, Choice::Offload(_))
    }

    /// File spelling: "local" or "offload:<resolution label>".
    pub fn format(&self, resolutions: &[Resolution]) -> String {
        match self {
            Choice::Local => "local".to_string(),
            Choice::Offload(r) => format!("offload:{}", resolutions[*r].label()),
        }
    }

    pub fn parse(s: &str, resolutions: &[Resolution]) -> Result<Choice> {
        if s == "local" {
            return Ok(Choice::Local);
        }
        if let Some(label) = s.strip_prefix("offload:") {
            let res = Resolution::parse(label)?;
            let idx = resolutions
                .iter()
                .position(|r| *r == res)
                .ok_or_else(|| CboError::UnknownResolution(label.to_string()))?;
            return Ok(Choice::Offload(idx));
        }
        Err(CboError::invalid(format!("unrecognized choice {s:?}")))
    }
}

/// One captured frame of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// 1-based position in the stream.
    pub index: usize,
    /// Arrival time in seconds; defaults to index * frame interval.
    pub arrival_s: f64,
    /// Optional raw classifier score vector; not part of the file format.
    pub raw_scores: Option<Vec<f64>>,
    /// Top-class softmax confidence before calibration.
    pub raw_confidence: f64,
    /// Confidence after calibration; the generator emits the true value.
    pub calibrated_confidence: f64,
    /// Upload size in bytes per resolution, strictly increasing.
    pub size_bytes: Vec<u64>,
    /// Whether the on-device model classifies this frame correctly.
    pub local_correct: bool,
    /// Whether the server model is correct at each resolution.
    pub server_correct: Vec<bool>,
}

impl Frame {
    pub fn arrival_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.arrival_s)
    }
}

/// A full trace: the resolution list every per-resolution field aligns with,
/// plus the frames in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub resolutions: Vec<Resolution>,
    pub frames: Vec<Frame>,
    /// Seed recorded by the generator, if this trace came from it.
    pub seed: Option<u64>,
}

impl FrameTrace {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks every structural invariant; load and the generator both call this.
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(CboError::invalid("trace has an empty resolution list"));
        }
        for w in self.resolutions.windows(2) {
            if w[1].pixels() <= w[0].pixels() {
                return Err(CboError::invalid(format!(
                    "resolutions not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let m = self.resolutions.len();
        let mut prev_arrival = f64::NEG_INFINITY;
        for (pos, f) in self.frames.iter().enumerate() {
            if f.index != pos + 1 {
                return Err(CboError::invalid(format!(
                    "frame at position {} has index {}, expected {}",
                    pos,
                    f.index,
                    pos + 1
                )));
            }
            if !f.arrival_s.is_finite() || f.arrival_s <= prev_arrival {
                return Err(CboError::invalid(format!(
                    "frame {}: arrival {} not strictly after previous {}",
                    f.index, f.arrival_s, prev_arrival
                )));
            }
            prev_arrival = f.arrival_s;
            for (name, v) in [
                ("raw_confidence", f.raw_confidence),
                ("calibrated_confidence", f.calibrated_confidence),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CboError::invalid(format!(
                        "frame {}: {name} {v} outside [0, 1]",
                        f.index
                    )));
                }
            }
            if f.size_bytes.len() != m || f.server_correct.len() != m {
                return Err(CboError::invalid(format!(
                    "frame {}: per-resolution fields do not match {m} resolutions",
                    f.index
                )));
            }
            for w in f.size_bytes.windows(2) {
                if w[1] <= w[0] {
                    return Err(CboError::invalid(format!(
                        "frame {}: sizes not strictly increasing ({} then {})",
                        f.index, w[0], w[1]
                    )));
                }
            }
            if let Some(scores) = &f.raw_scores {
                let top = crate::calibration::softmax_confidence(scores)?;
                if (top - f.raw_confidence).abs() > 1e-9 {
                    return Err(CboError::invalid(format!(
                        "frame {}: raw_confidence {} does not match softmax top {}",
                        f.index, f.raw_confidence, top
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the line-oriented trace format. Raw score vectors are an
    /// in-memory aid only and are not written.
    pub fn to_text(&self) -> String {
        let mut out = String::from("cbo-trace v1\n");
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed={seed}\n"));
        }
        out.push_str("resolutions");
        for r in &self.resolutions {
            out.push(' ');
            out.push_str(&r.label());
        }
        out.push('\n');
        for f in &self.frames {
            out.push_str(&format!(
                "{} {} {} {}",
                f.index, f.arrival_s, f.raw_confidence, f.calibrated_confidence
            ));
            for s in &f.size_bytes {
                out.push_str(&format!(" {s}"));
            }
            out.push_str(if f.local_correct { " 1" } else { " 0" });
            for c in &f.server_correct {
                out.push_str(if *c { " 1" } else { " 0" });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<FrameTrace> {
        let err = |line: usize, field: &str, message: String| CboError::Parse {
            path: origin.to_string(),
            line,
            field: field.to_string(),
            message,
        };
        let mut lines = text.lines().enumerate();
        let mut seed = None;

        let (n0, first) = lines
            .next()
            .ok_or_else(|| err(1, "header", "empty file".into()))?;
        if first.trim() != "cbo-trace v1" {
            return Err(err(n0 + 1, "header", format!("expected 'cbo-trace v1', got {first:?}")));
        }

        let mut resolutions: Option<Vec<Resolution>> = None;
        let mut frames = Vec::new();
        for (i, raw_line) in lines {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("seed=") {
                    seed = v.trim().parse().ok();
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("resolutions") {
                let mut rs = Vec::new();
                for tok in rest.split_whitespace() {
                    rs.push(
                        Resolution::parse(tok)
                            .map_err(|e| err(line_no, "resolutions", e.to_string()))?,
                    );
                }
                if rs.is_empty() {
                    return Err(err(line_no, "resolutions", "no resolutions listed".into()));
                }
                resolutions = Some(rs);
                continue;
            }
            let resolutions = resolutions
                .as_ref()
                .ok_or_else(|| err(line_no, "resolutions", "frame record before resolutions header".into()))?;
            let m = resolutions.len();
            let toks: Vec<&str> = line.split_whitespace().collect();
            let expected = 4 + m + 1 + m;
            if toks.len() != expected {
                return Err(err(
                    line_no,
                    "record",
                    format!("expected {expected} fields, got {}", toks.len()),
                ));
            }
            let parse_f64 = |tok: &str, field: &str| -> Result<f64> {
                tok.parse::<f64>()
                    .map_err(|e| err(line_no, field, e.to_string()))
            };
            let parse_bool = |tok: &str, field: &str| -> Result<bool> {
                match tok {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(err(line_no, field, format!("expected 0 or 1, got {other:?}"))),
                }
            };
            let index: usize = toks[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| err(line_no, "index", e.to_string()))?;
            let arrival_s = parse_f64(toks[1], "arrival_time")?;
            let raw_confidence = parse_f64(toks[2], "raw_confidence")?;
            let calibrated_confidence = parse_f64(toks[3], "calibrated_confidence")?;
            let mut size_bytes = Vec::with_capacity(m);
            for (k, tok) in toks[4..4 + m].iter().enumerate() {
                let v: u64 = tok
                    .parse()
                    .map_err(|e: std::num::ParseIntError| {
                        err(line_no, &format!("size_bytes[{k}]"), e.to_string())
                    })?;
                size_bytes.push(v);
            }
            let local_correct = parse_bool(toks[4 + m], "local_correct")?;
            let mut server_correct = Vec::with_capacity(m);
            for (k, tok) in toks[5 + m..].iter().enumerate() {
                server_correct.push(parse_bool(tok, &format!("server_correct[{k}]"))?);
            }
            frames.push(Frame {
                index,
                arrival_s,
                raw_scores: None,
                raw_confidence,
                calibrated_confidence,
                size_bytes,
                local_correct,
                server_correct,
            });
        }

        let trace = FrameTrace {
            resolutions: resolutions
                .ok_or_else(|| err(1, "resolutions", "missing resolutions header".into()))?,
            frames,
            seed,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FrameTrace> {
        let text = std::fs::read_to_string(path)?;
        FrameTrace::from_text(&text, &path.display().to_string())
    }
}

/// Accuracy lookup tables: on-device accuracy per confidence bin and server
/// accuracy per upload resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyProfile {
    pub resolutions: Vec<Resolution>,
    /// Accuracy of the local model within each calibrated-confidence bin.
    pub npu_accuracy_bins: [f64; CONFIDENCE_BINS],
    /// Server-side accuracy per resolution, non-decreasing.
    pub server_accuracy: Vec<f64>,
}

impl AccuracyProfile {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(CboError::invalid("profile has an empty resolution list"));
        }
        for w in self.resolutions.windows(2) {
            if w[1].pixels() <= w[0].pixels() {
                return Err(CboError::invalid(format!(
                    "profile resolutions not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.server_accuracy.len() != self.resolutions.len() {
            return Err(CboError::invalid(
                "server_accuracy length does not match resolution list",
            ));
        }
        for a in self.npu_accuracy_bins.iter().chain(&self.server_accuracy) {
            if !(0.0..=1.0).contains(a) {
                return Err(CboError::invalid(format!("accuracy {a} outside [0, 1]")));
            }
        }
        for w in self.server_accuracy.windows(2) {
            if w[1] < w[0] {
                return Err(CboError::invalid(
                    "server_accuracy must be non-decreasing in resolution",
                ));
            }
        }
        Ok(())
    }

    /// Expected local accuracy at calibrated confidence p (piecewise constant
    /// over the ten bins; p = 1.0 reads the top bin).
    pub fn npu_accuracy(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CboError::invalid(format!("confidence {p} outside [0, 1]")));
        }
        Ok(self.npu_accuracy_bins[confidence_bin(p)])
    }

    /// Expected server accuracy at a resolution index.
    pub fn offload_accuracy(&self, resolution: usize) -> Result<f64> {
        self.server_accuracy
            .get(resolution)
            .copied()
            .ok_or_else(|| CboError::UnknownResolution(format!("index {resolution}")))
    }

    /// The default synthetic profile: a calibrated local model (bin accuracy
    /// at the bin center) and a server curve rising to 0.81 at 224x224.
    pub fn default_synthetic() -> AccuracyProfile {
        let mut npu = [0.0; CONFIDENCE_BINS];
        for (b, v) in npu.iter_mut().enumerate() {
            *v = (b as f64 + 0.5) / CONFIDENCE_BINS as f64;
        }
        AccuracyProfile {
            resolutions: default_resolutions(),
            npu_accuracy_bins: npu,
            server_accuracy: vec![0.30, 0.55, 0.68, 0.76, 0.81],
        }
    }
}

/// Uplink bandwidth and server round-trip parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkModel {
    /// Uplink bandwidth in bits per second. Zero means offloading is impossible.
    pub bandwidth_bps: f64,
    /// One-way network latency in seconds, charged once per offload.
    pub latency_s: f64,
    /// Server inference time in seconds per frame (pipelined, off the uplink).
    pub server_time_s: f64,
}

impl Default for NetworkModel {
    fn default() -> NetworkModel {
        NetworkModel {
            bandwidth_bps: 5.0e6,
            latency_s: 0.100,
            server_time_s: 0.037,
        }
    }
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        if !self.bandwidth_bps.is_finite() || self.bandwidth_bps < 0.0 {
            return Err(CboError::invalid("bandwidth must be finite and >= 0"));
        }
        if !self.latency_s.is_finite() || self.latency_s < 0.0 {
            return Err(CboError::invalid("latency must be finite and >= 0"));
        }
        if !self.server_time_s.is_finite() || self.server_time_s < 0.0 {
            return Err(CboError::invalid("server time must be finite and >= 0"));
        }
        Ok(())
    }

    /// Transmission time for `bytes` on the grid; None when bandwidth is zero.
    pub fn tx_time_ms(&self, bytes: u64) -> Option<TimeMs> {
        if self.bandwidth_bps <= 0.0 {
            return None;
        }
        Some(TimeMs::from_secs_f64(bytes as f64 * 8.0 / self.bandwidth_bps))
    }

    pub fn latency_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.latency_s)
    }

    pub fn server_time_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.server_time_s)
    }

    /// Post-transmission delay until the result is back: server compute plus latency.
    pub fn overhead_ms(&self) -> TimeMs {
        self.server_time_ms() + self.latency_ms()
    }
}

/// Frame-rate and deadline parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    pub frame_rate_fps: f64,
    /// Interval between arrivals; always 1 / frame_rate_fps.
    pub frame_interval_s: f64,
    /// Per-frame completion deadline, relative to arrival.
    pub deadline_s: f64,
    pub frame_count: usize,
}

impl TimingConfig {
    pub fn new(fps: f64, deadline_s: f64, frame_count: usize) -> TimingConfig {
        TimingConfig {
            frame_rate_fps: fps,
            frame_interval_s: 1.0 / fps,
            deadline_s,
            frame_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.frame_rate_fps.is_finite() || self.frame_rate_fps <= 0.0 {
            return Err(CboError::invalid("frame rate must be positive"));
        }
        if !self.frame_interval_s.is_finite() || self.frame_interval_s <= 0.0 {
            return Err(CboError::invalid("frame interval must be positive"));
        }
        if (self.frame_interval_s * self.frame_rate_fps - 1.0).abs() > 1e-9 {
            return Err(CboError::invalid(
                "frame interval and frame rate are inconsistent",
            ));
        }
        if !self.deadline_s.is_finite() || self.deadline_s <= 0.0 {
            return Err(CboError::invalid("deadline must be positive"));
        }
        Ok(())
    }

    pub fn deadline_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.deadline_s)
    }

    pub fn interval_ms(&self) -> TimeMs {
        TimeMs::from_secs_f64(self.frame_interval_s)
    }
}

impl Default for TimingConfig {
    fn default() -> TimingConfig {
        TimingConfig::new(30.0, 0.200, 0)
    }
}

/// How raw confidence is distorted relative to the true (calibrated) value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Miscalibration {
    /// raw = p: already calibrated.
    Identity,
    /// raw = p^exponent; exponents below 1 inflate confidence.
    Power { exponent: f64 },
}

impl Miscalibration {
    pub fn apply(&self, p: f64) -> f64 {
        match self {
            Miscalibration::Identity => p,
            Miscalibration::Power { exponent } => p.powf(*exponent).clamp(0.0, 1.0),
        }
    }

    /// Parses "identity" or "power:<exponent>".
    pub fn parse(s: &str) -> Result<Miscalibration> {
        if s == "identity" {
            return Ok(Miscalibration::Identity);
        }
        if let Some(e) = s.strip_prefix("power:") {
            let exponent: f64 = e
                .parse()
                .map_err(|_| CboError::invalid(format!("bad miscalibration exponent {e:?}")))?;
            if !exponent.is_finite() || exponent <= 0.0 {
                return Err(CboError::invalid("miscalibration exponent must be positive"));
            }
            return Ok(Miscalibration::Power { exponent });
        }
        Err(CboError::invalid(format!("unrecognized miscalibration {s:?}")))
    }
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub frame_count: usize,
    pub fps: f64,
    pub seed: u64,
    /// Beta(alpha, beta) distribution of true calibrated confidence.
    pub conf_alpha: f64,
    pub conf_beta: f64,
    pub miscalibration: Miscalibration,
    /// Median encoded size per pixel; per-frame compressibility is LogNormal.
    pub bytes_per_pixel: f64,
    pub size_sigma: f64,
}

impl Default for TraceSpec {
    fn default() -> TraceSpec {
        TraceSpec {
            frame_count: 300,
            fps: 30.0,
            seed: 0,
            conf_alpha: 2.0,
            conf_beta: 1.5,
            miscalibration: Miscalibration::Power { exponent: 0.45 },
            bytes_per_pixel: 0.9,
            size_sigma: 0.25,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(CboError::invalid("frame_count must be at least 1"));
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(CboError::invalid("fps must be positive"));
        }
        if self.conf_alpha <= 0.0 || self.conf_beta <= 0.0 {
            return Err(CboError::invalid("confidence Beta parameters must be positive"));
        }
        if !self.bytes_per_pixel.is_finite() || self.bytes_per_pixel <= 0.0 {
            return Err(CboError::invalid("bytes_per_pixel must be positive"));
        }
        if !self.size_sigma.is_finite() || self.size_sigma < 0.0 {
            return Err(CboError::invalid("size_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Generates a seeded synthetic trace against a profile.
///
/// Correctness booleans are drawn so that P(local correct | confidence p)
/// equals the profile's bin accuracy and P(server correct at r) equals
/// server_accuracy[r]. One uniform draw per frame drives all server
/// resolutions, so a frame correct at some resolution is also correct at
/// every larger one. The draw order per frame is fixed (confidence,
/// compressibility, local, server), which keeps frames identical across
/// different fps values for the same seed.
pub fn generate_trace(spec: &TraceSpec, profile: &AccuracyProfile) -> Result<FrameTrace> {
    spec.validate()?;
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let conf_dist = Beta::new(spec.conf_alpha, spec.conf_beta)
        .map_err(|e| CboError::invalid(format!("confidence distribution: {e}")))?;
    let size_dist = LogNormal::new(0.0, spec.size_sigma)
        .map_err(|e| CboError::invalid(format!("size distribution: {e}")))?;
    let interval = 1.0 / spec.fps;

    let mut frames = Vec::with_capacity(spec.frame_count);
    for i in 1..=spec.frame_count {
        let p: f64 = conf_dist.sample(&mut rng).clamp(0.0, 1.0);
        let compress: f64 = size_dist.sample(&mut rng);
        let u_local: f64 = rng.gen();
        let u_server: f64 = rng.gen();

        let mut size_bytes = Vec::with_capacity(profile.resolutions.len());
        let mut prev = 0u64;
        for r in &profile.resolutions {
            let raw = (r.pixels() as f64 * spec.bytes_per_pixel * compress).round() as u64;
            let b = raw.max(prev + 1);
            size_bytes.push(b);
            prev = b;
        }

        let local_correct = u_local < profile.npu_accuracy(p)?;
        let server_correct = profile
            .server_accuracy
            .iter()
            .map(|a| u_server < *a)
            .collect();

        frames.push(Frame {
            index: i,
            arrival_s: i as f64 * interval,
            raw_scores: None,
            raw_confidence: spec.miscalibration.apply(p),
            calibrated_confidence: p,
            size_bytes,
            local_correct,
            server_correct,
        });
    }

    let trace = FrameTrace {
        resolutions: profile.resolutions.clone(),
        frames,
        seed: Some(spec.seed),
    };
    trace.validate()?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile(local: f64) -> AccuracyProfile {
        AccuracyProfile {
            resolutions: default_resolutions(),
            npu_accuracy_bins: [local; CONFIDENCE_BINS],
            server_accuracy: vec![0.30, 0.55, 0.68, 0.76, 0.81],
        }
    }

    #[test]
    fn bin_lookup_covers_edges() {
        let profile = AccuracyProfile::default_synthetic();
        assert_eq!(profile.npu_accuracy(0.0).unwrap(), 0.05);
        assert_eq!(profile.npu_accuracy(0.05).unwrap(), 0.05);
        assert_eq!(profile.npu_accuracy(0.1).unwrap(), 0.15);
        // 1.0 belongs to the top bin, not an eleventh one.
        assert_eq!(profile.npu_accuracy(1.0).unwrap(), 0.95);
        assert!(profile.npu_accuracy(1.5).is_err());
    }

    #[test]
    fn offload_accuracy_rejects_unknown_resolution() {
        let profile = AccuracyProfile::default_synthetic();
        assert_eq!(profile.offload_accuracy(4).unwrap(), 0.81);
        assert!(profile.offload_accuracy(5).is_err());
    }

    #[test]
    fn generator_is_deterministic_per_seed() {
        let profile = AccuracyProfile::default_synthetic();
        let spec = TraceSpec {
            seed: 7,
            frame_count: 50,
            ..TraceSpec::default()
        };
        let a = generate_trace(&spec, &profile).unwrap();
        let b = generate_trace(&spec, &profile).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        let c = generate_trace(
            &TraceSpec {
                seed: 8,
                ..spec.clone()
            },
            &profile,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identity_miscalibration_keeps_raw_equal_to_calibrated() {
        let profile = AccuracyProfile::default_synthetic();
        let spec = TraceSpec {
            miscalibration: Miscalibration::Identity,
            frame_count: 40,
            seed: 3,
            ..TraceSpec::default()
        };
        let t = generate_trace(&spec, &profile).unwrap();
        for f in &t.frames {
            assert_eq!(f.raw_confidence, f.calibrated_confidence);
        }
    }

    #[test]
    fn empirical_local_rate_tracks_flat_bins() {
        // Flat 0.5 bins: long-run local accuracy near one half.
        let profile = flat_profile(0.5);
        let spec = TraceSpec {
            frame_count: 10_000,
            seed: 11,
            ..TraceSpec::default()
        };
        let t = generate_trace(&spec, &profile).unwrap();
        let rate = t.frames.iter().filter(|f| f.local_correct).count() as f64 / t.len() as f64;
        assert!((0.48..=0.52).contains(&rate), "rate {rate}");
    }

    #[test]
    fn server_correctness_is_nested_across_resolutions() {
        let profile = AccuracyProfile::default_synthetic();
        let spec = TraceSpec {
            frame_count: 500,
            seed: 5,
            ..TraceSpec::default()
        };
        let t = generate_trace(&spec, &profile).unwrap();
        for f in &t.frames {
            for w in f.server_correct.windows(2) {
                // Correct at a smaller resolution implies correct at larger ones.
                assert!(!w[0] || w[1]);
            }
        }
    }

    #[test]
    fn generator_rejects_bad_specs() {
        let profile = AccuracyProfile::default_synthetic();
        let zero = TraceSpec {
            frame_count: 0,
            ..TraceSpec::default()
        };
        assert!(generate_trace(&zero, &profile).is_err());
        let empty = AccuracyProfile {
            resolutions: vec![],
            npu_accuracy_bins: [0.5; CONFIDENCE_BINS],
            server_accuracy: vec![],
        };
        assert!(generate_trace(&TraceSpec::default(), &empty).is_err());
    }

    #[test]
    fn trace_round_trips_exactly() {
        let profile = AccuracyProfile::default_synthetic();
        let spec = TraceSpec {
            frame_count: 64,
            seed: 9,
            ..TraceSpec::default()
        };
        let t = generate_trace(&spec, &profile).unwrap();
        let text = t.to_text();
        let back = FrameTrace::from_text(&text, "mem").unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let text = "cbo-trace v1\nresolutions 45x45\n1 0.033 0.9 0.8 100 1 x\n";
        let e = FrameTrace::from_text(text, "t.trace").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("t.trace:3"), "{msg}");
        assert!(msg.contains("server_correct[0]"), "{msg}");
    }

    #[test]
    fn load_rejects_nonincreasing_sizes_and_arrivals() {
        let shrinking = "cbo-trace v1\nresolutions 45x45 90x90\n1 0.033 0.9 0.8 200 100 1 1 1\n";
        assert!(FrameTrace::from_text(shrinking, "mem").is_err());
        let backwards = "cbo-trace v1\nresolutions 45x45\n1 0.066 0.9 0.8 100 1 1\n2 0.033 0.9 0.8 100 1 1\n";
        assert!(FrameTrace::from_text(backwards, "mem").is_err());
    }

    #[test]
    fn choice_format_round_trips() {
        let rs = default_resolutions();
        for c in [Choice::Local, Choice::Offload(0), Choice::Offload(4)] {
            let s = c.format(&rs);
            assert_eq!(Choice::parse(&s, &rs).unwrap(), c);
        }
        assert!(Choice::parse("offload:17x17", &rs).is_err());
    }

    #[test]
    fn timing_invariant_holds() {
        let t = TimingConfig::new(30.0, 0.2, 100);
        t.validate().unwrap();
        let broken = TimingConfig {
            frame_interval_s: 0.5,
            ..t
        };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn zero_bandwidth_has_no_transmission_time() {
        let net = NetworkModel {
            bandwidth_bps: 0.0,
            ..NetworkModel::default()
        };
        assert_eq!(net.tx_time_ms(1000), None);
        let five = NetworkModel::default();
        // 5 Mbps, 25 kB -> 40 ms.
        assert_eq!(five.tx_time_ms(25_000), Some(TimeMs(40)));
    }
}
