//! Command-line interface: trace generation, calibration fitting, single
//! runs, parameter sweeps, and comparison against the offline optimum.
//!
//! File-producing commands stamp their CSV output with a config hash so
//! results can be traced back to the exact parameters that produced them.
//! Millisecond and Mbps flags mirror the config file units; every network,
//! timing, and device flag can also come from a CBO_ environment variable.

use crate::calibration::{
    ece, fit_isotonic, fit_platt_scores, mce, reliability_bins, CalibrationModel, PlattModel,
};
use crate::config;
use crate::error::{CboError, Result};
use crate::optimal::solve_optimal;
use crate::policies::{Anchor, PolicyKind};
use crate::simulator::{replay_schedule, run, sweep, SimParams, SimReport, SweepAxis};
use crate::workload::{
    AccuracyProfile, FrameTrace, Miscalibration, NetworkModel, TimingConfig, TraceSpec,
};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "cbo", version, about = "Confidence-based offloading simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic frame trace.
    GenTrace(GenTraceArgs),
    /// Fit a confidence calibration model from a trace.
    Calibrate(CalibrateArgs),
    /// Simulate one policy over a trace.
    Run(RunArgs),
    /// Run several policies across a parameter axis.
    Sweep(SweepArgs),
    /// Compare a policy against the offline optimal schedule.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Accuracy profile file; the built-in synthetic profile when omitted.
    #[arg(long, env = "CBO_PROFILE")]
    pub profile: Option<PathBuf>,
}

impl ProfileArgs {
    fn load(&self) -> Result<AccuracyProfile> {
        match &self.profile {
            Some(path) => config::load_profile(path),
            None => Ok(AccuracyProfile::default_synthetic()),
        }
    }
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Network parameter file; individual flags override its values.
    #[arg(long, env = "CBO_NETWORK")]
    pub network: Option<PathBuf>,
    /// Uplink bandwidth in Mbps.
    #[arg(long, env = "CBO_BANDWIDTH_MBPS")]
    pub bandwidth_mbps: Option<f64>,
    /// Result return latency in milliseconds.
    #[arg(long, env = "CBO_LATENCY_MS")]
    pub latency_ms: Option<f64>,
    /// Server inference time in milliseconds.
    #[arg(long, env = "CBO_SERVER_TIME_MS")]
    pub server_time_ms: Option<f64>,
}

impl NetworkArgs {
    fn load(&self) -> Result<NetworkModel> {
        let mut net = match &self.network {
            Some(path) => config::load_network(path)?,
            None => NetworkModel::default(),
        };
        if let Some(b) = self.bandwidth_mbps {
            net.bandwidth_bps = b * 1e6;
        }
        if let Some(l) = self.latency_ms {
            net.latency_s = l / 1000.0;
        }
        if let Some(s) = self.server_time_ms {
            net.server_time_s = s / 1000.0;
        }
        net.validate()?;
        Ok(net)
    }
}

#[derive(Debug, Args)]
pub struct DeviceArgs {
    /// Per-frame deadline in milliseconds.
    #[arg(long, env = "CBO_DEADLINE_MS", default_value_t = 200.0)]
    pub deadline_ms: f64,
    /// Device inference time in milliseconds.
    #[arg(long, env = "CBO_NPU_MS", default_value_t = 20.0)]
    pub npu_ms: f64,
    /// Confidence calibration time in milliseconds.
    #[arg(long, env = "CBO_CALIB_MS", default_value_t = 8.0)]
    pub calib_ms: f64,
}

impl DeviceArgs {
    fn sim_params(&self) -> SimParams {
        SimParams {
            npu_time_s: self.npu_ms / 1000.0,
            calibration_time_s: self.calib_ms / 1000.0,
        }
    }

    /// Timing for a loaded trace; the frame rate is read off the arrivals.
    fn timing_for(&self, trace: &FrameTrace) -> TimingConfig {
        let fps = if trace.frames.len() >= 2 {
            1.0 / (trace.frames[1].arrival_s - trace.frames[0].arrival_s)
        } else {
            30.0
        };
        TimingConfig::new(fps, self.deadline_ms / 1000.0, trace.frames.len())
    }
}

#[derive(Debug, Args)]
pub struct TraceSpecArgs {
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, env = "CBO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Beta distribution alpha for true confidence.
    #[arg(long, default_value_t = 2.0)]
    pub conf_alpha: f64,
    /// Beta distribution beta for true confidence.
    #[arg(long, default_value_t = 1.5)]
    pub conf_beta: f64,
    /// Raw-score distortion: "identity" or "power:<exponent>".
    #[arg(long, default_value = "power:0.45")]
    pub miscalibration: String,
    /// Median encoded bytes per pixel.
    #[arg(long, default_value_t = 0.9)]
    pub bytes_per_pixel: f64,
    /// Log-sigma of per-frame compressibility.
    #[arg(long, default_value_t = 0.25)]
    pub size_sigma: f64,
}

impl TraceSpecArgs {
    fn spec(&self) -> Result<TraceSpec> {
        Ok(TraceSpec {
            frame_count: self.frames,
            fps: self.fps,
            seed: self.seed,
            conf_alpha: self.conf_alpha,
            conf_beta: self.conf_beta,
            miscalibration: Miscalibration::parse(&self.miscalibration)?,
            bytes_per_pixel: self.bytes_per_pixel,
            size_sigma: self.size_sigma,
        })
    }
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[command(flatten)]
    pub spec: TraceSpecArgs,
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Output trace file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the accuracy profile used for generation.
    #[arg(long)]
    pub emit_profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Trace whose raw confidences and local outcomes form the training data.
    #[arg(long)]
    pub trace: PathBuf,
    /// "platt" or "isotonic".
    #[arg(long, default_value = "platt")]
    pub method: String,
    /// Leading fraction of frames used for fitting; the rest evaluate it.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// local, server, fastva, cbo, or fixed (see --theta and --raw).
    #[arg(long, default_value = "cbo")]
    pub policy: String,
    /// Confidence threshold for the fixed policy.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Read raw instead of calibrated confidence (cbo and fixed).
    #[arg(long, default_value_t = false)]
    pub raw: bool,
    /// Threshold anchor for cbo: highest-confidence or earliest-arrival.
    #[arg(long, default_value = "highest-confidence")]
    pub anchor: String,
}

impl PolicyArgs {
    fn resolve(&self) -> Result<PolicyKind> {
        let anchor: Anchor = self.anchor.parse()?;
        let composed = match (self.policy.as_str(), self.theta) {
            ("fixed", Some(theta)) if self.raw => format!("fixed-raw:{theta}"),
            ("fixed", Some(theta)) => format!("fixed:{theta}"),
            ("fixed", None) => {
                return Err(CboError::invalid("the fixed policy requires --theta"))
            }
            ("cbo", _) if self.raw => "cbo-raw".to_string(),
            (other, _) => other.to_string(),
        };
        Ok(composed.parse::<PolicyKind>()?.with_anchor(anchor))
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input trace file.
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Replay this schedule file instead of running a policy.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Recompute calibrated confidences from raw ones with this model.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Per-frame outcome CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub spec: TraceSpecArgs,
    /// bandwidth, fps, or latency.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values (Mbps, fps, or ms).
    #[arg(long)]
    pub values: String,
    /// Comma-separated policy names.
    #[arg(long, default_value = "local,server,fastva,fixed:0.5,cbo")]
    pub policies: String,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Input trace file.
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Recompute calibrated confidences from raw ones with this model.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Write the optimal schedule here.
    #[arg(long)]
    pub emit_schedule: Option<PathBuf>,
}

/// First 16 hex characters of the SHA-256 of a canonical parameter string.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn report_summary(report: &SimReport) -> String {
    format!(
        "policy={} expected_accuracy={:.6} empirical_accuracy={:.6} offload_fraction={:.4} \
         deadline_violations={} mean_latency_ms={:.2} bytes_sent={}",
        report.policy,
        report.expected_accuracy,
        report.empirical_accuracy,
        report.offload_fraction,
        report.deadline_violations,
        report.mean_latency_ms,
        report.bytes_sent
    )
}

fn apply_calibration(trace: &mut FrameTrace, path: &Path) -> Result<()> {
    let model = CalibrationModel::load(path)?;
    for frame in &mut trace.frames {
        frame.calibrated_confidence = model.calibrate_score(frame.raw_confidence).clamp(0.0, 1.0);
    }
    Ok(())
}

fn gen_trace(args: &GenTraceArgs) -> Result<()> {
    let profile = args.profile.load()?;
    let spec = args.spec.spec()?;
    let trace = crate::workload::generate_trace(&spec, &profile)?;
    trace.save(&args.out)?;
    if let Some(path) = &args.emit_profile {
        config::save_profile(&profile, path)?;
    }
    println!(
        "wrote {} ({} frames, seed {})",
        args.out.display(),
        trace.frames.len(),
        spec.seed
    );
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    if !(0.0 < args.train_fraction && args.train_fraction < 1.0) {
        return Err(CboError::invalid("train fraction must be inside (0, 1)"));
    }
    let trace = FrameTrace::load(&args.trace)?;
    let pairs: Vec<(f64, bool)> = trace
        .frames
        .iter()
        .map(|f| (f.raw_confidence, f.local_correct))
        .collect();
    let split = ((pairs.len() as f64 * args.train_fraction).ceil() as usize).min(pairs.len() - 1);
    if split == 0 {
        return Err(CboError::invalid("trace too small to split for training"));
    }
    let (train, eval) = pairs.split_at(split);

    let model = match args.method.as_str() {
        "platt" => {
            let class = fit_platt_scores(train);
            if class.degenerate {
                eprintln!("warning: degenerate fit (one-sided labels or capped parameters)");
            }
            CalibrationModel::Platt(PlattModel {
                classes: vec![class],
            })
        }
        "isotonic" => {
            let samples: Vec<(f64, f64)> = train
                .iter()
                .map(|&(s, y)| (s, if y { 1.0 } else { 0.0 }))
                .collect();
            CalibrationModel::Isotonic(fit_isotonic(&samples)?)
        }
        other => {
            return Err(CboError::invalid(format!(
                "unknown calibration method {other:?} (expected platt or isotonic)"
            )))
        }
    };

    let raw_bins = reliability_bins(eval)?;
    let cal_pairs: Vec<(f64, bool)> = eval
        .iter()
        .map(|&(s, y)| (model.calibrate_score(s).clamp(0.0, 1.0), y))
        .collect();
    let cal_bins = reliability_bins(&cal_pairs)?;
    model.save(&args.out)?;
    println!(
        "method={} train={} eval={} ece_raw={:.4} ece_calibrated={:.4} mce_raw={:.4} mce_calibrated={:.4}",
        args.method,
        train.len(),
        eval.len(),
        ece(&raw_bins)?,
        ece(&cal_bins)?,
        mce(&raw_bins)?,
        mce(&cal_bins)?
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn outcome_csv(report: &SimReport, trace: &FrameTrace, hash: &str, seed: u64) -> String {
    let mut out = format!("# config_hash={hash} seed={seed}\n");
    out.push_str(
        "frame,arrival_ms,choice,completion_ms,latency_ms,expected_contribution,empirical_correct,deadline_violated\n",
    );
    for (o, f) in report.frames.iter().zip(&trace.frames) {
        let arrival = f.arrival_ms();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.frame_index,
            arrival.0,
            o.choice.format(&trace.resolutions),
            o.completion.0,
            (o.completion - arrival).0,
            o.expected_contribution,
            u8::from(o.empirical_correct),
            u8::from(o.deadline_violated)
        );
    }
    out
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let profile = args.profile.load()?;
    let network = args.network.load()?;
    let sim = args.device.sim_params();
    let mut trace = FrameTrace::load(&args.trace)?;
    if let Some(path) = &args.calibration {
        apply_calibration(&mut trace, path)?;
    }
    let timing = args.device.timing_for(&trace);

    let report = match &args.schedule {
        Some(path) => {
            let schedule = crate::optimal::Schedule::load(path)?;
            replay_schedule(&trace, &profile, &network, &timing, &sim, &schedule)?
        }
        None => {
            let policy = args.policy.resolve()?;
            run(&trace, &profile, &network, &timing, &sim, policy)?
        }
    };
    println!("{}", report_summary(&report));
    if let Some(path) = &args.out {
        let seed = trace.seed.unwrap_or(0);
        let canonical = format!(
            "run policy={} trace={} bandwidth={} latency={} server={} deadline={} npu={} calib={} seed={}",
            report.policy,
            args.trace.display(),
            network.bandwidth_bps,
            network.latency_s,
            network.server_time_s,
            timing.deadline_s,
            sim.npu_time_s,
            sim.calibration_time_s,
            seed
        );
        write_text(path, &outcome_csv(&report, &trace, &config_hash(&canonical), seed))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_axis(axis: &str, values: &str) -> Result<SweepAxis> {
    let parsed: Vec<f64> = values
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| CboError::invalid(format!("bad axis value {tok:?}")))
        })
        .collect::<Result<_>>()?;
    if parsed.is_empty() {
        return Err(CboError::invalid("the sweep needs at least one axis value"));
    }
    match axis {
        "bandwidth" => Ok(SweepAxis::Bandwidth(
            parsed.iter().map(|v| v * 1e6).collect(),
        )),
        "fps" => Ok(SweepAxis::FrameRate(parsed)),
        "latency" => Ok(SweepAxis::Latency(
            parsed.iter().map(|v| v / 1000.0).collect(),
        )),
        other => Err(CboError::invalid(format!(
            "unknown sweep axis {other:?} (expected bandwidth, fps, or latency)"
        ))),
    }
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let profile = args.profile.load()?;
    let network = args.network.load()?;
    let sim = args.device.sim_params();
    let spec = args.spec.spec()?;
    let timing = TimingConfig::new(spec.fps, args.device.deadline_ms / 1000.0, spec.frame_count);
    let policies: Vec<PolicyKind> = args
        .policies
        .split(',')
        .map(|tok| tok.trim().parse::<PolicyKind>())
        .collect::<Result<_>>()?;
    if policies.is_empty() {
        return Err(CboError::invalid("the sweep needs at least one policy"));
    }
    let axis = parse_axis(&args.axis, &args.values)?;
    let groups = sweep(&spec, &profile, &network, &timing, &sim, &policies, &axis)?;

    let canonical = format!(
        "sweep axis={} values={} policies={} bandwidth={} latency={} server={} deadline={} npu={} calib={} frames={} fps={} seed={}",
        axis.name(),
        args.values,
        args.policies,
        network.bandwidth_bps,
        network.latency_s,
        network.server_time_s,
        args.device.deadline_ms,
        sim.npu_time_s,
        sim.calibration_time_s,
        spec.frame_count,
        spec.fps,
        spec.seed
    );
    let mut out = format!("# config_hash={} seed={}\n", config_hash(&canonical), spec.seed);
    out.push_str(&format!(
        "{},policy,expected_accuracy,empirical_accuracy,offload_fraction,deadline_violations,mean_latency_ms,bytes_sent\n",
        axis.name()
    ));
    for group in &groups {
        for row in group {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.axis_value,
                row.policy,
                row.expected_accuracy,
                row.empirical_accuracy,
                row.offload_fraction,
                row.deadline_violations,
                row.mean_latency_ms,
                row.bytes_sent
            );
        }
    }
    write_text(&args.out, &out)?;
    println!(
        "wrote {} ({} axis values x {} policies)",
        args.out.display(),
        groups.len(),
        policies.len()
    );
    Ok(())
}

fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let profile = args.profile.load()?;
    let network = args.network.load()?;
    let sim = args.device.sim_params();
    let mut trace = FrameTrace::load(&args.trace)?;
    if let Some(path) = &args.calibration {
        apply_calibration(&mut trace, path)?;
    }
    let timing = args.device.timing_for(&trace);

    let policy = args.policy.resolve()?;
    let online = run(&trace, &profile, &network, &timing, &sim, policy)?;
    let schedule = solve_optimal(&trace, &profile, &network, &timing, true)?;
    let optimal = replay_schedule(&trace, &profile, &network, &timing, &sim, &schedule)?;

    println!("{}", report_summary(&online));
    println!("{}", report_summary(&optimal).replace("policy=replay", "policy=optimal"));
    println!(
        "gap expected={:.6} empirical={:.6}",
        optimal.expected_accuracy - online.expected_accuracy,
        optimal.empirical_accuracy - online.empirical_accuracy
    );
    if let Some(path) = &args.emit_schedule {
        schedule.save(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Parses the process arguments and dispatches; errors bubble to `main`.
pub fn run_cli() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenTrace(args) => gen_trace(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Run(args) => run_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Compare(args) => compare_cmd(args),
    }
}
