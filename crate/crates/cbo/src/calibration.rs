//! Confidence calibration: softmax confidence, Platt scaling, isotonic
//! regression via pool-adjacent-violators, reliability bins, and the expected
//! and maximum calibration errors.
//!
//! Platt scaling fits P(y=1 | f) = 1 / (1 + exp(a*f + b)) by maximum
//! likelihood; with that sign convention a well-behaved fit has a < 0.
//! ECE is the bin-count-weighted mean of |accuracy - mean confidence| over
//! the ten fixed-width bins, MCE the maximum over non-empty bins.

use crate::config::{join_f64, KvFile};
use crate::error::{CboError, Result};
use crate::workload::{confidence_bin, CONFIDENCE_BINS};
use std::path::Path;

/// Largest parameter magnitude the Platt optimizer will produce. Separable
/// data pushes parameters to this cap; the fit is then flagged degenerate.
pub const PLATT_PARAM_CAP: f64 = 50.0;
const PLATT_TOL: f64 = 1e-10;
const PLATT_MAX_ITERS: usize = 200;

/// Confidence of the top class: the largest softmax component, computed with
/// max subtraction so large scores cannot overflow.
pub fn softmax_confidence(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(CboError::invalid("softmax of an empty score vector"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CboError::invalid("softmax input contains NaN"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok(1.0 / sum)
}

/// One class's logistic calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattClassModel {
    pub a: f64,
    pub b: f64,
    /// Set when the class lacked both label values or a parameter hit the cap.
    pub degenerate: bool,
}

impl PlattClassModel {
    pub fn identity() -> PlattClassModel {
        PlattClassModel {
            a: 0.0,
            b: 0.0,
            degenerate: false,
        }
    }

    /// Calibrated probability for a raw score.
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(-(self.a * score + self.b))
    }
}

/// Per-class Platt models; model i calibrates class i's raw score.
#[derive(Debug, Clone, PartialEq)]
pub struct PlattModel {
    pub classes: Vec<PlattClassModel>,
}

impl PlattModel {
    pub fn apply(&self, scores: &[f64], class: usize) -> Result<f64> {
        let model = self
            .classes
            .get(class)
            .ok_or_else(|| CboError::invalid(format!("no Platt model for class {class}")))?;
        let score = scores
            .get(class)
            .copied()
            .ok_or_else(|| CboError::invalid(format!("score vector has no class {class}")))?;
        Ok(model.apply(score))
    }

    /// A frame's calibrated confidence: the model of the top-scoring class
    /// applied to that class's score.
    pub fn frame_confidence(&self, scores: &[f64]) -> Result<f64> {
        if scores.is_empty() {
            return Err(CboError::invalid("empty score vector"));
        }
        let top = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        self.apply(scores, top)
    }
}

/// A Platt training row: a frame's score vector, the class being supervised,
/// and whether that class is actually present.
#[derive(Debug, Clone)]
pub struct PlattSample {
    pub scores: Vec<f64>,
    pub class: usize,
    pub label: bool,
}

/// Fits one logistic model per class. Model i trains on the rows whose
/// `class` is i, reading score component i.
pub fn fit_platt(samples: &[PlattSample], n_classes: usize) -> Result<PlattModel> {
    if n_classes == 0 {
        return Err(CboError::invalid("fit_platt needs at least one class"));
    }
    let mut classes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let rows: Vec<(f64, bool)> = samples
            .iter()
            .filter(|s| s.class == c)
            .map(|s| {
                s.scores
                    .get(c)
                    .copied()
                    .ok_or_else(|| {
                        CboError::invalid(format!("sample score vector has no class {c}"))
                    })
                    .map(|f| (f, s.label))
            })
            .collect::<Result<_>>()?;
        classes.push(fit_platt_scores(&rows));
    }
    Ok(PlattModel { classes })
}

/// Fits a single logistic model on (score, label) pairs by damped Newton
/// iteration on the negative log-likelihood (convex, 2x2 Hessian). Stops
/// when the mean gradient vanishes; parameters are clamped to +/-50, and
/// hitting the clamp (perfectly separable or one-sided data) marks the
/// model degenerate.
pub fn fit_platt_scores(samples: &[(f64, bool)]) -> PlattClassModel {
    let n = samples.len();
    let positives = samples.iter().filter(|(_, y)| *y).count();
    let one_sided = positives == 0 || positives == n;
    if n == 0 {
        return PlattClassModel {
            degenerate: true,
            ..PlattClassModel::identity()
        };
    }

    let nll = |a: f64, b: f64| -> f64 {
        // loss = ln(1 + e^z) - (1 - y) z with z = a f + b, stable for |z| large.
        samples
            .iter()
            .map(|&(f, y)| {
                let z = a * f + b;
                let log1pez = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                log1pez - if y { 0.0 } else { z }
            })
            .sum::<f64>()
    };

    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut loss = nll(a, b);
    let mut capped = false;
    for _ in 0..PLATT_MAX_ITERS {
        // d loss / dz = y - P and d2 loss / dz2 = P (1 - P), P = sigmoid(-z).
        let (mut ga, mut gb) = (0.0f64, 0.0f64);
        let (mut haa, mut hab, mut hbb) = (0.0f64, 0.0f64, 0.0f64);
        for &(f, y) in samples {
            let z = a * f + b;
            let p = sigmoid(-z);
            let d = (if y { 1.0 } else { 0.0 }) - p;
            ga += d * f;
            gb += d;
            let w = p * (1.0 - p);
            haa += w * f * f;
            hab += w * f;
            hbb += w;
        }
        if (ga * ga + gb * gb).sqrt() / n as f64 <= PLATT_TOL {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > 1e-18 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            // Flat Hessian (saturated sigmoids): fall back to the gradient.
            (ga / n as f64, gb / n as f64)
        };
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let na = (a - step * da).clamp(-PLATT_PARAM_CAP, PLATT_PARAM_CAP);
            let nb = (b - step * db).clamp(-PLATT_PARAM_CAP, PLATT_PARAM_CAP);
            if (na, nb) == (a, b) {
                break;
            }
            let new_loss = nll(na, nb);
            if new_loss <= loss {
                if na.abs() >= PLATT_PARAM_CAP || nb.abs() >= PLATT_PARAM_CAP {
                    capped = true;
                }
                a = na;
                b = nb;
                loss = new_loss;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    PlattClassModel {
        a,
        b,
        degenerate: one_sided || capped,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative log-likelihood of a fitted model on (score, label) pairs.
/// Exposed so tests can check local optimality of the fit.
pub fn platt_nll(model: &PlattClassModel, samples: &[(f64, bool)]) -> f64 {
    samples
        .iter()
        .map(|&(f, y)| {
            let z = model.a * f + model.b;
            let log1pez = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            log1pez - if y { 0.0 } else { z }
        })
        .sum()
}

/// A non-decreasing step function fitted by pool-adjacent-violators.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicModel {
    /// Ascending block start scores.
    pub breakpoints: Vec<f64>,
    /// Non-decreasing block values.
    pub values: Vec<f64>,
}

impl IsotonicModel {
    /// Value of the step function at s: the value of the rightmost block
    /// whose breakpoint is <= s; inputs below the first breakpoint clamp to
    /// the first value.
    pub fn apply(&self, s: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|b| *b <= s);
        if idx == 0 {
            self.values[0]
        } else {
            self.values[idx - 1]
        }
    }
}

/// Fits the least-squares non-decreasing step function to (score, label)
/// pairs. Equal scores are pre-pooled (a function must give them one value),
/// then adjacent blocks merge while ordered means violate monotonicity.
pub fn fit_isotonic(samples: &[(f64, f64)]) -> Result<IsotonicModel> {
    if samples.len() < 2 {
        return Err(CboError::invalid("isotonic fit needs at least 2 samples"));
    }
    if samples.iter().any(|(s, y)| !s.is_finite() || !y.is_finite()) {
        return Err(CboError::invalid("isotonic fit input must be finite"));
    }
    let mut sorted: Vec<(f64, f64)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    struct Block {
        start: f64,
        sum: f64,
        weight: f64,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for (s, y) in sorted {
        if let Some(last) = blocks.last_mut() {
            if last.start == s {
                last.sum += y;
                last.weight += 1.0;
                // Re-pooling may have broken monotonicity against earlier blocks.
            } else {
                blocks.push(Block {
                    start: s,
                    sum: y,
                    weight: 1.0,
                });
            }
        } else {
            blocks.push(Block {
                start: s,
                sum: y,
                weight: 1.0,
            });
        }
        while blocks.len() >= 2 {
            let n = blocks.len();
            let prev_mean = blocks[n - 2].sum / blocks[n - 2].weight;
            let cur_mean = blocks[n - 1].sum / blocks[n - 1].weight;
            if prev_mean > cur_mean {
                let cur = blocks.pop().unwrap();
                let prev = blocks.last_mut().unwrap();
                prev.sum += cur.sum;
                prev.weight += cur.weight;
            } else {
                break;
            }
        }
    }
    Ok(IsotonicModel {
        breakpoints: blocks.iter().map(|b| b.start).collect(),
        values: blocks.iter().map(|b| b.sum / b.weight).collect(),
    })
}

/// Ten fixed-width reliability bins; a zero count marks an empty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBins {
    pub counts: [usize; CONFIDENCE_BINS],
    /// Fraction correct within each bin; 0 for empty bins.
    pub accuracy: [f64; CONFIDENCE_BINS],
    /// Mean confidence within each bin; 0 for empty bins.
    pub mean_confidence: [f64; CONFIDENCE_BINS],
}

pub fn reliability_bins(samples: &[(f64, bool)]) -> Result<ReliabilityBins> {
    let mut counts = [0usize; CONFIDENCE_BINS];
    let mut correct = [0usize; CONFIDENCE_BINS];
    let mut conf_sum = [0.0f64; CONFIDENCE_BINS];
    for &(c, y) in samples {
        if !(0.0..=1.0).contains(&c) {
            return Err(CboError::invalid(format!("confidence {c} outside [0, 1]")));
        }
        let b = confidence_bin(c);
        counts[b] += 1;
        conf_sum[b] += c;
        if y {
            correct[b] += 1;
        }
    }
    let mut accuracy = [0.0; CONFIDENCE_BINS];
    let mut mean_confidence = [0.0; CONFIDENCE_BINS];
    for b in 0..CONFIDENCE_BINS {
        if counts[b] > 0 {
            accuracy[b] = correct[b] as f64 / counts[b] as f64;
            mean_confidence[b] = conf_sum[b] / counts[b] as f64;
        }
    }
    Ok(ReliabilityBins {
        counts,
        accuracy,
        mean_confidence,
    })
}

/// Expected calibration error: sum over bins of (count/n) * |acc - conf|.
/// Empty bins contribute zero. Errors if every bin is empty.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    let n: usize = bins.counts.iter().sum();
    if n == 0 {
        return Err(CboError::invalid("calibration error over empty bins"));
    }
    let mut total = 0.0;
    for b in 0..CONFIDENCE_BINS {
        if bins.counts[b] > 0 {
            total += bins.counts[b] as f64 / n as f64
                * (bins.accuracy[b] - bins.mean_confidence[b]).abs();
        }
    }
    Ok(total)
}

/// Maximum calibration error: the largest |acc - conf| over non-empty bins.
pub fn mce(bins: &ReliabilityBins) -> Result<f64> {
    let n: usize = bins.counts.iter().sum();
    if n == 0 {
        return Err(CboError::invalid("calibration error over empty bins"));
    }
    let mut worst = 0.0f64;
    for b in 0..CONFIDENCE_BINS {
        if bins.counts[b] > 0 {
            worst = worst.max((bins.accuracy[b] - bins.mean_confidence[b]).abs());
        }
    }
    Ok(worst)
}

/// A fitted calibration mapping from raw confidence to calibrated confidence.
/// Score-only pipelines use a single-class Platt model whose input is the raw
/// confidence itself.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationModel {
    Platt(PlattModel),
    Isotonic(IsotonicModel),
}

impl CalibrationModel {
    pub fn calibrate_score(&self, raw: f64) -> f64 {
        match self {
            CalibrationModel::Platt(m) => m.classes[0].apply(raw),
            CalibrationModel::Isotonic(m) => m.apply(raw),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            CalibrationModel::Platt(m) => {
                let mut out = String::from("# calibration model\nmethod = platt\n");
                out.push_str(&format!("classes = {}\n", m.classes.len()));
                for (i, c) in m.classes.iter().enumerate() {
                    out.push_str(&format!("a_{i} = {}\n", c.a));
                    out.push_str(&format!("b_{i} = {}\n", c.b));
                    out.push_str(&format!("degenerate_{i} = {}\n", u8::from(c.degenerate)));
                }
                out
            }
            CalibrationModel::Isotonic(m) => format!(
                "# calibration model\nmethod = isotonic\nbreakpoints = {}\nvalues = {}\n",
                join_f64(&m.breakpoints),
                join_f64(&m.values),
            ),
        }
    }

    pub fn from_text(text: &str, origin: &str) -> Result<CalibrationModel> {
        let kv = KvFile::parse(text, origin)?;
        match kv.get("method")? {
            "platt" => {
                let n = kv.get_f64("classes")? as usize;
                if n == 0 {
                    return Err(CboError::invalid("platt model with zero classes"));
                }
                let mut classes = Vec::with_capacity(n);
                for i in 0..n {
                    classes.push(PlattClassModel {
                        a: kv.get_f64(&format!("a_{i}"))?,
                        b: kv.get_f64(&format!("b_{i}"))?,
                        degenerate: kv.get_f64(&format!("degenerate_{i}"))? != 0.0,
                    });
                }
                Ok(CalibrationModel::Platt(PlattModel { classes }))
            }
            "isotonic" => {
                let breakpoints = kv.get_f64_list("breakpoints")?;
                let values = kv.get_f64_list("values")?;
                if breakpoints.is_empty() || breakpoints.len() != values.len() {
                    return Err(CboError::invalid("isotonic model lists are inconsistent"));
                }
                Ok(CalibrationModel::Isotonic(IsotonicModel {
                    breakpoints,
                    values,
                }))
            }
            other => Err(CboError::invalid(format!("unknown calibration method {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CalibrationModel> {
        let text = std::fs::read_to_string(path)?;
        CalibrationModel::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform_scores() {
        assert_abs_diff_eq!(
            softmax_confidence(&[0.0, 0.0, 0.0, 0.0]).unwrap(),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn softmax_two_class_example() {
        let c = softmax_confidence(&[2.0f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(c, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_is_overflow_stable() {
        let c = softmax_confidence(&[1000.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_empty_and_nan() {
        assert!(softmax_confidence(&[]).is_err());
        assert!(softmax_confidence(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let shift: f64 = rng.gen_range(-100.0..100.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let a = softmax_confidence(&v).unwrap();
            let b = softmax_confidence(&shifted).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn platt_identity_parameters_give_half() {
        let m = PlattClassModel::identity();
        assert_eq!(m.apply(0.3), 0.5);
        assert_eq!(m.apply(-7.0), 0.5);
    }

    #[test]
    fn platt_recovers_known_parameters() {
        // Labels drawn from the model itself with (a, b) = (-4, 2).
        let (a_true, b_true) = (-4.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<(f64, bool)> = (0..10_000)
            .map(|_| {
                let f: f64 = rng.gen();
                let p = sigmoid(-(a_true * f + b_true));
                (f, rng.gen::<f64>() < p)
            })
            .collect();
        let m = fit_platt_scores(&samples);
        assert!(!m.degenerate);
        assert!((m.a - a_true).abs() <= 0.2, "a = {}", m.a);
        assert!((m.b - b_true).abs() <= 0.2, "b = {}", m.b);
    }

    #[test]
    fn platt_one_sided_labels_are_degenerate_but_usable() {
        let samples: Vec<(f64, bool)> = (0..50).map(|i| (i as f64 / 50.0, true)).collect();
        let m = fit_platt_scores(&samples);
        assert!(m.degenerate);
        for i in 0..=10 {
            assert!(m.apply(i as f64 / 10.0) >= 0.5);
        }
    }

    #[test]
    fn platt_fit_is_a_local_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<(f64, bool)> = (0..2000)
            .map(|_| {
                let f: f64 = rng.gen();
                let p = sigmoid(-(-3.0 * f + 1.2));
                (f, rng.gen::<f64>() < p)
            })
            .collect();
        let m = fit_platt_scores(&samples);
        let fitted = platt_nll(&m, &samples);
        for _ in 0..64 {
            let da: f64 = rng.gen_range(-0.05..0.05);
            let db: f64 = rng.gen_range(-0.05..0.05);
            let perturbed = PlattClassModel {
                a: m.a + da,
                b: m.b + db,
                degenerate: false,
            };
            assert!(platt_nll(&perturbed, &samples) >= fitted - 1e-9);
        }
    }

    #[test]
    fn per_class_fit_reads_the_right_component() {
        // Class 1's score is informative; class 0's is noise.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut samples = Vec::new();
        for _ in 0..4000 {
            let s1: f64 = rng.gen();
            let label = rng.gen::<f64>() < sigmoid(-(-5.0 * s1 + 2.5));
            samples.push(PlattSample {
                scores: vec![rng.gen(), s1],
                class: 1,
                label,
            });
        }
        let model = fit_platt(&samples, 2).unwrap();
        assert!(model.classes[0].degenerate); // no rows for class 0
        assert!(model.classes[1].a < -2.0);
        let conf = model.apply(&[0.2, 0.9], 1).unwrap();
        assert!(conf > 0.5);
    }

    #[test]
    fn isotonic_identity_on_monotone_data() {
        let samples = [(0.1, 0.0), (0.2, 0.0), (0.3, 1.0), (0.4, 1.0)];
        let m = fit_isotonic(&samples).unwrap();
        assert_eq!(m.apply(0.1), 0.0);
        assert_eq!(m.apply(0.35), 1.0);
        for w in m.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn isotonic_pools_the_middle_violation() {
        // Labels 0,1,0,1: the middle pair pools to 1/2.
        let samples = [(0.1, 0.0), (0.2, 1.0), (0.3, 0.0), (0.4, 1.0)];
        let m = fit_isotonic(&samples).unwrap();
        assert_eq!(m.apply(0.1), 0.0);
        assert_abs_diff_eq!(m.apply(0.2), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.apply(0.3), 0.5, epsilon = 1e-12);
        assert_eq!(m.apply(0.4), 1.0);
    }

    #[test]
    fn isotonic_needs_two_samples() {
        assert!(fit_isotonic(&[(0.5, 1.0)]).is_err());
    }

    /// Exhaustive oracle: best squared loss over every monotone step function
    /// that is constant on consecutive blocks with non-decreasing means.
    fn monotone_oracle_loss(samples: &[(f64, f64)]) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = sorted.len();
        let mut best = f64::INFINITY;
        // Bit i of mask set = a block boundary after position i.
        for mask in 0..(1u32 << (n - 1)) {
            let mut loss = 0.0;
            let mut start = 0;
            let mut prev_mean = f64::NEG_INFINITY;
            let mut ok = true;
            for end in 0..n {
                let boundary = end == n - 1 || mask & (1 << end) != 0;
                if boundary {
                    let block = &sorted[start..=end];
                    let mean = block.iter().map(|(_, y)| y).sum::<f64>() / block.len() as f64;
                    if mean < prev_mean {
                        ok = false;
                        break;
                    }
                    loss += block.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>();
                    prev_mean = mean;
                    start = end + 1;
                }
            }
            if ok {
                best = best.min(loss);
            }
        }
        best
    }

    fn isotonic_loss(m: &IsotonicModel, samples: &[(f64, f64)]) -> f64 {
        samples.iter().map(|(s, y)| (y - m.apply(*s)).powi(2)).sum()
    }

    #[test]
    fn isotonic_matches_bruteforce_oracle_on_small_inputs() {
        // All 0/1 label patterns on up to six distinct scores.
        for n in 2..=6usize {
            let scores: Vec<f64> = (0..n).map(|i| 0.1 * (i + 1) as f64).collect();
            for pattern in 0..(1u32 << n) {
                let samples: Vec<(f64, f64)> = (0..n)
                    .map(|i| (scores[i], f64::from(pattern >> i & 1)))
                    .collect();
                let m = fit_isotonic(&samples).unwrap();
                let fit_loss = isotonic_loss(&m, &samples);
                let oracle = monotone_oracle_loss(&samples);
                assert!(
                    fit_loss <= oracle + 1e-9,
                    "n={n} pattern={pattern:b}: {fit_loss} > {oracle}"
                );
            }
        }
    }

    #[test]
    fn isotonic_apply_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.gen_range(2..12);
            let samples: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen::<f64>(), f64::from(rng.gen::<bool>())))
                .collect();
            let m = fit_isotonic(&samples).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=50 {
                let v = m.apply(i as f64 / 50.0);
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn reliability_bins_examples() {
        // (0.95, correct) lands in the top bin with accuracy 1.
        let b = reliability_bins(&[(0.95, true)]).unwrap();
        assert_eq!(b.counts[9], 1);
        assert_eq!(b.accuracy[9], 1.0);
        // 1.0 goes in the top bin too.
        let b = reliability_bins(&[(1.0, false)]).unwrap();
        assert_eq!(b.counts[9], 1);
        assert_eq!(b.accuracy[9], 0.0);
        // Boundary 0.1 belongs to the second bin.
        let b = reliability_bins(&[(0.1, true)]).unwrap();
        assert_eq!(b.counts[0], 0);
        assert_eq!(b.counts[1], 1);
    }

    #[test]
    fn hand_computed_ece_and_mce() {
        // Two samples at 0.25 (one correct), two at 0.85 (both correct):
        // ECE = 0.5*0.25 + 0.5*0.15 = 0.2, MCE = 0.25.
        let samples = [(0.25, true), (0.25, false), (0.85, true), (0.85, true)];
        let bins = reliability_bins(&samples).unwrap();
        let e = ece(&bins).unwrap();
        let m = mce(&bins).unwrap();
        assert_eq!(e, 0.5 * 0.25 + 0.5 * (1.0 - 0.85));
        assert_abs_diff_eq!(e, 0.2, epsilon = 1e-12);
        assert_eq!(m, 0.25);
    }

    #[test]
    fn perfectly_calibrated_bins_have_zero_error() {
        // In each bin the accuracy equals the mean confidence exactly:
        // 1 of 4 correct at 0.25, 3 of 4 correct at 0.75.
        let samples = [
            (0.25, true),
            (0.25, false),
            (0.25, false),
            (0.25, false),
            (0.75, true),
            (0.75, true),
            (0.75, true),
            (0.75, false),
        ];
        let bins = reliability_bins(&samples).unwrap();
        assert_eq!(ece(&bins).unwrap(), 0.0);
        assert_eq!(mce(&bins).unwrap(), 0.0);
    }

    #[test]
    fn error_metrics_reject_empty_input() {
        let bins = reliability_bins(&[]).unwrap();
        assert!(ece(&bins).is_err());
        assert!(mce(&bins).is_err());
    }

    #[test]
    fn ece_never_exceeds_mce() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let n = rng.gen_range(1..200);
            let samples: Vec<(f64, bool)> =
                (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<bool>())).collect();
            let bins = reliability_bins(&samples).unwrap();
            let e = ece(&bins).unwrap();
            let m = mce(&bins).unwrap();
            assert!(e <= m + 1e-12, "ece {e} > mce {m}");
        }
    }

    #[test]
    fn platt_fit_reduces_ece_on_miscalibrated_data() {
        // Overconfident raw scores: true correctness probability is raw^2.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<(f64, bool)> = (0..5000)
            .map(|_| {
                let raw: f64 = rng.gen();
                (raw, rng.gen::<f64>() < raw * raw)
            })
            .collect();
        let m = fit_platt_scores(&data);
        let before = ece(&reliability_bins(&data).unwrap()).unwrap();
        let calibrated: Vec<(f64, bool)> = data.iter().map(|&(r, y)| (m.apply(r), y)).collect();
        let after = ece(&reliability_bins(&calibrated).unwrap()).unwrap();
        assert!(after < before, "ece {before} -> {after}");
    }

    #[test]
    fn calibration_model_round_trips() {
        let platt = CalibrationModel::Platt(PlattModel {
            classes: vec![PlattClassModel {
                a: -3.25,
                b: 1.5,
                degenerate: false,
            }],
        });
        let back = CalibrationModel::from_text(&platt.to_text(), "mem").unwrap();
        assert_eq!(platt, back);

        let iso = CalibrationModel::Isotonic(IsotonicModel {
            breakpoints: vec![0.1, 0.5, 0.9],
            values: vec![0.2, 0.5, 0.95],
        });
        let back = CalibrationModel::from_text(&iso.to_text(), "mem").unwrap();
        assert_eq!(iso, back);
    }
}
