//! Benchmark arithmetic: average task performance, merge gain, ATPD and
//! Pearson correlation with an exact two-sided p-value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-task scores of one model, each in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_id: String,
    pub task_scores: BTreeMap<String, f64>,
    /// Seconds since the Unix epoch when the scores were produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl EvalResult {
    pub fn new(model_id: &str, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            model_id: model_id.to_string(),
            task_scores: scores.into_iter().collect(),
            timestamp: None,
        }
    }

    pub fn validate_scores(&self) -> Result<()> {
        for (task, &s) in &self.task_scores {
            if !s.is_finite() || !(0.0..=100.0).contains(&s) {
                return Err(Error::Validation(format!(
                    "score {s} for task `{task}` of `{}` is outside [0, 100]",
                    self.model_id
                )));
            }
        }
        Ok(())
    }
}

/// The configured benchmark tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGroup {
    pub tasks: Vec<String>,
}

impl TaskGroup {
    pub fn new(tasks: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let tasks: Vec<String> = tasks.into_iter().map(Into::into).collect();
        if tasks.is_empty() {
            return Err(Error::Validation("task group is empty".into()));
        }
        let mut sorted = tasks.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("task `{}` listed twice", w[0])));
        }
        Ok(Self { tasks })
    }

    /// Checks that `r` scores exactly these tasks, each within `[0, 100]`.
    pub fn validate(&self, r: &EvalResult) -> Result<()> {
        for t in &self.tasks {
            if !r.task_scores.contains_key(t) {
                return Err(Error::Validation(format!(
                    "result for `{}` is missing task `{t}`",
                    r.model_id
                )));
            }
        }
        if let Some(extra) = r.task_scores.keys().find(|k| !self.tasks.contains(k)) {
            return Err(Error::Validation(format!(
                "result for `{}` has unexpected task `{extra}`",
                r.model_id
            )));
        }
        r.validate_scores()
    }
}

/// Mean of the task scores.
pub fn average_task_performance(r: &EvalResult) -> Result<f64> {
    if r.task_scores.is_empty() {
        return Err(Error::Validation(format!(
            "result for `{}` has no task scores",
            r.model_id
        )));
    }
    r.validate_scores()?;
    Ok(mean(r.task_scores.values().copied()))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// Merged ATP minus the unweighted mean of the parents' ATPs.
pub fn merge_gain(merged_atp: f64, parent_atps: &[f64]) -> Result<f64> {
    if parent_atps.is_empty() {
        return Err(Error::InvalidParam("merge gain needs parent scores".into()));
    }
    Ok(merged_atp - mean(parent_atps.iter().copied()))
}

/// Mean absolute per-task score difference.
pub fn atpd(r1: &EvalResult, r2: &EvalResult) -> Result<f64> {
    if r1.task_scores.len() != r2.task_scores.len()
        || r1
            .task_scores
            .keys()
            .zip(r2.task_scores.keys())
            .any(|(a, b)| a != b)
    {
        return Err(Error::Validation(format!(
            "`{}` and `{}` were scored on different tasks",
            r1.model_id, r2.model_id
        )));
    }
    if r1.task_scores.is_empty() {
        return Err(Error::Validation("no tasks to compare".into()));
    }
    Ok(mean(
        r1.task_scores
            .values()
            .zip(r2.task_scores.values())
            .map(|(a, b)| (a - b).abs()),
    ))
}

/// Sample Pearson correlation and its two-sided p-value under the null of
/// no correlation, using Student's t with `n − 2` degrees of freedom.
pub fn pearson_with_p(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParam(format!(
            "sequences differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InvalidParam(format!(
            "correlation needs at least 3 pairs, got {n}"
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(
            "correlation input is not finite".into(),
        ));
    }
    let mx = mean(xs.iter().copied());
    let my = mean(ys.iter().copied());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(xs) || constant(ys) || sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidParam(
            "correlation undefined: an input has zero variance".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok((r, t_test_p(r, n)))
}

fn t_test_p(r: f64, n: usize) -> f64 {
    let nu = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t2 = r * r * nu / one_minus;
    regularized_incomplete_beta(nu / (nu + t2), nu / 2.0, 0.5)
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `nu`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, nu: f64) -> f64 {
    regularized_incomplete_beta(nu / (nu + t * t), nu / 2.0, 0.5)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` via the continued fraction, evaluated with the modified
/// Lentz method on whichever side converges faster.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One row of a kinship-versus-gain correlation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub n: usize,
    pub r_gain: f64,
    pub p_gain: f64,
    pub r_abs_gain: f64,
    pub p_abs_gain: f64,
}

/// Correlates kinship with merge gain and with its magnitude.
pub fn correlation_row(metric: &str, kinship: &[f64], gains: &[f64]) -> Result<CorrelationRow> {
    let (r_gain, p_gain) = pearson_with_p(kinship, gains)?;
    let abs: Vec<f64> = gains.iter().map(|g| g.abs()).collect();
    let (r_abs_gain, p_abs_gain) = pearson_with_p(kinship, &abs)?;
    Ok(CorrelationRow {
        metric: metric.to_string(),
        n: kinship.len(),
        r_gain,
        p_gain,
        r_abs_gain,
        p_abs_gain,
    })
}
