//! Student/Welch t-tests, the t distribution, and report assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diversity::{deltas, DiversityScore, Metric};
use crate::corpus::Block;
use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Mean of `a` (or the mean difference) is less than the other.
    Less,
    Greater,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            other => Err(Error::InvalidParameter(format!("unknown alternative `{other}`"))),
        }
    }
}

/// p-value for a t statistic.
pub fn t_p_value(t: f64, df: f64, alternative: Alternative) -> f64 {
    let p = match alternative {
        Alternative::TwoSided => {
            if t.is_infinite() {
                0.0
            } else {
                regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
            }
        }
        Alternative::Less => t_cdf(t, df),
        Alternative::Greater => t_cdf(-t, df),
    };
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
fn variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Paired t-test on `end - start`, two-sided.
pub fn paired_t(start: &[f64], end: &[f64]) -> Result<TestResult> {
    paired_t_with(start, end, Alternative::TwoSided)
}

pub fn paired_t_with(start: &[f64], end: &[f64], alternative: Alternative) -> Result<TestResult> {
    if start.len() != end.len() {
        return Err(Error::InvalidParameter(format!(
            "paired samples differ in length: {} vs {}",
            start.len(),
            end.len()
        )));
    }
    let n = start.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("paired t needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = end.iter().zip(start).map(|(e, s)| e - s).collect();
    let md = mean(&d);
    let sd = variance(&d, md).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::DegenerateVariance(format!(
            "all {n} paired differences equal {md}"
        )));
    }
    let t = md / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(TestResult {
        statistic: t,
        df,
        p_value: t_p_value(t, df, alternative),
        mean_a: mean(start),
        mean_b: mean(end),
        n_a: n,
        n_b: n,
    })
}

/// Welch's unequal-variance t-test of `a` against `b`, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    welch_t_with(a, b, Alternative::TwoSided)
}

pub fn welch_t_with(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "Welch t needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a, ma) / na, variance(b, mb) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(Error::DegenerateVariance(format!(
            "both groups are constant ({ma} and {mb})"
        )));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        df,
        p_value: t_p_value(t, df, alternative),
        mean_a: ma,
        mean_b: mb,
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub high_group: Vec<String>,
    pub low_group: Vec<String>,
    pub group_size: usize,
}

/// Top and bottom `group_size` users by score (descending, ties by user id).
pub fn split_by_max_ambiguity(scores: &BTreeMap<String, f64>, group_size: usize) -> Result<GroupSplit> {
    if group_size == 0 {
        return Err(Error::InvalidParameter("group size must be at least 1".into()));
    }
    if scores.len() < 2 * group_size {
        return Err(Error::InvalidParameter(format!(
            "{} users cannot form two disjoint groups of {group_size}",
            scores.len()
        )));
    }
    if let Some((id, _)) = scores.iter().find(|(_, v)| v.is_nan()) {
        return Err(Error::Invalid(format!("max ambiguity of `{id}` is NaN")));
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    let ids: Vec<String> = ranked.into_iter().map(|(k, _)| k.clone()).collect();
    Ok(GroupSplit {
        high_group: ids[..group_size].to_vec(),
        low_group: ids[ids.len() - group_size..].to_vec(),
        group_size,
    })
}

/// One row of the start-vs-end comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRow {
    pub metric: Metric,
    pub kd: Option<usize>,
    pub mean_start: f64,
    pub mean_end: f64,
    /// `None` when every user's change is identical.
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
}

/// Paired comparison of start and end blocks, one row per metric present.
pub fn diversity_change_report(scores: &[DiversityScore], alpha: f64) -> Result<Vec<ChangeRow>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut rows = Vec::new();
    for metric in [Metric::Apd, Metric::Cde] {
        let mut start: BTreeMap<&str, f64> = BTreeMap::new();
        let mut end: BTreeMap<&str, f64> = BTreeMap::new();
        let mut kd = None;
        for s in scores.iter().filter(|s| s.metric == metric) {
            if kd.is_some() && kd != s.kd {
                return Err(Error::Invalid(format!("{} scores mix several kd values", metric.as_str())));
            }
            kd = s.kd;
            match s.block {
                Block::Start => start.insert(&s.user_id, s.value),
                Block::End => end.insert(&s.user_id, s.value),
            };
        }
        if start.is_empty() && end.is_empty() {
            continue;
        }
        // Validates the pairing.
        deltas(scores, metric)?;
        let s: Vec<f64> = start.values().copied().collect();
        let e: Vec<f64> = end.values().copied().collect();
        let (t, df, p) = match paired_t(&s, &e) {
            Ok(r) => (Some(r.statistic), Some(r.df), Some(r.p_value)),
            Err(Error::DegenerateVariance(msg)) => {
                log::warn!("{} change has no variance: {msg}", metric.as_str());
                (None, None, None)
            }
            Err(err) => return Err(err),
        };
        rows.push(ChangeRow {
            metric,
            kd,
            mean_start: mean(&s),
            mean_end: mean(&e),
            t,
            df,
            p,
            significant: p.is_some_and(|p| p < alpha),
        });
    }
    if rows.is_empty() {
        return Err(Error::Invalid("no diversity scores to report".into()));
    }
    Ok(rows)
}

/// High vs low ambiguity group comparison of per-user change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub metric: Metric,
    pub group_size: usize,
    pub group_high_mean: f64,
    pub group_low_mean: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
}

pub fn ambiguity_group_report(
    split: &GroupSplit,
    delta: &BTreeMap<String, f64>,
    metric: Metric,
    alpha: f64,
) -> Result<GroupReport> {
    let pick = |group: &[String]| -> Result<Vec<f64>> {
        group
            .iter()
            .map(|u| {
                delta
                    .get(u)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("no {} change for user `{u}`", metric.as_str())))
            })
            .collect()
    };
    let high = pick(&split.high_group)?;
    let low = pick(&split.low_group)?;
    let r = welch_t(&high, &low)?;
    Ok(GroupReport {
        metric,
        group_size: split.group_size,
        group_high_mean: r.mean_a,
        group_low_mean: r.mean_b,
        t: r.statistic,
        df: r.df,
        p: r.p_value,
        significant: r.p_value < alpha,
    })
}
