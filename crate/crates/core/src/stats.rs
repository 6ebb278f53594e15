//! Summary statistics for multi-seed comparisons and scaling fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn sd(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

fn need(x: &[f64], what: &str) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("{what} needs at least two values")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} got a non-finite value")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Unequal-variance t test with Welch-Satterthwaite degrees of freedom.
/// Two constant series give `t = 0, p = 1` when equal and `p = 0` otherwise.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    need(a, "welch_t")?;
    need(b, "welch_t")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            WelchTest { t: 0.0, df: na + nb - 2.0, p: 1.0 }
        } else {
            WelchTest { t: diff.signum() * f64::INFINITY, df: na + nb - 2.0, p: 0.0 }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}

/// Mean difference over the pooled SD; `None` when the pooled SD is zero.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    need(a, "cohens_d")?;
    need(b, "cohens_d")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    Ok((pooled > 0.0).then(|| (mean(a) - mean(b)) / pooled))
}

/// Student-t 95% interval for the mean.
pub fn ci95(x: &[f64]) -> Result<(f64, f64)> {
    need(x, "ci95")?;
    let n = x.len() as f64;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let half = dist.inverse_cdf(0.975) * sd(x) / n.sqrt();
    let m = mean(x);
    Ok((m - half, m + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compared_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welch_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohens_d: Option<f64>,
}

/// Describes `x`, optionally against a named comparison series. A single
/// value gets a degenerate interval and no tests.
pub fn summarize(x: &[f64], against: Option<(&str, &[f64])>) -> Result<StatsSummary> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty series".into()));
    }
    let m = mean(x);
    let (s, (lo, hi)) = if x.len() >= 2 { (sd(x), ci95(x)?) } else { (0.0, (m, m)) };
    let mut out = StatsSummary { n: x.len(), mean: m, sd: s, ci95_lo: lo, ci95_hi: hi, compared_to: None, welch_p: None, cohens_d: None };
    if let Some((name, other)) = against {
        out.compared_to = Some(name.to_string());
        if x.len() >= 2 && other.len() >= 2 {
            out.welch_p = Some(welch_t(x, other)?.p);
            out.cohens_d = cohens_d(x, other)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares `y = slope * x + intercept`. R² is 1 for a perfect fit and
/// for constant `y`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("x and y differ in length".into()));
    }
    need(x, "linear_fit")?;
    need(y, "linear_fit")?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("linear_fit needs at least two distinct x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// Of the log-log fit.
    pub r2: f64,
}

/// `y = c * x^b`, fitted in log space. Needs positive data.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("power_law_fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let f = linear_fit(&lx, &ly)?;
    Ok(PowerFit { coefficient: f.intercept.exp(), exponent: f.slope, r2: f.r2 })
}
