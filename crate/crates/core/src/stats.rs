//! Evaluation statistics: Pearson correlation, its null-hypothesis critical
//! value, and the Mann-Whitney U test.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Sample Pearson correlation.
pub fn pearson_r(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::shape(
            "pearson_r",
            format!("{} predictions vs {} observations", pred.len(), obs.len()),
        ));
    }
    if pred.len() < 3 {
        return Err(Error::invalid("pearson_r", "need at least 3 pairs"));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mo = obs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &o) in pred.iter().zip(obs) {
        let (dp, d_o) = (p - mp, o - mo);
        sxy += dp * d_o;
        sxx += dp * dp;
        syy += d_o * d_o;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("predictions"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("observations"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided critical |r| for `n` pairs at level `alpha` under ρ = 0, from
/// `t = r √((n−2)/(1−r²)) ~ t_{n−2}`.
pub fn correlation_significance(n: usize, alpha: f64) -> Result<f64> {
    if n < 4 {
        return Err(Error::invalid(
            "correlation_significance",
            format!("need n >= 4, got {n}"),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(
            "correlation_significance",
            format!("alpha must lie in (0, 1], got {alpha}"),
        ));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let t = dist.inverse_cdf(1.0 - alpha / 2.0);
    Ok(t / (df + t * t).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U for the first sample: the number of (a, b) pairs with a > b, ties
    /// counting one half.
    pub u: f64,
    /// U for the second sample; `u + u_other == n·m`.
    pub u_other: f64,
    pub z: f64,
    /// Two-sided p from the tie-corrected normal approximation with
    /// continuity correction.
    pub p_value: f64,
    /// False when either sample has fewer than 8 observations.
    pub approximation_reliable: bool,
}

pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64]) -> Result<MannWhitney> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Empty("mann_whitney_u"));
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("mann_whitney_u", "samples must be finite"));
    }
    let (n, m) = (sample_a.len(), sample_b.len());
    let mut pooled: Vec<(f64, bool)> = sample_a
        .iter()
        .map(|&v| (v, true))
        .chain(sample_b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let total = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        // 1-based ranks i+1..=j+1 averaged
        let rank = (i + j + 2) as f64 / 2.0;
        rank_sum_a += rank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }

    let (nf, mf, nt) = (n as f64, m as f64, total as f64);
    let u = rank_sum_a - nf * (nf + 1.0) / 2.0;
    let u_other = nf * mf - u;
    let mean = nf * mf / 2.0;
    let var = nf * mf / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    let (z, p_value) = if var <= 0.0 {
        (0.0, 1.0)
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (z.copysign(u - mean), (2.0 * normal.sf(z)).min(1.0))
    };
    Ok(MannWhitney {
        u,
        u_other,
        z,
        p_value,
        approximation_reliable: n >= 8 && m >= 8,
    })
}
