//! Replica-level statistics: means with standard errors and weighted
//! least-squares log-log trend fits with 95% intervals and verdicts.

use serde::Serialize;

use crate::error::{Error, Result};

/// Mean and standard error of a replica-level sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> Result<MeanSe> {
    if xs.len() < 2 {
        return Err(Error::usage("mean_se needs at least 2 samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanSe {
        mean,
        se: (var / n).sqrt(),
        n: xs.len(),
    })
}

/// Log-log slope fit: weighted least squares on (ln x, ln y) with weights
/// from the standard errors of y (delta method), 95% confidence half-width,
/// and a verdict string.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub ci95: f64,
    /// "ok" or "insufficient" (< 3 points).
    pub verdict: String,
}

pub fn wls_log_log(xs: &[f64], ys: &[f64], ses: Option<&[f64]>) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::usage("slope fit needs matching x/y lengths"));
    }
    if xs.len() < 3 {
        return Ok(SlopeFit {
            slope: f64::NAN,
            ci95: f64::NAN,
            verdict: "insufficient".into(),
        });
    }
    if ys.iter().any(|&y| y <= 0.0) || xs.iter().any(|&x| x <= 0.0) {
        return Err(Error::numeric("log-log fit needs positive data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    // Var(ln y) ≈ (se/y)²; uniform weights when no errors are given.
    let w: Vec<f64> = match ses {
        Some(s) => s
            .iter()
            .zip(ys)
            .map(|(&se, &y)| {
                let v = (se / y).powi(2);
                if v > 0.0 {
                    1.0 / v
                } else {
                    1e12
                }
            })
            .collect(),
        None => vec![1.0; xs.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = lx.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() / sw;
    let my = ly.iter().zip(&w).map(|(y, wi)| y * wi).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(&w).map(|(x, wi)| wi * (x - mx).powi(2)).sum();
    let sxy: f64 = lx
        .iter()
        .zip(&ly)
        .zip(&w)
        .map(|((x, y), wi)| wi * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let nf = xs.len() as f64;
    let resid: f64 = lx
        .iter()
        .zip(&ly)
        .zip(&w)
        .map(|((x, y), wi)| wi * (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = (resid / (nf - 2.0) / sxx).max(0.0).sqrt();
    Ok(SlopeFit {
        slope,
        ci95: 1.96 * se,
        verdict: "ok".into(),
    })
}
