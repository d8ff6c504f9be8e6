use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::presets;

/// Exponent estimate for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    pub label: String,
    pub nu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityEntry {
    pub label: String,
    pub nu: f64,
    pub sigma: f64,
    /// `(ν − mean)/σ`
    pub deviation: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub mean: f64,
    pub mean_err: f64,
    /// Weighted standard deviation of the set values about the mean,
    /// `√(Σw(ν − mean)²/Σw · n/(n − 1))`.
    pub spread: f64,
    pub chi2: f64,
    /// `√(χ²/(n − 1))`
    pub birge_ratio: f64,
    pub entries: Vec<UniversalityEntry>,
}

/// Flag threshold in standard deviations.
pub const DEVIATION_LIMIT: f64 = 2.0;

/// Inverse-variance weighted mean of ν with per-set deviations.
pub fn universality_report(fits: &[NuEstimate]) -> Result<UniversalityReport> {
    if fits.len() < 2 {
        return Err(Error::config(format!(
            "universality needs at least 2 fits, got {}",
            fits.len()
        )));
    }
    if let Some(f) = fits.iter().find(|f| !(f.sigma > 0.0) || !f.nu.is_finite()) {
        return Err(Error::config(format!(
            "set {} has unusable ν = {} ± {}",
            f.label, f.nu, f.sigma
        )));
    }
    let sw: f64 = fits.iter().map(|f| f.sigma.powi(-2)).sum();
    let mean = fits.iter().map(|f| f.nu * f.sigma.powi(-2)).sum::<f64>() / sw;
    let entries: Vec<UniversalityEntry> = fits
        .iter()
        .map(|f| {
            let deviation = (f.nu - mean) / f.sigma;
            UniversalityEntry {
                label: f.label.clone(),
                nu: f.nu,
                sigma: f.sigma,
                deviation,
                flagged: deviation.abs() > DEVIATION_LIMIT,
            }
        })
        .collect();
    let chi2: f64 = entries.iter().map(|e| e.deviation * e.deviation).sum();
    let n = fits.len() as f64;
    Ok(UniversalityReport {
        mean,
        mean_err: sw.powf(-0.5),
        spread: (chi2 / sw * n / (n - 1.0)).sqrt(),
        chi2,
        birge_ratio: (chi2 / (fits.len() - 1) as f64).sqrt(),
        entries,
    })
}

/// The published exponents of the nine built-in sets.
pub fn reported_table() -> Vec<NuEstimate> {
    presets()
        .into_iter()
        .map(|p| NuEstimate {
            label: p.params.label,
            nu: p.reported_nu,
            sigma: p.reported_nu_err,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(nu: f64, sigma: f64) -> NuEstimate {
        NuEstimate {
            label: "x".into(),
            nu,
            sigma,
        }
    }

    #[test]
    fn identical_fits() {
        let r = universality_report(&[est(1.6, 0.1), est(1.6, 0.1)]).unwrap();
        assert!((r.mean - 1.6).abs() < 1e-15);
        assert!((r.mean_err - 0.1 / 2f64.sqrt()).abs() < 1e-15);
        let r = universality_report(&[est(1.58, 0.02), est(1.58, 0.02)]).unwrap();
        assert!(r.entries.iter().all(|e| !e.flagged));
    }

    #[test]
    fn single_fit_is_rejected() {
        assert!(universality_report(&[est(1.6, 0.1)]).is_err());
    }

    #[test]
    fn published_table_mean() {
        let r = universality_report(&reported_table()).unwrap();
        // independent evaluation of Σ(ν/σ²)/Σ(1/σ²) for the nine rows
        assert!((r.mean - 1.6343122).abs() < 1e-6, "{}", r.mean);
        assert!((r.mean_err - 0.0294397).abs() < 1e-6, "{}", r.mean_err);
        assert!((r.spread - 0.0488325).abs() < 1e-6, "{}", r.spread);
        assert!((r.mean - 1.63).abs() < 0.005 && (r.spread - 0.05).abs() < 0.005);
        assert!(r.entries.iter().all(|e| !e.flagged));
    }

    #[test]
    fn outlier_is_flagged() {
        let r = universality_report(&[est(1.6, 0.05), est(1.6, 0.05), est(2.2, 0.1)]).unwrap();
        assert!(r.entries[2].flagged);
    }
}
