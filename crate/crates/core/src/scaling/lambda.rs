use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::ObservableSeries;
use crate::error::{Error, Result};
use crate::numeric::line_fit;

/// Lower bound applied to ln Λ errors wherever they become weights.
pub const LN_LAMBDA_ERROR_FLOOR: f64 = 1e-4;

#[inline]
pub fn floored(err: f64) -> f64 {
    err.max(LN_LAMBDA_ERROR_FLOOR)
}

/// Which observable Λ is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSource {
    /// `Λ = ⟨p̃²⟩ t^{-2/3}`
    P2,
    /// `Λ = Π₀^{-2} t^{-2/3}`
    Pi0,
}

impl FromStr for LambdaSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p2" => Ok(LambdaSource::P2),
            "pi0" => Ok(LambdaSource::Pi0),
            other => Err(Error::config(format!(
                "unknown lambda source {other:?} (p2 | pi0)"
            ))),
        }
    }
}

impl fmt::Display for LambdaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaSource::P2 => "p2",
            LambdaSource::Pi0 => "pi0",
        })
    }
}

/// Analysis time window in kicks, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_min: usize,
    pub t_max: usize,
}

impl TimeWindow {
    /// Default window for simulated data. Before ~100 kicks the series still
    /// carry transients that do not collapse.
    pub const SIMULATION: TimeWindow = TimeWindow {
        t_min: 100,
        t_max: 1000,
    };
    /// Window used for the experimental analysis.
    pub const PAPER: TimeWindow = TimeWindow {
        t_min: 30,
        t_max: 150,
    };

    pub fn new(t_min: usize, t_max: usize) -> Result<Self> {
        if t_min < 1 || t_min >= t_max {
            return Err(Error::config(format!("invalid window [{t_min}, {t_max}]")));
        }
        Ok(Self { t_min, t_max })
    }
}

impl FromStr for TimeWindow {
    type Err = Error;
    /// `paper`, `default`, or `T_MIN:T_MAX`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::PAPER),
            "default" | "simulation" => Ok(Self::SIMULATION),
            _ => {
                let (a, b) = s
                    .split_once(':')
                    .or_else(|| s.split_once('-'))
                    .ok_or_else(|| Error::config(format!("window {s:?}: expected T_MIN:T_MAX")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config(format!("window bound {v:?} is not an integer")))
                };
                TimeWindow::new(parse(a)?, parse(b)?)
            }
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.t_min, self.t_max)
    }
}

/// Λ(t) at one control value, restricted to the analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSeries {
    pub control_value: f64,
    pub times: Vec<usize>,
    pub lambda: Vec<f64>,
    /// Standard error of ln Λ.
    pub lambda_err: Vec<f64>,
    pub source: LambdaSource,
}

impl LambdaSeries {
    pub fn ln_lambda(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l.ln()).collect()
    }

    pub fn ln_times(&self) -> Vec<f64> {
        self.times.iter().map(|&t| (t as f64).ln()).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Copy with every ln Λ shifted by `shifts[i]`.
    pub fn perturbed(&self, shifts: &[f64]) -> Self {
        let mut out = self.clone();
        for (l, s) in out.lambda.iter_mut().zip(shifts) {
            *l *= s.exp();
        }
        out
    }
}

/// Build Λ(t) from an observable series over `window`.
pub fn lambda_series(
    obs: &ObservableSeries,
    window: TimeWindow,
    source: LambdaSource,
) -> Result<LambdaSeries> {
    let (first, last) = match (obs.times.first(), obs.times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::config("observable series has no recorded times")),
    };
    if window.t_min < first || window.t_max > last {
        return Err(Error::config(format!(
            "window [{}, {}] not covered by recorded times [{first}, {last}]",
            window.t_min, window.t_max
        )));
    }
    let mut out = LambdaSeries {
        control_value: obs.control_value,
        times: Vec::new(),
        lambda: Vec::new(),
        lambda_err: Vec::new(),
        source,
    };
    for (i, &t) in obs.times.iter().enumerate() {
        if t < window.t_min || t > window.t_max {
            continue;
        }
        let scale = (t as f64).powf(-2.0 / 3.0);
        let (lambda, err) = match source {
            LambdaSource::P2 => {
                let p2 = obs.p2[i];
                if !(p2 > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "<p^2> = {p2} at t = {t}, control {}",
                        obs.control_value
                    )));
                }
                (p2 * scale, obs.p2_err[i] / p2)
            }
            LambdaSource::Pi0 => {
                let pi0 = obs.pi0[i];
                if !(pi0 > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "Pi0 = 0 at t = {t}, control {}",
                        obs.control_value
                    )));
                }
                (scale / (pi0 * pi0), 2.0 * obs.pi0_err[i] / pi0)
            }
        };
        out.times.push(t);
        out.lambda.push(lambda);
        out.lambda_err.push(err);
    }
    if out.times.is_empty() {
        return Err(Error::config(format!(
            "no recorded times inside window [{}, {}]",
            window.t_min, window.t_max
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Localized,
    Diffusive,
    CriticalAmbiguous,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Localized => "localized",
            Branch::Diffusive => "diffusive",
            Branch::CriticalAmbiguous => "critical-ambiguous",
        })
    }
}

impl Branch {
    /// Decide from the slope of ln Λ against ln t and its standard error.
    pub fn from_slope(slope: f64, slope_err: f64) -> Self {
        if slope.abs() < 2.0 * slope_err {
            Branch::CriticalAmbiguous
        } else if slope < 0.0 {
            Branch::Localized
        } else {
            Branch::Diffusive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFit {
    pub branch: Branch,
    pub slope: f64,
    pub slope_err: f64,
}

/// Slope of ln Λ versus ln t and the regime it indicates.
///
/// The slope error is the weighted-fit error, inflated by √(χ²/dof) when the
/// straight line is a poor description of the data.
pub fn classify_branch(ls: &LambdaSeries) -> Result<BranchFit> {
    if ls.len() < 3 {
        return Err(Error::config(format!(
            "need at least 3 times to classify control {}, got {}",
            ls.control_value,
            ls.len()
        )));
    }
    let x = ls.ln_times();
    let y = ls.ln_lambda();
    let w: Vec<f64> = ls.lambda_err.iter().map(|&e| floored(e).powi(-2)).collect();
    let (_, slope, err, chi2) =
        line_fit(&x, &y, &w).ok_or_else(|| Error::Degenerate("cannot fit ln Λ slope".into()))?;
    let dof = (ls.len() - 2) as f64;
    let slope_err = err * (chi2 / dof).sqrt().max(1.0);
    Ok(BranchFit {
        branch: Branch::from_slope(slope, slope_err),
        slope,
        slope_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlPoint;

    fn obs_from(p2: impl Fn(f64) -> f64) -> ObservableSeries {
        let times: Vec<usize> = (1..=200).collect();
        let p: Vec<f64> = times.iter().map(|&t| p2(t as f64)).collect();
        ObservableSeries {
            control: ControlPoint::new(5.0, 0.2),
            control_value: 5.0,
            p2_err: p.iter().map(|v| v * 0.01).collect(),
            pi0: p.iter().map(|v| v.powf(-0.5).min(1.0)).collect(),
            pi0_err: vec![1e-3; times.len()],
            p2: p,
            times,
            n_realizations: 10,
            m1: vec![],
            m1_err: vec![],
        }
    }

    fn slope_of(obs: &ObservableSeries) -> f64 {
        let ls = lambda_series(obs, TimeWindow::new(10, 200).unwrap(), LambdaSource::P2).unwrap();
        classify_branch(&ls).unwrap().slope
    }

    #[test]
    fn regime_slopes() {
        assert!((slope_of(&obs_from(|t| 3.0 * t)) - 1.0 / 3.0).abs() < 1e-10);
        assert!((slope_of(&obs_from(|_| 40.0)) + 2.0 / 3.0).abs() < 1e-10);
        assert!(slope_of(&obs_from(|t| 2.0 * t.powf(2.0 / 3.0))).abs() < 1e-10);
    }

    #[test]
    fn critical_lambda_is_constant() {
        let ls = lambda_series(
            &obs_from(|t| 2.0 * t.powf(2.0 / 3.0)),
            TimeWindow::new(30, 150).unwrap(),
            LambdaSource::P2,
        )
        .unwrap();
        assert!(ls.lambda.iter().all(|l| (l - 2.0).abs() < 1e-12));
        assert_eq!(ls.times.first(), Some(&30));
        assert_eq!(ls.times.last(), Some(&150));
        assert!(ls.lambda_err.iter().all(|e| (e - 0.01).abs() < 1e-15));
    }

    #[test]
    fn pi0_estimator_and_errors() {
        let obs = obs_from(|t| 4.0 * t);
        let ls = lambda_series(&obs, TimeWindow::new(10, 20).unwrap(), LambdaSource::Pi0).unwrap();
        let i = 0;
        let t = 10.0f64;
        let pi0 = (40.0f64).powf(-0.5);
        assert!((ls.lambda[i] - t.powf(-2.0 / 3.0) / (pi0 * pi0)).abs() < 1e-12);
        assert!((ls.lambda_err[i] - 2.0 * 1e-3 / pi0).abs() < 1e-12);
    }

    #[test]
    fn empty_or_uncovered_window_is_config_error() {
        let mut obs = obs_from(|t| t);
        obs.times = obs.times.iter().map(|t| t * 10).collect();
        // window inside coverage but between recorded times
        let err =
            lambda_series(&obs, TimeWindow::new(11, 19).unwrap(), LambdaSource::P2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err =
            lambda_series(&obs, TimeWindow::new(5, 5000).unwrap(), LambdaSource::P2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_pi0_is_degenerate() {
        let mut obs = obs_from(|t| t);
        obs.pi0[50] = 0.0;
        let err =
            lambda_series(&obs, TimeWindow::new(10, 200).unwrap(), LambdaSource::Pi0).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn branch_labels() {
        assert_eq!(Branch::from_slope(-2.0 / 3.0, 0.01), Branch::Localized);
        assert_eq!(Branch::from_slope(1.0 / 3.0, 0.01), Branch::Diffusive);
        assert_eq!(Branch::from_slope(0.0, 0.03), Branch::CriticalAmbiguous);
    }

    #[test]
    fn classify_needs_three_points() {
        let ls = LambdaSeries {
            control_value: 1.0,
            times: vec![1, 2],
            lambda: vec![1.0, 1.0],
            lambda_err: vec![0.1, 0.1],
            source: LambdaSource::P2,
        };
        assert!(classify_branch(&ls).is_err());
    }

    #[test]
    fn window_parsing() {
        assert_eq!("paper".parse::<TimeWindow>().unwrap(), TimeWindow::PAPER);
        assert_eq!(
            "30:120".parse::<TimeWindow>().unwrap(),
            TimeWindow::new(30, 120).unwrap()
        );
        assert!("30".parse::<TimeWindow>().is_err());
        assert!("50:20".parse::<TimeWindow>().is_err());
    }
}
