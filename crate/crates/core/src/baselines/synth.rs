use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::log_schedule;
use crate::error::{Error, Result};
use crate::rng;
use crate::scaling::{Branch, LambdaSeries, LambdaSource};

/// Known scaling function `ln Λ = F_branch(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FSpec {
    /// Smooth two-branch curve meeting at `ln Λ_c`:
    /// `F = ln Λ_c + μ·asinh(u)·(3/2 − tanh(u)/2)` with `u = ∓exp(−z/μ)`
    /// (minus on the localized side). Far from the tip the slopes in z are
    /// +2 (localized) and −1 (diffusive).
    Tip { critical_ln_lambda: f64, mu: f64 },
    /// Straight lines of slope +2 (localized) and −1 (diffusive).
    Linear {
        localized_intercept: f64,
        diffusive_intercept: f64,
    },
}

impl FSpec {
    pub fn eval(&self, branch: Branch, z: f64) -> f64 {
        match *self {
            FSpec::Tip {
                critical_ln_lambda,
                mu,
            } => {
                let s = if branch == Branch::Diffusive {
                    1.0
                } else {
                    -1.0
                };
                let u = s * (-z / mu).exp();
                critical_ln_lambda + mu * u.asinh() * (1.5 - 0.5 * u.tanh())
            }
            FSpec::Linear {
                localized_intercept,
                diffusive_intercept,
            } => match branch {
                Branch::Diffusive => diffusive_intercept - z,
                _ => localized_intercept + 2.0 * z,
            },
        }
    }
}

/// Known ξ as a function of the control value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum XiSpec {
    /// `1/ξ = α|q − q_c|^ν + β`, localized below `q_c`.
    Critical {
        alpha: f64,
        q_c: f64,
        nu: f64,
        beta: f64,
    },
    /// Explicit `(q, ξ, branch)` rows.
    Table(Vec<(f64, f64, Branch)>),
}

impl XiSpec {
    /// The reference critical law used throughout the tests.
    pub const REFERENCE: XiSpec = XiSpec::Critical {
        alpha: 0.05,
        q_c: 6.67,
        nu: 1.58,
        beta: 0.01,
    };

    pub fn xi(&self, q: f64) -> Result<(f64, Branch)> {
        match self {
            XiSpec::Critical {
                alpha,
                q_c,
                nu,
                beta,
            } => {
                if q == *q_c {
                    return Err(Error::Range(format!(
                        "q = {q} sits exactly at the critical point"
                    )));
                }
                let inv = alpha * (q - q_c).abs().powf(*nu) + beta;
                let branch = if q < *q_c {
                    Branch::Localized
                } else {
                    Branch::Diffusive
                };
                Ok((1.0 / inv, branch))
            }
            XiSpec::Table(rows) => rows
                .iter()
                .find(|r| r.0 == q)
                .map(|r| (r.1, r.2))
                .ok_or_else(|| Error::Range(format!("no ξ tabulated at q = {q}"))),
        }
    }
}

/// Control values and recording times for a synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDesign {
    pub controls: Vec<f64>,
    pub times: Vec<usize>,
}

impl SynthDesign {
    /// 20 control values on [4, 9] and log-spaced times over 30–1000 kicks.
    pub fn reference() -> Self {
        Self {
            controls: linear_grid(4.0, 9.0, 20),
            times: log_schedule(1000, 20)
                .into_iter()
                .filter(|&t| t >= 30)
                .collect(),
        }
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `Λ(q, t) = exp(F(ln ξ(q) − ln t / 3))` with lognormal noise of relative
/// size `noise`; every error bar equals `noise`.
pub fn synth_scaling_data(
    f: &FSpec,
    xi: &XiSpec,
    design: &SynthDesign,
    noise: f64,
    seed: u64,
) -> Result<Vec<LambdaSeries>> {
    if !(noise >= 0.0) {
        return Err(Error::config(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    if design.times.is_empty() || design.times[0] == 0 {
        return Err(Error::config(
            "synthetic times must be non-empty and positive",
        ));
    }
    design
        .controls
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let (x, branch) = xi.xi(q)?;
            if !(x > 0.0) {
                return Err(Error::Range(format!("ξ({q}) = {x} must be positive")));
            }
            let mut r = rng::stream(seed, i as u64);
            let lambda = design
                .times
                .iter()
                .map(|&t| {
                    let z = x.ln() - (t as f64).ln() / 3.0;
                    let e: f64 = if noise > 0.0 {
                        r.sample(StandardNormal)
                    } else {
                        0.0
                    };
                    (f.eval(branch, z) + noise * e).exp()
                })
                .collect();
            Ok(LambdaSeries {
                control_value: q,
                times: design.times.clone(),
                lambda,
                lambda_err: vec![noise; design.times.len()],
                source: LambdaSource::P2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIP: FSpec = FSpec::Tip {
        critical_ln_lambda: 0.4,
        mu: 1.58,
    };

    #[test]
    fn tip_has_regime_slopes_and_joins_smoothly() {
        let d = |b, z: f64| (TIP.eval(b, z + 1e-5) - TIP.eval(b, z - 1e-5)) / 2e-5;
        assert!((d(Branch::Localized, -12.0) - 2.0).abs() < 1e-3);
        assert!((d(Branch::Diffusive, -12.0) + 1.0).abs() < 1e-3);
        assert!((TIP.eval(Branch::Localized, 40.0) - 0.4).abs() < 1e-9);
        assert!((TIP.eval(Branch::Diffusive, 40.0) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn equal_xi_gives_identical_series() {
        let spec = XiSpec::Table(vec![
            (1.0, 3.0, Branch::Localized),
            (2.0, 3.0, Branch::Localized),
        ]);
        let design = SynthDesign {
            controls: vec![1.0, 2.0],
            times: vec![30, 100, 300],
        };
        let s = synth_scaling_data(&TIP, &spec, &design, 0.0, 1).unwrap();
        assert_eq!(s[0].lambda, s[1].lambda);
    }

    #[test]
    fn reference_law_values() {
        let (x, b) = XiSpec::REFERENCE.xi(7.67).unwrap();
        assert!((x - 1.0 / 0.06).abs() < 1e-12);
        assert_eq!(b, Branch::Diffusive);
        assert!(XiSpec::REFERENCE.xi(6.67).is_err());
        let design = SynthDesign::reference();
        assert_eq!(design.controls.len(), 20);
        assert_eq!(design.times[0], 32);
        assert_eq!(*design.times.last().unwrap(), 1000);
    }

    #[test]
    fn noise_has_requested_scale() {
        let design = SynthDesign {
            controls: vec![5.0],
            times: (1..=4000).collect(),
        };
        let clean = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &design, 0.0, 4).unwrap();
        let noisy = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &design, 0.02, 4).unwrap();
        let d: Vec<f64> = noisy[0]
            .lambda
            .iter()
            .zip(&clean[0].lambda)
            .map(|(a, b)| (a / b).ln())
            .collect();
        let sd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.002, "{sd}");
        assert!(noisy[0].lambda_err.iter().all(|&e| e == 0.02));
    }
}
