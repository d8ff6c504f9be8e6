use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::weighted_lstsq;
use crate::scaling::{Branch, ScalingResult};

/// One ξ value entering the critical fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPoint {
    pub q: f64,
    pub xi: f64,
    /// Standard error of ln ξ.
    pub ln_xi_err: f64,
    pub branch: Branch,
    /// Left out of the fit.
    #[serde(default)]
    pub isolated: bool,
}

impl XiPoint {
    pub fn from_scaling(result: &ScalingResult) -> Vec<XiPoint> {
        result
            .xi
            .iter()
            .map(|e| XiPoint {
                q: e.control_value,
                xi: e.xi,
                ln_xi_err: e.ln_xi_err,
                branch: e.branch,
                isolated: e.isolated,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalFitConfig {
    /// Half-width of the first-pass window, relative to the initial guess.
    pub first_window: f64,
    /// Half-width of the final window, relative to the first-pass q_c.
    pub final_window: f64,
    /// Fit a common shift of the diffusive ln ξ alongside the critical law.
    pub fit_diffusive_shift: bool,
    pub min_points: usize,
    /// Lower bound on ln ξ errors used as weights.
    pub min_ln_xi_err: f64,
}

impl Default for CriticalFitConfig {
    fn default() -> Self {
        Self {
            first_window: 0.3,
            final_window: 0.2,
            fit_diffusive_shift: true,
            min_points: 6,
            min_ln_xi_err: 1e-6,
        }
    }
}

/// Central 68% bootstrap intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub requested: usize,
    pub dropped: usize,
    /// Replica `(q_c, ν)` pairs in replica order.
    pub replicas: Vec<(f64, f64)>,
    pub q_c_interval: (f64, f64),
    pub nu_interval: (f64, f64),
    /// Half-widths of the intervals.
    pub q_c_sigma: f64,
    pub nu_sigma: f64,
}

/// Fit of `1/ξ = α|q − q_c|^ν + β`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalFit {
    pub q_c: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta_cutoff: f64,
    /// Shift applied to diffusive ln ξ before the fit (zero when not fitted).
    pub diffusive_shift: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    /// Curvature errors of `(q_c, ν)`.
    pub q_c_err: f64,
    pub nu_err: f64,
    /// Covariance of `(ln α, q_c, ln ν, √β[, shift])`.
    pub covariance: Vec<Vec<f64>>,
    pub residual: String,
    pub bootstrap: Option<BootstrapSummary>,
}

impl CriticalFit {
    /// Model `1/ξ` at `q`.
    pub fn inverse_xi(&self, q: f64) -> f64 {
        self.alpha * (q - self.q_c).abs().powf(self.nu) + self.beta_cutoff
    }

    /// Preferred uncertainty on ν: bootstrap half-width when present.
    pub fn nu_sigma(&self) -> f64 {
        self.bootstrap.as_ref().map_or(self.nu_err, |b| b.nu_sigma)
    }

    pub fn q_c_sigma(&self) -> f64 {
        self.bootstrap
            .as_ref()
            .map_or(self.q_c_err, |b| b.q_c_sigma)
    }
}

pub const RESIDUAL_DESCRIPTION: &str = "1/xi residuals weighted by sigma(ln xi)/xi";

/// Residuals `(1 − ξ'·m(q))/σ(ln ξ)` with `ξ' = ξ·e^{shift}` on the diffusive
/// side. Parameters: `(ln α, q_c, ln ν, b[, shift])`, `β = b²`.
struct Problem<'a> {
    q: &'a [f64],
    ln_xi: &'a [f64],
    sigma: &'a [f64],
    diffusive: &'a [bool],
    with_shift: bool,
    p: DVector<f64>,
}

impl Problem<'_> {
    fn parts(&self, i: usize) -> (f64, f64, f64, f64) {
        let p = &self.p;
        let shift = if self.with_shift && self.diffusive[i] {
            p[4]
        } else {
            0.0
        };
        let xi = (self.ln_xi[i] + shift).exp();
        let d = self.q[i] - p[1];
        let pow = d.abs().powf(p[2].exp());
        (xi, d, pow, p[0].exp() * pow + p[3] * p[3])
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = DVector::from_iterator(
            self.q.len(),
            (0..self.q.len()).map(|i| {
                let (xi, _, _, m) = self.parts(i);
                (1.0 - xi * m) / self.sigma[i]
            }),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let np = self.p.len();
        let mut j = DMatrix::zeros(self.q.len(), np);
        let alpha = self.p[0].exp();
        let nu = self.p[2].exp();
        for i in 0..self.q.len() {
            let (xi, d, pow, m) = self.parts(i);
            let s = -xi / self.sigma[i];
            let ad = d.abs();
            j[(i, 0)] = s * alpha * pow;
            j[(i, 1)] = if ad > 0.0 {
                -s * alpha * nu * pow / ad * d.signum()
            } else {
                0.0
            };
            j[(i, 2)] = if ad > 0.0 {
                s * alpha * pow * ad.ln() * nu
            } else {
                0.0
            };
            j[(i, 3)] = s * 2.0 * self.p[3];
            if self.with_shift {
                j[(i, 4)] = if self.diffusive[i] { s * m } else { 0.0 };
            }
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

struct Solution {
    p: Vec<f64>,
    chi2: f64,
    covariance: Vec<Vec<f64>>,
}

fn chi2_of(problem: &Problem) -> f64 {
    problem
        .residuals()
        .map_or(f64::INFINITY, |r| r.norm_squared())
}

/// Linear least squares for (α, β) at fixed (q_c, ν, shift).
fn linear_start(q: &[f64], ln_xi: &[f64], sigma: &[f64], q_c: f64, nu: f64) -> (f64, f64) {
    let rows: Vec<Vec<f64>> = q
        .iter()
        .map(|&x| vec![(x - q_c).abs().powf(nu), 1.0])
        .collect();
    let y: Vec<f64> = ln_xi.iter().map(|l| (-l).exp()).collect();
    let w: Vec<f64> = ln_xi
        .iter()
        .zip(sigma)
        .map(|(l, s)| (l.exp() / s).powi(2))
        .collect();
    let c = weighted_lstsq(&rows, &y, &w).unwrap_or_else(|| vec![1.0, 0.0]);
    let mean_inv = y.iter().sum::<f64>() / y.len() as f64;
    let alpha = if c[0] > 0.0 {
        c[0]
    } else {
        mean_inv.max(1e-12)
    };
    let beta = c[1].max(0.0);
    (alpha, beta)
}

fn solve_window(
    q: &[f64],
    ln_xi: &[f64],
    sigma: &[f64],
    diffusive: &[bool],
    with_shift: bool,
    starts: &[(f64, f64, f64)],
) -> Option<Solution> {
    let lm = LevenbergMarquardt::new().with_patience(400);
    let mut best: Option<Solution> = None;
    for &(q_c, nu, shift) in starts {
        let shifted: Vec<f64> = ln_xi
            .iter()
            .zip(diffusive)
            .map(|(l, d)| if *d { l + shift } else { *l })
            .collect();
        let (alpha, beta) = linear_start(q, &shifted, sigma, q_c, nu);
        let mut p0 = vec![alpha.ln(), q_c, nu.ln(), beta.sqrt()];
        if with_shift {
            p0.push(shift);
        }
        let problem = Problem {
            q,
            ln_xi,
            sigma,
            diffusive,
            with_shift,
            p: DVector::from_vec(p0),
        };
        let (solved, report) = lm.minimize(problem);
        let chi2 = chi2_of(&solved);
        let usable = report.termination.was_successful()
            || matches!(
                report.termination,
                levenberg_marquardt::TerminationReason::LostPatience
            );
        if !usable || !chi2.is_finite() || !solved.p.iter().all(|v| v.is_finite()) {
            continue;
        }
        if best.as_ref().is_some_and(|b| b.chi2 <= chi2) {
            continue;
        }
        let covariance = solved
            .jacobian()
            .and_then(|j| (j.transpose() * &j).try_inverse())
            .map(|c| {
                (0..c.nrows())
                    .map(|r| c.row(r).iter().copied().collect())
                    .collect()
            })
            .unwrap_or_default();
        best = Some(Solution {
            p: solved.p.iter().copied().collect(),
            chi2,
            covariance,
        });
    }
    best
}

/// Weighted fit of the critical law to `ξ(q)` in two passes: all points
/// within `first_window·q_c0` of the initial guess, then the points within
/// `final_window·q_c` of the first-pass estimate. Isolated points are
/// skipped.
pub fn fit_critical(points: &[XiPoint], q_c0: f64, cfg: &CriticalFitConfig) -> Result<CriticalFit> {
    let kept: Vec<XiPoint> = points.iter().filter(|p| !p.isolated).copied().collect();
    let points = &kept[..];
    if points.iter().any(|p| !(p.xi > 0.0) || !p.xi.is_finite()) {
        return Err(Error::Degenerate("ξ must be positive and finite".into()));
    }
    let first = run_pass(points, q_c0, cfg.first_window, cfg, &[])?;
    let previous = [(
        first.p[1],
        first.p[2].exp(),
        first.p.get(4).copied().unwrap_or(0.0),
    )];
    let fit = run_pass(points, first.p[1], cfg.final_window, cfg, &previous)?;
    Ok(fit.into_fit())
}

struct Pass {
    p: Vec<f64>,
    chi2: f64,
    n: usize,
    window: (f64, f64),
    covariance: Vec<Vec<f64>>,
}

impl Pass {
    fn into_fit(self) -> CriticalFit {
        let np = self.p.len();
        let var = |k: usize| {
            self.covariance
                .get(k)
                .and_then(|r| r.get(k))
                .copied()
                .unwrap_or(f64::NAN)
        };
        let nu = self.p[2].exp();
        let dof = self.n - np;
        CriticalFit {
            q_c: self.p[1],
            nu,
            alpha: self.p[0].exp(),
            beta_cutoff: self.p[3] * self.p[3],
            diffusive_shift: self.p.get(4).copied().unwrap_or(0.0),
            chi2: self.chi2,
            dof,
            chi2_per_dof: if dof > 0 { self.chi2 / dof as f64 } else { 0.0 },
            window: self.window,
            n_points: self.n,
            q_c_err: var(1).sqrt(),
            nu_err: nu * var(2).sqrt(),
            covariance: self.covariance,
            residual: RESIDUAL_DESCRIPTION.to_string(),
            bootstrap: None,
        }
    }
}

fn run_pass(
    points: &[XiPoint],
    center: f64,
    half_width: f64,
    cfg: &CriticalFitConfig,
    previous: &[(f64, f64, f64)],
) -> Result<Pass> {
    let lo = center - half_width * center.abs();
    let hi = center + half_width * center.abs();
    let inside: Vec<&XiPoint> = points.iter().filter(|p| p.q >= lo && p.q <= hi).collect();
    let has_diff = inside.iter().any(|p| p.branch == Branch::Diffusive);
    let has_loc = inside.iter().any(|p| p.branch != Branch::Diffusive);
    let with_shift = cfg.fit_diffusive_shift && has_diff && has_loc;
    let np = 4 + usize::from(with_shift);
    let need = cfg.min_points.max(np + 1);
    if inside.len() < need {
        return Err(Error::config(format!(
            "critical fit window [{lo:.4}, {hi:.4}] holds {} points, need at least {need}",
            inside.len()
        )));
    }
    let q: Vec<f64> = inside.iter().map(|p| p.q).collect();
    let ln_xi: Vec<f64> = inside.iter().map(|p| p.xi.ln()).collect();
    let sigma: Vec<f64> = inside
        .iter()
        .map(|p| p.ln_xi_err.max(cfg.min_ln_xi_err))
        .collect();
    let diffusive: Vec<bool> = inside
        .iter()
        .map(|p| p.branch == Branch::Diffusive)
        .collect();

    let mut starts: Vec<(f64, f64, f64)> = previous.to_vec();
    for (dq, dn) in [
        (0.0, 0.0),
        (-0.02, -0.1),
        (0.02, 0.1),
        (-0.04, 0.2),
        (0.04, -0.2),
    ] {
        starts.push((center * (1.0 + dq), 1.5 * (1.0 + dn), 0.0));
    }
    let sol =
        solve_window(&q, &ln_xi, &sigma, &diffusive, with_shift, &starts).ok_or_else(|| {
            Error::NonConvergence {
                message: format!("critical fit failed from every start in [{lo:.4}, {hi:.4}]"),
                last_iterate: vec![center, 1.5],
            }
        })?;
    Ok(Pass {
        p: sol.p,
        chi2: sol.chi2,
        n: inside.len(),
        window: (lo, hi),
        covariance: sol.covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn law(
        alpha: f64,
        q_c: f64,
        nu: f64,
        beta: f64,
        qs: &[f64],
        noise: f64,
        seed: u64,
    ) -> Vec<XiPoint> {
        let mut r = rng::stream(seed, 0);
        qs.iter()
            .map(|&q| {
                let e: f64 = if noise > 0.0 {
                    r.sample(StandardNormal)
                } else {
                    0.0
                };
                let inv = (alpha * (q - q_c).abs().powf(nu) + beta) * (1.0 + noise * e);
                XiPoint {
                    q,
                    xi: 1.0 / inv,
                    ln_xi_err: noise.max(0.01),
                    branch: if q < q_c {
                        Branch::Localized
                    } else {
                        Branch::Diffusive
                    },
                    isolated: false,
                }
            })
            .collect()
    }

    fn grid() -> Vec<f64> {
        (0..40).map(|i| 5.0 + i as f64 * 0.085).collect()
    }

    fn fixed() -> CriticalFitConfig {
        CriticalFitConfig {
            fit_diffusive_shift: false,
            ..Default::default()
        }
    }

    #[test]
    fn exact_data_gives_vanishing_chi2() {
        let pts = law(0.05, 6.67, 1.58, 0.01, &grid(), 0.0, 0);
        let f = fit_critical(&pts, 6.5, &fixed()).unwrap();
        assert!(f.chi2_per_dof < 1e-8, "{}", f.chi2_per_dof);
        assert!((f.nu - 1.58).abs() < 1e-6 && (f.q_c - 6.67).abs() < 1e-6);
        assert!(f.window.0 <= f.q_c && f.q_c <= f.window.1);
    }

    #[test]
    fn linear_cusp_without_cutoff() {
        let pts = law(1.0, 6.67, 1.0, 0.0, &grid(), 0.0, 0);
        let f = fit_critical(&pts, 6.8, &fixed()).unwrap();
        assert!((f.nu - 1.0).abs() < 1e-6, "{}", f.nu);
        assert!((f.q_c - 6.67).abs() < 1e-6);
        assert!((f.alpha - 1.0).abs() < 1e-5);
        assert!(f.beta_cutoff < 1e-10);
    }

    #[test]
    fn noisy_recovery() {
        let pts = law(0.05, 6.67, 1.58, 0.01, &grid(), 0.02, 11);
        let f = fit_critical(&pts, 6.6, &fixed()).unwrap();
        assert!((f.nu / 1.58 - 1.0).abs() < 0.1, "nu {}", f.nu);
        assert!((f.q_c / 6.67 - 1.0).abs() < 0.01, "q_c {}", f.q_c);
    }

    #[test]
    fn rescaling_xi_leaves_critical_point_alone() {
        let pts = law(0.05, 6.67, 1.58, 0.01, &grid(), 0.02, 5);
        let scaled: Vec<XiPoint> = pts
            .iter()
            .map(|p| XiPoint {
                xi: p.xi * 7.5,
                ..*p
            })
            .collect();
        for cfg in [fixed(), CriticalFitConfig::default()] {
            let a = fit_critical(&pts, 6.6, &cfg).unwrap();
            let b = fit_critical(&scaled, 6.6, &cfg).unwrap();
            assert!((a.q_c / b.q_c - 1.0).abs() < 1e-6);
            assert!((a.nu / b.nu - 1.0).abs() < 1e-6);
            assert!((a.alpha / b.alpha - 7.5).abs() < 1e-4);
            assert!((a.beta_cutoff / b.beta_cutoff - 7.5).abs() < 1e-4);
        }
    }

    #[test]
    fn diffusive_shift_is_recovered() {
        let mut pts = law(0.05, 6.67, 1.58, 0.01, &grid(), 0.0, 0);
        for p in pts.iter_mut().filter(|p| p.branch == Branch::Diffusive) {
            p.xi *= 0.8f64.exp();
        }
        let f = fit_critical(&pts, 6.6, &CriticalFitConfig::default()).unwrap();
        assert!(
            (f.diffusive_shift + 0.8).abs() < 1e-6,
            "{}",
            f.diffusive_shift
        );
        assert!((f.nu - 1.58).abs() < 1e-6);
    }

    #[test]
    fn too_few_points_is_config_error() {
        let pts = law(0.05, 6.67, 1.58, 0.01, &[6.0, 6.3, 6.9, 7.2], 0.0, 0);
        assert!(matches!(
            fit_critical(&pts, 6.67, &fixed()),
            Err(Error::Config(_))
        ));
    }
}
