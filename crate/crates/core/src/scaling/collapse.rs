use serde::{Deserialize, Serialize};

use super::lambda::{classify_branch, floored, Branch, BranchFit, LambdaSeries};
use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};

use super::spline::{NaturalSpline, SplineBasis};
use crate::error::{Error, Result};
use crate::numeric::{golden_min, line_fit, quantile_sorted};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseConfig {
    pub max_sweeps: usize,
    /// Stop when the relative χ² change between sweeps drops below this.
    pub rel_tol: f64,
    pub max_abs_ln_xi: f64,
    /// Knots follow the z-quantiles for this many sweeps, then stay put.
    pub knot_sweeps: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 20000,
            rel_tol: 1e-6,
            max_abs_ln_xi: 50.0,
            knot_sweeps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiEntry {
    pub control_value: f64,
    pub xi: f64,
    pub ln_xi: f64,
    /// Standard error of ln ξ from the local χ² curvature.
    pub ln_xi_err: f64,
    pub branch: Branch,
    /// Label from the slope test before ambiguous series were assigned.
    pub classified: Branch,
    pub slope: f64,
    pub slope_err: f64,
    /// The series' z range meets no other series on its branch, so ξ rests on
    /// extrapolating the curve alone.
    pub isolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FSample {
    pub z: f64,
    pub ln_lambda: f64,
    pub ln_lambda_err: f64,
    pub fitted: f64,
    pub control_value: f64,
    pub t: usize,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingResult {
    /// Sorted by control value.
    pub xi: Vec<XiEntry>,
    pub gauge_ref: f64,
    /// Sorted by z.
    pub f_samples: Vec<FSample>,
    pub residual_rms: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    pub sweeps: usize,
    /// Shift applied to every diffusive ln ξ after the collapse.
    ///
    /// χ² cannot fix the relative placement of the two branches: moving all
    /// diffusive ln ξ and the diffusive curve by the same amount along z
    /// changes nothing. The collapse places the diffusive branch by chaining
    /// from its localized neighbour; the critical-law fit then sets the shift.
    pub diffusive_shift: f64,
    pub localized_curve: NaturalSpline,
    pub diffusive_curve: NaturalSpline,
}

impl ScalingResult {
    pub fn curve(&self, branch: Branch) -> &NaturalSpline {
        match branch {
            Branch::Diffusive => &self.diffusive_curve,
            _ => &self.localized_curve,
        }
    }

    pub fn eval_f(&self, branch: Branch, z: f64) -> f64 {
        self.curve(branch).eval(z)
    }

    pub fn branches(&self) -> Vec<Branch> {
        self.xi.iter().map(|e| e.branch).collect()
    }

    pub fn ln_xi(&self) -> Vec<f64> {
        self.xi.iter().map(|e| e.ln_xi).collect()
    }

    /// Move the diffusive branch by `delta` in ln ξ (and the diffusive curve
    /// with it). χ² and residuals are unchanged.
    pub fn shift_diffusive(&mut self, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for e in self.xi.iter_mut().filter(|e| e.branch == Branch::Diffusive) {
            e.ln_xi += delta;
            e.xi = e.ln_xi.exp();
        }
        for s in self
            .f_samples
            .iter_mut()
            .filter(|s| s.branch == Branch::Diffusive)
        {
            s.z += delta;
        }
        self.f_samples.sort_by(|a, b| a.z.total_cmp(&b.z));
        let c = &self.diffusive_curve;
        self.diffusive_curve = NaturalSpline::new(
            c.knots.iter().map(|k| k + delta).collect(),
            c.values.clone(),
        );
        self.diffusive_shift += delta;
    }
}

/// Classify every series; ambiguous ones join the branch of the nearest
/// unambiguous series in control value.
pub fn assign_branches(series: &[LambdaSeries]) -> Result<Vec<(BranchFit, Branch)>> {
    let fits = series
        .iter()
        .map(classify_branch)
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(series.len());
    for (i, fit) in fits.iter().enumerate() {
        let branch = if fit.branch != Branch::CriticalAmbiguous {
            fit.branch
        } else {
            let q = series[i].control_value;
            fits.iter()
                .zip(series)
                .filter(|(f, _)| f.branch != Branch::CriticalAmbiguous)
                .min_by(|a, b| {
                    (a.1.control_value - q)
                        .abs()
                        .total_cmp(&(b.1.control_value - q).abs())
                })
                .map(|(f, _)| f.branch)
                .ok_or_else(|| {
                    Error::config("every series is critical-ambiguous; cannot assign branches")
                })?
        };
        out.push((*fit, branch));
    }
    Ok(out)
}

/// The localized series farthest in control value from the diffusive branch.
pub fn default_gauge_ref(series: &[LambdaSeries], branches: &[Branch]) -> Result<f64> {
    let diff: Vec<f64> = series
        .iter()
        .zip(branches)
        .filter(|(_, b)| **b == Branch::Diffusive)
        .map(|(s, _)| s.control_value)
        .collect();
    series
        .iter()
        .zip(branches)
        .filter(|(_, b)| **b == Branch::Localized)
        .map(|(s, _)| {
            let d = diff
                .iter()
                .map(|q| (q - s.control_value).abs())
                .fold(f64::INFINITY, f64::min);
            (s.control_value, d)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(q, _)| q)
        .ok_or_else(|| Error::config("no localized series to anchor the gauge"))
}

/// Collapse all series onto one two-branch scaling curve.
///
/// `gauge_ref` defaults to the localized series deepest in the insulating
/// phase.
pub fn collapse(
    series: &[LambdaSeries],
    gauge_ref: Option<f64>,
    cfg: &CollapseConfig,
) -> Result<ScalingResult> {
    let assigned = assign_branches(series)?;
    let branches: Vec<Branch> = assigned.iter().map(|a| a.1).collect();
    let gauge = match gauge_ref {
        Some(q) => q,
        None => default_gauge_ref(series, &branches)?,
    };
    let mut result = collapse_with(series, &branches, gauge, None, cfg)?;
    for entry in &mut result.xi {
        let i = series
            .iter()
            .position(|s| s.control_value == entry.control_value)
            .expect("entry comes from input");
        entry.classified = assigned[i].0.branch;
        entry.slope = assigned[i].0.slope;
        entry.slope_err = assigned[i].0.slope_err;
    }
    Ok(result)
}

/// The diffusive series farthest in control value from the localized ones.
/// The collapse cannot fix the offset of the diffusive branch, so the joint
/// solve holds this one still.
fn diffusive_anchor(series: &[LambdaSeries], branches: &[Branch]) -> usize {
    let loc: Vec<f64> = series
        .iter()
        .zip(branches)
        .filter(|(_, b)| **b == Branch::Localized)
        .map(|(s, _)| s.control_value)
        .collect();
    (0..series.len())
        .filter(|&i| branches[i] == Branch::Diffusive)
        .max_by(|&a, &b| {
            let d = |i: usize| {
                loc.iter()
                    .map(|q| (q - series[i].control_value).abs())
                    .fold(f64::INFINITY, f64::min)
            };
            d(a).total_cmp(&d(b))
        })
        .expect("both branches are present")
}

struct Data {
    /// −(1/3) ln t per point
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl Data {
    fn new(series: &[LambdaSeries]) -> Self {
        Self {
            x: series
                .iter()
                .map(|s| s.ln_times().iter().map(|l| -l / 3.0).collect())
                .collect(),
            y: series.iter().map(|s| s.ln_lambda()).collect(),
            w: series
                .iter()
                .map(|s| s.lambda_err.iter().map(|&e| floored(e).powi(-2)).collect())
                .collect(),
        }
    }
}

/// Collapse with fixed branch labels (aligned with `series`), an explicit
/// gauge reference and an optional starting ln ξ vector.
pub fn collapse_with(
    series: &[LambdaSeries],
    branches: &[Branch],
    gauge_ref: f64,
    init: Option<&[f64]>,
    cfg: &CollapseConfig,
) -> Result<ScalingResult> {
    let n = series.len();
    if branches.len() != n {
        return Err(Error::config("one branch label per series is required"));
    }
    let mut distinct: Vec<f64> = series.iter().map(|s| s.control_value).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::config(format!(
            "collapse needs at least 4 distinct control values, got {}",
            distinct.len()
        )));
    }
    if let Some(b) = branches.iter().find(|b| **b == Branch::CriticalAmbiguous) {
        return Err(Error::config(format!(
            "branch label {b} is not allowed here"
        )));
    }
    let n_loc = branches.iter().filter(|b| **b == Branch::Localized).count();
    let n_diff = n - n_loc;
    if n_loc < 2 || n_diff < 2 {
        return Err(Error::config(format!(
            "collapse needs both branches with at least 2 series each (localized {n_loc}, diffusive {n_diff})"
        )));
    }
    let gauge = series
        .iter()
        .position(|s| s.control_value == gauge_ref)
        .ok_or_else(|| {
            Error::config(format!(
                "gauge reference {gauge_ref} is not one of the control values"
            ))
        })?;
    if branches[gauge] != Branch::Localized {
        return Err(Error::config(format!(
            "gauge reference {gauge_ref} is not on the localized branch"
        )));
    }
    for s in series {
        if s.len() < 3 {
            return Err(Error::config(format!(
                "series at {} has fewer than 3 times",
                s.control_value
            )));
        }
        if s.lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-positive Λ at control {}",
                s.control_value
            )));
        }
    }

    let data = Data::new(series);
    let mut ln_xi = match init {
        Some(v) if v.len() == n => {
            let shift = v[gauge];
            v.iter().map(|l| l - shift).collect()
        }
        Some(_) => return Err(Error::config("initial ln xi has the wrong length")),
        None => initial_ln_xi(series, &data, branches, gauge),
    };

    let total_points: usize = data.y.iter().map(Vec::len).sum();
    let (mut loc, mut diff) = fit_curves(&data, branches, &ln_xi, None)?;
    let mut chi2 = total_chi2(&data, branches, &ln_xi, &loc, &diff);
    // residuals below 1e-10 in ln Λ are round-off
    let tiny = 1e-20 * data.w.iter().flatten().sum::<f64>();
    let mut sweeps = 0;
    let mut converged = chi2 <= tiny;
    let mut settled = false;
    while !converged && sweeps < cfg.max_sweeps {
        sweeps += 1;
        for i in 0..n {
            if i == gauge {
                continue;
            }
            let f = if branches[i] == Branch::Diffusive {
                &diff
            } else {
                &loc
            };
            ln_xi[i] = refit_ln_xi(
                f,
                &data.x[i],
                &data.y[i],
                &data.w[i],
                ln_xi[i],
                cfg.max_abs_ln_xi,
            );
        }
        let frozen = (sweeps > cfg.knot_sweeps).then(|| (loc.knots.clone(), diff.knots.clone()));
        let (l, d) = fit_curves(&data, branches, &ln_xi, frozen)?;
        loc = l;
        diff = d;
        let next = total_chi2(&data, branches, &ln_xi, &loc, &diff);
        let change = (chi2 - next).abs();
        chi2 = next;
        if chi2 <= tiny {
            break;
        }
        // a small step of the alternation does not mean the valley floor is near
        if !settled && (sweeps == cfg.knot_sweeps || change <= cfg.rel_tol * chi2) {
            settled = true;
            let pinned = [gauge, diffusive_anchor(series, branches)];
            if let Some((l, lo, di)) = settle(
                &data,
                branches,
                &pinned,
                &ln_xi,
                &loc,
                &diff,
                cfg.max_abs_ln_xi,
                cfg.rel_tol,
            ) {
                chi2 = total_chi2(&data, branches, &l, &lo, &di);
                (ln_xi, loc, diff) = (l, lo, di);
                converged = true;
            }
            // fall back to plain sweeps on the knots reached so far
            sweeps = sweeps.max(cfg.knot_sweeps);
        } else if settled && change <= cfg.rel_tol * chi2 {
            converged = true;
        }
    }
    converged |= chi2 <= tiny;
    if !converged {
        return Err(Error::NonConvergence {
            message: format!(
                "scaling collapse did not settle within {} sweeps (chi2 = {chi2:.6e})",
                cfg.max_sweeps
            ),
            last_iterate: ln_xi,
        });
    }

    let n_params = loc.knots.len() + diff.knots.len() + n - 2;
    if total_points <= n_params {
        return Err(Error::config(format!(
            "{total_points} points cannot constrain {n_params} collapse parameters"
        )));
    }
    let dof = total_points - n_params;

    let mut samples = Vec::with_capacity(total_points);
    let mut sq = 0.0;
    let mut xi = Vec::with_capacity(n);
    for i in 0..n {
        let f = if branches[i] == Branch::Diffusive {
            &diff
        } else {
            &loc
        };
        let mut curvature = 0.0;
        for j in 0..data.x[i].len() {
            let z = ln_xi[i] + data.x[i][j];
            let fitted = f.eval(z);
            sq += (data.y[i][j] - fitted).powi(2);
            curvature += data.w[i][j] * f.derivative(z).powi(2);
            samples.push(FSample {
                z,
                ln_lambda: data.y[i][j],
                ln_lambda_err: series[i].lambda_err[j],
                fitted,
                control_value: series[i].control_value,
                t: series[i].times[j],
                branch: branches[i],
            });
        }
        xi.push(XiEntry {
            control_value: series[i].control_value,
            xi: ln_xi[i].exp(),
            ln_xi: ln_xi[i],
            ln_xi_err: if curvature > 0.0 {
                curvature.powf(-0.5)
            } else {
                f64::INFINITY
            },
            branch: branches[i],
            classified: branches[i],
            slope: f64::NAN,
            slope_err: f64::NAN,
            isolated: isolated(&data, branches, &ln_xi, i),
        });
    }
    xi[gauge].xi = 1.0;
    xi[gauge].ln_xi = 0.0;
    xi.sort_by(|a, b| a.control_value.total_cmp(&b.control_value));
    samples.sort_by(|a, b| a.z.total_cmp(&b.z));

    Ok(ScalingResult {
        xi,
        gauge_ref,
        f_samples: samples,
        residual_rms: (sq / total_points as f64).sqrt(),
        chi2,
        dof,
        chi2_per_dof: chi2 / dof as f64,
        sweeps,
        diffusive_shift: 0.0,
        localized_curve: loc,
        diffusive_curve: diff,
    })
}

fn isolated(data: &Data, branches: &[Branch], ln_xi: &[f64], i: usize) -> bool {
    let range = |k: usize| {
        let (lo, hi) = data.x[k]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(*x), b.max(*x))
            });
        (lo + ln_xi[k], hi + ln_xi[k])
    };
    let (lo, hi) = range(i);
    !(0..ln_xi.len()).any(|k| {
        if k == i || branches[k] != branches[i] {
            return false;
        }
        let (a, b) = range(k);
        a.max(lo) <= b.min(hi)
    })
}

fn knot_count(points: usize) -> usize {
    ((points as f64).sqrt().floor() as usize).max(4)
}

fn quantile_knots(mut z: Vec<f64>) -> Vec<f64> {
    z.sort_by(f64::total_cmp);
    let k = knot_count(z.len()).min(z.len());
    let lo = z[0];
    let hi = z[z.len() - 1];
    let range = (hi - lo).max(1e-12);
    let knots: Vec<f64> = (0..k)
        .map(|i| quantile_sorted(&z, i as f64 / (k - 1) as f64))
        .collect();
    if knots.windows(2).all(|w| w[1] - w[0] > 1e-9 * range) {
        knots
    } else {
        (0..k)
            .map(|i| lo + range * i as f64 / (k - 1) as f64)
            .collect()
    }
}

fn fit_curves(
    data: &Data,
    branches: &[Branch],
    ln_xi: &[f64],
    knots: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(NaturalSpline, NaturalSpline)> {
    let (loc_knots, diff_knots) = knots.map_or((None, None), |(l, d)| (Some(l), Some(d)));
    let fit = |which: Branch, knots: Option<Vec<f64>>| -> Result<NaturalSpline> {
        let mut z = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for (i, b) in branches.iter().enumerate() {
            if *b != which {
                continue;
            }
            z.extend(data.x[i].iter().map(|x| x + ln_xi[i]));
            y.extend_from_slice(&data.y[i]);
            w.extend_from_slice(&data.w[i]);
        }
        let knots = knots.unwrap_or_else(|| quantile_knots(z.clone()));
        NaturalSpline::fit(knots, &z, &y, &w)
            .ok_or_else(|| Error::Degenerate(format!("cannot fit the {which} scaling curve")))
    };
    Ok((
        fit(Branch::Localized, loc_knots)?,
        fit(Branch::Diffusive, diff_knots)?,
    ))
}

fn series_chi2(f: &NaturalSpline, x: &[f64], y: &[f64], w: &[f64], l: f64) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - f.eval(l + x)).powi(2))
        .sum()
}

fn total_chi2(
    data: &Data,
    branches: &[Branch],
    ln_xi: &[f64],
    loc: &NaturalSpline,
    diff: &NaturalSpline,
) -> f64 {
    (0..ln_xi.len())
        .map(|i| {
            let f = if branches[i] == Branch::Diffusive {
                diff
            } else {
                loc
            };
            series_chi2(f, &data.x[i], &data.y[i], &data.w[i], ln_xi[i])
        })
        .sum()
}

/// ln ξ of every series but the gauge, with both curves refitted on fixed
/// knots for each trial.
struct Projected<'a> {
    data: &'a Data,
    branches: &'a [Branch],
    /// ln ξ of every series; pinned entries never change.
    base: Vec<f64>,
    /// Parameter column of each series, `None` when pinned.
    column: Vec<Option<usize>>,
    /// Knots relative to the mean ln ξ of their branch.
    knots: (&'a [f64], &'a [f64]),
    basis: (SplineBasis, SplineBasis),
    p: DVector<f64>,
}

/// Mean ln ξ of each branch.
fn branch_means(branches: &[Branch], ln_xi: &[f64]) -> [f64; 2] {
    let mut sum = [0.0; 2];
    let mut count = [0.0; 2];
    for (b, l) in branches.iter().zip(ln_xi) {
        let side = usize::from(*b == Branch::Diffusive);
        sum[side] += l;
        count[side] += 1.0;
    }
    [sum[0] / count[0], sum[1] / count[1]]
}

fn shifted(knots: &[f64], by: f64) -> Vec<f64> {
    knots.iter().map(|k| k + by).collect()
}

impl Projected<'_> {
    fn ln_xi(&self, p: &DVector<f64>) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.column)
            .map(|(b, c)| c.map_or(*b, |c| p[c]))
            .collect()
    }

    fn solve(&self, p: &DVector<f64>) -> Option<(Vec<f64>, NaturalSpline, NaturalSpline)> {
        let ln_xi = self.ln_xi(p);
        let m = branch_means(self.branches, &ln_xi);
        let knots = Some((shifted(self.knots.0, m[0]), shifted(self.knots.1, m[1])));
        let (loc, diff) = fit_curves(self.data, self.branches, &ln_xi, knots).ok()?;
        Some((ln_xi, loc, diff))
    }

    fn residuals_at(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        let (ln_xi, loc, diff) = self.solve(p)?;
        let mut r = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let f = if *b == Branch::Diffusive { &diff } else { &loc };
            for ((x, y), w) in self.data.x[i]
                .iter()
                .zip(&self.data.y[i])
                .zip(&self.data.w[i])
            {
                r.push(w.sqrt() * (f.eval(ln_xi[i] + x) - y));
            }
        }
        Some(DVector::from_vec(r))
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Projected<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        self.residuals_at(&self.p)
    }

    /// Derivative at fixed curves, projected off the span of the curves'
    /// own parameters (the Kaufman form of the variable-projection Jacobian).
    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let (ln_xi, loc, diff) = self.solve(&self.p)?;
        let m = branch_means(self.branches, &ln_xi);
        let mut size = [0.0; 2];
        for b in self.branches {
            size[usize::from(*b == Branch::Diffusive)] += 1.0;
        }
        let n_rows: usize = self.data.y.iter().map(Vec::len).sum();
        let mut jac = DMatrix::zeros(n_rows, self.p.len());
        let mut rows: [Vec<usize>; 2] = [vec![], vec![]];
        let mut basis: [Vec<Vec<f64>>; 2] = [vec![], vec![]];
        let mut row = 0;
        for (i, b) in self.branches.iter().enumerate() {
            let side = usize::from(*b == Branch::Diffusive);
            let (f, fb) = if side == 1 {
                (&diff, &self.basis.1)
            } else {
                (&loc, &self.basis.0)
            };
            for (x, w) in self.data.x[i].iter().zip(&self.data.w[i]) {
                let z = ln_xi[i] + x;
                let slope = w.sqrt() * f.derivative(z);
                // every series of the branch moves the knots through the mean
                for (k, c) in self.column.iter().enumerate() {
                    if let Some(c) = c.filter(|_| self.branches[k] == *b) {
                        jac[(row, c)] = slope * (f64::from(u8::from(k == i)) - 1.0 / size[side]);
                    }
                }
                rows[side].push(row);
                basis[side].push(
                    fb.row(z - m[side])
                        .into_iter()
                        .map(|v| w.sqrt() * v)
                        .collect(),
                );
                row += 1;
            }
        }
        for side in 0..2 {
            let k = basis[side][0].len();
            let a = DMatrix::from_fn(rows[side].len(), k, |r, c| basis[side][r][c]);
            let d = DMatrix::from_fn(rows[side].len(), self.p.len(), |r, c| {
                jac[(rows[side][r], c)]
            });
            // knots in data gaps leave the basis rank-deficient
            let svd = a.svd(true, false);
            let u = svd.u?;
            let top = svd.singular_values.max();
            let keep: Vec<usize> = (0..k)
                .filter(|&c| svd.singular_values[c] > 1e-12 * top)
                .collect();
            let u = u.select_columns(&keep);
            let projected = &d - &u * (u.transpose() * &d);
            for (r, &global) in rows[side].iter().enumerate() {
                jac.row_mut(global).copy_from(&projected.row(r));
            }
        }
        Some(jac)
    }
}

/// Joint solve on fixed knots, then again on knots re-placed at the
/// quantiles of the solution, until the knots stop moving.
#[allow(clippy::too_many_arguments)]
fn settle(
    data: &Data,
    branches: &[Branch],
    pinned: &[usize],
    ln_xi: &[f64],
    loc: &NaturalSpline,
    diff: &NaturalSpline,
    bound: f64,
    rel_tol: f64,
) -> Option<(Vec<f64>, NaturalSpline, NaturalSpline)> {
    let m = branch_means(branches, ln_xi);
    let mut knots = (shifted(&loc.knots, -m[0]), shifted(&diff.knots, -m[1]));
    let mut ln_xi = ln_xi.to_vec();
    for _ in 0..50 {
        let (l, lo, di) = joint_refine(data, branches, pinned, &ln_xi, &knots, bound, rel_tol)?;
        let (nl, nd) = fit_curves(data, branches, &l, None).ok()?;
        let moved = |a: &[f64], b: &[f64]| {
            let span = (b[b.len() - 1] - b[0]).max(1e-12);
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                / span
        };
        let shift = moved(&lo.knots, &nl.knots).max(moved(&di.knots, &nd.knots));
        log::debug!("collapse knots moved by {shift:.3e} of their span");
        if shift < 1e-9 {
            return Some((l, lo, di));
        }
        let m = branch_means(branches, &l);
        ln_xi = l;
        knots = (shifted(&nl.knots, -m[0]), shifted(&nd.knots, -m[1]));
    }
    None
}

fn joint_refine(
    data: &Data,
    branches: &[Branch],
    pinned: &[usize],
    ln_xi: &[f64],
    knots: &(Vec<f64>, Vec<f64>),
    bound: f64,
    rel_tol: f64,
) -> Option<(Vec<f64>, NaturalSpline, NaturalSpline)> {
    let mut column = vec![None; ln_xi.len()];
    let mut p = vec![];
    for (i, l) in ln_xi.iter().enumerate() {
        if !pinned.contains(&i) {
            column[i] = Some(p.len());
            p.push(*l);
        }
    }
    let mut problem = Projected {
        data,
        branches,
        base: ln_xi.to_vec(),
        column,
        knots: (&knots.0, &knots.1),
        basis: (SplineBasis::new(&knots.0), SplineBasis::new(&knots.1)),
        p: DVector::from_vec(p),
    };
    let cost = |j: &Projected| j.residuals().map_or(f64::INFINITY, |r| r.norm_squared());
    let mut chi2 = cost(&problem);
    for round in 0..20 {
        let (solved, report) = LevenbergMarquardt::new()
            .with_ftol(1e-14)
            .with_xtol(1e-14)
            .with_gtol(1e-14)
            .with_patience(100)
            .minimize(problem);
        problem = solved;
        let next = cost(&problem);
        if !next.is_finite() {
            return None;
        }
        let change = chi2 - next;
        chi2 = next;
        log::debug!(
            "joint collapse round {round}: chi2 {chi2:.9e} ({:?})",
            report.termination
        );
        if report.termination.was_successful() || change <= rel_tol * chi2 {
            let out = problem.solve(&problem.p)?;
            return out.0.iter().all(|l| l.abs() <= bound).then_some(out);
        }
        if !matches!(
            report.termination,
            levenberg_marquardt::TerminationReason::LostPatience
        ) {
            return None;
        }
    }
    None
}

/// Gauss–Newton in one variable with step halving.
fn refit_ln_xi(f: &NaturalSpline, x: &[f64], y: &[f64], w: &[f64], start: f64, bound: f64) -> f64 {
    let mut l = start;
    let mut s = series_chi2(f, x, y, w, l);
    for _ in 0..50 {
        let (mut g, mut h) = (0.0, 0.0);
        for ((x, y), w) in x.iter().zip(y).zip(w) {
            let z = l + x;
            let d = f.derivative(z);
            g += w * (y - f.eval(z)) * d;
            h += w * d * d;
        }
        if !(h > 0.0) {
            break;
        }
        let mut step = g / h;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = (l + step).clamp(-bound, bound);
            let st = series_chi2(f, x, y, w, trial);
            if st <= s {
                accepted = true;
                step = trial - l;
                l = trial;
                s = st;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < 1e-13 {
            break;
        }
    }
    l
}

/// Piecewise-linear curve with straight-line extrapolation fitted to each end.
struct Polyline {
    z: Vec<f64>,
    y: Vec<f64>,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Polyline {
    fn new(z: &[f64], y: &[f64], w: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..z.len()).collect();
        idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
        let zs: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let ws: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let m = (zs.len() / 4).max(3).min(zs.len());
        let end = |r: std::ops::Range<usize>| {
            line_fit(&zs[r.clone()], &ys[r.clone()], &ws[r.clone()])
                .map(|(a, b, _, _)| (a, b))
                .unwrap_or((ys[r.start], 0.0))
        };
        let lo = end(0..m);
        let hi = end(zs.len() - m..zs.len());
        Self {
            z: zs,
            y: ys,
            lo,
            hi,
        }
    }

    fn eval(&self, z: f64) -> f64 {
        let n = self.z.len();
        if z <= self.z[0] {
            return self.y[0] + self.lo.1 * (z - self.z[0]);
        }
        if z >= self.z[n - 1] {
            return self.y[n - 1] + self.hi.1 * (z - self.z[n - 1]);
        }
        let j = self.z.partition_point(|v| *v <= z).clamp(1, n - 1);
        let (z0, z1) = (self.z[j - 1], self.z[j]);
        if z1 == z0 {
            return self.y[j];
        }
        self.y[j - 1] + (self.y[j] - self.y[j - 1]) * (z - z0) / (z1 - z0)
    }
}

/// ln ξ for series `b` that best overlays it on series `a` placed at `ln_xi_a`.
fn overlap_shift(data: &Data, a: usize, ln_xi_a: f64, b: usize) -> f64 {
    let za: Vec<f64> = data.x[a].iter().map(|x| x + ln_xi_a).collect();
    let curve = Polyline::new(&za, &data.y[a], &data.w[a]);
    let xb = &data.x[b];
    let cost = |l: f64| -> f64 {
        xb.iter()
            .zip(&data.y[b])
            .zip(&data.w[b])
            .map(|((x, y), w)| w * (y - curve.eval(l + x)).powi(2))
            .sum()
    };
    let (za_lo, za_hi) = (curve.z[0], curve.z[curve.z.len() - 1]);
    let (xb_lo, xb_hi) = xb
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let span = (za_hi - za_lo) + (xb_hi - xb_lo) + 1.0;
    let from = za_lo - xb_hi - span;
    let to = za_hi - xb_lo + span;
    let steps = 400;
    let h = (to - from) / steps as f64;
    let best = (0..=steps)
        .map(|k| from + h * k as f64)
        .min_by(|p, q| cost(*p).total_cmp(&cost(*q)))
        .unwrap_or(ln_xi_a);
    golden_min(cost, best - h, best + h, 1e-10)
}

fn initial_ln_xi(
    series: &[LambdaSeries],
    data: &Data,
    branches: &[Branch],
    gauge: usize,
) -> Vec<f64> {
    let n = series.len();
    let mut ln_xi = vec![0.0; n];
    let ordered = |which: Branch| -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).filter(|&i| branches[i] == which).collect();
        v.sort_by(|&a, &b| series[a].control_value.total_cmp(&series[b].control_value));
        v
    };
    let chain = |ln_xi: &mut Vec<f64>, order: &[usize], start: usize| {
        for k in start + 1..order.len() {
            ln_xi[order[k]] = overlap_shift(data, order[k - 1], ln_xi[order[k - 1]], order[k]);
        }
        for k in (0..start).rev() {
            ln_xi[order[k]] = overlap_shift(data, order[k + 1], ln_xi[order[k + 1]], order[k]);
        }
    };
    let loc = ordered(Branch::Localized);
    let diff = ordered(Branch::Diffusive);
    let start = loc
        .iter()
        .position(|&i| i == gauge)
        .expect("gauge is localized");
    chain(&mut ln_xi, &loc, start);

    // seed the diffusive series closest to the localized branch
    let (seed_pos, seed_from) = diff
        .iter()
        .enumerate()
        .flat_map(|(p, &d)| loc.iter().map(move |&l| (p, l, d)))
        .min_by(|a, b| {
            let da = (series[a.2].control_value - series[a.1].control_value).abs();
            let db = (series[b.2].control_value - series[b.1].control_value).abs();
            da.total_cmp(&db)
        })
        .map(|(p, l, _)| (p, l))
        .expect("both branches are populated");
    ln_xi[diff[seed_pos]] = ln_xi[seed_from];
    chain(&mut ln_xi, &diff, seed_pos);
    ln_xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{synth_scaling_data, FSpec, SynthDesign, XiSpec};
    use proptest::prelude::*;
    use rand::Rng;

    const TIP: FSpec = FSpec::Tip {
        critical_ln_lambda: 0.4,
        mu: 1.58,
    };
    const LINE: FSpec = FSpec::Linear {
        localized_intercept: 0.0,
        diffusive_intercept: 0.0,
    };

    fn labels(series: &[LambdaSeries]) -> Vec<Branch> {
        series
            .iter()
            .map(|s| {
                if s.control_value < 6.67 {
                    Branch::Localized
                } else {
                    Branch::Diffusive
                }
            })
            .collect()
    }

    /// ln ξ relative to the first series of the same branch.
    fn within_branch(r: &ScalingResult) -> Vec<f64> {
        let first = |b: Branch| r.xi.iter().find(|e| e.branch == b).unwrap().ln_xi;
        r.xi.iter().map(|e| e.ln_xi - first(e.branch)).collect()
    }

    #[test]
    fn exact_data_collapses_onto_true_xi() {
        let s = synth_scaling_data(&LINE, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.0, 0)
            .unwrap();
        let r = collapse(&s, None, &CollapseConfig::default()).unwrap();
        assert!(r.chi2_per_dof < 1e-6, "{}", r.chi2_per_dof);
        let truth: Vec<f64> =
            r.xi.iter()
                .map(|e| XiSpec::REFERENCE.xi(e.control_value).unwrap().0.ln())
                .collect();
        let first = |b: Branch| r.xi.iter().position(|e| e.branch == b).unwrap();
        for (k, e) in r.xi.iter().enumerate() {
            let j = first(e.branch);
            let want = truth[k] - truth[j];
            assert!(
                (e.ln_xi - r.xi[j].ln_xi - want).abs() < 1e-5,
                "{}: {} vs {want}",
                e.control_value,
                e.ln_xi
            );
        }
    }

    #[test]
    fn different_starts_agree_on_xi_ratios() {
        let s = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.02, 3)
            .unwrap();
        let b = labels(&s);
        let gauge = default_gauge_ref(&s, &b).unwrap();
        let central = collapse_with(&s, &b, gauge, None, &CollapseConfig::default()).unwrap();
        let start: Vec<f64> = s
            .iter()
            .map(|q| {
                central
                    .xi
                    .iter()
                    .find(|e| e.control_value == q.control_value)
                    .unwrap()
                    .ln_xi
            })
            .collect();
        let mut r = crate::rng::stream(11, 0);
        for _ in 0..3 {
            let init: Vec<f64> = start
                .iter()
                .map(|l| l + r.random_range(-0.3..0.3))
                .collect();
            let other =
                collapse_with(&s, &b, gauge, Some(&init), &CollapseConfig::default()).unwrap();
            for (a, c) in within_branch(&central).iter().zip(within_branch(&other)) {
                assert!((a - c).abs() < 1e-4, "{a} vs {c}");
            }
        }
    }

    #[test]
    fn one_branch_is_a_config_error() {
        let s = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.0, 0)
            .unwrap();
        let all_loc = vec![Branch::Localized; s.len()];
        let gauge = s[0].control_value;
        let err = collapse_with(&s, &all_loc, gauge, None, &CollapseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn gauge_must_be_a_localized_control_value() {
        let s = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.0, 0)
            .unwrap();
        let b = labels(&s);
        let cfg = CollapseConfig::default();
        assert!(matches!(
            collapse_with(&s, &b, 4.01, None, &cfg),
            Err(Error::Config(_))
        ));
        let diffusive = s.last().unwrap().control_value;
        assert!(matches!(
            collapse_with(&s, &b, diffusive, None, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_series_get_identical_xi() {
        let rows = vec![
            (4.0, 1.0, Branch::Localized),
            (4.5, 2.0, Branch::Localized),
            (5.0, 2.0, Branch::Localized),
            (5.5, 4.0, Branch::Localized),
            (6.0, 8.0, Branch::Localized),
            (7.0, 8.0, Branch::Diffusive),
            (7.5, 3.0, Branch::Diffusive),
            (8.0, 3.0, Branch::Diffusive),
            (8.5, 1.0, Branch::Diffusive),
        ];
        let design = SynthDesign {
            controls: rows.iter().map(|r| r.0).collect(),
            ..SynthDesign::reference()
        };
        let s = synth_scaling_data(&LINE, &XiSpec::Table(rows), &design, 0.0, 0).unwrap();
        let r = collapse(&s, None, &CollapseConfig::default()).unwrap();
        let ln = |q: f64| r.xi.iter().find(|e| e.control_value == q).unwrap().ln_xi;
        assert!((ln(4.5) - ln(5.0)).abs() < 1e-8);
        assert!((ln(7.5) - ln(8.0)).abs() < 1e-8);
        assert!((ln(4.5) - ln(4.0) - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn series_beyond_the_others_is_isolated() {
        let rows = vec![
            (4.0, 1.0, Branch::Localized),
            (4.5, 2.0, Branch::Localized),
            (5.0, 4.0, Branch::Localized),
            (5.5, 1e6, Branch::Localized),
            (7.0, 6.0, Branch::Diffusive),
            (7.5, 3.0, Branch::Diffusive),
            (8.0, 1.5, Branch::Diffusive),
        ];
        let design = SynthDesign {
            controls: rows.iter().map(|r| r.0).collect(),
            ..SynthDesign::reference()
        };
        let s = synth_scaling_data(&LINE, &XiSpec::Table(rows), &design, 0.0, 0).unwrap();
        let r = collapse(&s, None, &CollapseConfig::default()).unwrap();
        let iso: Vec<bool> = r.xi.iter().map(|e| e.isolated).collect();
        assert_eq!(iso, [false, false, false, true, false, false, false]);
    }

    #[test]
    fn shifting_the_diffusive_branch_keeps_residuals() {
        let s = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.02, 1)
            .unwrap();
        let mut r = collapse(&s, None, &CollapseConfig::default()).unwrap();
        let before: Vec<f64> = r.f_samples.iter().map(|f| f.ln_lambda - f.fitted).collect();
        r.shift_diffusive(0.7);
        for f in &r.f_samples {
            assert!((r.eval_f(f.branch, f.z) - f.fitted).abs() < 1e-12);
        }
        let mut after: Vec<f64> = r.f_samples.iter().map(|f| f.ln_lambda - f.fitted).collect();
        let mut before = before;
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        assert_eq!(before, after);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn gauge_choice_leaves_ratios_alone(seed in 0u64..1000, pick in 0usize..6) {
            let s = synth_scaling_data(&TIP, &XiSpec::REFERENCE, &SynthDesign::reference(), 0.02, seed).unwrap();
            let b = labels(&s);
            let cfg = CollapseConfig::default();
            let a = collapse_with(&s, &b, s[0].control_value, None, &cfg).unwrap();
            let c = collapse_with(&s, &b, s[pick].control_value, None, &cfg).unwrap();
            prop_assert!((a.chi2 / c.chi2 - 1.0).abs() < 1e-4, "{} vs {}", a.chi2, c.chi2);
            for (x, y) in within_branch(&a).iter().zip(within_branch(&c)) {
                prop_assert!((x - y).abs() < 1e-3, "{} vs {}", x, y);
            }
        }
    }
}
