use serde::{Deserialize, Serialize};

use crate::numeric::weighted_lstsq;

/// Natural cubic spline through `(knots[i], values[i])`, continued linearly
/// outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpline {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    #[serde(skip)]
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Self {
        assert!(knots.len() >= 2 && knots.len() == values.len());
        debug_assert!(knots.windows(2).all(|w| w[0] < w[1]));
        let second = second_derivatives(&knots, &values);
        Self {
            knots,
            values,
            second,
        }
    }

    /// Rebuild derived data after deserialization.
    pub fn refresh(&mut self) {
        self.second = second_derivatives(&self.knots, &self.values);
    }

    fn segment(&self, z: f64) -> usize {
        let k = &self.knots;
        match k.binary_search_by(|v| v.total_cmp(&z)) {
            Ok(i) => i.min(k.len() - 2),
            Err(i) => i.saturating_sub(1).min(k.len() - 2),
        }
    }

    fn end_slopes(&self) -> (f64, f64) {
        let (k, y, m) = (&self.knots, &self.values, &self.second);
        let n = k.len();
        let h0 = k[1] - k[0];
        let hn = k[n - 1] - k[n - 2];
        let s0 = (y[1] - y[0]) / h0 - h0 * (2.0 * m[0] + m[1]) / 6.0;
        let sn = (y[n - 1] - y[n - 2]) / hn + hn * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
        (s0, sn)
    }

    pub fn eval(&self, z: f64) -> f64 {
        let (k, y, m) = (&self.knots, &self.values, &self.second);
        let n = k.len();
        if z < k[0] {
            return y[0] + self.end_slopes().0 * (z - k[0]);
        }
        if z > k[n - 1] {
            return y[n - 1] + self.end_slopes().1 * (z - k[n - 1]);
        }
        let j = self.segment(z);
        let h = k[j + 1] - k[j];
        let a = (k[j + 1] - z) / h;
        let b = 1.0 - a;
        a * y[j]
            + b * y[j + 1]
            + ((a * a * a - a) * m[j] + (b * b * b - b) * m[j + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let (k, y, m) = (&self.knots, &self.values, &self.second);
        let n = k.len();
        if z < k[0] {
            return self.end_slopes().0;
        }
        if z > k[n - 1] {
            return self.end_slopes().1;
        }
        let j = self.segment(z);
        let h = k[j + 1] - k[j];
        let a = (k[j + 1] - z) / h;
        let b = 1.0 - a;
        (y[j + 1] - y[j]) / h
            + (-(3.0 * a * a - 1.0) * m[j] + (3.0 * b * b - 1.0) * m[j + 1]) * h / 6.0
    }

    /// Weighted least-squares spline with the given knots.
    pub fn fit(knots: Vec<f64>, z: &[f64], y: &[f64], w: &[f64]) -> Option<Self> {
        let basis = SplineBasis::new(&knots);
        let rows: Vec<Vec<f64>> = z.iter().map(|&zi| basis.row(zi)).collect();
        let values = weighted_lstsq(&rows, y, w)?;
        Some(Self::new(knots, values))
    }
}

/// Evaluates the linear map from knot values to spline values at a point.
pub(crate) struct SplineBasis {
    units: Vec<NaturalSpline>,
}

impl SplineBasis {
    pub(crate) fn new(knots: &[f64]) -> Self {
        let n = knots.len();
        let units = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                NaturalSpline::new(knots.to_vec(), v)
            })
            .collect();
        Self { units }
    }

    pub(crate) fn row(&self, z: f64) -> Vec<f64> {
        self.units.iter().map(|u| u.eval(z)).collect()
    }
}

fn second_derivatives(k: &[f64], y: &[f64]) -> Vec<f64> {
    let n = k.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal system for interior second derivatives (Thomas algorithm).
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut lower = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for i in 1..n - 1 {
        let h0 = k[i] - k[i - 1];
        let h1 = k[i + 1] - k[i];
        let r = i - 1;
        lower[r] = h0 / 6.0;
        diag[r] = (h0 + h1) / 3.0;
        upper[r] = h1 / 6.0;
        rhs[r] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    }
    for r in 1..inner {
        let f = lower[r] / diag[r - 1];
        diag[r] -= f * upper[r - 1];
        rhs[r] -= f * rhs[r - 1];
    }
    let mut sol = vec![0.0; inner];
    sol[inner - 1] = rhs[inner - 1] / diag[inner - 1];
    for r in (0..inner - 1).rev() {
        sol[r] = (rhs[r] - upper[r] * sol[r + 1]) / diag[r];
    }
    m[1..n - 1].copy_from_slice(&sol);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots_and_is_linear_outside() {
        let s = NaturalSpline::new(vec![0.0, 1.0, 2.5, 4.0], vec![1.0, -1.0, 2.0, 0.5]);
        for (k, v) in s.knots.iter().zip(&s.values) {
            assert!((s.eval(*k) - v).abs() < 1e-14);
        }
        let d = s.derivative(5.0);
        assert!((s.eval(6.0) - s.eval(5.0) - d).abs() < 1e-12);
        // derivative matches finite differences inside
        for z in [0.3, 1.7, 3.2] {
            let fd = (s.eval(z + 1e-6) - s.eval(z - 1e-6)) / 2e-6;
            assert!((fd - s.derivative(z)).abs() < 1e-6);
        }
        // continuity of slope at the ends
        let fd0 = (s.eval(1e-7) - s.eval(-1e-7)) / 2e-7;
        assert!((fd0 - s.derivative(-1.0)).abs() < 1e-5);
    }

    #[test]
    fn reproduces_lines_exactly() {
        let z: Vec<f64> = (0..50).map(|i| i as f64 * 0.13 - 2.0).collect();
        let y: Vec<f64> = z.iter().map(|z| 0.7 - 1.3 * z).collect();
        let s =
            NaturalSpline::fit(vec![-2.0, -0.5, 1.0, 2.0, 4.5], &z, &y, &vec![1.0; 50]).unwrap();
        for (zi, yi) in z.iter().zip(&y) {
            assert!((s.eval(*zi) - yi).abs() < 1e-10);
        }
        assert!((s.eval(10.0) - (0.7 - 13.0)).abs() < 1e-9);
    }
}
