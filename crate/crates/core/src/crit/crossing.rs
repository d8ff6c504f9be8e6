use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::median;
use crate::scaling::{assign_branches, Branch, LambdaSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate {
    pub q_c0: f64,
    pub crossings: usize,
    /// Set when no crossing was found and the branch boundary was used.
    pub fallback: bool,
}

/// Control value where Λ stops depending on time.
///
/// For every pair of common times `t₂ ≥ 2t₁` the difference
/// `ln Λ(q, t₂) − ln Λ(q, t₁)` is interpolated linearly between neighbouring
/// control values; the estimate is the median of its zero crossings.
pub fn crossing_estimate(series: &[LambdaSeries]) -> Result<CrossingEstimate> {
    if series.len() < 2 {
        return Err(Error::config("crossing estimate needs at least 2 series"));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series[a].control_value.total_cmp(&series[b].control_value));
    let common: Vec<usize> = series[0]
        .times
        .iter()
        .copied()
        .filter(|t| series.iter().all(|s| s.times.contains(t)))
        .collect();
    let lookup = |s: &LambdaSeries, t: usize| -> f64 {
        let j = s.times.iter().position(|&x| x == t).expect("common time");
        s.lambda[j].ln()
    };

    let mut found = Vec::new();
    for (a, &t1) in common.iter().enumerate() {
        for &t2 in &common[a + 1..] {
            if t2 < 2 * t1 {
                continue;
            }
            let g: Vec<(f64, f64)> = order
                .iter()
                .map(|&i| {
                    (
                        series[i].control_value,
                        lookup(&series[i], t2) - lookup(&series[i], t1),
                    )
                })
                .collect();
            for w in g.windows(2) {
                let ((qa, ga), (qb, gb)) = (w[0], w[1]);
                if ga == 0.0 {
                    found.push(qa);
                } else if ga * gb < 0.0 && qb != qa {
                    found.push(qa - ga * (qb - qa) / (gb - ga));
                }
            }
            if let Some(&(ql, gl)) = g.last() {
                if gl == 0.0 {
                    found.push(ql);
                }
            }
        }
    }
    if let Some(q) = median(&found) {
        return Ok(CrossingEstimate {
            q_c0: q,
            crossings: found.len(),
            fallback: false,
        });
    }

    let labels = assign_branches(series).ok();
    let q_of = |b: Branch| -> Vec<f64> {
        labels
            .iter()
            .flatten()
            .zip(series)
            .filter(|(l, _)| l.1 == b)
            .map(|(_, s)| s.control_value)
            .collect()
    };
    let loc = q_of(Branch::Localized);
    let diff = q_of(Branch::Diffusive);
    let lo = series[order[0]].control_value;
    let hi = series[order[order.len() - 1]].control_value;
    let q = match (
        loc.iter().cloned().reduce(f64::max),
        diff.iter().cloned().reduce(f64::min),
    ) {
        (Some(l), Some(d)) => 0.5 * (l + d),
        (Some(_), None) => hi,
        (None, Some(_)) => lo,
        (None, None) => 0.5 * (lo + hi),
    };
    Ok(CrossingEstimate {
        q_c0: q,
        crossings: 0,
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::LambdaSource;

    fn series(q: f64, f: impl Fn(f64) -> f64) -> LambdaSeries {
        let times = vec![30, 60, 120, 240, 480, 960];
        LambdaSeries {
            control_value: q,
            lambda: times.iter().map(|&t| f(t as f64).exp()).collect(),
            lambda_err: vec![0.01; times.len()],
            times,
            source: LambdaSource::P2,
        }
    }

    #[test]
    fn two_linear_series_cross_exactly() {
        // ln Λ = (q − 5)·ln t / 3: decreasing below 5, increasing above
        let s = vec![
            series(4.0, |t| -t.ln() / 3.0),
            series(6.0, |t| t.ln() / 3.0),
        ];
        let c = crossing_estimate(&s).unwrap();
        assert!(!c.fallback);
        assert_eq!(c.q_c0, 5.0);
    }

    #[test]
    fn all_localized_falls_back() {
        let s: Vec<_> = (0..5)
            .map(|i| series(4.0 + i as f64 * 0.2, |t| 1.0 - 2.0 / 3.0 * t.ln()))
            .collect();
        let c = crossing_estimate(&s).unwrap();
        assert!(c.fallback);
        assert_eq!(c.crossings, 0);
    }
}
