use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::fit::BootstrapSummary;
use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::rng::{self, StreamRng};
use crate::scaling::LambdaSeries;

/// Replicas below this count still run but their intervals are rough.
pub const MIN_REPORTED_REPLICAS: usize = 100;
/// Largest tolerated fraction of failed replicas.
pub const MAX_DROPPED_FRACTION: f64 = 0.1;

/// Summary plus whatever each successful replica returned besides `(q_c, ν)`.
#[derive(Debug, Clone)]
pub struct BootstrapRun<T> {
    pub summary: BootstrapSummary,
    pub extras: Vec<T>,
}

/// Run `replicas` independent replicas of `pipeline`, each with its own
/// stream `(seed, replica)`, in parallel; results are gathered in replica
/// order. Failed replicas are dropped and counted.
pub fn bootstrap<T, F>(replicas: usize, seed: u64, pipeline: F) -> Result<BootstrapRun<T>>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> Result<(f64, f64, T)> + Sync,
{
    if replicas == 0 {
        return Err(Error::config("bootstrap needs at least one replica"));
    }
    if replicas < MIN_REPORTED_REPLICAS {
        warn!(
            "bootstrap with {replicas} replicas (< {MIN_REPORTED_REPLICAS}); intervals are rough"
        );
    }
    let results: Vec<Result<(f64, f64, T)>> = (0..replicas)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            pipeline(b, &mut r)
        })
        .collect();
    let mut cloud = Vec::with_capacity(replicas);
    let mut extras = Vec::with_capacity(replicas);
    let mut last_error = None;
    for res in results {
        match res {
            Ok((q, nu, extra)) if q.is_finite() && nu.is_finite() => {
                cloud.push((q, nu));
                extras.push(extra);
            }
            Ok(_) => last_error = Some("non-finite replica estimate".to_string()),
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    let dropped = replicas - cloud.len();
    if dropped as f64 > MAX_DROPPED_FRACTION * replicas as f64 || cloud.is_empty() {
        return Err(Error::NonConvergence {
            message: format!(
                "{dropped} of {replicas} bootstrap replicas failed (last: {})",
                last_error.unwrap_or_default()
            ),
            last_iterate: vec![],
        });
    }
    if dropped > 0 {
        warn!("dropped {dropped} of {replicas} bootstrap replicas");
    }
    let interval = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, 0.16), quantile_sorted(&v, 0.84))
    };
    let q_c_interval = interval(cloud.iter().map(|c| c.0).collect());
    let nu_interval = interval(cloud.iter().map(|c| c.1).collect());
    Ok(BootstrapRun {
        summary: BootstrapSummary {
            requested: replicas,
            dropped,
            replicas: cloud,
            q_c_sigma: 0.5 * (q_c_interval.1 - q_c_interval.0),
            nu_sigma: 0.5 * (nu_interval.1 - nu_interval.0),
            q_c_interval,
            nu_interval,
        },
        extras,
    })
}

/// Copy of `series` with every ln Λ moved by a normal draw of its own
/// standard error.
pub fn perturb_series(series: &[LambdaSeries], r: &mut StreamRng) -> Vec<LambdaSeries> {
    series
        .iter()
        .map(|s| {
            let shifts: Vec<f64> = s
                .lambda_err
                .iter()
                .map(|&e| {
                    let g: f64 = r.sample(StandardNormal);
                    g * e
                })
                .collect();
            s.perturbed(&shifts)
        })
        .collect()
}
