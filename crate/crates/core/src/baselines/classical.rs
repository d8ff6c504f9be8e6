use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modulation, ParameterSet};
use crate::rng;

/// How modulation phases are chosen for each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    /// Use the phases stored in the parameter set.
    Fixed,
    /// Draw φ₂, φ₃ uniformly in [0, 2π) per trajectory.
    Random,
}

/// Phase-space cloud for the classical map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnsemble {
    /// Positions, wrapped into [0, 2π).
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl ClassicalEnsemble {
    /// Uniform positions and fractional momenta in [0, 1).
    pub fn uniform(count: usize, seed: u64, index: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config(
                "classical ensemble needs at least one trajectory",
            ));
        }
        let mut r = rng::stream(seed, index);
        let x = (0..count).map(|_| r.random::<f64>() * TAU).collect();
        let p = (0..count).map(|_| r.random::<f64>()).collect();
        Ok(Self { x, p })
    }

    pub fn count(&self) -> usize {
        self.x.len()
    }
}

/// One period of the classical map: kick, then free flight with the new
/// momentum.
#[inline]
pub fn standard_map_step(x: f64, p: f64, k_n: f64, kbar: f64) -> (f64, f64) {
    let p1 = p + (k_n / kbar) * x.sin();
    let x1 = (x + kbar * p1).rem_euclid(TAU);
    (x1, p1)
}

/// Central-difference Jacobian determinant of one map step at `(x, p)`.
pub fn jacobian_determinant(x: f64, p: f64, k_n: f64, kbar: f64, h: f64) -> f64 {
    // unwrapped position so the difference quotient does not see the 2π cut
    let raw = |x: f64, p: f64| {
        let p1 = p + (k_n / kbar) * x.sin();
        (x + kbar * p1, p1)
    };
    let (xa, pa) = raw(x + h, p);
    let (xb, pb) = raw(x - h, p);
    let (xc, pc) = raw(x, p + h);
    let (xd, pd) = raw(x, p - h);
    let dxdx = (xa - xb) / (2.0 * h);
    let dpdx = (pa - pb) / (2.0 * h);
    let dxdp = (xc - xd) / (2.0 * h);
    let dpdp = (pc - pd) / (2.0 * h);
    dxdx * dpdp - dxdp * dpdx
}

/// `⟨(p̃ − p̃₀)²⟩` after each kick `t = 1..=t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSeries {
    pub times: Vec<usize>,
    pub p2: Vec<f64>,
    pub p2_err: Vec<f64>,
    pub count: usize,
}

const CHUNK: usize = 1024;

/// Monte Carlo spread of the classical map under the same kick schedule as
/// the quantum engine.
#[allow(clippy::too_many_arguments)]
pub fn classical_diffusion(
    ps: &ParameterSet,
    k: f64,
    eps: f64,
    phases: PhaseMode,
    t_max: usize,
    count: usize,
    seed: u64,
) -> Result<ClassicalSeries> {
    if count < 2 {
        return Err(Error::config(
            "classical ensemble needs at least 2 trajectories",
        ));
    }
    if t_max == 0 {
        return Err(Error::config("t_max must be at least 1"));
    }
    let base = Modulation::from_params(ps);
    let kbar = ps.kbar;
    let chunks = count.div_ceil(CHUNK);
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(count - c * CHUNK);
            let mut r = rng::stream(seed, c as u64);
            let mut s1 = vec![0.0; t_max];
            let mut s2 = vec![0.0; t_max];
            for _ in 0..n {
                let mut x = r.random::<f64>() * TAU;
                let p0 = r.random::<f64>();
                let m = match phases {
                    PhaseMode::Fixed => base,
                    PhaseMode::Random => {
                        base.with_phases(r.random::<f64>() * TAU, r.random::<f64>() * TAU)
                    }
                };
                let mut p = p0;
                for t in 0..t_max {
                    (x, p) = standard_map_step(x, p, m.amplitude(k, eps, t as u64), kbar);
                    let d = (p - p0) * (p - p0);
                    s1[t] += d;
                    s2[t] += d * d;
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; t_max];
    let mut s2 = vec![0.0; t_max];
    for (a, b) in &sums {
        for t in 0..t_max {
            s1[t] += a[t];
            s2[t] += b[t];
        }
    }
    let nf = count as f64;
    let p2: Vec<f64> = s1.iter().map(|s| s / nf).collect();
    let p2_err = s2
        .iter()
        .zip(&p2)
        .map(|(s, m)| ((s / nf - m * m).max(0.0) / (nf - 1.0)).sqrt())
        .collect();
    Ok(ClassicalSeries {
        times: (1..=t_max).collect(),
        p2,
        p2_err,
        count,
    })
}
