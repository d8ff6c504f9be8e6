use num_complex::Complex64;

use crate::error::{Error, Result};

/// Wavefunction on one quasimomentum fiber, stored over a momentum lattice.
///
/// Amplitudes are kept in transform order: index `k < n/2` holds momentum
/// `m = k`, index `k ≥ n/2` holds `m = k − n`. The physical momentum is
/// `p̃ = m + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amps: Vec<Complex64>,
    beta: f64,
    kbar: f64,
}

impl QuantumState {
    /// Plane wave `|m = 0⟩` on a grid of `n` sites (`n` a power of two ≥ 4).
    pub fn plane_wave(n: usize, beta: f64, kbar: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::config(format!(
                "grid size {n} must be a power of two >= 4"
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Range(format!("quasimomentum {beta} outside [0, 1)")));
        }
        if !(kbar > 0.0) {
            return Err(Error::config(format!("kbar must be positive, got {kbar}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { amps, beta, kbar })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>, beta: f64, kbar: f64) -> Result<Self> {
        let n = amps.len();
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::config(format!(
                "grid size {n} must be a power of two >= 4"
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Range(format!("quasimomentum {beta} outside [0, 1)")));
        }
        Ok(Self { amps, beta, kbar })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kbar(&self) -> f64 {
        self.kbar
    }

    pub fn grid_len(&self) -> usize {
        self.amps.len()
    }

    /// Largest |m| representable without aliasing on the current grid.
    pub fn half_width(&self) -> i64 {
        (self.amps.len() / 2) as i64
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    #[inline]
    pub fn momentum_of(&self, index: usize) -> i64 {
        signed_momentum(index, self.amps.len())
    }

    fn index_of(&self, m: i64) -> Option<usize> {
        let n = self.amps.len() as i64;
        if m >= n / 2 || m < -n / 2 {
            return None;
        }
        Some(m.rem_euclid(n) as usize)
    }

    /// Amplitude of lattice site `m`; zero outside the grid.
    pub fn amplitude(&self, m: i64) -> Complex64 {
        self.index_of(m)
            .map_or(Complex64::new(0.0, 0.0), |i| self.amps[i])
    }

    pub fn probability(&self, m: i64) -> f64 {
        self.amplitude(m).norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `Σ m²|a_m|²`, the spread measured from the initial site.
    pub fn second_moment(&self) -> f64 {
        let n = self.amps.len();
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let m = signed_momentum(i, n) as f64;
                m * m * a.norm_sqr()
            })
            .sum()
    }

    pub fn first_moment(&self) -> f64 {
        let n = self.amps.len();
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| signed_momentum(i, n) as f64 * a.norm_sqr())
            .sum()
    }

    /// Total probability on sites with `|m| >= cutoff`.
    pub fn tail_probability(&self, cutoff: i64) -> f64 {
        let n = self.amps.len();
        let half = (n / 2) as i64;
        if cutoff <= 0 {
            return self.norm().powi(2);
        }
        if cutoff > half {
            return 0.0;
        }
        let c = cutoff as usize;
        // positive side: indices c..n/2, negative side: n/2..=n-c
        self.amps[c..=(n - c)].iter().map(|a| a.norm_sqr()).sum()
    }

    /// Double the grid by zero padding between the positive and negative
    /// momentum halves. The represented wavefunction is unchanged.
    pub(crate) fn grow(&mut self) {
        let n = self.amps.len();
        let mut wide = vec![Complex64::new(0.0, 0.0); 2 * n];
        wide[..n / 2].copy_from_slice(&self.amps[..n / 2]);
        wide[2 * n - n / 2..].copy_from_slice(&self.amps[n / 2..]);
        self.amps = wide;
    }
}

#[inline]
pub(crate) fn signed_momentum(index: usize, n: usize) -> i64 {
    if index < n / 2 {
        index as i64
    } else {
        index as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grow_preserves_amplitudes() {
        let mut s = QuantumState::plane_wave(8, 0.25, 1.0).unwrap();
        for (i, a) in s.raw_mut().iter_mut().enumerate() {
            *a = Complex64::new(i as f64, -(i as f64));
        }
        let before: Vec<_> = (-4..4).map(|m| s.amplitude(m)).collect();
        s.grow();
        assert_eq!(s.grid_len(), 16);
        let after: Vec<_> = (-4..4).map(|m| s.amplitude(m)).collect();
        assert_eq!(before, after);
        assert_eq!(s.amplitude(6), Complex64::new(0.0, 0.0));
        assert_eq!(s.amplitude(-7), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn tail_probability_counts_both_sides() {
        let mut s = QuantumState::plane_wave(16, 0.0, 1.0).unwrap();
        let a = s.raw_mut();
        a[0] = Complex64::new(0.0, 0.0);
        a[5] = Complex64::new(0.5f64.sqrt(), 0.0); // m = 5
        a[16 - 6] = Complex64::new(0.5f64.sqrt(), 0.0); // m = -6
        assert!((s.tail_probability(5) - 1.0).abs() < 1e-15);
        assert!((s.tail_probability(6) - 0.5).abs() < 1e-15);
        assert_eq!(s.tail_probability(9), 0.0);
        assert!((s.second_moment() - (12.5 + 18.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(QuantumState::plane_wave(12, 0.0, 1.0).is_err());
        assert!(QuantumState::plane_wave(16, 1.0, 1.0).is_err());
    }
}
