use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::state::{signed_momentum, QuantumState};
use crate::error::{Error, Result};
use crate::model::ControlPoint;

/// Default half-width `M` of the momentum lattice `[-M, M]`.
pub const DEFAULT_MAX_M: usize = 1024;
/// Probability allowed in the outer 10% of the lattice at a recording time.
pub const EDGE_GUARD_THRESHOLD: f64 = 1e-8;
/// Smallest grid used when growing adaptively.
pub const INITIAL_ADAPTIVE_GRID: usize = 256;
/// The grid doubles once this much probability reaches `|m| >= n/4`.
const GROW_THRESHOLD: f64 = 1e-13;

/// Momentum-lattice sizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    /// Half-width `M` of the physical lattice.
    pub max_m: usize,
    /// Start small and double the transform grid as the state spreads.
    pub adaptive: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            max_m: DEFAULT_MAX_M,
            adaptive: true,
        }
    }
}

impl GridConfig {
    pub fn fixed(max_m: usize) -> Self {
        Self {
            max_m,
            adaptive: false,
        }
    }

    /// Transform size: next power of two ≥ 2(2M+1).
    pub fn transform_len(&self) -> usize {
        (2 * (2 * self.max_m + 1)).next_power_of_two()
    }

    pub fn initial_len(&self) -> usize {
        if self.adaptive {
            INITIAL_ADAPTIVE_GRID.min(self.transform_len())
        } else {
            self.transform_len()
        }
    }

    /// First |m| counted by the edge guard (outermost 10% of the lattice).
    pub fn guard_cutoff(&self) -> i64 {
        let m = self.max_m as i64;
        m - (2 * m + 1) / 20
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_m < 8 {
            return Err(Error::config(format!(
                "grid half-width {} too small (min 8)",
                self.max_m
            )));
        }
        Ok(())
    }
}

/// FFT plans for every grid size a run may visit. Read-only, shared by workers.
#[derive(Clone)]
pub struct PlanSet {
    plans: Vec<(usize, Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl PlanSet {
    pub fn new(grid: &GridConfig) -> Self {
        let mut planner = FftPlanner::new();
        let mut plans = Vec::new();
        let mut n = grid.initial_len();
        while n <= grid.transform_len() {
            plans.push((n, planner.plan_fft_forward(n), planner.plan_fft_inverse(n)));
            n *= 2;
        }
        Self { plans }
    }

    fn get(&self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        let (_, f, i) = self
            .plans
            .iter()
            .find(|(len, _, _)| *len == n)
            .expect("plan set covers every grid size of its config");
        (f.clone(), i.clone())
    }
}

/// Momentum transfer beyond which one kick of strength `a` leaves less than
/// ~1e-16 probability (`J_m(a)` decays like an Airy tail past `m = a`).
fn kick_reach(a: f64) -> f64 {
    let a = a.abs();
    a + 7.5 * (a / 2.0).cbrt() + 10.0
}

/// One-period Floquet propagator on a fixed quasimomentum fiber.
///
/// A period is a kick `exp(-i (K_n/k̄) cos x)` applied on the position grid
/// followed by free flight `exp(-i k̄ (m+β)²/2)` on the momentum lattice.
pub struct Evolver {
    grid: GridConfig,
    plans: PlanSet,
    context: ControlPoint,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Free-flight phases with the 1/n transform normalization folded in.
    free_phase: Vec<Complex64>,
    /// cos(2πj/n) for j in 0..=n/4
    cos_quarter: Vec<f64>,
    kick_quarter: Vec<Complex64>,
    scratch: Vec<Complex64>,
    beta: f64,
    kbar: f64,
}

impl Evolver {
    pub fn new(
        grid: GridConfig,
        plans: PlanSet,
        state: &QuantumState,
        context: ControlPoint,
    ) -> Self {
        let n = state.grid_len();
        let (forward, inverse) = plans.get(n);
        let mut ev = Self {
            grid,
            plans,
            context,
            n,
            forward,
            inverse,
            free_phase: Vec::new(),
            cos_quarter: Vec::new(),
            kick_quarter: Vec::new(),
            scratch: Vec::new(),
            beta: state.beta(),
            kbar: state.kbar(),
        };
        ev.rebuild_tables();
        ev
    }

    fn rebuild_tables(&mut self) {
        let n = self.n;
        let norm = 1.0 / n as f64;
        let (beta, kbar) = (self.beta, self.kbar);
        self.free_phase = (0..n)
            .map(|i| {
                let p = signed_momentum(i, n) as f64 + beta;
                Complex64::from_polar(norm, -0.5 * kbar * p * p)
            })
            .collect();
        self.cos_quarter = (0..=n / 4)
            .map(|j| (2.0 * PI * j as f64 / n as f64).cos())
            .collect();
        self.kick_quarter = vec![Complex64::new(0.0, 0.0); n / 4 + 1];
        let scratch_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        self.scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
    }

    pub fn grid_len(&self) -> usize {
        self.n
    }

    fn ensure_room(&mut self, state: &mut QuantumState, a: f64) {
        if !self.grid.adaptive {
            return;
        }
        let reach = kick_reach(a);
        while self.n < self.grid.transform_len()
            && (((self.n / 4) as f64) < reach
                || state.tail_probability((self.n / 4) as i64) > GROW_THRESHOLD)
        {
            state.grow();
            self.n *= 2;
            let (f, i) = self.plans.get(self.n);
            self.forward = f;
            self.inverse = i;
            self.rebuild_tables();
        }
    }

    /// Advance `state` by one kick period with kick strength `k_n`.
    pub fn step(&mut self, state: &mut QuantumState, k_n: f64) {
        debug_assert_eq!(state.beta(), self.beta);
        self.ensure_room(state, k_n / self.kbar);
        let n = self.n;
        let amps = state.raw_mut();

        // to position space: ψ(x_j) = Σ_m a_m e^{i m x_j}
        self.inverse.process_with_scratch(amps, &mut self.scratch);
        self.apply_kick(amps, k_n / self.kbar);
        self.forward.process_with_scratch(amps, &mut self.scratch);
        for (a, f) in amps.iter_mut().zip(&self.free_phase) {
            *a *= *f;
        }
        debug_assert_eq!(amps.len(), n);
    }

    /// Multiply by exp(-i a cos x_j) using cos x_{n/2-j} = -cos x_j and
    /// cos x_{n-j} = cos x_j, so only a quarter of the phases are evaluated.
    fn apply_kick(&mut self, psi: &mut [Complex64], a: f64) {
        if a == 0.0 {
            return;
        }
        let n = self.n;
        let q = n / 4;
        for (e, c) in self.kick_quarter.iter_mut().zip(&self.cos_quarter) {
            let (s, co) = (a * c).sin_cos();
            *e = Complex64::new(co, -s);
        }
        let e = &self.kick_quarter;
        // j in [0, n/4]
        for j in 0..=q {
            psi[j] *= e[j];
        }
        // j in (n/4, n/2]: phase is conj(e[n/2 - j])
        for j in (q + 1)..=(n / 2) {
            psi[j] *= e[n / 2 - j].conj();
        }
        // j in (n/2, 3n/4): cos x_j = cos x_{n-j} with n-j in (n/4, n/2)
        for j in (n / 2 + 1)..(n - q) {
            psi[j] *= e[j - n / 2].conj();
        }
        // j in [3n/4, n)
        for j in (n - q)..n {
            psi[j] *= e[n - j];
        }
    }

    /// Edge guard: probability in the outer 10% of `[-M, M]`.
    pub fn check_edges(&self, state: &QuantumState, kick: usize) -> Result<()> {
        let p = state.tail_probability(self.grid.guard_cutoff());
        if p > EDGE_GUARD_THRESHOLD {
            return Err(Error::GridOverflow {
                k: self.context.k,
                eps: self.context.eps,
                kick,
                edge_probability: p,
                threshold: EDGE_GUARD_THRESHOLD,
            });
        }
        Ok(())
    }
}

/// Single period applied to a copy of `state`, on its own grid.
///
/// Convenience entry point; loops should hold an [`Evolver`] instead.
pub fn step(state: &QuantumState, k_n: f64) -> Result<QuantumState> {
    let n = state.grid_len();
    let grid = GridConfig {
        max_m: (n - 2) / 4,
        adaptive: false,
    };
    // the grid formula may round up past n for tiny grids; build plans for n directly
    let plans = PlanSet {
        plans: {
            let mut planner = FftPlanner::new();
            vec![(n, planner.plan_fft_forward(n), planner.plan_fft_inverse(n))]
        },
    };
    let mut out = state.clone();
    let mut ev = Evolver::new(grid, plans, state, ControlPoint::new(k_n, f64::NAN));
    ev.step(&mut out, k_n);
    ev.check_edges(&out, 1)?;
    Ok(out)
}
