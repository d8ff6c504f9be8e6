//! Independent reference models: the classical standard map and synthetic
//! scaling data with known ξ and F.

mod classical;
mod synth;

pub use classical::{
    classical_diffusion, jacobian_determinant, standard_map_step, ClassicalEnsemble,
    ClassicalSeries, PhaseMode,
};
pub use synth::{linear_grid, synth_scaling_data, FSpec, SynthDesign, XiSpec};
