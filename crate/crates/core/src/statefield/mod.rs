//! Discretized single-particle phase-space densities and their mean-field
//! functionals, moment fields, interaction-field convolutions, and the
//! kernel-smoothing mesostate surrogate.

pub mod density;
pub mod fields;
pub mod functionals;
pub mod grid;
pub mod mesostate;

pub use density::{gaussian_phase_density, GridDensity, NORMALIZATION_TOL};
pub use fields::{self_cell_distance, Convolver, DIRECT_CONV_MAX_CELLS};
pub use functionals::{
    angmom_functional, casimir, center_functional, energy_functional, energy_with_convolver,
    entropy, kinetic_energy, macrostate, momentum_functional, potential_energy_of_marginal,
    MomentFields, U_MASK_CELL_MASS,
};
pub use grid::{AxisSpec, PhaseGrid};
pub use mesostate::{bin_empirical, mesostate, MAX_LOST_MASS};
