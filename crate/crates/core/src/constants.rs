//! Physical constants in the crate's working units.

/// Reduced Planck constant in µeV·ps.
pub const HBAR_UEV_PS: f64 = 658.2120;

/// Boltzmann constant in meV/K.
pub const KB_MEV_PER_K: f64 = 0.0861733;

/// Ratio between a Gaussian FWHM and its standard deviation, 2√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
