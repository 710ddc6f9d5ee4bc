//! Numerical laboratory for variable-coefficient Alt–Phillips and
//! Alt–Caffarelli free boundary problems on planar grids.
//!
//! The crate minimizes the energies, evaluates Weiss-type monotonicity
//! quantities at free boundary points, classifies blow-ups against the
//! trivial cones, and measures the free boundary by box counting.

pub mod blowup;
pub mod coefficients;
pub mod discretization;
pub mod energy;
pub mod error;
pub mod fbgeom;
pub mod minimizer;
pub mod quad;
pub mod weiss;

pub use coefficients::{freeze, EnergySpec, Modulus, Point, Sym2, Variant};
pub use discretization::{Grid, GridFunction};
pub use energy::{energy, frozen_energy, EnergyBreakdown, Region, RegularizationParams};
pub use error::{Error, Result};
pub use minimizer::{competitor_test, harmonic_replacement, minimize, SolveConfig, SolveReport};
pub use blowup::{classify, BlowupReport, Classification, ClassifyOptions, ConeParams};
pub use fbgeom::{box_count, covering_check, extract_fb, BoxCount, FreeBoundary};
pub use weiss::{weiss_profile, weiss_value, DefectEnvelope, WeissProfile};
