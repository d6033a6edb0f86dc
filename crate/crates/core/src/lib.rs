//! Spin-wave reservoir computing on a ferrimagnetic film.
//!
//! The crate integrates Landau–Lifshitz–Gilbert dynamics on a 2D cell grid,
//! drives two corner electrodes by modulating the uniaxial anisotropy, turns
//! the resulting `s_x` signals at output electrodes into envelope features and
//! trains a single sigmoid readout by pseudoinverse to tell sinusoidal input
//! sections from square ones.
//!
//! Module map:
//!
//! * [`geometry`]: grid, material/region maps, readout regions, spin state
//! * [`llg`]: effective field, LLG right-hand side, RK4 integrator, relaxation
//! * [`drive`]: anisotropy waveforms and random section schedules
//! * [`readout`]: envelope features, pseudoinverse training, evaluation
//! * [`layout`]: output-electrode arrangements
//! * [`experiment`]: end-to-end pipelines, sweeps and reports
//! * [`config`] and [`io`]: configuration files and on-disk formats

pub mod config;
pub mod drive;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod layout;
pub mod llg;
pub mod readout;
pub mod vec3;

pub use config::{ExperimentConfig, Profile};
pub use drive::{Label, Section, SectionSchedule};
pub use error::{ConfigError, Error, Result};
pub use geometry::{GeometryParams, GridSpec, MaterialMap, MaterialParams, Region, RegionSpec, SpinField};
pub use layout::{Arrangement, ElectrodeSet};
pub use llg::{IntegratorConfig, SpinTrace};
pub use readout::{FeatureMatrix, ReadoutModel};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
