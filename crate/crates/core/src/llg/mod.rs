//! Effective field and Landau–Lifshitz–Gilbert dynamics.
//!
//! The effective field is the sum of exchange (5-point Laplacian with free
//! boundaries), uniaxial anisotropy along z, the static external field and a
//! local thin-film demagnetizing field `-M_S s_z ẑ`. The equation of motion is
//!
//! ```text
//! ds/dt = -γμ₀/(1+α²) · [ s × H + α s × (s × H) ]
//! ```
//!
//! integrated with fixed-step RK4 sub-steps inside each macro step `t0`.

mod integrator;

pub(crate) use integrator::probe_columns;
pub use integrator::{
    relax, run, run_trace, step_macro, AnisotropyDrive, Integrator, NoDrive, ProbeSink, RelaxOutcome,
    SnapshotFrame, SpinTrace,
};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{MaterialMap, SpinField};
use crate::vec3::{cross, Vec3};
use crate::MU0;

/// Default gyromagnetic ratio, rad·s⁻¹·T⁻¹.
pub const GAMMA_DEFAULT: f64 = 1.7595e11;

/// Which contributions enter the effective field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldTerms {
    pub exchange: bool,
    pub anisotropy: bool,
    pub zeeman: bool,
    pub demag: bool,
}

impl Default for FieldTerms {
    fn default() -> Self {
        FieldTerms { exchange: true, anisotropy: true, zeeman: true, demag: true }
    }
}

/// Per-cell field evaluation with the material constants folded in.
/// Disabled terms get zero coefficients so the kernel stays branch-free.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FieldKernel {
    /// 2A / (μ₀ M_S Δx²)
    cex: f64,
    /// 2 / (μ₀ M_S)
    ck: f64,
    ms: f64,
    hx: f64,
    hz: f64,
}

impl FieldKernel {
    pub(crate) fn new(map: &MaterialMap, terms: FieldTerms) -> Self {
        let p = &map.params;
        let dx = map.grid.cell_size;
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        FieldKernel {
            cex: on(terms.exchange) * 2.0 * p.a_ex / (MU0 * p.ms * dx * dx),
            ck: on(terms.anisotropy) * 2.0 / (MU0 * p.ms),
            ms: on(terms.demag) * p.ms,
            hx: on(terms.zeeman) * p.h_bias_x,
            hz: on(terms.zeeman) * p.h_ext,
        }
    }

    #[inline(always)]
    pub(crate) fn field(&self, s: Vec3, lap: Vec3, ku: f64) -> Vec3 {
        [
            self.hx + self.cex * lap[0],
            self.cex * lap[1],
            self.hz + self.cex * lap[2] + (self.ck * ku - self.ms) * s[2],
        ]
    }

    /// Calls `f(ix, s, h)` for every cell of one row. `up` and `down` are the
    /// neighbouring rows, already mirrored at the film edges.
    #[inline(always)]
    pub(crate) fn row<F: FnMut(usize, Vec3, Vec3)>(
        &self,
        up: &[Vec3],
        row: &[Vec3],
        down: &[Vec3],
        ku: &[f64],
        mut f: F,
    ) {
        let nx = row.len();
        for ix in 0..nx {
            let c = row[ix];
            let l = row[ix.saturating_sub(1)];
            let r = row[(ix + 1).min(nx - 1)];
            f(ix, c, self.stencil(l, c, r, up[ix], down[ix], ku[ix]));
        }
    }

    #[inline(always)]
    fn stencil(&self, l: Vec3, c: Vec3, r: Vec3, u: Vec3, d: Vec3, ku: f64) -> Vec3 {
        let lap = [
            l[0] + r[0] + u[0] + d[0] - 4.0 * c[0],
            l[1] + r[1] + u[1] + d[1] - 4.0 * c[1],
            l[2] + r[2] + u[2] + d[2] - 4.0 * c[2],
        ];
        self.field(c, lap, ku)
    }
}

/// Rows above and below `iy` with free (mirror) boundaries.
#[inline(always)]
pub(crate) fn neighbour_rows(ny: usize, iy: usize) -> (usize, usize) {
    (iy.saturating_sub(1), (iy + 1).min(ny - 1))
}

/// Effective field (A/m) at every cell for anisotropy values `ku_now` (J/m³).
pub fn effective_field(spins: &SpinField, map: &MaterialMap, ku_now: &[f64], terms: FieldTerms) -> Vec<Vec3> {
    let grid = map.grid;
    assert_eq!(ku_now.len(), grid.len(), "one anisotropy value per cell");
    let kernel = FieldKernel::new(map, terms);
    let nx = grid.nx;
    let mut out = vec![[0.0; 3]; grid.len()];
    for iy in 0..grid.ny {
        let (u, d) = neighbour_rows(grid.ny, iy);
        let row = &spins.s[iy * nx..(iy + 1) * nx];
        kernel.row(
            &spins.s[u * nx..(u + 1) * nx],
            row,
            &spins.s[d * nx..(d + 1) * nx],
            &ku_now[iy * nx..(iy + 1) * nx],
            |ix, _, h| out[iy * nx + ix] = h,
        );
    }
    out
}

/// LLG torque for one cell. `gp = -γμ₀/(1+α²)`, `ga = gp·α`.
#[inline(always)]
pub(crate) fn torque(s: Vec3, h: Vec3, gp: f64, ga: f64) -> Vec3 {
    let c = cross(s, h);
    let d = cross(s, c);
    [gp * c[0] + ga * d[0], gp * c[1] + ga * d[1], gp * c[2] + ga * d[2]]
}

pub(crate) fn torque_prefactors(alpha: f64, gamma: f64) -> (f64, f64) {
    let gp = -gamma * MU0 / (1.0 + alpha * alpha);
    (gp, gp * alpha)
}

/// `ds/dt` (1/s) at every cell for a precomputed field.
pub fn llg_rhs(spins: &SpinField, field: &[Vec3], alpha: &[f64], gamma: f64) -> Vec<Vec3> {
    spins
        .s
        .iter()
        .zip(field)
        .zip(alpha)
        .map(|((&s, &h), &a)| {
            let (gp, ga) = torque_prefactors(a, gamma);
            torque(s, h, gp, ga)
        })
        .collect()
}

/// Discrete magnetic energy of the film, J.
///
/// Exchange is summed once per nearest-neighbour edge, so that minus its
/// gradient divided by `μ₀ M_S V` reproduces [`effective_field`] exactly.
pub fn energy(spins: &SpinField, map: &MaterialMap, ku_now: &[f64], terms: FieldTerms) -> f64 {
    let g = map.grid;
    let p = &map.params;
    let volume = g.cell_size * g.cell_size * g.thickness;
    let mut exch = 0.0;
    let mut local = 0.0;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let i = g.index(ix, iy);
            let s = spins.s[i];
            if terms.exchange {
                if ix + 1 < g.nx {
                    exch += dist2(s, spins.s[i + 1]);
                }
                if iy + 1 < g.ny {
                    exch += dist2(s, spins.s[i + g.nx]);
                }
            }
            if terms.anisotropy {
                local -= ku_now[i] * s[2] * s[2];
            }
            if terms.zeeman {
                local -= MU0 * p.ms * (p.h_bias_x * s[0] + p.h_ext * s[2]);
            }
            if terms.demag {
                local += 0.5 * MU0 * p.ms * p.ms * s[2] * s[2];
            }
        }
    }
    volume * (p.a_ex / (g.cell_size * g.cell_size) * exch + local)
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Macro step `t0`, s. Probes are sampled once per macro step.
    pub macro_step: f64,
    pub substeps: usize,
    /// Gyromagnetic ratio, rad·s⁻¹·T⁻¹.
    pub gamma: f64,
    pub renormalize: bool,
    /// Worker threads for the field sweep; 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { macro_step: 1e-11, substeps: 25, gamma: GAMMA_DEFAULT, renormalize: true, threads: 0 }
    }
}

impl IntegratorConfig {
    /// Internal RK4 step, s.
    pub fn dt(&self) -> f64 {
        self.macro_step / self.substeps as f64
    }

    /// Upper bound on the linear precession frequency of any grid mode, Hz.
    ///
    /// The stiffest exchange mode is the checkerboard with `k = (π/Δx, π/Δx)`,
    /// where the discrete Laplacian has eigenvalue `-8/Δx²`.
    pub fn max_mode_frequency(&self, map: &MaterialMap) -> f64 {
        let p = &map.params;
        let dx = map.grid.cell_size;
        let h_ex = 2.0 * p.a_ex / (MU0 * p.ms) * 8.0 / (dx * dx);
        let h_k = 2.0 * p.ku_high.max(p.ku_low) / (MU0 * p.ms);
        let h = h_ex + h_k + p.h_ext.abs() + p.h_bias_x.abs();
        self.gamma * MU0 * h / (2.0 * std::f64::consts::PI)
    }

    /// Largest internal step for which classical RK4 stays stable on the
    /// stiffest mode: `ω dt ≤ 2√2`.
    pub fn max_stable_dt(&self, map: &MaterialMap) -> f64 {
        let f = self.max_mode_frequency(map);
        2.0 * std::f64::consts::SQRT_2 / (2.0 * std::f64::consts::PI * f)
    }

    pub fn validate(&self, map: &MaterialMap) -> Result<(), ConfigError> {
        if !(self.macro_step > 0.0 && self.macro_step.is_finite()) {
            return Err(ConfigError::Invalid { key: "macro_step_ns".into(), reason: "must be positive".into() });
        }
        if self.substeps == 0 {
            return Err(ConfigError::Invalid { key: "substeps".into(), reason: "must be at least 1".into() });
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ConfigError::Invalid { key: "gamma_rad_per_s_t".into(), reason: "must be positive".into() });
        }
        let limit = self.max_stable_dt(map);
        if self.dt() > limit {
            return Err(ConfigError::Stability { dt: self.dt(), limit, f_max: self.max_mode_frequency(map) });
        }
        Ok(())
    }
}
