use log::{debug, warn};
use rayon::prelude::*;

use super::{neighbour_rows, torque, torque_prefactors, FieldKernel, FieldTerms, IntegratorConfig};
use crate::drive::SectionSchedule;
use crate::error::{Error, Result};
use crate::geometry::{MaterialMap, SpinField};
use crate::vec3::{norm, Vec3};

/// Time-dependent anisotropy applied to both input electrodes.
pub trait AnisotropyDrive: Sync {
    /// K_U (J/m³) under the input electrodes at time `t`, or `None` to leave
    /// them at the rest value.
    fn electrode_ku(&self, t: f64) -> Result<Option<f64>>;
}

/// Leaves every cell at its rest anisotropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDrive;

impl AnisotropyDrive for NoDrive {
    fn electrode_ku(&self, _t: f64) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<F: Fn(f64) -> Option<f64> + Sync> AnisotropyDrive for F {
    fn electrode_ku(&self, t: f64) -> Result<Option<f64>> {
        Ok(self(t))
    }
}

/// Receives `s_x` at the probe cells after every macro step.
pub trait ProbeSink {
    fn record(&mut self, step: usize, values: &[f64]);
}

/// Full-field `s_x` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFrame {
    pub nx: usize,
    pub ny: usize,
    /// Macro-step index; frame `n` is the state at time `n·t0`.
    pub frame_index: u32,
    /// Row-major, y outer.
    pub sx: Vec<f32>,
}

impl SnapshotFrame {
    pub fn capture(state: &SpinField, frame_index: u32) -> Self {
        SnapshotFrame {
            nx: state.grid.nx,
            ny: state.grid.ny,
            frame_index,
            sx: state.sx().map(|v| v as f32).collect(),
        }
    }
}

/// `s_x` at a set of probe cells, one sample per probe per macro step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinTrace {
    pub probes: Vec<usize>,
    /// Step-major: `samples[n * probes.len() + p]`.
    pub samples: Vec<f64>,
    /// Macro step duration, s.
    pub t0: f64,
}

impl SpinTrace {
    pub fn new(probes: Vec<usize>, t0: f64) -> Self {
        SpinTrace { probes, samples: Vec::new(), t0 }
    }

    pub fn n_probes(&self) -> usize {
        self.probes.len()
    }

    pub fn steps(&self) -> usize {
        if self.probes.is_empty() {
            0
        } else {
            self.samples.len() / self.probes.len()
        }
    }

    pub fn sample(&self, step: usize, probe: usize) -> f64 {
        self.samples[step * self.probes.len() + probe]
    }

    pub fn series(&self, probe: usize) -> Vec<f64> {
        (0..self.steps()).map(|n| self.sample(n, probe)).collect()
    }

    /// Trace restricted to `cells`, in that order. Every cell must be a probe.
    pub fn select(&self, cells: &[usize]) -> Result<SpinTrace> {
        let cols = probe_columns(&self.probes, cells)?;
        let steps = self.steps();
        let mut samples = Vec::with_capacity(steps * cols.len());
        for n in 0..steps {
            let row = &self.samples[n * self.probes.len()..(n + 1) * self.probes.len()];
            samples.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(SpinTrace { probes: cells.to_vec(), samples, t0: self.t0 })
    }
}

impl ProbeSink for SpinTrace {
    fn record(&mut self, _step: usize, values: &[f64]) {
        self.samples.extend_from_slice(values);
    }
}

/// Column of each requested cell among `probes`.
pub(crate) fn probe_columns(probes: &[usize], cells: &[usize]) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<usize, usize> = probes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    cells
        .iter()
        .map(|c| index.get(c).copied().ok_or_else(|| Error::Domain(format!("cell {c} was not recorded"))))
        .collect()
}

/// Structure-of-arrays copy of a vector field, one array per component.
#[derive(Debug, Clone)]
struct Soa {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Soa {
    fn zeros(n: usize) -> Self {
        Soa { x: vec![0.0; n], y: vec![0.0; n], z: vec![0.0; n] }
    }

    fn load(&mut self, v: &[Vec3]) {
        for (i, s) in v.iter().enumerate() {
            self.x[i] = s[0];
            self.y[i] = s[1];
            self.z[i] = s[2];
        }
    }

    fn store(&self, v: &mut [Vec3]) {
        for (i, s) in v.iter_mut().enumerate() {
            *s = [self.x[i], self.y[i], self.z[i]];
        }
    }
}

/// Mutable rows `[r0, r1)` of three component arrays.
struct BandMut<'a> {
    r0: usize,
    x: &'a mut [f64],
    y: &'a mut [f64],
    z: &'a mut [f64],
}

fn bands<'a>(f: &'a mut Soa, rows_per_band: usize, nx: usize) -> Vec<BandMut<'a>> {
    let len = rows_per_band * nx;
    f.x.chunks_mut(len)
        .zip(f.y.chunks_mut(len))
        .zip(f.z.chunks_mut(len))
        .enumerate()
        .map(|(b, ((x, y), z))| BandMut { r0: b * rows_per_band, x, y, z })
        .collect()
}

/// RK4 stage variants, `k` being the stage slope.
#[derive(Clone, Copy, PartialEq)]
enum Stage {
    /// `acc = k`, `next = s + c·k`
    First,
    /// `acc += 2k`, `next = s + c·k`
    Middle,
    /// `s = s + c·(acc + k)`
    Last,
}

/// Read-only inputs shared by every row of a stage.
struct StageInputs<'a> {
    kernel: FieldKernel,
    nx: usize,
    ny: usize,
    src: &'a Soa,
    base: &'a Soa,
    gp: &'a [f64],
    ga: &'a [f64],
    ku: &'a [f64],
    c: f64,
    renormalize: bool,
}

impl StageInputs<'_> {
    /// Slope at one cell given its four neighbours' flat indices.
    #[inline(always)]
    fn slope(&self, i: usize, l: usize, r: usize, u: usize, d: usize) -> (Vec3, Vec3) {
        let s = self.src;
        let c = [s.x[i], s.y[i], s.z[i]];
        let lap = [
            s.x[l] + s.x[r] + s.x[u] + s.x[d] - 4.0 * c[0],
            s.y[l] + s.y[r] + s.y[u] + s.y[d] - 4.0 * c[1],
            s.z[l] + s.z[r] + s.z[u] + s.z[d] - 4.0 * c[2],
        ];
        let h = self.kernel.field(c, lap, self.ku[i]);
        (c, torque(c, h, self.gp[i], self.ga[i]))
    }

    /// Processes one row. `out` holds the destination row, `acc` the
    /// accumulator row.
    #[inline(always)]
    fn row<const MODE: u8>(&self, iy: usize, out: [&mut [f64]; 3], acc: [&mut [f64]; 3]) {
        let nx = self.nx;
        let (u, d) = neighbour_rows(self.ny, iy);
        let off = iy * nx;
        let [ox, oy, oz] = out;
        let [ax, ay, az] = acc;
        let (ox, oy, oz) = (&mut ox[..nx], &mut oy[..nx], &mut oz[..nx]);
        let (ax, ay, az) = (&mut ax[..nx], &mut ay[..nx], &mut az[..nx]);
        let c = self.c;
        let mut apply = |ix: usize, k: Vec3| {
            let i = off + ix;
            match MODE {
                0 | 1 => {
                    if MODE == 0 {
                        ax[ix] = k[0];
                        ay[ix] = k[1];
                        az[ix] = k[2];
                    } else {
                        ax[ix] += 2.0 * k[0];
                        ay[ix] += 2.0 * k[1];
                        az[ix] += 2.0 * k[2];
                    }
                    ox[ix] = self.base.x[i] + c * k[0];
                    oy[ix] = self.base.y[i] + c * k[1];
                    oz[ix] = self.base.z[i] + c * k[2];
                }
                _ => {
                    let v = [
                        ox[ix] + c * (ax[ix] + k[0]),
                        oy[ix] + c * (ay[ix] + k[1]),
                        oz[ix] + c * (az[ix] + k[2]),
                    ];
                    let n = if self.renormalize { 1.0 / norm(v) } else { 1.0 };
                    ox[ix] = v[0] * n;
                    oy[ix] = v[1] * n;
                    oz[ix] = v[2] * n;
                }
            }
        };
        let (uo, do_) = (u * nx, d * nx);
        // film edges with mirrored neighbours
        for ix in [0, nx - 1] {
            let l = off + ix.saturating_sub(1);
            let r = off + (ix + 1).min(nx - 1);
            let (_, k) = self.slope(off + ix, l, r, uo + ix, do_ + ix);
            apply(ix, k);
            if nx == 1 {
                return;
            }
        }
        // interior: every operand sliced to the same length so the loop has
        // no bounds checks
        let n = nx - 2;
        let s = self.src;
        let (cx, cy, cz) = (&s.x[off + 1..][..n], &s.y[off + 1..][..n], &s.z[off + 1..][..n]);
        let (lx, ly, lz) = (&s.x[off..][..n], &s.y[off..][..n], &s.z[off..][..n]);
        let (rx, ry, rz) = (&s.x[off + 2..][..n], &s.y[off + 2..][..n], &s.z[off + 2..][..n]);
        let (ux, uy, uz) = (&s.x[uo + 1..][..n], &s.y[uo + 1..][..n], &s.z[uo + 1..][..n]);
        let (dx, dy, dz) = (&s.x[do_ + 1..][..n], &s.y[do_ + 1..][..n], &s.z[do_ + 1..][..n]);
        let ku = &self.ku[off + 1..][..n];
        let gp = &self.gp[off + 1..][..n];
        let ga = &self.ga[off + 1..][..n];
        let (bx, by, bz) = (&self.base.x[off + 1..][..n], &self.base.y[off + 1..][..n], &self.base.z[off + 1..][..n]);
        let k = self.kernel;
        drop(apply);
        let (ox, oy, oz) = (&mut ox[1..][..n], &mut oy[1..][..n], &mut oz[1..][..n]);
        let (ax, ay, az) = (&mut ax[1..][..n], &mut ay[1..][..n], &mut az[1..][..n]);
        for i in 0..n {
            let c = [cx[i], cy[i], cz[i]];
            let lap = [
                lx[i] + rx[i] + ux[i] + dx[i] - 4.0 * c[0],
                ly[i] + ry[i] + uy[i] + dy[i] - 4.0 * c[1],
                lz[i] + rz[i] + uz[i] + dz[i] - 4.0 * c[2],
            ];
            let h = k.field(c, lap, ku[i]);
            let t = torque(c, h, gp[i], ga[i]);
            match MODE {
                0 | 1 => {
                    if MODE == 0 {
                        ax[i] = t[0];
                        ay[i] = t[1];
                        az[i] = t[2];
                    } else {
                        ax[i] += 2.0 * t[0];
                        ay[i] += 2.0 * t[1];
                        az[i] += 2.0 * t[2];
                    }
                    ox[i] = bx[i] + self.c * t[0];
                    oy[i] = by[i] + self.c * t[1];
                    oz[i] = bz[i] + self.c * t[2];
                }
                _ => {
                    let v = [
                        ox[i] + self.c * (ax[i] + t[0]),
                        oy[i] + self.c * (ay[i] + t[1]),
                        oz[i] + self.c * (az[i] + t[2]),
                    ];
                    let inv = if self.renormalize { 1.0 / (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() } else { 1.0 };
                    ox[i] = v[0] * inv;
                    oy[i] = v[1] * inv;
                    oz[i] = v[2] * inv;
                }
            }
        }
    }
}

impl StageInputs<'_> {
    /// [`StageInputs::row`] through the widest vector unit available. No
    /// variant enables FMA, so all of them round identically.
    fn row_dispatch(&self, mode: u8, iy: usize, out: [&mut [f64]; 3], acc: [&mut [f64]; 3]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.row_avx2(mode, iy, out, acc) };
            return;
        }
        self.row_generic(mode, iy, out, acc);
    }

    fn row_generic(&self, mode: u8, iy: usize, out: [&mut [f64]; 3], acc: [&mut [f64]; 3]) {
        match mode {
            0 => self.row::<0>(iy, out, acc),
            1 => self.row::<1>(iy, out, acc),
            _ => self.row::<2>(iy, out, acc),
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn row_avx2(&self, mode: u8, iy: usize, out: [&mut [f64]; 3], acc: [&mut [f64]; 3]) {
        match mode {
            0 => self.row::<0>(iy, out, acc),
            1 => self.row::<1>(iy, out, acc),
            _ => self.row::<2>(iy, out, acc),
        }
    }
}

fn run_stage(inputs: &StageInputs<'_>, stage: Stage, out: &mut Soa, acc: &mut Soa) {
    let nx = inputs.nx;
    let threads = rayon::current_num_threads();
    let rows_per_band = if threads <= 1 { inputs.ny } else { (4096 / nx).max(1) };
    let work: Vec<(BandMut<'_>, BandMut<'_>)> =
        bands(out, rows_per_band, nx).into_iter().zip(bands(acc, rows_per_band, nx)).collect();
    let process = |(o, a): (BandMut<'_>, BandMut<'_>)| {
        let rows = o.x.len() / nx;
        for j in 0..rows {
            let rs = j * nx..(j + 1) * nx;
            let out = [&mut o.x[rs.clone()], &mut o.y[rs.clone()], &mut o.z[rs.clone()]];
            let acc = [&mut a.x[rs.clone()], &mut a.y[rs.clone()], &mut a.z[rs]];
            let mode = match stage {
                Stage::First => 0,
                Stage::Middle => 1,
                Stage::Last => 2,
            };
            inputs.row_dispatch(mode, o.r0 + j, out, acc);
        }
    };
    if work.len() == 1 {
        work.into_iter().for_each(process);
    } else {
        work.into_par_iter().for_each(process);
    }
}

/// Writes the drive value at `t` into the electrode cells of `ku`.
fn fill_ku(map: &MaterialMap, ku: &mut [f64], drive: &dyn AnisotropyDrive, t: f64) -> Result<()> {
    let value = drive.electrode_ku(t)?;
    for cells in &map.electrodes {
        for &i in cells {
            ku[i] = value.unwrap_or(map.ku_base[i]);
        }
    }
    Ok(())
}

/// RK4 stepper owning its work buffers.
pub struct Integrator<'a> {
    map: &'a MaterialMap,
    cfg: IntegratorConfig,
    kernel: FieldKernel,
    /// `-γμ₀/(1+α²)` and `-γμ₀α/(1+α²)` per cell.
    gp: Vec<f64>,
    ga: Vec<f64>,
    /// Anisotropy at the end of the current substep; the fused path also
    /// keeps its start and midpoint values.
    ku_now: Vec<f64>,
    ku_start: Vec<f64>,
    ku_half: Vec<f64>,
    state: Soa,
    stage_a: Soa,
    stage_b: Soa,
    acc: Soa,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Integrator<'a> {
    pub fn new(map: &'a MaterialMap, cfg: IntegratorConfig) -> Result<Self> {
        Self::with_damping(map, cfg, &map.alpha)
    }

    /// Integrator with a damping map other than the material's.
    pub fn with_damping(map: &'a MaterialMap, cfg: IntegratorConfig, alpha: &[f64]) -> Result<Self> {
        cfg.validate(map)?;
        if alpha.len() != map.grid.len() {
            return Err(Error::Dimension { expected: map.grid.len(), got: alpha.len() });
        }
        let n = map.grid.len();
        let pool = if cfg.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::Domain(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let (gp, ga) = alpha.iter().map(|&a| torque_prefactors(a, cfg.gamma)).unzip();
        Ok(Integrator {
            map,
            cfg,
            kernel: FieldKernel::new(map, FieldTerms::default()),
            gp,
            ga,
            ku_now: map.ku_base.clone(),
            ku_start: map.ku_base.clone(),
            ku_half: map.ku_base.clone(),
            state: Soa::zeros(n),
            stage_a: Soa::zeros(n),
            stage_b: Soa::zeros(n),
            acc: Soa::zeros(n),
            pool,
        })
    }

    /// Restricts the field to some terms (all are on by default).
    pub fn with_terms(mut self, terms: FieldTerms) -> Self {
        self.kernel = FieldKernel::new(self.map, terms);
        self
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    fn set_drive(&mut self, drive: &dyn AnisotropyDrive, t: f64) -> Result<()> {
        fill_ku(self.map, &mut self.ku_now, drive, t)
    }

    /// Advances `state` by one macro step starting at time `t`.
    pub fn step_macro(&mut self, state: &mut SpinField, t: f64, drive: &dyn AnisotropyDrive, step: usize) -> Result<()> {
        if state.s.len() != self.map.grid.len() {
            return Err(Error::Dimension { expected: self.map.grid.len(), got: state.s.len() });
        }
        self.state.load(&state.s);
        let r = match self.pool.take() {
            Some(pool) => {
                let r = pool.install(|| self.step_macro_inner(t, drive));
                self.pool = Some(pool);
                r
            }
            None => self.step_macro_inner(t, drive),
        };
        self.state.store(&mut state.s);
        r?;
        if !state.is_finite() {
            return Err(Error::Diverged { step });
        }
        Ok(())
    }

    fn step_macro_inner(&mut self, t: f64, drive: &dyn AnisotropyDrive) -> Result<()> {
        let m = self.cfg.substeps;
        let t0 = self.cfg.macro_step;
        let dt = self.cfg.dt();
        let fused = rayon::current_num_threads() <= 1;
        for k in 0..m {
            // stage times as fractions of the macro step keep the final stage
            // exactly on the next macro boundary
            let at = |c: f64| t + (k as f64 + c) / m as f64 * t0;
            if fused {
                fill_ku(self.map, &mut self.ku_start, drive, at(0.0))?;
                fill_ku(self.map, &mut self.ku_half, drive, at(0.5))?;
                fill_ku(self.map, &mut self.ku_now, drive, at(1.0))?;
                self.fused_substep(dt);
                continue;
            }
            self.set_drive(drive, at(0.0))?;
            self.stage(Stage::First, 0.5 * dt, 0);
            self.set_drive(drive, at(0.5))?;
            self.stage(Stage::Middle, 0.5 * dt, 1);
            self.stage(Stage::Middle, dt, 2);
            self.set_drive(drive, at(1.0))?;
            self.stage(Stage::Last, dt / 6.0, 3);
        }
        Ok(())
    }

    /// One RK4 substep as a wavefront over rows: stage `j` trails stage
    /// `j - 1` by one row, so each stage only reads rows its predecessor has
    /// finished and its successor has not yet overwritten. Per-cell arithmetic
    /// is that of [`Integrator::stage`]; only the traversal order differs.
    fn fused_substep(&mut self, dt: f64) {
        let ny = self.map.grid.ny;
        for r in 0..ny + 3 {
            for index in 0..4 {
                if r >= index && r - index < ny {
                    self.fused_row(index, r - index, dt);
                }
            }
        }
    }

    fn fused_row(&mut self, index: usize, iy: usize, dt: f64) {
        let Integrator { map, cfg, kernel, gp, ga, ku_now, ku_start, ku_half, state, stage_a, stage_b, acc, .. } = self;
        let nx = map.grid.nx;
        let rs = iy * nx..(iy + 1) * nx;
        let (c, mode, ku, src, base, out): (f64, u8, &[f64], &Soa, &Soa, &mut Soa) = match index {
            0 => (0.5 * dt, 0, ku_start, state, state, stage_a),
            1 => (0.5 * dt, 1, ku_half, stage_a, state, stage_b),
            2 => (dt, 1, ku_half, stage_b, state, stage_a),
            _ => (dt / 6.0, 2, ku_now, stage_a, stage_a, state),
        };
        let inputs = StageInputs {
            kernel: *kernel,
            nx,
            ny: map.grid.ny,
            src,
            base,
            gp,
            ga,
            ku,
            c,
            renormalize: cfg.renormalize,
        };
        let out = [&mut out.x[rs.clone()], &mut out.y[rs.clone()], &mut out.z[rs.clone()]];
        let acc = [&mut acc.x[rs.clone()], &mut acc.y[rs.clone()], &mut acc.z[rs]];
        inputs.row_dispatch(mode, iy, out, acc);
    }

    /// One RK4 stage over the whole grid. Stage inputs alternate between the
    /// state itself and the two scratch buffers.
    fn stage(&mut self, stage: Stage, c: f64, index: usize) {
        let Integrator { map, cfg, kernel, gp, ga, ku_now, state, stage_a, stage_b, acc, .. } = self;
        let make = |src, base| StageInputs {
            kernel: *kernel,
            nx: map.grid.nx,
            ny: map.grid.ny,
            src,
            base,
            gp,
            ga,
            ku: ku_now,
            c,
            renormalize: cfg.renormalize,
        };
        match index {
            0 => run_stage(&make(state, state), stage, stage_a, acc),
            1 => run_stage(&make(stage_a, state), stage, stage_b, acc),
            2 => run_stage(&make(stage_b, state), stage, stage_a, acc),
            _ => {
                let src = std::mem::replace(stage_a, Soa { x: Vec::new(), y: Vec::new(), z: Vec::new() });
                // the last stage updates the state in place; `base` is unused
                run_stage(&make(&src, &src), stage, state, acc);
                *stage_a = src;
            }
        }
    }

    /// Largest `|ds/dt|` over the grid with the anisotropy currently applied.
    pub fn max_rate(&self, state: &SpinField) -> f64 {
        let nx = self.map.grid.nx;
        let ny = self.map.grid.ny;
        let mut worst = 0.0f64;
        for iy in 0..ny {
            let (u, d) = neighbour_rows(ny, iy);
            let off = iy * nx;
            self.kernel.row(
                &state.s[u * nx..(u + 1) * nx],
                &state.s[off..off + nx],
                &state.s[d * nx..(d + 1) * nx],
                &self.ku_now[off..off + nx],
                |ix, s, h| {
                    let (gp, ga) = (self.gp[off + ix], self.ga[off + ix]);
                    worst = worst.max(norm(torque(s, h, gp, ga)));
                },
            );
        }
        worst
    }
}

/// Advances `state` by one macro step from time `t` with a fresh integrator.
pub fn step_macro(
    state: &mut SpinField,
    map: &MaterialMap,
    drive: &dyn AnisotropyDrive,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<()> {
    Integrator::new(map, *cfg)?.step_macro(state, t, drive, 0)
}

/// Integrates the whole schedule, handing `s_x` at `probes` to `sink` after
/// every macro step and calling `on_snapshot` for each requested frame.
///
/// Frame `n` is the state at time `n·t0`; frame 0 is the starting state.
#[allow(clippy::too_many_arguments)]
pub fn run(
    state: &mut SpinField,
    map: &MaterialMap,
    schedule: &SectionSchedule,
    drive: &dyn AnisotropyDrive,
    probes: &[usize],
    cfg: &IntegratorConfig,
    snapshot_steps: &[usize],
    sink: &mut dyn ProbeSink,
    on_snapshot: &mut dyn FnMut(SnapshotFrame) -> Result<()>,
) -> Result<()> {
    if let Some(&bad) = probes.iter().find(|&&p| p >= map.grid.len()) {
        return Err(Error::Domain(format!("probe cell {bad} outside a grid of {} cells", map.grid.len())));
    }
    if (cfg.macro_step - schedule.t0).abs() > 1e-9 * schedule.t0 {
        return Err(Error::Domain(format!(
            "schedule step {:.3e} s differs from integrator macro step {:.3e} s",
            schedule.t0, cfg.macro_step
        )));
    }
    let mut integrator = Integrator::new(map, *cfg)?;
    let total = schedule.total_steps();
    let mut snaps: Vec<usize> = snapshot_steps.to_vec();
    snaps.sort_unstable();
    snaps.dedup();
    let mut next_snap = snaps.iter().peekable();
    let mut values = vec![0.0; probes.len()];
    for n in 0..=total {
        if next_snap.peek() == Some(&&n) {
            on_snapshot(SnapshotFrame::capture(state, n as u32))?;
            next_snap.next();
        }
        if n == total {
            break;
        }
        integrator.step_macro(state, n as f64 * cfg.macro_step, drive, n)?;
        for (v, &p) in values.iter_mut().zip(probes) {
            *v = state.s[p][0];
        }
        sink.record(n, &values);
        if n > 0 && n % 1000 == 0 {
            debug!("macro step {n}/{total}");
        }
    }
    Ok(())
}

/// [`run`] collecting the probes into a [`SpinTrace`] and frames into a list.
pub fn run_trace(
    state: &mut SpinField,
    map: &MaterialMap,
    schedule: &SectionSchedule,
    probes: &[usize],
    cfg: &IntegratorConfig,
    snapshot_steps: &[usize],
) -> Result<(SpinTrace, Vec<SnapshotFrame>)> {
    let drive = schedule.drive(map.params.ku_high, map.params.ku_low);
    let mut trace = SpinTrace::new(probes.to_vec(), cfg.macro_step);
    trace.samples.reserve(probes.len() * schedule.total_steps());
    let mut frames = Vec::new();
    run(state, map, schedule, &drive, probes, cfg, snapshot_steps, &mut trace, &mut |f| {
        frames.push(f);
        Ok(())
    })?;
    Ok((trace, frames))
}

/// Result of [`relax`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxOutcome {
    pub state: SpinField,
    pub steps: usize,
    pub max_rate: f64,
    pub converged: bool,
}

/// Integrates without drive and with damping raised to at least `alpha_min`
/// until every cell moves slower than `tolerance` (1/s), or `max_steps`
/// macro steps have run. On non-convergence the last state is returned with a
/// warning.
pub fn relax(
    state: &SpinField,
    map: &MaterialMap,
    cfg: &IntegratorConfig,
    alpha_min: f64,
    tolerance: f64,
    max_steps: usize,
) -> Result<RelaxOutcome> {
    let alpha: Vec<f64> = map.alpha.iter().map(|&a| a.max(alpha_min)).collect();
    let mut integrator = Integrator::with_damping(map, *cfg, &alpha)?;
    let mut s = state.clone();
    let mut rate = integrator.max_rate(&s);
    let mut steps = 0;
    while rate >= tolerance && steps < max_steps {
        integrator.step_macro(&mut s, steps as f64 * cfg.macro_step, &NoDrive, steps)?;
        steps += 1;
        rate = integrator.max_rate(&s);
    }
    let converged = rate < tolerance;
    if !converged {
        warn!("relaxation stopped after {steps} steps with max |ds/dt| = {rate:.3e} 1/s");
    } else {
        debug!("relaxed in {steps} steps, max |ds/dt| = {rate:.3e} 1/s");
    }
    Ok(RelaxOutcome { state: s, steps, max_rate: rate, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::{Label, Section};
    use crate::geometry::{build_geometry, initial_state, GridSpec, MaterialParams};
    use crate::llg::{effective_field, llg_rhs, GAMMA_DEFAULT};
    use crate::vec3::normalize;

    fn fast_map() -> MaterialMap {
        MaterialMap::with_defaults(GridSpec::fast()).unwrap()
    }

    fn textured(map: &MaterialMap) -> SpinField {
        let mut s = SpinField::uniform(map.grid, [0.0, 0.0, 1.0]);
        for (i, v) in s.s.iter_mut().enumerate() {
            let (x, y) = map.grid.coords(i);
            *v = normalize([0.3 * (0.21 * x as f64).sin(), 0.2 * (0.13 * y as f64 + 0.4).cos(), 1.0]);
        }
        s
    }

    fn drive(t: f64) -> Option<f64> {
        Some(5.5e3 + 4.5e3 * (2.0 * std::f64::consts::PI * 2.5e9 * t).cos())
    }

    /// Plain array-of-vectors RK4 built from the public field and rhs.
    fn reference_step(s: &mut SpinField, map: &MaterialMap, t: f64, cfg: &IntegratorConfig) {
        let m = cfg.substeps;
        let dt = cfg.dt();
        let ku_at = |time: f64| {
            let mut ku = map.ku_base.clone();
            for &i in map.electrodes.iter().flatten() {
                ku[i] = drive(time).unwrap();
            }
            ku
        };
        let slope = |st: &SpinField, time: f64| {
            let h = effective_field(st, map, &ku_at(time), FieldTerms::default());
            llg_rhs(st, &h, &map.alpha, cfg.gamma)
        };
        let shifted = |st: &SpinField, k: &[Vec3], c: f64| {
            let mut o = st.clone();
            for (v, d) in o.s.iter_mut().zip(k) {
                for j in 0..3 {
                    v[j] += c * d[j];
                }
            }
            o
        };
        for sub in 0..m {
            let ts = |c: f64| t + (sub as f64 + c) / m as f64 * cfg.macro_step;
            let k1 = slope(s, ts(0.0));
            let k2 = slope(&shifted(s, &k1, dt / 2.0), ts(0.5));
            let k3 = slope(&shifted(s, &k2, dt / 2.0), ts(0.5));
            let k4 = slope(&shifted(s, &k3, dt), ts(1.0));
            for i in 0..s.s.len() {
                let mut v = s.s[i];
                for j in 0..3 {
                    v[j] += dt / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
                }
                s.s[i] = normalize(v);
            }
        }
    }

    #[test]
    fn matches_reference_rk4() {
        let map = fast_map();
        let cfg = IntegratorConfig { substeps: 8, ..Default::default() };
        let mut a = textured(&map);
        let mut b = a.clone();
        let mut it = Integrator::new(&map, cfg).unwrap();
        for n in 0..3 {
            let t = n as f64 * cfg.macro_step;
            it.step_macro(&mut a, t, &drive, n).unwrap();
            reference_step(&mut b, &map, t, &cfg);
        }
        let worst = a
            .s
            .iter()
            .zip(&b.s)
            .flat_map(|(p, q)| (0..3).map(move |j| (p[j] - q[j]).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn vector_paths_round_identically() {
        let map = fast_map();
        let n = map.grid.len();
        let mut src = Soa::zeros(n);
        src.load(&textured(&map).s);
        let mut base = Soa::zeros(n);
        base.load(&SpinField::uniform(map.grid, normalize([0.1, -0.2, 1.0])).s);
        let (gp, ga): (Vec<f64>, Vec<f64>) = map.alpha.iter().map(|&a| torque_prefactors(a, GAMMA_DEFAULT)).unzip();
        let inputs = StageInputs {
            kernel: FieldKernel::new(&map, FieldTerms::default()),
            nx: map.grid.nx,
            ny: map.grid.ny,
            src: &src,
            base: &base,
            gp: &gp,
            ga: &ga,
            ku: &map.ku_base,
            c: 3.7e-13,
            renormalize: true,
        };
        let nx = map.grid.nx;
        for mode in 0..3u8 {
            let mut outs = [Soa::zeros(n), Soa::zeros(n)];
            let mut accs = [Soa::zeros(n), Soa::zeros(n)];
            for (k, (o, a)) in outs.iter_mut().zip(accs.iter_mut()).enumerate() {
                o.load(&textured(&map).s);
                a.load(&SpinField::uniform(map.grid, [1e9, -2e9, 3e8]).s);
                for iy in 0..map.grid.ny {
                    let rs = iy * nx..(iy + 1) * nx;
                    let out = [&mut o.x[rs.clone()], &mut o.y[rs.clone()], &mut o.z[rs.clone()]];
                    let acc = [&mut a.x[rs.clone()], &mut a.y[rs.clone()], &mut a.z[rs]];
                    if k == 0 {
                        inputs.row_generic(mode, iy, out, acc);
                    } else {
                        inputs.row_dispatch(mode, iy, out, acc);
                    }
                }
            }
            for (p, q) in [(&outs[0], &outs[1]), (&accs[0], &accs[1])] {
                for (u, v) in [(&p.x, &q.x), (&p.y, &q.y), (&p.z, &q.z)] {
                    assert!(u.iter().zip(v.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), "mode {mode}");
                }
            }
        }
    }

    #[test]
    fn uniform_up_is_a_fixed_point_without_bias() {
        let params = MaterialParams { h_bias_x: 0.0, ..Default::default() };
        let map = build_geometry(GridSpec::fast(), &Default::default(), &params).unwrap();
        let mut s = SpinField::uniform(map.grid, [0.0, 0.0, 1.0]);
        let mut it = Integrator::new(&map, IntegratorConfig::default()).unwrap();
        for n in 0..5 {
            it.step_macro(&mut s, n as f64 * 1e-11, &drive, n).unwrap();
        }
        assert!(s.s.iter().all(|v| *v == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn norm_is_kept() {
        let map = fast_map();
        let mut s = textured(&map);
        let mut it = Integrator::new(&map, IntegratorConfig { substeps: 8, ..Default::default() }).unwrap();
        for n in 0..20 {
            it.step_macro(&mut s, n as f64 * 1e-11, &drive, n).unwrap();
        }
        assert!(s.max_norm_error() < 1e-12);
    }

    #[test]
    fn threaded_pool_gives_identical_result() {
        let map = fast_map();
        let base = IntegratorConfig { substeps: 8, ..Default::default() };
        let mut a = textured(&map);
        let mut b = a.clone();
        // one thread takes the fused wavefront, three the banded stages
        Integrator::new(&map, IntegratorConfig { threads: 1, ..base }).unwrap().step_macro(&mut a, 0.0, &drive, 0).unwrap();
        Integrator::new(&map, IntegratorConfig { threads: 3, ..base }).unwrap().step_macro(&mut b, 0.0, &drive, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_records_every_step_and_frames() {
        let map = fast_map();
        let cfg = IntegratorConfig { substeps: 8, ..Default::default() };
        let sched = SectionSchedule::from_sections(
            vec![Section { label: Label::Sin, length_steps: 6 }, Section { label: Label::Square, length_steps: 4 }],
            cfg.macro_step,
            0.4e-9,
        )
        .unwrap();
        let mut s = initial_state(&map);
        let start = s.clone();
        let probes = vec![map.grid.index(55, 55), map.grid.index(20, 30)];
        let (trace, frames) = run_trace(&mut s, &map, &sched, &probes, &cfg, &[0, 10, 3]).unwrap();
        assert_eq!(trace.steps(), 10);
        assert_eq!(frames.iter().map(|f| f.frame_index).collect::<Vec<_>>(), vec![0, 3, 10]);
        assert_eq!(frames[0], SnapshotFrame::capture(&start, 0));
        assert_eq!(frames[2].sx[probes[0]], trace.sample(9, 0) as f32);
        let bad = IntegratorConfig { macro_step: 0.02e-9, substeps: 16, ..cfg };
        assert!(run_trace(&mut s, &map, &sched, &probes, &bad, &[]).is_err());
    }

    #[test]
    fn relax_lowers_the_rate() {
        let map = fast_map();
        let cfg = IntegratorConfig { substeps: 8, ..Default::default() };
        let s = textured(&map);
        let before = Integrator::new(&map, cfg).unwrap().max_rate(&s);
        let out = relax(&s, &map, &cfg, 0.5, 1.0, 30).unwrap();
        assert_eq!(out.steps, 30);
        assert!(!out.converged);
        assert!(out.max_rate < 0.5 * before, "{} vs {before}", out.max_rate);
    }

    #[test]
    fn trace_select() {
        let mut t = SpinTrace::new(vec![5, 9, 2], 1e-11);
        t.samples = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = t.select(&[2, 5]).unwrap();
        assert_eq!(s.samples, vec![3.0, 1.0, 6.0, 4.0]);
        assert!(t.select(&[7]).is_err());
    }
}
