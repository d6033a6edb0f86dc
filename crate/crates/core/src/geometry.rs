//! Film geometry: the cell grid, per-cell material and region maps, the fixed
//! readout regions and the spin state living on the grid.
//!
//! Cells are indexed row-major with `y` as the outer coordinate. Row 0 is the
//! top edge of the film, so input electrode 1 sits at the top-left corner of
//! the low-damping interior and electrode 2 at the bottom-right one.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::vec3::Vec3;
use crate::MU0;

/// Cell grid of a single-layer film.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Edge length of a square cell, m.
    pub cell_size: f64,
    /// Film thickness, m.
    pub thickness: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, cell_size: f64, thickness: f64) -> Result<Self, ConfigError> {
        let grid = GridSpec { nx, ny, cell_size, thickness };
        grid.validate()?;
        Ok(grid)
    }

    /// 220 × 220 cells of 10 nm: a 2.2 µm square film, 100 nm thick.
    pub fn paper() -> Self {
        GridSpec { nx: 220, ny: 220, cell_size: 10e-9, thickness: 100e-9 }
    }

    /// Same film at half the resolution (20 nm cells).
    pub fn fast() -> Self {
        GridSpec { nx: 110, ny: 110, cell_size: 20e-9, thickness: 100e-9 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nx < 3 || self.ny < 3 {
            return Err(ConfigError::Geometry(format!(
                "grid must be at least 3 x 3 cells, got {} x {}",
                self.nx, self.ny
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "cell_size_nm".into(),
                reason: "must be positive".into(),
            });
        }
        if !(self.thickness > 0.0 && self.thickness.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "thickness_nm".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Whole number of cells spanned by `length` metres.
    pub fn cells_for(&self, length: f64) -> usize {
        (length / self.cell_size).round() as usize
    }

    /// Cell that the film's 180° rotation maps `(ix, iy)` onto.
    pub fn rotate_180(&self, ix: usize, iy: usize) -> (usize, usize) {
        (self.nx - 1 - ix, self.ny - 1 - iy)
    }
}

/// Lengths that place the damper frame, input electrodes and readout regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    /// Width of the high-damping frame, m.
    pub damper_width: f64,
    /// Diameter of each input-electrode disk, m.
    pub electrode_diameter: f64,
    /// Side of the centred square in which output electrodes may be placed, m.
    pub readout_side: f64,
    /// Side of the centred square split into 3 × 3 compartments, m.
    pub compartment_side: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            damper_width: 100e-9,
            electrode_diameter: 200e-9,
            readout_side: 1.6e-6,
            compartment_side: 1.8e-6,
        }
    }
}

/// Material constants of the garnet film.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Saturation magnetization, A/m.
    pub ms: f64,
    /// Exchange stiffness, J/m.
    pub a_ex: f64,
    /// Uniaxial anisotropy at rest (and drive maximum), J/m³.
    pub ku_high: f64,
    /// Drive minimum of the uniaxial anisotropy, J/m³.
    pub ku_low: f64,
    /// External field along z, A/m.
    pub h_ext: f64,
    /// Static in-plane bias field along x, A/m. Tilts the rest state off the
    /// easy axis so that modulating K_U exerts a torque.
    pub h_bias_x: f64,
    pub alpha_interior: f64,
    pub alpha_damper: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            ms: 100e3,
            a_ex: 3.6e-12,
            ku_high: 10e3,
            ku_low: 1e3,
            h_ext: 30.0,
            h_bias_x: 2e3,
            alpha_interior: 0.001,
            alpha_damper: 1.0,
        }
    }
}

impl MaterialParams {
    /// Uniform-mode precession frequency (Hz) for a film at rest along z,
    /// with the local thin-film demagnetizing field.
    pub fn fmr_frequency(&self, gamma: f64) -> f64 {
        let h = 2.0 * self.ku_high / (MU0 * self.ms) - self.ms + self.h_ext;
        gamma * MU0 * h / (2.0 * std::f64::consts::PI)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [("ms_ka_per_m", self.ms), ("a_ex_pj_per_m", self.a_ex)];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid { key: key.into(), reason: "must be positive".into() });
            }
        }
        let non_negative = [
            ("alpha_interior", self.alpha_interior),
            ("alpha_damper", self.alpha_damper),
            ("ku_low_kj_per_m3", self.ku_low),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid { key: key.into(), reason: "must be non-negative".into() });
            }
        }
        if !(self.ku_high >= self.ku_low) || !self.ku_high.is_finite() {
            return Err(ConfigError::Invalid {
                key: "ku_high_kj_per_m3".into(),
                reason: "must be finite and at least ku_low_kj_per_m3".into(),
            });
        }
        if !self.h_ext.is_finite() || !self.h_bias_x.is_finite() {
            return Err(ConfigError::Invalid { key: "h_ext_ka_per_m".into(), reason: "must be finite".into() });
        }
        Ok(())
    }
}

/// Region label of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Interior,
    Damper,
    /// Input electrode 1 (top-left) or 2 (bottom-right).
    InputElectrode(u8),
}

/// Axis-aligned block of cells, `[x0, x0 + w) × [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Rect { x0, y0, w, h }
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix < self.x0 + self.w && iy >= self.y0 && iy < self.y0 + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x0 + other.w
            && other.x0 < self.x0 + self.w
            && self.y0 < other.y0 + other.h
            && other.y0 < self.y0 + self.h
    }

    /// Cells in row-major order (y outer).
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y0 + self.h).flat_map(move |iy| (self.x0..self.x0 + self.w).map(move |ix| (ix, iy)))
    }

    /// Continuous centre in cell units (cell `i` spans `[i, i + 1)`).
    pub fn center(&self) -> (f64, f64) {
        (self.x0 as f64 + self.w as f64 / 2.0, self.y0 as f64 + self.h as f64 / 2.0)
    }
}

/// Fixed regions used to place output electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    /// Central square available to full, grid, circular and random layouts.
    pub readout: Rect,
    /// Central square tiled by the nine compartments.
    pub compartment_area: Rect,
    /// Compartments 1–9, row-major from the top-left.
    pub compartments: [Rect; 9],
}

impl RegionSpec {
    fn new(grid: &GridSpec, params: &GeometryParams) -> Result<Self, ConfigError> {
        let side = grid.cells_for(params.readout_side);
        let area = grid.cells_for(params.compartment_side);
        if side == 0 || side > grid.nx.min(grid.ny) {
            return Err(ConfigError::Geometry(format!(
                "readout region of {side} cells does not fit the {} x {} grid",
                grid.nx, grid.ny
            )));
        }
        if area == 0 || area % 3 != 0 || area > grid.nx.min(grid.ny) {
            return Err(ConfigError::Geometry(format!(
                "compartment area of {area} cells must be a positive multiple of 3 that fits the grid"
            )));
        }
        let readout = Rect::new((grid.nx - side) / 2, (grid.ny - side) / 2, side, side);
        let compartment_area = Rect::new((grid.nx - area) / 2, (grid.ny - area) / 2, area, area);
        let c = area / 3;
        let compartments = std::array::from_fn(|k| {
            let (row, col) = (k / 3, k % 3);
            Rect::new(compartment_area.x0 + col * c, compartment_area.y0 + row * c, c, c)
        });
        Ok(RegionSpec { readout, compartment_area, compartments })
    }

    /// Compartment `k` in 1..=9.
    pub fn compartment(&self, k: usize) -> Option<&Rect> {
        k.checked_sub(1).and_then(|i| self.compartments.get(i))
    }
}

/// Static per-cell material and region description of the film.
#[derive(Debug, Clone)]
pub struct MaterialMap {
    pub grid: GridSpec,
    pub params: MaterialParams,
    pub geometry: GeometryParams,
    /// Gilbert damping per cell.
    pub alpha: Vec<f64>,
    /// Uniaxial anisotropy at rest per cell, J/m³.
    pub ku_base: Vec<f64>,
    pub region: Vec<Region>,
    /// Cell indices of input electrodes 1 and 2.
    pub electrodes: [Vec<usize>; 2],
    /// Centre cells of input electrodes 1 and 2.
    pub electrode_centers: [(usize, usize); 2],
    pub regions: RegionSpec,
}

/// Assigns regions, damping and rest anisotropy to every cell.
///
/// Electrode disks use the cell-centre rule: a cell belongs to a disk when its
/// centre lies within one radius of the disk centre. Disk centres sit one
/// radius inside the inner corners of the damper frame, snapped to a cell
/// centre, so both disks lie entirely in the low-damping interior.
pub fn build_geometry(
    grid: GridSpec,
    geometry: &GeometryParams,
    params: &MaterialParams,
) -> Result<MaterialMap, ConfigError> {
    grid.validate()?;
    params.validate()?;
    if grid.nx < 40 || grid.ny < 40 {
        return Err(ConfigError::Geometry(format!(
            "grid of {} x {} cells is too small; frame and electrodes need at least 40 x 40",
            grid.nx, grid.ny
        )));
    }
    let frame = grid.cells_for(geometry.damper_width);
    if frame == 0 || 2 * frame >= grid.nx.min(grid.ny) {
        return Err(ConfigError::Geometry(format!(
            "damper frame of {frame} cells leaves no interior in a {} x {} grid",
            grid.nx, grid.ny
        )));
    }
    let radius = geometry.electrode_diameter / 2.0 / grid.cell_size;
    if !(radius > 0.0) {
        return Err(ConfigError::Geometry("electrode diameter must be positive".into()));
    }
    let c = ((geometry.damper_width + geometry.electrode_diameter / 2.0) / grid.cell_size).round() as usize;
    let centers = [(c, c), grid.rotate_180(c, c)];

    let mut region = vec![Region::Interior; grid.len()];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if ix < frame || iy < frame || ix >= grid.nx - frame || iy >= grid.ny - frame {
                region[grid.index(ix, iy)] = Region::Damper;
            }
        }
    }

    let r2 = radius * radius + 1e-9;
    let mut electrodes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (e, &(cx, cy)) in centers.iter().enumerate() {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let dx = ix as f64 - cx as f64;
                let dy = iy as f64 - cy as f64;
                if dx * dx + dy * dy <= r2 {
                    let idx = grid.index(ix, iy);
                    match region[idx] {
                        Region::Interior => {}
                        Region::Damper => {
                            return Err(ConfigError::Geometry(format!(
                                "input electrode {} overlaps the damper frame at cell ({ix}, {iy})",
                                e + 1
                            )))
                        }
                        Region::InputElectrode(_) => {
                            return Err(ConfigError::Geometry("input electrodes overlap".into()))
                        }
                    }
                    region[idx] = Region::InputElectrode(e as u8 + 1);
                    electrodes[e].push(idx);
                }
            }
        }
    }

    let regions = RegionSpec::new(&grid, geometry)?;
    for (ix, iy) in regions.readout.cells() {
        if region[grid.index(ix, iy)] != Region::Interior {
            return Err(ConfigError::Geometry(format!(
                "readout region reaches cell ({ix}, {iy}) outside the plain interior"
            )));
        }
    }
    for (ix, iy) in regions.compartment_area.cells() {
        if region[grid.index(ix, iy)] == Region::Damper {
            return Err(ConfigError::Geometry(format!("compartment area reaches the damper at ({ix}, {iy})")));
        }
    }

    let alpha = region
        .iter()
        .map(|r| match r {
            Region::Damper => params.alpha_damper,
            _ => params.alpha_interior,
        })
        .collect();

    Ok(MaterialMap {
        grid,
        params: *params,
        geometry: *geometry,
        alpha,
        ku_base: vec![params.ku_high; grid.len()],
        region,
        electrodes,
        electrode_centers: centers,
        regions,
    })
}

impl MaterialMap {
    /// Map with the default film constants on `grid`.
    pub fn with_defaults(grid: GridSpec) -> Result<Self, ConfigError> {
        build_geometry(grid, &GeometryParams::default(), &MaterialParams::default())
    }

    pub fn region_at(&self, ix: usize, iy: usize) -> Region {
        self.region[self.grid.index(ix, iy)]
    }

    pub fn is_input_electrode(&self, idx: usize) -> bool {
        matches!(self.region[idx], Region::InputElectrode(_))
    }

    /// Number of cells carrying label `r`.
    pub fn count(&self, r: Region) -> usize {
        self.region.iter().filter(|&&x| x == r).count()
    }
}

/// Unit magnetization direction per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinField {
    pub grid: GridSpec,
    pub s: Vec<Vec3>,
}

impl SpinField {
    pub fn uniform(grid: GridSpec, dir: Vec3) -> Self {
        let d = crate::vec3::normalize(dir);
        SpinField { grid, s: vec![d; grid.len()] }
    }

    pub fn sx(&self) -> impl Iterator<Item = f64> + '_ {
        self.s.iter().map(|v| v[0])
    }

    /// Largest `| |s| - 1 |` over all cells.
    pub fn max_norm_error(&self) -> f64 {
        self.s
            .iter()
            .map(|&v| (crate::vec3::norm(v) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.s.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Rest state before relaxation: every cell along +z.
pub fn initial_state(map: &MaterialMap) -> SpinField {
    SpinField::uniform(map.grid, [0.0, 0.0, 1.0])
}
