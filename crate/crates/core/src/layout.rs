//! Output-electrode arrangements.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::geometry::{MaterialMap, Rect, Region};

/// How an [`ElectrodeSet`] was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arrangement {
    Full,
    Grid,
    Circle,
    Random,
    /// Grid lattice inside compartment 1..=9.
    Compartment(u8),
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arrangement::Full => f.write_str("full"),
            Arrangement::Grid => f.write_str("grid"),
            Arrangement::Circle => f.write_str("circle"),
            Arrangement::Random => f.write_str("random"),
            Arrangement::Compartment(k) => write!(f, "compartment{k}"),
        }
    }
}

impl FromStr for Arrangement {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || ConfigError::Invalid {
            key: "arrangement".into(),
            reason: format!("`{s}` is not one of full, grid, circle, random, compartment1..compartment9"),
        };
        match t.as_str() {
            "full" => Ok(Arrangement::Full),
            "grid" => Ok(Arrangement::Grid),
            "circle" => Ok(Arrangement::Circle),
            "random" => Ok(Arrangement::Random),
            _ => {
                let k: u8 = t.strip_prefix("compartment").and_then(|k| k.parse().ok()).ok_or_else(bad)?;
                if (1..=9).contains(&k) {
                    Ok(Arrangement::Compartment(k))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// A set of single-cell output electrodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectrodeSet {
    /// `(ix, iy)` cells.
    pub positions: Vec<(usize, usize)>,
    pub arrangement: Arrangement,
    pub seed: Option<u64>,
    pub n_o: usize,
}

impl ElectrodeSet {
    fn new(positions: Vec<(usize, usize)>, arrangement: Arrangement, seed: Option<u64>) -> Self {
        let n_o = positions.len();
        ElectrodeSet { positions, arrangement, seed, n_o }
    }

    /// Flat grid indices of the positions, in order.
    pub fn cells(&self, nx: usize) -> Vec<usize> {
        self.positions.iter().map(|&(ix, iy)| iy * nx + ix).collect()
    }
}

fn isqrt_exact(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

fn not_square(n: usize) -> ConfigError {
    let lo = (n as f64).sqrt().floor() as usize;
    let below = lo * lo;
    let above = (lo + 1) * (lo + 1);
    let hint = if below > 0 { format!("{below} or {above}") } else { above.to_string() };
    ConfigError::Invalid { key: "n_o".into(), reason: format!("grid layouts need a perfect square, got {n}; try {hint}") }
}

/// Offsets `round((i + 1) · width / (m + 1))`, `i = 0..m`, rounding halves up.
pub fn lattice_offsets(width: usize, m: usize) -> Vec<usize> {
    (0..m)
        .map(|i| {
            // exact rational rounding: floor(((i+1)·w·2 + (m+1)) / (2(m+1)))
            let num = 2 * (i + 1) * width + (m + 1);
            num / (2 * (m + 1))
        })
        .collect()
}

fn lattice_in(rect: &Rect, n_o: usize) -> Result<Vec<(usize, usize)>, ConfigError> {
    let m = isqrt_exact(n_o).filter(|&m| m > 0).ok_or_else(|| not_square(n_o))?;
    let ox = lattice_offsets(rect.w, m);
    let oy = lattice_offsets(rect.h, m);
    if m >= rect.w.min(rect.h) {
        return Err(ConfigError::Invalid {
            key: "n_o".into(),
            reason: format!("{m} x {m} lattice does not fit a {} x {} block", rect.w, rect.h),
        });
    }
    Ok(oy.iter().flat_map(|&y| ox.iter().map(move |&x| (rect.x0 + x, rect.y0 + y))).collect())
}

/// `√n_o × √n_o` lattice in the central readout region.
pub fn grid_layout(map: &MaterialMap, n_o: usize) -> Result<ElectrodeSet, ConfigError> {
    let pos = lattice_in(&map.regions.readout, n_o)?;
    Ok(ElectrodeSet::new(pos, Arrangement::Grid, None))
}

/// Equiangular points on one circle (`n_o ≤ 25`) or two concentric circles.
pub fn circle_layout(map: &MaterialMap, n_o: usize) -> Result<ElectrodeSet, ConfigError> {
    let rect = map.regions.readout;
    if n_o < 3 || n_o > rect.area() / 4 {
        return Err(ConfigError::Invalid {
            key: "n_o".into(),
            reason: format!("circle layouts need 3 ≤ n_o ≤ {}, got {n_o}", rect.area() / 4),
        });
    }
    let w = rect.w as f64;
    let rings: Vec<(f64, usize)> = if n_o <= 25 {
        vec![(0.4 * w, n_o)]
    } else {
        let (r1, r2) = (0.25 * w, 0.45 * w);
        let inner = ((n_o as f64) * r1 / (r1 + r2)).round() as usize;
        vec![(r1, inner), (r2, n_o - inner)]
    };
    let (cx, cy) = rect.center();
    let mut taken = HashSet::new();
    let mut pos = Vec::with_capacity(n_o);
    for (r, count) in rings {
        for i in 0..count {
            let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (dx, dy) = (th.cos(), th.sin());
            let cell = ((cx + r * dx + 1e-9).floor() as usize, (cy + r * dy + 1e-9).floor() as usize);
            let p = place(cell, (dx, dy), &rect, &taken, |_, _| false)?;
            taken.insert(p);
            pos.push(p);
        }
    }
    Ok(ElectrodeSet::new(pos, Arrangement::Circle, None))
}

/// Uniform sample without replacement over the readout region.
pub fn random_layout(map: &MaterialMap, n_o: usize, seed: u64) -> Result<ElectrodeSet, ConfigError> {
    let rect = map.regions.readout;
    if n_o == 0 || n_o > rect.area() {
        return Err(ConfigError::Invalid {
            key: "n_o".into(),
            reason: format!("random layouts need 1 ≤ n_o ≤ {}, got {n_o}", rect.area()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, rect.area(), n_o).into_vec();
    picks.sort_unstable();
    let pos = picks.into_iter().map(|k| (rect.x0 + k % rect.w, rect.y0 + k / rect.w)).collect();
    Ok(ElectrodeSet::new(pos, Arrangement::Random, Some(seed)))
}

/// Grid lattice inside compartment `k` (1..=9, row-major from the top-left).
///
/// Lattice points that land on an input electrode are moved to the nearest
/// free cell of the compartment on the side away from the electrode centre.
pub fn compartment_layout(map: &MaterialMap, k: usize, n_o: usize) -> Result<ElectrodeSet, ConfigError> {
    let rect = *map.regions.compartment(k).ok_or_else(|| ConfigError::Invalid {
        key: "compartment".into(),
        reason: format!("compartments are numbered 1..9, got {k}"),
    })?;
    let nx = map.grid.nx;
    let blocked = |ix: usize, iy: usize| map.region[iy * nx + ix] != Region::Interior;
    let lattice = lattice_in(&rect, n_o)?;
    let mut taken: HashSet<(usize, usize)> = lattice.iter().copied().filter(|&(x, y)| !blocked(x, y)).collect();
    let mut pos = Vec::with_capacity(n_o);
    for p in lattice {
        if !blocked(p.0, p.1) {
            pos.push(p);
            continue;
        }
        let (ex, ey) = nearest_electrode_center(map, p);
        let dir = (p.0 as f64 - ex, p.1 as f64 - ey);
        let q = place(p, dir, &rect, &taken, blocked)?;
        taken.insert(q);
        pos.push(q);
    }
    Ok(ElectrodeSet::new(pos, Arrangement::Compartment(k as u8), None))
}

/// Every cell of the readout region, row-major.
pub fn full_layout(map: &MaterialMap) -> ElectrodeSet {
    ElectrodeSet::new(map.regions.readout.cells().collect(), Arrangement::Full, None)
}

/// Dispatch on `arrangement`; `seed` is used by random layouts only.
pub fn make_layout(
    map: &MaterialMap,
    arrangement: Arrangement,
    n_o: usize,
    seed: u64,
) -> Result<ElectrodeSet, ConfigError> {
    match arrangement {
        Arrangement::Full => Ok(full_layout(map)),
        Arrangement::Grid => grid_layout(map, n_o),
        Arrangement::Circle => circle_layout(map, n_o),
        Arrangement::Random => random_layout(map, n_o, seed),
        Arrangement::Compartment(k) => compartment_layout(map, k as usize, n_o),
    }
}

fn nearest_electrode_center(map: &MaterialMap, p: (usize, usize)) -> (f64, f64) {
    let d2 = |c: (usize, usize)| {
        let dx = c.0 as f64 - p.0 as f64;
        let dy = c.1 as f64 - p.1 as f64;
        dx * dx + dy * dy
    };
    let [a, b] = map.electrode_centers;
    let c = if d2(a) <= d2(b) { a } else { b };
    (c.0 as f64, c.1 as f64)
}

/// `cell` itself if free, else the nearest free cell of `rect` (by Chebyshev
/// ring), preferring the one furthest along `dir`.
fn place(
    cell: (usize, usize),
    dir: (f64, f64),
    rect: &Rect,
    taken: &HashSet<(usize, usize)>,
    blocked: impl Fn(usize, usize) -> bool,
) -> Result<(usize, usize), ConfigError> {
    let free = |x: usize, y: usize| rect.contains(x, y) && !taken.contains(&(x, y)) && !blocked(x, y);
    if free(cell.0, cell.1) {
        return Ok(cell);
    }
    let (cx, cy) = (cell.0 as i64, cell.1 as i64);
    for d in 1..=(rect.w.max(rect.h) as i64) {
        let mut best: Option<((usize, usize), f64)> = None;
        for y in cy - d..=cy + d {
            for x in cx - d..=cx + d {
                if (x - cx).abs() != d && (y - cy).abs() != d {
                    continue;
                }
                if x < 0 || y < 0 || !free(x as usize, y as usize) {
                    continue;
                }
                let score = (x - cx) as f64 * dir.0 + (y - cy) as f64 * dir.1;
                if best.is_none_or(|(_, s)| score > s + 1e-12) {
                    best = Some(((x as usize, y as usize), score));
                }
            }
        }
        if let Some((p, _)) = best {
            return Ok(p);
        }
    }
    Err(ConfigError::Geometry(format!("no free cell left in {rect:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use proptest::prelude::*;

    fn paper() -> MaterialMap {
        MaterialMap::with_defaults(GridSpec::paper()).unwrap()
    }

    fn assert_valid(map: &MaterialMap, set: &ElectrodeSet, rect: &Rect, n_o: usize) {
        assert_eq!(set.positions.len(), n_o);
        assert_eq!(set.n_o, n_o);
        let distinct: HashSet<_> = set.positions.iter().collect();
        assert_eq!(distinct.len(), n_o, "duplicates in {}", set.arrangement);
        for &(x, y) in &set.positions {
            assert!(rect.contains(x, y), "{x},{y} outside {rect:?}");
            assert_eq!(map.region_at(x, y), Region::Interior);
        }
    }

    #[test]
    fn lattice_offsets_examples() {
        assert_eq!(lattice_offsets(160, 9), vec![16, 32, 48, 64, 80, 96, 112, 128, 144]);
        assert_eq!(lattice_offsets(160, 2), vec![53, 107]);
        assert_eq!(lattice_offsets(60, 9), vec![6, 12, 18, 24, 30, 36, 42, 48, 54]);
        // 7.5 rounds up
        assert_eq!(lattice_offsets(60, 7)[0], 8);
        assert!(*lattice_offsets(160, 17).last().unwrap() < 160);
    }

    #[test]
    fn grid_81_has_16_cell_interval() {
        let map = paper();
        let set = grid_layout(&map, 81).unwrap();
        let r = map.regions.readout;
        assert_eq!(set.positions[0], (r.x0 + 16, r.y0 + 16));
        for w in set.positions.windows(2).filter(|w| w[0].1 == w[1].1) {
            assert_eq!(w[1].0 - w[0].0, 16);
        }
    }

    #[test]
    fn grid_rejects_non_square() {
        let err = grid_layout(&paper(), 54).unwrap_err();
        assert!(err.to_string().contains("49 or 64"), "{err}");
    }

    #[test]
    fn grid_symmetric_under_half_turn() {
        for m in 1..=17 {
            let o = lattice_offsets(160, m);
            let mut r: Vec<usize> = o.iter().map(|v| 160 - v).collect();
            r.sort_unstable();
            assert_eq!(o, r, "m = {m}");
        }
    }

    #[test]
    fn circle_four_points_on_axes() {
        let map = paper();
        let set = circle_layout(&map, 4).unwrap();
        let (cx, cy) = map.regions.readout.center();
        let r = 0.4 * 160.0;
        let expect = [(cx + r, cy), (cx, cy + r), (cx - r, cy), (cx, cy - r)];
        for (p, e) in set.positions.iter().zip(expect) {
            assert_eq!(*p, (e.0.floor() as usize, e.1.floor() as usize));
        }
    }

    #[test]
    fn circle_splits_into_two_rings_above_25() {
        let map = paper();
        let (cx, cy) = map.regions.readout.center();
        let set = circle_layout(&map, 54).unwrap();
        let radii: Vec<f64> = set
            .positions
            .iter()
            .map(|&(x, y)| ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt())
            .collect();
        let inner = radii.iter().filter(|&&r| r < 0.35 * 160.0).count();
        assert_eq!(inner, (54.0f64 * 0.25 / 0.7).round() as usize);
        assert!(circle_layout(&map, 25).unwrap().positions.iter().all(|&(x, y)| {
            let r = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            (r - 64.0).abs() < 1.5
        }));
    }

    #[test]
    fn all_generators_meet_contracts() {
        let map = paper();
        let r = map.regions.readout;
        for n in [4, 16, 25, 54, 81, 144, 196, 289] {
            if isqrt_exact(n).is_some() {
                assert_valid(&map, &grid_layout(&map, n).unwrap(), &r, n);
                for k in 1..=9 {
                    let c = *map.regions.compartment(k).unwrap();
                    assert_valid(&map, &compartment_layout(&map, k, n).unwrap(), &c, n);
                }
            }
            assert_valid(&map, &circle_layout(&map, n).unwrap(), &r, n);
            assert_valid(&map, &random_layout(&map, n, 7).unwrap(), &r, n);
        }
        assert_valid(&map, &full_layout(&map), &r, 25_600);
    }

    #[test]
    fn compartment_layout_avoids_input_electrodes() {
        let map = paper();
        let set = compartment_layout(&map, 1, 81).unwrap();
        let c = map.regions.compartment(1).unwrap();
        // the first lattice point (26, 26) lies on electrode 1 and is moved away
        assert_eq!(map.region_at(c.x0 + 6, c.y0 + 6), Region::InputElectrode(1));
        let p = set.positions[0];
        assert!(p.0 + p.1 > 52);
        assert_eq!(set.positions[40], (c.x0 + 30, c.y0 + 30));
        assert!(compartment_layout(&map, 0, 4).is_err());
        assert!(compartment_layout(&map, 10, 4).is_err());
    }

    #[test]
    fn compartment_five_is_central() {
        let map = paper();
        let set = compartment_layout(&map, 5, 25).unwrap();
        assert!(set.positions.iter().all(|&(x, y)| (80..140).contains(&x) && (80..140).contains(&y)));
    }

    #[test]
    fn random_reproducible_and_seed_dependent() {
        let map = paper();
        assert_eq!(random_layout(&map, 81, 3).unwrap(), random_layout(&map, 81, 3).unwrap());
        assert_ne!(random_layout(&map, 81, 3).unwrap(), random_layout(&map, 81, 4).unwrap());
    }

    #[test]
    fn random_covers_region() {
        let map = paper();
        let r = map.regions.readout;
        let mut hit = [[false; 10]; 10];
        for seed in 0..100 {
            for (x, y) in random_layout(&map, 81, seed).unwrap().positions {
                hit[(y - r.y0) / 16][(x - r.x0) / 16] = true;
            }
        }
        assert!(hit.iter().flatten().all(|&h| h));
    }

    #[test]
    fn random_mean_position_is_central() {
        let map = paper();
        let r = map.regions.readout;
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for seed in 0..125 {
            for (x, y) in random_layout(&map, 80, seed).unwrap().positions {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
        let centre = r.x0 as f64 + 79.5;
        // uniform on 160 cells: σ = √((160² − 1)/12)
        let se = ((160.0f64 * 160.0 - 1.0) / 12.0).sqrt() / f64::sqrt(n);
        assert!((sx / n - centre).abs() < 3.0 * se);
        assert!((sy / n - centre).abs() < 3.0 * se);
    }

    #[test]
    fn arrangement_round_trip() {
        for a in [Arrangement::Full, Arrangement::Grid, Arrangement::Circle, Arrangement::Random, Arrangement::Compartment(7)] {
            assert_eq!(a.to_string().parse::<Arrangement>().unwrap(), a);
        }
        assert!("compartment0".parse::<Arrangement>().is_err());
        assert!("hex".parse::<Arrangement>().is_err());
    }

    proptest! {
        #[test]
        fn random_layout_contract(n in 1usize..400, seed in any::<u64>()) {
            let map = MaterialMap::with_defaults(GridSpec::fast()).unwrap();
            let r = map.regions.readout;
            let set = random_layout(&map, n, seed).unwrap();
            let distinct: HashSet<_> = set.positions.iter().collect();
            prop_assert_eq!(distinct.len(), n);
            prop_assert!(set.positions.iter().all(|&(x, y)| r.contains(x, y)));
        }

        #[test]
        fn circle_layout_contract(n in 3usize..300) {
            let map = MaterialMap::with_defaults(GridSpec::fast()).unwrap();
            let r = map.regions.readout;
            let set = circle_layout(&map, n).unwrap();
            let distinct: HashSet<_> = set.positions.iter().collect();
            prop_assert_eq!(distinct.len(), n);
            prop_assert!(set.positions.iter().all(|&(x, y)| r.contains(x, y)));
        }
    }
}
