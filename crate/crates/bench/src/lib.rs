//! Shared fixtures for the benchmarks.

use swrc_core::geometry::{initial_state, GridSpec, MaterialMap, SpinField};
use swrc_core::readout::FeatureMatrix;
use swrc_core::vec3::normalize;
use swrc_core::Label;

/// Film with default geometry on `grid`.
pub fn film(grid: GridSpec) -> MaterialMap {
    MaterialMap::with_defaults(grid).expect("default geometry fits the preset grids")
}

/// Rest state with a smooth in-plane texture so every term does work.
pub fn textured(map: &MaterialMap) -> SpinField {
    let mut s = initial_state(map);
    for (i, v) in s.s.iter_mut().enumerate() {
        let (x, y) = map.grid.coords(i);
        *v = normalize([0.2 * (0.17 * x as f64).sin(), 0.2 * (0.11 * y as f64).cos(), 1.0]);
    }
    s
}

/// Deterministic pseudo-random features, `n_o` rows by `n` columns, with
/// alternating 640-step sections.
pub fn features(n_o: usize, n: usize) -> FeatureMatrix {
    let mut x = FeatureMatrix::empty((0..n_o).collect());
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    for step in 0..n {
        let label = if (step / 640) % 2 == 0 { Label::Sin } else { Label::Square };
        for e in 0..n_o {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let noise = (state >> 11) as f64 / (1u64 << 53) as f64;
            let gain = if label == Label::Square { 1.0 + 0.01 * e as f64 } else { 1.0 };
            x.values.push(gain * (0.01 + 0.001 * noise));
        }
        x.steps.push(step);
        x.step_in_section.push(step % 640);
        x.step_labels.push(label);
        x.warmup_mask.push(step % 640 < 40);
    }
    x
}
