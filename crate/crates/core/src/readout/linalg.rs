use log::warn;
use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares row vector `w` with `w · X ≈ y`, i.e.
/// `w = y X⁺`, from a thin SVD of `X` (`rows × cols`).
///
/// Singular values at or below `rel_threshold · σ_max` count as zero. With
/// `ridge > 0` each retained direction is filtered by `σ / (σ² + ridge)`
/// instead of `1 / σ`.
pub fn min_norm_solve(x: &DMatrix<f64>, y: &DVector<f64>, rel_threshold: f64, ridge: f64) -> DVector<f64> {
    assert_eq!(x.ncols(), y.len(), "one target per column");
    let rows = x.nrows();
    if rows == 0 || x.ncols() == 0 || x.iter().all(|&v| v == 0.0) {
        return DVector::zeros(rows);
    }
    // SVD of the tall orientation; wide X is handled through Xᵀ = V Σ Uᵀ.
    let wide = rows < x.ncols();
    let tall = if wide { x.transpose() } else { x.clone() };
    let svd = tall.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        unreachable!("both singular vector sets were requested")
    };
    let sigma = svd.singular_values;
    let s_max = sigma.max();
    let cut = rel_threshold * s_max;
    let filter = |s: f64| {
        if s <= cut {
            0.0
        } else if ridge > 0.0 {
            s / (s * s + ridge)
        } else {
            1.0 / s
        }
    };
    // tall: X = U Σ Vᵀ, w = U Σ⁺ Vᵀ y
    // wide: Xᵀ = U Σ Vᵀ, w = V Σ⁺ Uᵀ y
    let mut coeff = if wide { u.tr_mul(y) } else { &v_t * y };
    for (c, &s) in coeff.iter_mut().zip(sigma.iter()) {
        *c *= filter(s);
    }
    if wide {
        v_t.tr_mul(&coeff)
    } else {
        u * coeff
    }
}

/// Rank of `x` under the relative singular-value threshold.
pub fn numerical_rank(x: &DMatrix<f64>, rel_threshold: f64) -> usize {
    let sv = x.singular_values();
    let cut = rel_threshold * sv.max();
    if sv.max() == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > cut).count()
}

pub(crate) fn warn_underdetermined(n_o: usize, n: usize) {
    if n < n_o {
        warn!("training with {n} columns for {n_o} electrodes; the readout is underdetermined");
    }
}
