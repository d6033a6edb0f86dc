//! Envelope features, the sigmoid readout, pseudoinverse training and
//! classification metrics.

pub mod envelope;
pub mod linalg;

pub use envelope::{envelope, EnvelopeMethod, EnvelopeOptions, EnvelopeRecorder, FeatureMatrix};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::drive::Label;
use crate::error::{Error, Result};

/// Teacher values used in place of 0 and 1 so that `logit` stays finite.
pub const TEACHER_CLAMP: (f64, f64) = (0.001, 0.999);

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Inverse of [`sigmoid`] on the open interval (0, 1).
pub fn logit(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("logit is undefined at {y}; clamp targets into (0, 1) first")));
    }
    Ok((y / (1.0 - y)).ln())
}

/// Trained single-neuron readout `ŷ = sigmoid(W · x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    pub w_out: Vec<f64>,
    /// Grid cell each weight reads from.
    pub electrode_ids: Vec<usize>,
    /// Teacher values that replaced 0/1 during training.
    pub clamp: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Relative singular-value cutoff of the pseudoinverse.
    pub sv_threshold: f64,
    /// Optional Tikhonov parameter, 0 for the plain pseudoinverse.
    pub ridge: f64,
    pub clamp: (f64, f64),
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { sv_threshold: 1e-10, ridge: 0.0, clamp: TEACHER_CLAMP }
    }
}

/// Unmasked columns of `x` as a dense `N_o × N` matrix, with their labels.
fn training_columns(x: &FeatureMatrix) -> (DMatrix<f64>, Vec<Label>) {
    let keep: Vec<usize> = (0..x.n_steps()).filter(|&n| !x.warmup_mask[n]).collect();
    let k = x.n_o();
    let mut data = Vec::with_capacity(k * keep.len());
    for &n in &keep {
        data.extend_from_slice(x.column(n));
    }
    let labels = keep.iter().map(|&n| x.step_labels[n]).collect();
    (DMatrix::from_vec(k, keep.len(), data), labels)
}

/// `W = logit(Y) X⁺` over the non-warmup columns, with `Y` the clamped
/// per-step teacher (low value for SIN, high value for SQUARE).
pub fn train_readout(x: &FeatureMatrix, opts: &TrainOptions) -> Result<ReadoutModel> {
    let (mat, labels) = training_columns(x);
    if mat.ncols() == 0 {
        return Err(Error::Domain("no unmasked columns to train on".into()));
    }
    let lo = logit(opts.clamp.0)?;
    let hi = logit(opts.clamp.1)?;
    let y = DVector::from_iterator(
        labels.len(),
        labels.iter().map(|l| match l {
            Label::Sin => lo,
            Label::Square => hi,
        }),
    );
    linalg::warn_underdetermined(mat.nrows(), mat.ncols());
    if mat.iter().all(|&v| v == 0.0) {
        warn!("all features are zero; returning zero weights");
    }
    let w = linalg::min_norm_solve(&mat, &y, opts.sv_threshold, opts.ridge);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("training produced non-finite weights".into()));
    }
    Ok(ReadoutModel { w_out: w.iter().copied().collect(), electrode_ids: x.electrode_ids.clone(), clamp: opts.clamp })
}

impl ReadoutModel {
    /// `W · x(n)` for every column.
    pub fn activations(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_o() != self.w_out.len() {
            return Err(Error::Dimension { expected: self.w_out.len(), got: x.n_o() });
        }
        Ok((0..x.n_steps())
            .map(|n| x.column(n).iter().zip(&self.w_out).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `ŷ(n) = sigmoid(W · x(n))`.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.into_iter().map(sigmoid).collect())
    }
}

pub fn predict(model: &ReadoutModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

/// Classification quality over the evaluated steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Root mean square error against 0/1 teachers.
    pub rmse: f64,
    /// Fraction with `ŷ > 0.5` on SQUARE steps or `ŷ ≤ 0.5` on SIN steps.
    pub correct_rate: f64,
    /// Correct rate leaving out the first `transient_steps` of every section.
    pub correct_rate_steady: f64,
    pub n_steps: usize,
}

/// Decision rule: SQUARE iff `ŷ > 0.5`.
pub fn is_correct(y_hat: f64, label: Label) -> bool {
    match label {
        Label::Square => y_hat > 0.5,
        Label::Sin => y_hat <= 0.5,
    }
}

/// RMSE and correct rates over steps where `mask` is false.
///
/// `step_in_section` places each step in its section so the steady-state rate
/// can skip the first `transient_steps` after every switch.
pub fn evaluate(
    y_hat: &[f64],
    labels: &[Label],
    mask: &[bool],
    step_in_section: &[usize],
    transient_steps: usize,
) -> Result<Evaluation> {
    let n = y_hat.len();
    for len in [labels.len(), mask.len(), step_in_section.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let (mut se, mut correct, mut count) = (0.0, 0usize, 0usize);
    let (mut steady_correct, mut steady_count) = (0usize, 0usize);
    for i in 0..n {
        if mask[i] {
            continue;
        }
        let e = y_hat[i] - labels[i].target();
        se += e * e;
        count += 1;
        let ok = is_correct(y_hat[i], labels[i]);
        correct += ok as usize;
        if step_in_section[i] >= transient_steps {
            steady_count += 1;
            steady_correct += ok as usize;
        }
    }
    if count == 0 {
        return Err(Error::Domain("no unmasked steps to evaluate".into()));
    }
    Ok(Evaluation {
        rmse: (se / count as f64).sqrt(),
        correct_rate: correct as f64 / count as f64,
        correct_rate_steady: if steady_count == 0 { f64::NAN } else { steady_correct as f64 / steady_count as f64 },
        n_steps: count,
    })
}

/// [`evaluate`] on the columns of a feature matrix, skipping its warmup.
pub fn evaluate_features(y_hat: &[f64], x: &FeatureMatrix, transient_steps: usize) -> Result<Evaluation> {
    evaluate(y_hat, &x.step_labels, &x.warmup_mask, &x.step_in_section, transient_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(cols: &[Vec<f64>], labels: &[Label]) -> FeatureMatrix {
        let n_o = cols[0].len();
        FeatureMatrix {
            values: cols.concat(),
            electrode_ids: (0..n_o).collect(),
            steps: (0..cols.len()).collect(),
            step_in_section: (0..cols.len()).collect(),
            step_labels: labels.to_vec(),
            warmup_mask: vec![false; cols.len()],
        }
    }

    #[test]
    fn sigmoid_logit_pair() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((logit(0.999).unwrap() - 999f64.ln()).abs() < 1e-12);
        assert!((logit(0.999).unwrap() - 6.9068).abs() < 1e-4);
        for y in [0.1, 0.5, 0.9] {
            assert!((sigmoid(logit(y).unwrap()) - y).abs() < 1e-12);
        }
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
    }

    #[test]
    fn identity_features_interpolate_clamped_teacher() {
        let x = features(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[Label::Sin, Label::Square]);
        let m = train_readout(&x, &TrainOptions::default()).unwrap();
        assert!((m.w_out[0] + 6.9068).abs() < 1e-4);
        assert!((m.w_out[1] - 6.9068).abs() < 1e-4);
        assert!((m.w_out[0] + m.w_out[1]).abs() < 1e-12);
        let y = m.predict(&x).unwrap();
        assert!((y[0] - 0.001).abs() < 1e-6 && (y[1] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn warmup_columns_are_ignored() {
        let mut x = features(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]], &[Label::Sin, Label::Square, Label::Sin]);
        x.warmup_mask[2] = true;
        let m = train_readout(&x, &TrainOptions::default()).unwrap();
        assert!((m.w_out[0] + 6.9068).abs() < 1e-4);
    }

    #[test]
    fn zero_features_train_to_zero_weights() {
        let x = features(&vec![vec![0.0; 3]; 4], &[Label::Sin, Label::Square, Label::Sin, Label::Square]);
        let m = train_readout(&x, &TrainOptions::default()).unwrap();
        assert!(m.w_out.iter().all(|&w| w == 0.0));
        assert!(m.predict(&x).unwrap().iter().all(|&y| y == 0.5));
    }

    #[test]
    fn predict_checks_dimensions() {
        let x = features(&[vec![1.0, 2.0]], &[Label::Sin]);
        let m = ReadoutModel { w_out: vec![1.0; 3], electrode_ids: vec![0, 1, 2], clamp: TEACHER_CLAMP };
        assert!(matches!(m.predict(&x), Err(Error::Dimension { expected: 3, got: 2 })));
    }

    #[test]
    fn evaluate_exact_and_constant() {
        let labels: Vec<Label> = (0..100).map(|i| if i < 50 { Label::Sin } else { Label::Square }).collect();
        let exact: Vec<f64> = labels.iter().map(|l| l.target()).collect();
        let sis: Vec<usize> = (0..100).map(|i| i % 50).collect();
        let mask = vec![false; 100];
        let e = evaluate(&exact, &labels, &mask, &sis, 10).unwrap();
        assert_eq!((e.rmse, e.correct_rate, e.correct_rate_steady), (0.0, 1.0, 1.0));
        let half = vec![0.5; 100];
        let e = evaluate(&half, &labels, &mask, &sis, 10).unwrap();
        assert!((e.rmse - 0.5).abs() < 1e-15);
        assert!((e.correct_rate - 0.5).abs() < 1e-15);
        assert!(evaluate(&half, &labels, &vec![true; 100], &sis, 10).is_err());
    }

    /// Dense Gaussian elimination with partial pivoting, `a x = b`.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    /// `w = y Xᵀ (X Xᵀ + λ I)⁻¹` for `X` given as columns.
    fn normal_equations(cols: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
        let k = cols[0].len();
        let mut g = vec![vec![0.0; k]; k];
        let mut r = vec![0.0; k];
        for (c, &t) in cols.iter().zip(y) {
            for i in 0..k {
                r[i] += t * c[i];
                for j in 0..k {
                    g[i][j] += c[i] * c[j];
                }
            }
        }
        for (i, row) in g.iter_mut().enumerate() {
            row[i] += lambda;
        }
        gauss_solve(g, r)
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    fn teacher(labels: &[Label]) -> Vec<f64> {
        labels.iter().map(|l| if *l == Label::Square { 999f64.ln() } else { -(999f64.ln()) }).collect()
    }

    #[test]
    fn full_rank_matches_normal_equations() {
        let mut s = 7u64;
        let cols: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| lcg(&mut s)).collect()).collect();
        let labels: Vec<Label> = (0..40).map(|i| if (i / 7) % 2 == 0 { Label::Sin } else { Label::Square }).collect();
        let m = train_readout(&features(&cols, &labels), &TrainOptions::default()).unwrap();
        let oracle = normal_equations(&cols, &teacher(&labels), 0.0);
        for (a, b) in m.w_out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn rank_deficient_gives_minimum_norm_solution() {
        // 6 features that are combinations of 3 latent signals, 20 steps
        let mut s = 11u64;
        let mix: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| lcg(&mut s)).collect()).collect();
        let cols: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| lcg(&mut s)).collect();
                mix.iter().map(|m| m.iter().zip(&z).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
        let labels: Vec<Label> = (0..20).map(|i| if i % 3 == 0 { Label::Square } else { Label::Sin }).collect();
        let x = features(&cols, &labels);
        let m = train_readout(&x, &TrainOptions::default()).unwrap();
        let oracle = normal_equations(&cols, &teacher(&labels), 1e-9);
        for (a, b) in m.w_out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
        assert_eq!(linalg::numerical_rank(&training_columns(&x).0, 1e-10), 3);
    }

    proptest::proptest! {
        #[test]
        fn least_squares_optimal(seed in 0u64..1000, dir in proptest::collection::vec(-1.0f64..1.0, 4), eps in 1e-4f64..1e-1) {
            let mut s = seed;
            let cols: Vec<Vec<f64>> = (0..15).map(|_| (0..4).map(|_| lcg(&mut s)).collect()).collect();
            let labels: Vec<Label> = (0..15).map(|i| if lcg(&mut s) > 0.0 || i == 0 { Label::Square } else { Label::Sin }).collect();
            let m = train_readout(&features(&cols, &labels), &TrainOptions::default()).unwrap();
            let y = teacher(&labels);
            let cost = |w: &[f64]| -> f64 {
                cols.iter().zip(&y).map(|(c, t)| {
                    let a: f64 = c.iter().zip(w).map(|(p, q)| p * q).sum();
                    (a - t).powi(2)
                }).sum()
            };
            let base = cost(&m.w_out);
            let moved: Vec<f64> = m.w_out.iter().zip(&dir).map(|(w, d)| w + eps * d).collect();
            proptest::prop_assert!(cost(&moved) >= base - 1e-9 * (1.0 + base));
        }

        #[test]
        fn decisions_invariant_to_positive_feature_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut s = seed;
            let cols: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| lcg(&mut s)).collect()).collect();
            let labels: Vec<Label> = (0..12).map(|i| if i % 2 == 0 { Label::Square } else { Label::Sin }).collect();
            let x = features(&cols, &labels);
            let scaled: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().map(|v| v * scale).collect()).collect();
            let xs = features(&scaled, &labels);
            let a = train_readout(&x, &TrainOptions::default()).unwrap().activations(&x).unwrap();
            let b = train_readout(&xs, &TrainOptions::default()).unwrap().activations(&xs).unwrap();
            for (p, q) in a.iter().zip(&b) {
                proptest::prop_assert!((p - q).abs() < 1e-8 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn steady_rate_skips_transients() {
        let labels = vec![Label::Square; 20];
        let y: Vec<f64> = (0..20).map(|i| if i % 10 < 3 { 0.2 } else { 0.9 }).collect();
        let sis: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let e = evaluate(&y, &labels, &[false; 20], &sis, 3).unwrap();
        assert!((e.correct_rate - 0.7).abs() < 1e-12);
        assert_eq!(e.correct_rate_steady, 1.0);
    }
}
