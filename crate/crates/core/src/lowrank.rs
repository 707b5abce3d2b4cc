//! Log-determinant rank surrogate, weighted singular value thresholding and
//! the per-group low-rank update.

use crate::error::{Error, Result};
use crate::linalg::{svd, PatchMatrix, SvdFactors};

/// `g(t) = ln(t + epsilon)` on `t >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateG {
    epsilon: f64,
}

impl SurrogateG {
    pub const DEFAULT_EPSILON: f64 = 1e-10;

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be a positive finite number"));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        (t + self.epsilon).ln()
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        1.0 / (t + self.epsilon)
    }

    /// Lipschitz constant of `g'` on `[0, inf)`: `1/epsilon^2`.
    pub fn lipschitz(&self) -> f64 {
        1.0 / (self.epsilon * self.epsilon)
    }
}

impl Default for SurrogateG {
    fn default() -> Self {
        Self {
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Nonnegative, nondecreasing singular value weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("entry {i} = {} is not a finite nonnegative number", w[i]),
            ));
        }
        if let Some(i) = w.windows(2).position(|p| p[1] < p[0]) {
            return Err(Error::invalid(
                "weights",
                format!("not ascending at index {}: {} > {}", i + 1, w[i], w[i + 1]),
            ));
        }
        Ok(Self(w))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `sum_i g(sigma_i)`.
pub fn surrogate_value(g: &SurrogateG, sigma: &[f64]) -> f64 {
    sigma.iter().map(|&s| g.value(s)).sum()
}

/// `w_i = g'(sigma_i)`; ascending whenever `sigma` is nonincreasing.
pub fn reweight(g: &SurrogateG, sigma: &[f64]) -> WeightVector {
    debug_assert!(sigma.windows(2).all(|p| p[0] >= p[1]));
    WeightVector(sigma.iter().map(|&s| g.derivative(s)).collect())
}

/// Weighted singular value thresholding `U diag((sigma_i - lambda w_i)_+) V^T`.
pub fn wsvt(y: &PatchMatrix, lambda: f64, w: &WeightVector) -> Result<PatchMatrix> {
    let f = svd(y)?;
    check_weights(&f, w)?;
    Ok(f.compose(&shrink(f.singular_values(), lambda, w)))
}

fn check_weights(f: &SvdFactors, w: &WeightVector) -> Result<()> {
    if w.len() != f.rows() {
        return Err(Error::dims(
            format!("{} weights", f.rows()),
            format!("{} weights", w.len()),
        ));
    }
    Ok(())
}

fn shrink(sigma: &[f64], lambda: f64, w: &WeightVector) -> Vec<f64> {
    sigma
        .iter()
        .zip(w.as_slice())
        .map(|(&s, &wi)| (s - lambda * wi).max(0.0))
        .collect()
}

/// Result of one group's low-rank step.
#[derive(Debug, Clone)]
pub struct LowRankStep {
    /// The updated patch matrix.
    pub matrix: PatchMatrix,
    /// Weights recomputed from `singular_values`.
    pub weights: WeightVector,
    /// Singular values of the (centered) updated matrix.
    pub singular_values: Vec<f64>,
    /// Factorization of the (centered) target; shares its singular vectors
    /// with the updated matrix.
    pub factors: SvdFactors,
}

/// `(1/denominator) * WSVT_lambda(target)` followed by reweighting.
///
/// With `center`, the column mean (mean patch) of `target` is removed before
/// thresholding and `mean / denominator` is added back to every column, so
/// only the deviations from the mean patch are penalized.
pub fn low_rank_update(
    target: &PatchMatrix,
    lambda: f64,
    denominator: f64,
    w: &WeightVector,
    g: &SurrogateG,
    center: bool,
) -> Result<LowRankStep> {
    update(target, lambda, denominator, Some(w), g, center)
}

/// As [`low_rank_update`], with the thresholding weights taken from the
/// target itself: `w_i = g'(sigma_i(target) / denominator)`.
pub fn low_rank_update_self_weighted(
    target: &PatchMatrix,
    lambda: f64,
    denominator: f64,
    g: &SurrogateG,
    center: bool,
) -> Result<LowRankStep> {
    update(target, lambda, denominator, None, g, center)
}

fn update(
    target: &PatchMatrix,
    lambda: f64,
    denominator: f64,
    w: Option<&WeightVector>,
    g: &SurrogateG,
    center: bool,
) -> Result<LowRankStep> {
    if !(denominator > 0.0) {
        return Err(Error::invalid("denominator", "must be positive"));
    }
    let mut work = target.clone();
    let mean = if center {
        let mean = target.column_mean();
        work.add_to_columns(&mean, -1.0);
        Some(mean)
    } else {
        None
    };
    let factors = svd(&work)?;
    let inv = 1.0 / denominator;
    let own;
    let w = match w {
        Some(w) => {
            check_weights(&factors, w)?;
            w
        }
        None => {
            let scaled: Vec<f64> = factors.singular_values().iter().map(|s| s * inv).collect();
            own = reweight(g, &scaled);
            &own
        }
    };
    let singular_values: Vec<f64> = shrink(factors.singular_values(), lambda, w)
        .into_iter()
        .map(|s| s * inv)
        .collect();
    let mut matrix = factors.compose(&singular_values);
    if let Some(mean) = mean {
        matrix.add_to_columns(&mean, inv);
    }
    let weights = reweight(g, &singular_values);
    Ok(LowRankStep {
        matrix,
        weights,
        singular_values,
        factors,
    })
}

/// Singular values of `y`, after removing the column mean when `center` is set.
pub fn group_singular_values(y: &PatchMatrix, center: bool) -> Result<Vec<f64>> {
    if center {
        let mut c = y.clone();
        c.add_to_columns(&y.column_mean(), -1.0);
        Ok(svd(&c)?.singular_values().to_vec())
    } else {
        Ok(svd(y)?.singular_values().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn diag_3_1() -> PatchMatrix {
        let mut y = PatchMatrix::zeros(2, 3);
        y.set(0, 0, 3.0);
        y.set(1, 1, 1.0);
        y
    }

    #[test]
    fn surrogate_examples() {
        let g = SurrogateG::new(1.0).unwrap();
        assert_eq!(surrogate_value(&g, &[0.0, 0.0]), 0.0);
        let g = SurrogateG::new(1e-3).unwrap();
        assert!((surrogate_value(&g, &[std::f64::consts::E - 1e-3]) - 1.0).abs() < 1e-15);
        assert!(SurrogateG::new(0.0).is_err());
    }

    #[test]
    fn reweight_examples() {
        let g = SurrogateG::default();
        let w = reweight(&g, &[0.0]);
        assert!((w.as_slice()[0] - 1e10).abs() < 1e-3);
        let g = SurrogateG::new(1.0).unwrap();
        let w = reweight(&g, &[9.0, 4.0]);
        assert_eq!(w.as_slice(), &[0.1, 0.2]);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.1, 0.2, 0.2]).is_ok());
        assert!(WeightVector::new(vec![0.2, 0.1]).is_err());
        assert!(WeightVector::new(vec![-0.1, 0.1]).is_err());
    }

    #[test]
    fn wsvt_examples() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let y = PatchMatrix::from_fn(4, 6, |_, _| rng.random_range(-2.0..2.0));
        let out = wsvt(&y, 1.0, &WeightVector::zeros(4)).unwrap();
        assert!(out.distance_sq(&y).sqrt() < 1e-10);

        let out = wsvt(&diag_3_1(), 1.0, &WeightVector::new(vec![0.5, 1.0]).unwrap()).unwrap();
        let s = svd(&out).unwrap();
        assert!((s.singular_values()[0] - 2.5).abs() < 1e-12);
        assert!(s.singular_values()[1].abs() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let g = SurrogateG::default();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let t = PatchMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let step = low_rank_update(&t, 0.0, 1.0, &WeightVector::zeros(3), &g, false).unwrap();
        assert!(step.matrix.distance_sq(&t).sqrt() < 1e-12);

        let zero = PatchMatrix::zeros(3, 5);
        let w = WeightVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        for center in [false, true] {
            let step = low_rank_update(&zero, 0.7, 1.0, &w, &g, center).unwrap();
            assert!(step.matrix.data().iter().all(|&v| v == 0.0));
            assert!(step.weights.as_slice().iter().all(|&v| v == 1e10));
        }
    }

    #[test]
    fn uncentered_update_is_scaled_wsvt() {
        let g = SurrogateG::default();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..20 {
            let t = PatchMatrix::from_fn(4, 7, |_, _| rng.random_range(-3.0..3.0));
            let mut w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            w.sort_by(f64::total_cmp);
            let w = WeightVector::new(w).unwrap();
            let den = 1.001;
            let step = low_rank_update(&t, 0.8, den, &w, &g, false).unwrap();
            let expected = wsvt(&t, 0.8, &w).unwrap().scaled(1.0 / den);
            assert!(step.matrix.distance_sq(&expected).sqrt() < 1e-12);
        }
    }

    #[test]
    fn centered_update_preserves_mean_patch() {
        let g = SurrogateG::default();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let t = PatchMatrix::from_fn(4, 9, |r, _| 5.0 + r as f64 + rng.random_range(-0.1..0.1));
        let w = WeightVector::new(vec![100.0; 4]).unwrap();
        // huge threshold kills every centered component
        let step = low_rank_update(&t, 1.0, 2.0, &w, &g, true).unwrap();
        let mean = t.column_mean();
        for c in 0..9 {
            for r in 0..4 {
                assert!((step.matrix.get(r, c) - mean[r] / 2.0).abs() < 1e-12);
            }
        }
        assert!(step.singular_values.iter().all(|&s| s == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn firm_shrinkage(seed in 0u64..10_000, lambda in 0.0f64..3.0) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let m = rng.random_range(1..6);
            let n = m + rng.random_range(0..5);
            let y = PatchMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
            let mut w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            w.sort_by(f64::total_cmp);
            let w = WeightVector::new(w).unwrap();
            let before = svd(&y).unwrap();
            let after = svd(&wsvt(&y, lambda, &w).unwrap()).unwrap();
            let tol = 1e-10 * before.singular_values()[0].max(1.0);
            for (a, b) in after.singular_values().iter().zip(before.singular_values()) {
                prop_assert!(*a <= b + tol);
            }
            let rank = |s: &[f64]| s.iter().filter(|&&v| v > tol).count();
            prop_assert!(rank(after.singular_values()) <= rank(before.singular_values()));
        }

        #[test]
        fn derivative_lipschitz_and_supergradient(
            eps in 1e-3f64..1.0, s in 0.0f64..50.0, t in 0.0f64..50.0,
        ) {
            let g = SurrogateG::new(eps).unwrap();
            let lhs = (g.derivative(s) - g.derivative(t)).abs();
            prop_assert!(lhs <= g.lipschitz() * (s - t).abs() * (1.0 + 1e-12) + 1e-300);
            prop_assert!(g.value(s) <= g.value(t) + g.derivative(t) * (s - t) + 1e-12);
        }

        #[test]
        fn reweight_is_ascending(mut sigma in proptest::collection::vec(0.0f64..100.0, 1..10)) {
            sigma.sort_by(|a, b| b.total_cmp(a));
            let w = reweight(&SurrogateG::default(), &sigma);
            prop_assert!(w.as_slice().windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn surrogate_matches_termwise_sum(sigma in proptest::collection::vec(0.0f64..100.0, 0..12)) {
            let g = SurrogateG::new(0.5).unwrap();
            let mut expected = 0.0;
            for s in &sigma {
                expected += (s + 0.5).ln();
            }
            prop_assert!((surrogate_value(&g, &sigma) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }
}
