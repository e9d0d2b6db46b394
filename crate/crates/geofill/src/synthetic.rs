//! Seeded synthetic fields with known structure — low-rank tensors,
//! a layered smooth field, and isotropic bump fields — plus uniform
//! random cell masks. Every generator is deterministic in its seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Dims3, Field3, Mask3};

/// Scales a field so its root-mean-square value is 1 (values O(1)
/// regardless of shape); a zero field is returned unchanged.
fn normalize_rms(field: Field3) -> Field3 {
    let norm = field.frobenius_norm();
    if norm == 0.0 {
        return field;
    }
    let target = (field.dims().len() as f64).sqrt();
    field.scale(target / norm)
}

/// Rank-1 tensor `a ⊗ b ⊗ c` with seeded standard-normal factor
/// entries, RMS-normalized.
pub fn rank_one(dims: Dims3, seed: u64) -> Field3 {
    tucker(dims, [1, 1, 1], seed)
}

/// Tucker-form tensor `G ×₀ A ×₁ B ×₂ C` with a seeded standard-normal
/// core of the given multilinear ranks and factor matrices,
/// RMS-normalized. Every mode-n unfolding has rank ≤ ranks[n].
pub fn tucker(dims: Dims3, ranks: [usize; 3], seed: u64) -> Field3 {
    let [r0, r1, r2] = ranks;
    assert!(
        r0 >= 1 && r1 >= 1 && r2 >= 1,
        "multilinear ranks must be at least 1"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    };
    let core = draw(r0 * r1 * r2);
    let a = draw(dims.i * r0); // a[i + dims.i * p]
    let b = draw(dims.j * r1);
    let c = draw(dims.k * r2);
    let field = Field3::from_fn(dims, |i, j, k| {
        let mut acc = 0.0;
        for r in 0..r2 {
            let ck = c[k + dims.k * r];
            for q in 0..r1 {
                let bc = b[j + dims.j * q] * ck;
                for p in 0..r0 {
                    acc += core[p + r0 * (q + r1 * r)] * a[i + dims.i * p] * bc;
                }
            }
        }
        acc
    });
    normalize_rms(field)
}

/// Smooth laterally periodic field with a 3-level vertical step:
/// `f(i,j,k) = sin(2πi/I) · cos(2πj/J) · g(k)` where `g` is 1.0 on the
/// top third of layers, 0.5 on the middle third, and 1.5 on the rest.
/// Deterministic with no seed; spatially smooth along i and j, which
/// is the structure the Laplacian-smoothed solver is built to exploit.
pub fn layered(dims: Dims3) -> Field3 {
    let step = |k: usize| -> f64 {
        let third = dims.k.div_ceil(3);
        match k / third.max(1) {
            0 => 1.0,
            1 => 0.5,
            _ => 1.5,
        }
    };
    Field3::from_fn(dims, |i, j, k| {
        let a = (2.0 * std::f64::consts::PI * i as f64 / dims.i as f64).sin();
        let b = (2.0 * std::f64::consts::PI * j as f64 / dims.j as f64).cos();
        a * b * step(k)
    })
}

/// Sum of `n_bumps` seeded isotropic Gaussian bumps (std `sigma`, in
/// cell units along every axis), RMS-normalized. Having no preferred
/// direction makes it a control case for anisotropy searches.
pub fn gaussian_bumps(dims: Dims3, n_bumps: usize, sigma: f64, seed: u64) -> Field3 {
    assert!(n_bumps >= 1, "need at least one bump");
    assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 3]> = (0..n_bumps)
        .map(|_| {
            [
                rng.random_range(0.0..dims.i as f64),
                rng.random_range(0.0..dims.j as f64),
                rng.random_range(0.0..dims.k as f64),
            ]
        })
        .collect();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let field = Field3::from_fn(dims, |i, j, k| {
        centers
            .iter()
            .map(|c| {
                let di = i as f64 - c[0];
                let dj = j as f64 - c[1];
                let dk = k as f64 - c[2];
                (-(di * di + dj * dj + dk * dk) * inv).exp()
            })
            .sum()
    });
    normalize_rms(field)
}

/// Mask observing exactly `n_observed` cells drawn uniformly without
/// replacement from a seeded generator.
pub fn sample_cells_uniform(dims: Dims3, n_observed: usize, seed: u64) -> Result<Mask3> {
    if n_observed == 0 {
        return Err(Error::InvalidParameter(
            "at least one observed cell is required".to_string(),
        ));
    }
    if n_observed > dims.len() {
        return Err(Error::InvalidParameter(format!(
            "{n_observed} observed cells exceed the {} cells of {dims}",
            dims.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = vec![false; dims.len()];
    for p in rand::seq::index::sample(&mut rng, dims.len(), n_observed) {
        observed[p] = true;
    }
    Mask3::new(dims, observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_svd;
    use crate::tensor::unfold;
    use approx::assert_relative_eq;

    fn numerical_rank(field: &Field3, mode: usize) -> usize {
        let m = unfold(field, mode).unwrap().matrix;
        let svd = thin_svd(&m).unwrap();
        let top = svd.singular_values[0];
        svd.singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * top)
            .count()
    }

    #[test]
    fn rank_one_has_rank_one_unfoldings() {
        let dims = Dims3::new(6, 5, 4).unwrap();
        let field = rank_one(dims, 17);
        for mode in 0..3 {
            assert_eq!(numerical_rank(&field, mode), 1, "mode {mode}");
        }
    }

    #[test]
    fn tucker_unfoldings_have_the_requested_ranks() {
        let dims = Dims3::new(12, 10, 8).unwrap();
        let field = tucker(dims, [3, 3, 3], 4);
        for mode in 0..3 {
            assert_eq!(numerical_rank(&field, mode), 3, "mode {mode}");
        }
        // ranks must be mutually consistent: rank in one mode cannot
        // exceed the product of the other two
        let skew = tucker(dims, [2, 3, 2], 4);
        assert_eq!(numerical_rank(&skew, 0), 2);
        assert_eq!(numerical_rank(&skew, 1), 3);
        assert_eq!(numerical_rank(&skew, 2), 2);
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let dims = Dims3::new(7, 6, 5).unwrap();
        assert_eq!(tucker(dims, [3, 3, 3], 9), tucker(dims, [3, 3, 3], 9));
        assert_ne!(tucker(dims, [3, 3, 3], 9), tucker(dims, [3, 3, 3], 10));
        assert_eq!(gaussian_bumps(dims, 4, 2.0, 3), gaussian_bumps(dims, 4, 2.0, 3));
    }

    #[test]
    fn generators_have_unit_rms() {
        let dims = Dims3::new(9, 8, 7).unwrap();
        let n = (dims.len() as f64).sqrt();
        assert_relative_eq!(tucker(dims, [3, 3, 3], 2).frobenius_norm(), n, epsilon = 1e-9);
        assert_relative_eq!(rank_one(dims, 2).frobenius_norm(), n, epsilon = 1e-9);
        assert_relative_eq!(
            gaussian_bumps(dims, 5, 1.5, 2).frobenius_norm(),
            n,
            epsilon = 1e-9
        );
    }

    #[test]
    fn layered_field_matches_its_formula() {
        let dims = Dims3::new(8, 8, 9).unwrap();
        let field = layered(dims);
        // at i = I/4 the sine is 1; at j = 0 the cosine is 1
        assert_relative_eq!(field.get(2, 0, 0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(field.get(2, 0, 4), 0.5, epsilon = 1e-12);
        assert_relative_eq!(field.get(2, 0, 8), 1.5, epsilon = 1e-12);
        // at i = 3I/4 the sine is -1
        assert_relative_eq!(field.get(6, 0, 0), -1.0, epsilon = 1e-12);
        // at j = J/2 the cosine is -1
        assert_relative_eq!(field.get(2, 4, 0), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_cell_mask_counts_and_determinism() {
        let dims = Dims3::new(10, 10, 10).unwrap();
        let mask = sample_cells_uniform(dims, 100, 8).unwrap();
        assert_eq!(mask.observed_count(), 100);
        assert_eq!(
            mask,
            sample_cells_uniform(dims, 100, 8).unwrap()
        );
        assert_ne!(mask, sample_cells_uniform(dims, 100, 9).unwrap());
        assert!(sample_cells_uniform(dims, 0, 1).is_err());
        assert!(sample_cells_uniform(dims, 1001, 1).is_err());
        assert!(sample_cells_uniform(dims, 1000, 1).unwrap().is_all_observed());
    }
}
