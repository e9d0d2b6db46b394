//! Dense 3-way tensors over a regular grid: mode unfoldings, mask
//! projections, norms, and the relative-error metric used to score
//! reconstructions.
//!
//! Storage convention (shared by every module in this crate): the linear
//! index of cell `(i, j, k)` is `i + I*(j + J*k)` — `i` varies fastest,
//! then `j`, then `k`. This matches the layout of SPE10 distribution
//! files, so loading them is a straight streaming read.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Grid extents of a 3-way tensor. All three must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims3 {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Dims3 {
    pub fn new(i: usize, j: usize, k: usize) -> Result<Self> {
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dims must be positive, got {i}x{j}x{k}"
            )));
        }
        Ok(Self { i, j, k })
    }

    /// Total cell count `i * j * k`.
    pub fn len(&self) -> usize {
        self.i * self.j * self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear index of `(i, j, k)` under the i-fastest convention.
    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.i && j < self.j && k < self.k);
        i + self.i * (j + self.j * k)
    }

    /// Inverse of [`Dims3::linear`].
    #[inline]
    pub fn unravel(&self, p: usize) -> (usize, usize, usize) {
        (p % self.i, (p / self.i) % self.j, p / (self.i * self.j))
    }

    /// Extent along `mode` (0 → i, 1 → j, 2 → k).
    pub fn extent(&self, mode: usize) -> Result<usize> {
        match mode {
            0 => Ok(self.i),
            1 => Ok(self.j),
            2 => Ok(self.k),
            m => Err(Error::InvalidMode(m)),
        }
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.i, self.j, self.k)
    }
}

/// Dense real-valued 3-way array holding a property field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    dims: Dims3,
    values: Vec<f64>,
}

impl Field3 {
    /// Wraps a value vector laid out in the i-fastest convention.
    pub fn new(dims: Dims3, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::DimsMismatch {
                context: "field construction",
                expected: format!("{} values for dims {dims}", dims.len()),
                found: format!("{} values", values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "field value at linear index {pos} is {}",
                values[pos]
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Dims3) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for k in 0..dims.k {
            for j in 0..dims.j {
                for i in 0..dims.i {
                    values.push(f(i, j, k));
                }
            }
        }
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.dims.linear(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let p = self.dims.linear(i, j, k);
        self.values[p] = value;
    }

    /// Values in linear (i-fastest) order.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self + scale * other`.
    pub fn scaled_add(&self, scale: f64, other: &Field3) -> Result<Field3> {
        check_same_dims("field arithmetic", self.dims, other.dims)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Field3 {
            dims: self.dims,
            values,
        })
    }

    pub fn sub(&self, other: &Field3) -> Result<Field3> {
        self.scaled_add(-1.0, other)
    }

    pub fn scale(&self, factor: f64) -> Field3 {
        Field3 {
            dims: self.dims,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Subvolume `[0, new.i) x [0, new.j) x [0, new.k)`; the new shape
    /// must fit inside the current one.
    pub fn crop(&self, new_dims: Dims3) -> Result<Field3> {
        if new_dims.i > self.dims.i || new_dims.j > self.dims.j || new_dims.k > self.dims.k {
            return Err(Error::InvalidParameter(format!(
                "crop {new_dims} does not fit inside {}",
                self.dims
            )));
        }
        Ok(Field3::from_fn(new_dims, |i, j, k| self.get(i, j, k)))
    }
}

/// Binary tensor of observed cells, stored as booleans so that observed
/// zeros cannot be confused with absent values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    dims: Dims3,
    observed: Vec<bool>,
}

impl Mask3 {
    pub fn new(dims: Dims3, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != dims.len() {
            return Err(Error::DimsMismatch {
                context: "mask construction",
                expected: format!("{} flags for dims {dims}", dims.len()),
                found: format!("{} flags", observed.len()),
            });
        }
        Ok(Self { dims, observed })
    }

    pub fn all_observed(dims: Dims3) -> Self {
        Self {
            dims,
            observed: vec![true; dims.len()],
        }
    }

    pub fn none_observed(dims: Dims3) -> Self {
        Self {
            dims,
            observed: vec![false; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize, k: usize) -> bool {
        self.observed[self.dims.linear(i, j, k)]
    }

    pub fn set_observed(&mut self, i: usize, j: usize, k: usize, observed: bool) {
        let p = self.dims.linear(i, j, k);
        self.observed[p] = observed;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn is_all_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn has_observed(&self) -> bool {
        self.observed.iter().any(|&o| o)
    }
}

/// Mode-n matricization of a [`Field3`].
///
/// Rows index mode `n`; columns enumerate the two remaining modes with
/// the lowest-numbered remaining mode varying fastest. Folding is the
/// exact inverse for the same mode and dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Unfolding {
    pub mode: usize,
    pub matrix: DenseMatrix,
}

impl Unfolding {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Matricizes `field` along `mode`.
///
/// Column index for mode 0 is `j + J*k`, for mode 1 `i + I*k`, and for
/// mode 2 `i + I*j`.
pub fn unfold(field: &Field3, mode: usize) -> Result<Unfolding> {
    let d = field.dims();
    let rows = d.extent(mode)?;
    let cols = d.len() / rows;
    let src = field.as_slice();
    let mut dst = vec![0.0; d.len()];
    match mode {
        0 => dst.copy_from_slice(src), // column-major mode-0 unfolding is the linear layout
        1 => {
            let mut p = 0;
            for k in 0..d.k {
                for j in 0..d.j {
                    for i in 0..d.i {
                        dst[j + d.j * (i + d.i * k)] = src[p];
                        p += 1;
                    }
                }
            }
        }
        2 => {
            let mut p = 0;
            for k in 0..d.k {
                for j in 0..d.j {
                    for i in 0..d.i {
                        dst[k + d.k * (i + d.i * j)] = src[p];
                        p += 1;
                    }
                }
            }
        }
        _ => unreachable!("extent() rejected the mode"),
    }
    Ok(Unfolding {
        mode,
        matrix: DenseMatrix::from_column_major(rows, cols, dst)?,
    })
}

/// Inverse of [`unfold`] for the unfolding's own mode.
pub fn fold(unfolding: &Unfolding, dims: Dims3) -> Result<Field3> {
    let rows = dims.extent(unfolding.mode)?;
    let cols = dims.len() / rows;
    if unfolding.rows() != rows || unfolding.cols() != cols {
        return Err(Error::DimsMismatch {
            context: "fold",
            expected: format!("{rows}x{cols} unfolding for dims {dims} mode {}", unfolding.mode),
            found: format!("{}x{}", unfolding.rows(), unfolding.cols()),
        });
    }
    let src = unfolding.matrix.as_column_major();
    let mut dst = vec![0.0; dims.len()];
    let d = dims;
    match unfolding.mode {
        0 => dst.copy_from_slice(src),
        1 => {
            let mut p = 0;
            for k in 0..d.k {
                for j in 0..d.j {
                    for i in 0..d.i {
                        dst[p] = src[j + d.j * (i + d.i * k)];
                        p += 1;
                    }
                }
            }
        }
        2 => {
            let mut p = 0;
            for k in 0..d.k {
                for j in 0..d.j {
                    for i in 0..d.i {
                        dst[p] = src[k + d.k * (i + d.i * j)];
                        p += 1;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Field3::new(dims, dst)
}

fn check_same_dims(context: &'static str, a: Dims3, b: Dims3) -> Result<()> {
    if a != b {
        return Err(Error::DimsMismatch {
            context,
            expected: a.to_string(),
            found: b.to_string(),
        });
    }
    Ok(())
}

/// Keeps observed entries, zeroes the rest.
pub fn project(field: &Field3, mask: &Mask3) -> Result<Field3> {
    check_same_dims("projection", field.dims(), mask.dims())?;
    let values = field
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    Ok(Field3 {
        dims: field.dims(),
        values,
    })
}

/// Keeps unobserved entries, zeroes the rest; together with [`project`]
/// this partitions the field exactly.
pub fn project_complement(field: &Field3, mask: &Mask3) -> Result<Field3> {
    check_same_dims("projection", field.dims(), mask.dims())?;
    let values = field
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&v, &o)| if o { 0.0 } else { v })
        .collect();
    Ok(Field3 {
        dims: field.dims(),
        values,
    })
}

/// Relative error `‖P⊥(x̂) − P⊥(y)‖_F / ‖P⊥(y)‖_F` over unobserved cells
/// only; observed cells never enter either norm.
pub fn rse(reconstruction: &Field3, truth: &Field3, mask: &Mask3) -> Result<f64> {
    check_same_dims("relative error", reconstruction.dims(), truth.dims())?;
    check_same_dims("relative error", reconstruction.dims(), mask.dims())?;
    if mask.is_all_observed() {
        return Err(Error::MaskUnusable(
            "no unobserved cells to score".to_string(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&r, &t), &o) in reconstruction
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .zip(mask.as_slice())
    {
        if !o {
            num += (r - t) * (r - t);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num.sqrt() / den.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn counting_field(dims: Dims3) -> Field3 {
        let values = (1..=dims.len()).map(|v| v as f64).collect();
        Field3::new(dims, values).unwrap()
    }

    fn seeded_field(dims: Dims3, seed: u64) -> Field3 {
        // splitmix-style fill, good enough for structural tests
        let mut s = seed;
        Field3::from_fn(dims, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn linear_order_is_i_fastest() {
        let d = Dims3::new(3, 4, 5).unwrap();
        assert_eq!(d.linear(0, 0, 0), 0);
        assert_eq!(d.linear(1, 0, 0), 1);
        assert_eq!(d.linear(0, 1, 0), 3);
        assert_eq!(d.linear(0, 0, 1), 12);
        for p in 0..d.len() {
            let (i, j, k) = d.unravel(p);
            assert_eq!(d.linear(i, j, k), p);
        }
    }

    #[test]
    fn unfold_2x2x2_matches_enumeration() {
        // Entries 1..8 in storage order, placed per the convention
        // formula for every one of the 8 index triples.
        let d = Dims3::new(2, 2, 2).unwrap();
        let f = counting_field(d);

        let m0 = unfold(&f, 0).unwrap();
        assert_eq!((m0.rows(), m0.cols()), (2, 4));
        let expected0 = [[1.0, 3.0, 5.0, 7.0], [2.0, 4.0, 6.0, 8.0]];
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(m0.matrix.get(r, c), expected0[r][c]);
            }
        }

        let m1 = unfold(&f, 1).unwrap();
        let expected1 = [[1.0, 2.0, 5.0, 6.0], [3.0, 4.0, 7.0, 8.0]];
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(m1.matrix.get(r, c), expected1[r][c]);
            }
        }

        let m2 = unfold(&f, 2).unwrap();
        let expected2 = [[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]];
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(m2.matrix.get(r, c), expected2[r][c]);
            }
        }
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let f = counting_field(Dims3::new(2, 2, 2).unwrap());
        assert!(matches!(unfold(&f, 3), Err(Error::InvalidMode(3))));
    }

    #[test]
    fn spe10_mode2_unfolding_shape() {
        let d = Dims3::new(60, 220, 85).unwrap();
        let f = Field3::zeros(d);
        let u = unfold(&f, 2).unwrap();
        assert_eq!(u.rows(), 85);
        assert_eq!(u.cols(), 13200);
    }

    #[test]
    fn fold_unfold_roundtrip_2x2x2() {
        let d = Dims3::new(2, 2, 2).unwrap();
        let f = counting_field(d);
        let back = fold(&unfold(&f, 2).unwrap(), d).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn fold_roundtrip_3x4x5_mode1() {
        let d = Dims3::new(3, 4, 5).unwrap();
        let f = seeded_field(d, 7);
        let back = fold(&unfold(&f, 1).unwrap(), d).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn fold_zero_unfolding() {
        let d = Dims3::new(2, 3, 2).unwrap();
        let u = Unfolding {
            mode: 0,
            matrix: DenseMatrix::zeros(2, 6),
        };
        let f = fold(&u, d).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fold_rejects_shape_mismatch() {
        let u = Unfolding {
            mode: 0,
            matrix: DenseMatrix::zeros(2, 6),
        };
        let err = fold(&u, Dims3::new(3, 2, 2).unwrap());
        assert!(matches!(err, Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn project_examples() {
        let d = Dims3::new(4, 3, 5).unwrap();
        let f = seeded_field(d, 3);

        let all = Mask3::all_observed(d);
        assert_eq!(project(&f, &all).unwrap(), f);
        assert!(project_complement(&f, &all)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));

        let none = Mask3::none_observed(d);
        assert!(project(&f, &none).unwrap().as_slice().iter().all(|&v| v == 0.0));

        // single observed cell (1,2,3)
        let mut one = Mask3::none_observed(d);
        one.set_observed(1, 2, 3, true);
        let p = project(&f, &one).unwrap();
        for pidx in 0..d.len() {
            let (i, j, k) = d.unravel(pidx);
            let expect = if (i, j, k) == (1, 2, 3) { f.get(i, j, k) } else { 0.0 };
            assert_eq!(p.as_slice()[pidx], expect);
        }
        let pc = project_complement(&f, &one).unwrap();
        assert_eq!(pc.get(1, 2, 3), 0.0);
        assert_eq!(pc.get(0, 0, 0), f.get(0, 0, 0));
    }

    #[test]
    fn project_is_idempotent() {
        let d = Dims3::new(5, 4, 3).unwrap();
        let f = seeded_field(d, 11);
        let mut mask = Mask3::none_observed(d);
        for p in 0..d.len() {
            if p % 3 == 0 {
                let (i, j, k) = d.unravel(p);
                mask.set_observed(i, j, k, true);
            }
        }
        let once = project(&f, &mask).unwrap();
        let twice = project(&once, &mask).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn frobenius_examples() {
        let d = Dims3::new(2, 1, 1).unwrap();
        assert_eq!(Field3::zeros(d).frobenius_norm(), 0.0);
        let single = Field3::new(d, vec![3.0, 0.0]).unwrap();
        assert_eq!(single.frobenius_norm(), 3.0);
        let f = Field3::new(d, vec![3.0, 4.0]).unwrap();
        assert_eq!(f.frobenius_norm(), 5.0);
    }

    #[test]
    fn rse_examples() {
        let d = Dims3::new(4, 1, 1).unwrap();
        let truth = Field3::new(d, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = Mask3::new(d, vec![true, true, false, false]).unwrap();

        assert_eq!(rse(&truth, &truth, &mask).unwrap(), 0.0);

        let zero_recon = project(&truth, &mask).unwrap();
        assert_relative_eq!(rse(&zero_recon, &truth, &mask).unwrap(), 1.0);

        // unobserved truth (3,4), unobserved reconstruction (3,1) → 3/5
        let recon = Field3::new(d, vec![1.0, 2.0, 3.0, 1.0]).unwrap();
        assert_relative_eq!(rse(&recon, &truth, &mask).unwrap(), 0.6);
    }

    #[test]
    fn rse_error_paths() {
        let d = Dims3::new(2, 1, 1).unwrap();
        let f = Field3::new(d, vec![1.0, 2.0]).unwrap();
        let full = Mask3::all_observed(d);
        assert!(matches!(rse(&f, &f, &full), Err(Error::MaskUnusable(_))));

        let half = Mask3::new(d, vec![true, false]).unwrap();
        let zero_truth = Field3::new(d, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            rse(&f, &zero_truth, &half),
            Err(Error::ZeroDenominator)
        ));

        let other = Field3::zeros(Dims3::new(2, 2, 1).unwrap());
        assert!(matches!(rse(&f, &other, &half), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn field_rejects_non_finite() {
        let d = Dims3::new(2, 1, 1).unwrap();
        assert!(Field3::new(d, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn crop_keeps_the_low_corner() {
        let dims = Dims3::new(4, 5, 3).unwrap();
        let f = Field3::from_fn(dims, |i, j, k| (i + 10 * j + 100 * k) as f64);
        let small = Dims3::new(2, 3, 2).unwrap();
        let c = f.crop(small).unwrap();
        assert_eq!(c.dims(), small);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    assert_eq!(c.get(i, j, k), f.get(i, j, k));
                }
            }
        }
        assert!(f.crop(Dims3::new(5, 5, 3).unwrap()).is_err());
        assert_eq!(f.crop(dims).unwrap(), f);
    }

    fn dims_strategy() -> impl Strategy<Value = Dims3> {
        (1usize..=20, 1usize..=20, 1usize..=20).prop_map(|(i, j, k)| Dims3 { i, j, k })
    }

    proptest! {
        #[test]
        fn roundtrip_every_mode(dims in dims_strategy(), seed in 0u64..1000, mode in 0usize..3) {
            let f = seeded_field(dims, seed);
            let back = fold(&unfold(&f, mode).unwrap(), dims).unwrap();
            prop_assert_eq!(back, f);
        }

        #[test]
        fn projection_partition(dims in dims_strategy(), seed in 0u64..1000) {
            let f = seeded_field(dims, seed);
            let mut mask = Mask3::none_observed(dims);
            let mut s = seed.wrapping_mul(31);
            for p in 0..dims.len() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                if s >> 63 == 1 {
                    let (i, j, k) = dims.unravel(p);
                    mask.set_observed(i, j, k, true);
                }
            }
            let on = project(&f, &mask).unwrap();
            let off = project_complement(&f, &mask).unwrap();
            let sum = on.scaled_add(1.0, &off).unwrap();
            prop_assert_eq!(sum, f.clone());

            // orthogonal norm split
            let total = f.frobenius_norm().powi(2);
            let split = on.frobenius_norm().powi(2) + off.frobenius_norm().powi(2);
            prop_assert!((total - split).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn unfold_preserves_norm(dims in dims_strategy(), seed in 0u64..1000, mode in 0usize..3) {
            let f = seeded_field(dims, seed);
            let u = unfold(&f, mode).unwrap();
            prop_assert!((u.matrix.frobenius_norm() - f.frobenius_norm()).abs() <= 1e-12);
        }
    }
}
