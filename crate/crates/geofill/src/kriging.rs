//! Ordinary kriging over a regular 3D grid: empirical variogram
//! estimation, weighted least-squares model fitting, anisotropic
//! search-ellipsoid neighbor selection, and per-cell linear solves.
//!
//! Unit convention: sample positions are cell-index coordinates. Every
//! geometric operation takes a `cell_ft: [f64; 3]` scale — the physical
//! size of one cell along each axis — and works on the scaled
//! displacement, so variogram ranges, ellipsoid radii, and lag widths
//! are all in physical units (feet for SPE10's 20x20x2 ft cells). Pass
//! `[1.0, 1.0, 1.0]` to work directly in index units.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims3, Field3, Mask3};

/// One observed value at a (possibly fractional) cell-index position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub position: [f64; 3],
    pub value: f64,
}

impl SamplePoint {
    pub fn new(position: [f64; 3], value: f64) -> Self {
        Self { position, value }
    }

    /// Sample sitting exactly on grid cell `(i, j, k)`.
    pub fn at_cell(i: usize, j: usize, k: usize, value: f64) -> Self {
        Self {
            position: [i as f64, j as f64, k as f64],
            value,
        }
    }
}

fn validate_samples(samples: &[SamplePoint]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one sample is required".to_string(),
        ));
    }
    for (idx, s) in samples.iter().enumerate() {
        if !(s.value.is_finite() && s.position.iter().all(|p| p.is_finite())) {
            return Err(Error::NonFiniteInput(format!(
                "sample {idx} has non-finite position or value"
            )));
        }
    }
    Ok(())
}

fn validate_cell_ft(cell_ft: [f64; 3]) -> Result<()> {
    if cell_ft.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "cell sizes must be finite and positive, got {cell_ft:?}"
        )));
    }
    Ok(())
}

/// Scaled displacement `(b − a) * cell_ft` in physical units.
#[inline]
fn displacement(a: [f64; 3], b: [f64; 3], cell_ft: [f64; 3]) -> [f64; 3] {
    [
        (b[0] - a[0]) * cell_ft[0],
        (b[1] - a[1]) * cell_ft[1],
        (b[2] - a[2]) * cell_ft[2],
    ]
}

#[inline]
fn norm3(h: [f64; 3]) -> f64 {
    (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt()
}

/// Rotates a displacement into an (azimuth, dip) oriented frame whose
/// first component lies along the major axis.
///
/// Azimuth turns the major axis from +x toward +y in the horizontal
/// plane; dip then tilts it toward +z. Both angles are in degrees.
#[inline]
fn rotate_to_frame(h: [f64; 3], azimuth_deg: f64, dip_deg: f64) -> [f64; 3] {
    let az = azimuth_deg.to_radians();
    let (ca, sa) = (az.cos(), az.sin());
    let x1 = ca * h[0] + sa * h[1];
    let y1 = -sa * h[0] + ca * h[1];
    let dip = dip_deg.to_radians();
    let (cd, sd) = (dip.cos(), dip.sin());
    [cd * x1 + sd * h[2], y1, -sd * x1 + cd * h[2]]
}

/// Norm of the frame-rotated displacement scaled componentwise by
/// `ranges`; 1.0 marks the ellipsoid surface / the variogram range.
#[inline]
fn anisotropic_distance(h: [f64; 3], ranges: [f64; 3], azimuth_deg: f64, dip_deg: f64) -> f64 {
    let r = rotate_to_frame(h, azimuth_deg, dip_deg);
    norm3([r[0] / ranges[0], r[1] / ranges[1], r[2] / ranges[2]])
}

/// Parametric semivariogram families, all reaching (or practically
/// reaching) the sill at scaled distance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    Spherical,
    Exponential,
    Gaussian,
}

impl VariogramKind {
    /// Unit shape function: 0 at d=0, (practically) 1 at d=1.
    #[inline]
    fn shape(self, d: f64) -> f64 {
        match self {
            VariogramKind::Spherical => {
                if d >= 1.0 {
                    1.0
                } else {
                    1.5 * d - 0.5 * d * d * d
                }
            }
            VariogramKind::Exponential => 1.0 - (-3.0 * d).exp(),
            VariogramKind::Gaussian => 1.0 - (-3.0 * d * d).exp(),
        }
    }
}

impl std::fmt::Display for VariogramKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            VariogramKind::Spherical => "spherical",
            VariogramKind::Exponential => "exponential",
            VariogramKind::Gaussian => "gaussian",
        };
        write!(f, "{name}")
    }
}

/// Fitted variogram model with geometric anisotropy.
///
/// `gamma(h) = nugget + (sill − nugget) · shape(d)` where `d` is the
/// anisotropic scaled distance of `h` under `ranges` and the
/// orientation angles; `gamma(0) = 0` exactly. The stationary
/// covariance is `C(h) = sill − gamma(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    /// Total sill (nugget + structured variance).
    pub sill: f64,
    /// (major, minor, vertical) ranges in physical units.
    pub ranges: [f64; 3],
    pub azimuth_deg: f64,
    pub dip_deg: f64,
}

impl VariogramModel {
    pub fn isotropic(kind: VariogramKind, nugget: f64, sill: f64, range: f64) -> Self {
        Self {
            kind,
            nugget,
            sill,
            ranges: [range, range, range],
            azimuth_deg: 0.0,
            dip_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be finite and non-negative, got {}",
                self.nugget
            )));
        }
        if !(self.sill.is_finite() && self.sill > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sill must be finite and positive, got {}",
                self.sill
            )));
        }
        if self.nugget > self.sill {
            return Err(Error::InvalidParameter(format!(
                "nugget {} exceeds sill {}",
                self.nugget, self.sill
            )));
        }
        if self.ranges.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "ranges must be finite and positive, got {:?}",
                self.ranges
            )));
        }
        if !(self.azimuth_deg.is_finite() && self.dip_deg.is_finite()) {
            return Err(Error::InvalidParameter(
                "orientation angles must be finite".to_string(),
            ));
        }
        Ok(())
    }

    /// Semivariance at displacement `h` (physical units); 0 at h = 0.
    pub fn semivariance(&self, h: [f64; 3]) -> f64 {
        if h == [0.0; 3] {
            return 0.0;
        }
        let d = anisotropic_distance(h, self.ranges, self.azimuth_deg, self.dip_deg);
        self.nugget + (self.sill - self.nugget) * self.kind.shape(d)
    }

    /// Stationary covariance `C(h) = sill − gamma(h)`; equals the sill
    /// at h = 0 and drops to 0 at/beyond the range for the spherical
    /// kind.
    pub fn covariance(&self, h: [f64; 3]) -> f64 {
        self.sill - self.semivariance(h)
    }
}

/// Optional direction filter for a directional empirical variogram:
/// pairs count only when the angle between their separation and
/// `axis` (either way along it) is within `tolerance_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionFilter {
    pub axis: [f64; 3],
    pub tolerance_deg: f64,
}

impl DirectionFilter {
    fn validate(&self) -> Result<()> {
        let n = norm3(self.axis);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidParameter(
                "direction axis must be a non-zero vector".to_string(),
            ));
        }
        if !(self.tolerance_deg.is_finite() && self.tolerance_deg > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "direction tolerance must be positive, got {}",
                self.tolerance_deg
            )));
        }
        Ok(())
    }

    #[inline]
    fn accepts(&self, h: [f64; 3]) -> bool {
        let hn = norm3(h);
        if hn == 0.0 {
            // a zero separation has no direction
            return false;
        }
        let an = norm3(self.axis);
        let cos = (h[0] * self.axis[0] + h[1] * self.axis[1] + h[2] * self.axis[2]).abs()
            / (hn * an);
        cos >= self.tolerance_deg.to_radians().cos()
    }
}

/// Method-of-moments semivariance estimates binned by separation
/// distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    /// Bin centers, strictly increasing (physical units).
    pub lag_centers: Vec<f64>,
    /// Estimated semivariance per bin; 0 where the bin is empty.
    pub semivariances: Vec<f64>,
    /// Number of pairs that fell in each bin.
    pub pair_counts: Vec<usize>,
    pub direction: Option<DirectionFilter>,
}

/// Accumulates squared value differences into distance bins and
/// halves the per-bin means (the classical estimator
/// `γ̂(h) = Σ (z_i − z_j)² / (2 N(h))`).
struct LagAccumulator {
    lag_width: f64,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl LagAccumulator {
    fn new(lag_width: f64, n_lags: usize) -> Self {
        Self {
            lag_width,
            sums: vec![0.0; n_lags],
            counts: vec![0; n_lags],
        }
    }

    #[inline]
    fn add(&mut self, distance: f64, value_a: f64, value_b: f64) {
        let bin = (distance / self.lag_width).floor() as usize;
        if bin < self.sums.len() {
            let d = value_a - value_b;
            self.sums[bin] += d * d;
            self.counts[bin] += 1;
        }
    }

    fn total_pairs(&self) -> usize {
        self.counts.iter().sum()
    }

    fn finish(self, direction: Option<DirectionFilter>) -> EmpiricalVariogram {
        let lag_centers = (0..self.sums.len())
            .map(|b| (b as f64 + 0.5) * self.lag_width)
            .collect();
        let semivariances = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / (2.0 * c as f64) })
            .collect();
        EmpiricalVariogram {
            lag_centers,
            semivariances,
            pair_counts: self.counts,
            direction,
        }
    }
}

/// Estimates the empirical semivariogram of `samples` over `n_lags`
/// distance bins of width `lag_width` (physical units under
/// `cell_ft`), optionally restricted to pairs aligned with a
/// direction.
pub fn empirical_variogram(
    samples: &[SamplePoint],
    cell_ft: [f64; 3],
    lag_width: f64,
    n_lags: usize,
    direction: Option<DirectionFilter>,
) -> Result<EmpiricalVariogram> {
    validate_samples(samples)?;
    validate_cell_ft(cell_ft)?;
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(
            "variogram estimation needs at least two samples".to_string(),
        ));
    }
    if !(lag_width.is_finite() && lag_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lag width must be finite and positive, got {lag_width}"
        )));
    }
    if n_lags == 0 {
        return Err(Error::InvalidParameter(
            "at least one lag bin is required".to_string(),
        ));
    }
    if let Some(d) = &direction {
        d.validate()?;
    }
    let mut acc = LagAccumulator::new(lag_width, n_lags);
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            let h = displacement(samples[a].position, samples[b].position, cell_ft);
            if let Some(d) = &direction {
                if !d.accepts(h) {
                    continue;
                }
            }
            acc.add(norm3(h), samples[a].value, samples[b].value);
        }
    }
    if acc.total_pairs() == 0 {
        return Err(Error::NoPairs);
    }
    Ok(acc.finish(direction))
}

/// Outcome of a weighted least-squares variogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub model: VariogramModel,
    /// True when the bins carried no usable structure and a nugget-only
    /// model was returned.
    pub degenerate: bool,
    /// Weighted sum of squared residuals at the fitted parameters.
    pub weighted_rss: f64,
}

/// Smallest sill the fitter will report; keeps degenerate models valid.
const SILL_FLOOR: f64 = 1e-9;

/// WLS solve of (nugget, partial sill) for a fixed range; returns
/// (nugget, partial, weighted RSS) with non-negativity clamps applied.
fn fit_at_range(
    kind: VariogramKind,
    lags: &[f64],
    gammas: &[f64],
    weights: &[f64],
    range: f64,
) -> (f64, f64, f64) {
    let (mut sw, mut swp, mut swpp, mut swg, mut swpg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let shapes: Vec<f64> = lags.iter().map(|&h| kind.shape(h / range)).collect();
    for ((&p, &g), &w) in shapes.iter().zip(gammas).zip(weights) {
        sw += w;
        swp += w * p;
        swpp += w * p * p;
        swg += w * g;
        swpg += w * p * g;
    }
    let det = sw * swpp - swp * swp;
    let (mut nugget, mut partial);
    if det.abs() > 1e-12 * sw.max(1.0) * swpp.max(1.0) {
        nugget = (swpp * swg - swp * swpg) / det;
        partial = (sw * swpg - swp * swg) / det;
    } else {
        nugget = 0.0;
        partial = if swpp > 0.0 { swpg / swpp } else { 0.0 };
    }
    if nugget < 0.0 {
        nugget = 0.0;
        partial = if swpp > 0.0 { swpg / swpp } else { 0.0 };
    }
    if partial < SILL_FLOOR {
        partial = SILL_FLOOR;
        nugget = ((swg - partial * swp) / sw).max(0.0);
    }
    let mut rss = 0.0;
    for ((&p, &g), &w) in shapes.iter().zip(gammas).zip(weights) {
        let r = nugget + partial * p - g;
        rss += w * r * r;
    }
    (nugget, partial, rss)
}

/// Fits a variogram model of the given kind to nonempty bins by
/// weighted least squares (weights = pair counts) over nugget, sill,
/// and range. The range is found by a coarse log-spaced scan refined
/// with golden-section search; nugget and partial sill are solved in
/// closed form at each candidate range.
pub fn fit_variogram(emp: &EmpiricalVariogram, kind: VariogramKind) -> Result<VariogramFit> {
    let mut lags = Vec::new();
    let mut gammas = Vec::new();
    let mut weights = Vec::new();
    for ((&h, &g), &c) in emp
        .lag_centers
        .iter()
        .zip(&emp.semivariances)
        .zip(&emp.pair_counts)
    {
        if c > 0 {
            lags.push(h);
            gammas.push(g);
            weights.push(c as f64);
        }
    }
    if lags.len() < 3 {
        return Err(Error::FitInfeasible(format!(
            "variogram fit needs at least 3 nonempty bins, found {}",
            lags.len()
        )));
    }

    let g_min = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_max = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h_max = *lags.last().unwrap();
    if g_max - g_min <= 1e-12 * g_max.abs().max(1.0) {
        // no structure: nugget-only model
        let nugget = g_max.max(0.0);
        let model = VariogramModel::isotropic(kind, nugget, nugget + SILL_FLOOR, h_max);
        return Ok(VariogramFit {
            model,
            degenerate: true,
            weighted_rss: 0.0,
        });
    }

    // coarse log-spaced scan over the range
    let r_lo = 0.25 * lags[0].max(1e-9);
    let r_hi = 4.0 * h_max;
    let n_grid = 80;
    let mut best = (f64::INFINITY, r_lo, 0.0, 0.0);
    let mut grid = Vec::with_capacity(n_grid);
    for t in 0..n_grid {
        let f = t as f64 / (n_grid - 1) as f64;
        let r = r_lo * (r_hi / r_lo).powf(f);
        grid.push(r);
        let (n, p, rss) = fit_at_range(kind, &lags, &gammas, &weights, r);
        if rss < best.0 {
            best = (rss, r, n, p);
        }
    }
    // golden-section refinement in log-range around the best cell
    let idx = grid
        .iter()
        .position(|&r| r == best.1)
        .expect("best range came from the grid");
    let mut lo = grid[idx.saturating_sub(1)].ln();
    let mut hi = grid[(idx + 1).min(n_grid - 1)].ln();
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = fit_at_range(kind, &lags, &gammas, &weights, x1.exp()).2;
    let mut f2 = fit_at_range(kind, &lags, &gammas, &weights, x2.exp()).2;
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = fit_at_range(kind, &lags, &gammas, &weights, x1.exp()).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = fit_at_range(kind, &lags, &gammas, &weights, x2.exp()).2;
        }
    }
    let r_star = (0.5 * (lo + hi)).exp();
    let (nugget, partial, rss) = fit_at_range(kind, &lags, &gammas, &weights, r_star);
    let (r_best, n_best, p_best, rss_best) = if rss <= best.0 {
        (r_star, nugget, partial, rss)
    } else {
        (best.1, best.2, best.3, best.0)
    };
    let model = VariogramModel::isotropic(kind, n_best, n_best + p_best, r_best);
    model.validate()?;
    Ok(VariogramFit {
        model,
        degenerate: false,
        weighted_rss: rss_best,
    })
}

/// Anisotropic neighbor-search region around a target cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchEllipsoid {
    /// (major, minor, vertical) radii in physical units.
    pub radii: [f64; 3],
    pub azimuth_deg: f64,
    pub dip_deg: f64,
    pub max_neighbors: usize,
    pub min_neighbors: usize,
}

impl SearchEllipsoid {
    /// Axis-aligned ellipsoid with the given radii and neighbor caps.
    pub fn axis_aligned(radii: [f64; 3], min_neighbors: usize, max_neighbors: usize) -> Self {
        Self {
            radii,
            azimuth_deg: 0.0,
            dip_deg: 0.0,
            max_neighbors,
            min_neighbors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "ellipsoid radii must be finite and positive, got {:?}",
                self.radii
            )));
        }
        if !(self.azimuth_deg.is_finite() && self.dip_deg.is_finite()) {
            return Err(Error::InvalidParameter(
                "ellipsoid angles must be finite".to_string(),
            ));
        }
        if self.min_neighbors == 0 || self.min_neighbors > self.max_neighbors {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= min_neighbors <= max_neighbors, got {} and {}",
                self.min_neighbors, self.max_neighbors
            )));
        }
        Ok(())
    }

    /// Scaled distance of a physical displacement from the center;
    /// <= 1 means inside.
    #[inline]
    fn scaled_distance(&self, h: [f64; 3]) -> f64 {
        anisotropic_distance(h, self.radii, self.azimuth_deg, self.dip_deg)
    }
}

/// Samples inside the ellipsoid around `target`, sorted by scaled
/// distance (ties keep input order) and truncated at `max_neighbors`.
pub fn select_neighbors(
    samples: &[SamplePoint],
    target: [f64; 3],
    ellipsoid: &SearchEllipsoid,
    cell_ft: [f64; 3],
) -> Result<Vec<SamplePoint>> {
    validate_samples(samples)?;
    validate_cell_ft(cell_ft)?;
    ellipsoid.validate()?;
    let mut hits: Vec<(f64, usize)> = Vec::new();
    for (idx, s) in samples.iter().enumerate() {
        let d = ellipsoid.scaled_distance(displacement(target, s.position, cell_ft));
        if d <= 1.0 {
            hits.push((d, idx));
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(ellipsoid.max_neighbors);
    Ok(hits.into_iter().map(|(_, idx)| samples[idx]).collect())
}

/// Solved ordinary-kriging weights for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingWeights {
    /// One weight per neighbor, summing to 1.
    pub weights: Vec<f64>,
    /// Lagrange multiplier of the unbiasedness constraint.
    pub mu: f64,
}

impl KrigingWeights {
    /// Prediction `Σ λ_i z_i` over the neighbors the weights were
    /// solved for.
    pub fn predict(&self, neighbors: &[SamplePoint]) -> f64 {
        self.weights
            .iter()
            .zip(neighbors)
            .map(|(&w, s)| w * s.value)
            .sum()
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n x n`
/// system; `None` when a pivot underflows the scale-relative floor.
fn solve_row_major(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < tol {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col * n + c] * b[c];
        }
        b[col] = s / a[col * n + col];
    }
    Some(())
}

/// Builds and solves the ordinary-kriging system for `target` over the
/// given neighbors: covariances between neighbors bordered by the
/// unbiasedness row/column, right-hand side of target covariances and
/// a trailing 1.
pub fn kriging_weights(
    neighbors: &[SamplePoint],
    target: [f64; 3],
    model: &VariogramModel,
    cell_ft: [f64; 3],
) -> Result<KrigingWeights> {
    validate_samples(neighbors)?;
    validate_cell_ft(cell_ft)?;
    model.validate()?;
    let n = neighbors.len();
    let dim = n + 1;
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for r in 0..n {
        for c in 0..n {
            let h = displacement(neighbors[r].position, neighbors[c].position, cell_ft);
            a[r * dim + c] = model.covariance(h);
        }
        a[r * dim + n] = 1.0;
        a[n * dim + r] = 1.0;
        b[r] = model.covariance(displacement(neighbors[r].position, target, cell_ft));
    }
    b[n] = 1.0;
    solve_row_major(&mut a, &mut b, dim).ok_or_else(|| {
        Error::FitInfeasible(
            "singular ordinary-kriging system (co-located neighbors?)".to_string(),
        )
    })?;
    let mu = b[n];
    b.truncate(n);
    Ok(KrigingWeights { weights: b, mu })
}

/// Merges samples at identical positions by averaging their values
/// and returns the result sorted by position; kriging systems stay
/// nonsingular and results stay independent of input order.
fn dedup_samples(samples: &[SamplePoint]) -> Vec<SamplePoint> {
    let mut sorted: Vec<SamplePoint> = samples.to_vec();
    sorted.sort_by(|a, b| {
        a.position[0]
            .total_cmp(&b.position[0])
            .then(a.position[1].total_cmp(&b.position[1]))
            .then(a.position[2].total_cmp(&b.position[2]))
            .then(a.value.total_cmp(&b.value))
    });
    let mut out: Vec<SamplePoint> = Vec::with_capacity(sorted.len());
    let mut run = 1usize;
    for s in sorted {
        match out.last_mut() {
            Some(last) if last.position == s.position => {
                // running mean keeps the average exact order-free
                run += 1;
                last.value += (s.value - last.value) / run as f64;
            }
            _ => {
                run = 1;
                out.push(s);
            }
        }
    }
    out
}

/// Lateral hash grid over sample indices for ellipsoid queries.
struct LateralIndex {
    buckets: std::collections::HashMap<(i64, i64), Vec<usize>>,
    reach_i: i64,
    reach_j: i64,
    max_radius_ft: f64,
}

impl LateralIndex {
    fn build(samples: &[SamplePoint], ellipsoid: &SearchEllipsoid, cell_ft: [f64; 3]) -> Self {
        let max_radius_ft = ellipsoid.radii.iter().cloned().fold(0.0f64, f64::max);
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> =
            std::collections::HashMap::new();
        for (idx, s) in samples.iter().enumerate() {
            let key = (s.position[0].floor() as i64, s.position[1].floor() as i64);
            buckets.entry(key).or_default().push(idx);
        }
        Self {
            buckets,
            reach_i: (max_radius_ft / cell_ft[0]).ceil() as i64 + 1,
            reach_j: (max_radius_ft / cell_ft[1]).ceil() as i64 + 1,
            max_radius_ft,
        }
    }

    /// Neighbors of `target`, identical to [`select_neighbors`] but
    /// pruned through the lateral buckets.
    fn query(
        &self,
        samples: &[SamplePoint],
        target: [f64; 3],
        ellipsoid: &SearchEllipsoid,
        cell_ft: [f64; 3],
        hits: &mut Vec<(f64, usize)>,
    ) {
        hits.clear();
        let (ti, tj) = (target[0].floor() as i64, target[1].floor() as i64);
        for bi in (ti - self.reach_i)..=(ti + self.reach_i) {
            for bj in (tj - self.reach_j)..=(tj + self.reach_j) {
                let Some(bucket) = self.buckets.get(&(bi, bj)) else {
                    continue;
                };
                for &idx in bucket {
                    let h = displacement(target, samples[idx].position, cell_ft);
                    if h[2].abs() > self.max_radius_ft {
                        continue;
                    }
                    let d = ellipsoid.scaled_distance(h);
                    if d <= 1.0 {
                        hits.push((d, idx));
                    }
                }
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.truncate(ellipsoid.max_neighbors);
    }
}

/// Interpolates every grid cell by ordinary kriging.
///
/// Sampled cells are copied verbatim (exactness); each remaining cell
/// is predicted from its ellipsoid neighbors, or filled with the
/// global sample mean when fewer than `min_neighbors` are in reach.
/// The returned mask is true where the value came from a sample or a
/// solved system, false where the mean fallback (or a singular-system
/// fallback) was used. Co-located input samples are merged by
/// averaging before anything else.
///
/// Cell geometry is taken from `cell_ft`, so ellipsoid radii and
/// variogram ranges are physical distances.
pub fn ordinary_krige(
    samples: &[SamplePoint],
    dims: Dims3,
    cell_ft: [f64; 3],
    model: &VariogramModel,
    ellipsoid: &SearchEllipsoid,
) -> Result<(Field3, Mask3)> {
    validate_samples(samples)?;
    validate_cell_ft(cell_ft)?;
    model.validate()?;
    ellipsoid.validate()?;
    for (idx, s) in samples.iter().enumerate() {
        let inside = s.position[0] >= 0.0
            && s.position[0] <= (dims.i - 1) as f64
            && s.position[1] >= 0.0
            && s.position[1] <= (dims.j - 1) as f64
            && s.position[2] >= 0.0
            && s.position[2] <= (dims.k - 1) as f64;
        if !inside {
            return Err(Error::InvalidParameter(format!(
                "sample {idx} at {:?} lies outside the {dims} grid",
                s.position
            )));
        }
    }
    let samples = dedup_samples(samples);
    let mean: f64 = samples.iter().map(|s| s.value).sum::<f64>() / samples.len() as f64;

    // verbatim values for samples sitting exactly on a grid cell
    let mut pinned: Vec<Option<f64>> = vec![None; dims.len()];
    for s in &samples {
        let cell = [s.position[0].round(), s.position[1].round(), s.position[2].round()];
        if cell == s.position {
            let p = dims.linear(cell[0] as usize, cell[1] as usize, cell[2] as usize);
            pinned[p] = Some(s.value);
        }
    }

    let index = LateralIndex::build(&samples, ellipsoid, cell_ft);
    let mut values = vec![0.0; dims.len()];
    let mut solved = vec![false; dims.len()];

    const CHUNK: usize = 4096;
    values
        .par_chunks_mut(CHUNK)
        .zip(solved.par_chunks_mut(CHUNK))
        .enumerate()
        .try_for_each(|(chunk_idx, (vals, flags))| -> Result<()> {
            let base = chunk_idx * CHUNK;
            let mut hits: Vec<(f64, usize)> = Vec::new();
            let mut neighbors: Vec<SamplePoint> = Vec::new();
            for (off, (val, flag)) in vals.iter_mut().zip(flags.iter_mut()).enumerate() {
                let p = base + off;
                if let Some(v) = pinned[p] {
                    *val = v;
                    *flag = true;
                    continue;
                }
                let (i, j, k) = dims.unravel(p);
                let target = [i as f64, j as f64, k as f64];
                index.query(&samples, target, ellipsoid, cell_ft, &mut hits);
                if hits.len() < ellipsoid.min_neighbors {
                    *val = mean;
                    *flag = false;
                    continue;
                }
                neighbors.clear();
                neighbors.extend(hits.iter().map(|&(_, idx)| samples[idx]));
                match kriging_weights(&neighbors, target, model, cell_ft) {
                    Ok(w) => {
                        *val = w.predict(&neighbors);
                        *flag = true;
                    }
                    Err(Error::FitInfeasible(_)) => {
                        // numerically singular despite dedup: fall back
                        *val = mean;
                        *flag = false;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        })?;

    Ok((
        Field3::new(dims, values)?,
        Mask3::new(dims, solved)?,
    ))
}

/// How to estimate and fit a variogram from a fully known field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVariogramConfig {
    pub kind: VariogramKind,
    /// Lateral lag width in physical units.
    pub lateral_lag_ft: f64,
    pub lateral_lags: usize,
    /// Vertical lag width in physical units.
    pub vertical_lag_ft: f64,
    pub vertical_lags: usize,
    /// Total pair budget, split evenly between the two directions.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for FieldVariogramConfig {
    fn default() -> Self {
        Self {
            kind: VariogramKind::Spherical,
            lateral_lag_ft: 20.0,
            lateral_lags: 100,
            vertical_lag_ft: 2.0,
            vertical_lags: 60,
            max_pairs: 2_000_000,
            seed: 7,
        }
    }
}

/// Directional variograms of a fully known field and the anisotropic
/// model combined from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVariogramReport {
    pub horizontal: VariogramFit,
    pub vertical: VariogramFit,
    /// Nugget/sill from the horizontal fit; ranges (r_h, r_h, r_v).
    pub model: VariogramModel,
}

/// Fits an anisotropic variogram to a complete field by sampling
/// random in-layer pairs (horizontal structure) and random in-column
/// pairs (vertical structure), then fitting each direction separately.
/// Deterministic for a fixed config.
pub fn fit_field_variogram(
    field: &Field3,
    cell_ft: [f64; 3],
    config: &FieldVariogramConfig,
) -> Result<FieldVariogramReport> {
    validate_cell_ft(cell_ft)?;
    let dims = field.dims();
    if dims.i < 2 || dims.j < 2 || dims.k < 2 {
        return Err(Error::InvalidParameter(format!(
            "variogram estimation from a field needs at least 2 cells per axis, got {dims}"
        )));
    }
    if config.max_pairs < 2 {
        return Err(Error::InvalidParameter(
            "pair budget must be at least 2".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = config.max_pairs / 2;

    let mut lateral = LagAccumulator::new(config.lateral_lag_ft, config.lateral_lags);
    for _ in 0..budget {
        let k = rng.random_range(0..dims.k);
        let (i1, j1) = (rng.random_range(0..dims.i), rng.random_range(0..dims.j));
        let (i2, j2) = (rng.random_range(0..dims.i), rng.random_range(0..dims.j));
        if (i1, j1) == (i2, j2) {
            continue;
        }
        let dx = (i2 as f64 - i1 as f64) * cell_ft[0];
        let dy = (j2 as f64 - j1 as f64) * cell_ft[1];
        lateral.add(
            (dx * dx + dy * dy).sqrt(),
            field.get(i1, j1, k),
            field.get(i2, j2, k),
        );
    }

    let mut vertical = LagAccumulator::new(config.vertical_lag_ft, config.vertical_lags);
    for _ in 0..budget {
        let (i, j) = (rng.random_range(0..dims.i), rng.random_range(0..dims.j));
        let k1 = rng.random_range(0..dims.k);
        let k2 = rng.random_range(0..dims.k);
        if k1 == k2 {
            continue;
        }
        let dz = (k2 as f64 - k1 as f64) * cell_ft[2];
        vertical.add(dz.abs(), field.get(i, j, k1), field.get(i, j, k2));
    }

    if lateral.total_pairs() == 0 || vertical.total_pairs() == 0 {
        return Err(Error::NoPairs);
    }
    let horizontal = fit_variogram(&lateral.finish(None), config.kind)?;
    let vertical_fit = fit_variogram(&vertical.finish(None), config.kind)?;

    let r_h = horizontal.model.ranges[0];
    let r_v = vertical_fit.model.ranges[2];
    let model = VariogramModel {
        kind: config.kind,
        nugget: horizontal.model.nugget,
        sill: horizontal.model.sill,
        ranges: [r_h, r_h, r_v],
        azimuth_deg: 0.0,
        dip_deg: 0.0,
    };
    model.validate()?;
    Ok(FieldVariogramReport {
        horizontal,
        vertical: vertical_fit,
        model,
    })
}
