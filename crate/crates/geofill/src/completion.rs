//! Low-rank tensor completion by ADMM over the three mode unfoldings,
//! in two variants: plain nuclear-norm-sum minimization, and a
//! graph-smoothed variant that additionally penalizes roughness along
//! the two horizontal grid axes.
//!
//! Both variants alternate (i) singular value thresholding on each
//! unfolding of three per-mode lanes, (ii) a per-lane update that is
//! either a direct rescaling or a pre-factorized smoothing solve,
//! (iii) a data-consistency projection that restores observed cells
//! and averages the lanes into a single consensus reconstruction, and
//! (iv) a scaled dual update against that consensus, then restack the
//! consensus for the next iteration. Observed cells of the returned
//! field always equal the input bit-for-bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{svt, RegularizedSolver};
use crate::tensor::{fold, project, unfold, Dims3, Field3, Mask3, Unfolding};

/// Configuration for both completion solvers.
///
/// `alpha` weights the nuclear-norm term and sets the shrinkage
/// threshold `alpha / rho`; `beta` is the smoothing strength along the
/// two horizontal axes (zero disables smoothing); `rho` is the ADMM
/// penalty. Iteration stops after `max_iters` steps or once the
/// relative change of the averaged reconstruction drops below
/// `rel_tol`, whichever comes first.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdmmParams {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

/// Defaults: `alpha = 1`, `rho = 0.1` (shrinkage threshold 10, a
/// strong low-rank pull suited to z-scored data), `beta = 0.1 * rho`,
/// 500 iterations, relative tolerance 1e-6.
impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1 * 0.1,
            rho: 0.1,
            max_iters: 500,
            rel_tol: 1e-6,
        }
    }
}

impl AdmmParams {
    /// Params with the given weights and the conventional smoothing
    /// default `beta = 0.1 * rho`.
    pub fn new(alpha: f64, rho: f64) -> Self {
        Self {
            alpha,
            beta: 0.1 * rho,
            rho,
            ..Self::default()
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be finite and positive, got {}",
                self.rho
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".to_string(),
            ));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_tol must be finite and positive, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// One iteration's worth of convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    /// ‖x̂ᵏ⁺¹ − x̂ᵏ‖_F / ‖x̂ᵏ‖_F.
    pub rel_change: f64,
    /// Consensus gap: root-sum-square of ‖x̂ − 𝒵ₙ‖_F over the three
    /// lanes.
    pub primal_residual: f64,
    /// Sum of the nuclear norms of the three thresholded unfoldings.
    pub nuclear_surrogate: f64,
}

/// Per-iteration diagnostics of one solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Renders the trace as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,rel_change,primal_residual,nuclear_surrogate\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.rel_change, r.primal_residual, r.nuclear_surrogate
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Per-lane update rules for the intermediate tensor, fixed ahead of
/// the iteration loop.
///
/// The smoothed variant owns pre-factorized solvers for modes 0 and 1
/// (the horizontal axes); the plain variant — and any lane without
/// smoothing — uses the direct `z − t/rho` update.
#[derive(Debug, Clone)]
pub struct LaneSolvers {
    updates: [LaneUpdate; 3],
}

#[derive(Debug, Clone)]
enum LaneUpdate {
    /// v = z − t/rho.
    Direct,
    /// v = fold(inv · unfold(rho·z − t)) with inv pre-factorized.
    Smoothed(RegularizedSolver),
}

impl LaneSolvers {
    /// All three lanes use the direct update (no smoothing).
    pub fn plain() -> Self {
        Self {
            updates: [LaneUpdate::Direct, LaneUpdate::Direct, LaneUpdate::Direct],
        }
    }

    /// Smoothing solvers on modes 0 and 1, direct update on mode 2.
    /// With `beta == 0` the smoothing system degenerates to pure
    /// rescaling, so this returns the plain set and the two variants
    /// coincide exactly.
    pub fn smoothed(dims: Dims3, params: &AdmmParams) -> Result<Self> {
        if params.beta == 0.0 {
            return Ok(Self::plain());
        }
        if dims.i < 2 || dims.j < 2 {
            return Err(Error::InvalidParameter(format!(
                "smoothing requires at least 2 cells along each horizontal axis, got {dims}"
            )));
        }
        Ok(Self {
            updates: [
                LaneUpdate::Smoothed(RegularizedSolver::new(dims.i, params.rho, params.beta)?),
                LaneUpdate::Smoothed(RegularizedSolver::new(dims.j, params.rho, params.beta)?),
                LaneUpdate::Direct,
            ],
        })
    }
}

/// Iterate state of the ADMM loop: three per-mode lanes of the primal
/// variable, the thresholded auxiliaries, the scaled duals, and the
/// averaged reconstruction.
#[derive(Debug, Clone)]
pub struct AdmmState {
    x_lanes: [Field3; 3],
    z_lanes: [Field3; 3],
    t_lanes: [Field3; 3],
    x_hat: Field3,
    iteration: usize,
}

impl AdmmState {
    /// Starts from the observed field (unobserved cells zero-filled)
    /// stacked into all three lanes, with auxiliaries and duals zero.
    pub fn initialize(y: &Field3, mask: &Mask3) -> Result<Self> {
        let filled = project(y, mask)?;
        let zero = Field3::zeros(y.dims());
        Ok(Self {
            x_lanes: [filled.clone(), filled.clone(), filled.clone()],
            z_lanes: [zero.clone(), zero.clone(), zero.clone()],
            t_lanes: [zero.clone(), zero.clone(), zero],
            x_hat: filled,
            iteration: 0,
        })
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// The averaged reconstruction after the latest iteration.
    pub fn reconstruction(&self) -> &Field3 {
        &self.x_hat
    }

    pub fn x_lanes(&self) -> &[Field3; 3] {
        &self.x_lanes
    }

    pub fn z_lanes(&self) -> &[Field3; 3] {
        &self.z_lanes
    }

    pub fn t_lanes(&self) -> &[Field3; 3] {
        &self.t_lanes
    }
}

/// Overwrites observed cells of `field` with the corresponding values
/// of `y`, leaving unobserved cells untouched.
fn impose_observed(field: &mut Field3, y: &Field3, mask: &Mask3) {
    for ((f, &yv), &obs) in field
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(mask.as_slice())
    {
        if obs {
            *f = yv;
        }
    }
}

/// Runs one full ADMM iteration in place and returns its diagnostics.
///
/// Exposed so tests can drive the loop manually and inspect the state;
/// the `complete_*` entry points call exactly this.
pub fn admm_step(
    state: &mut AdmmState,
    y: &Field3,
    mask: &Mask3,
    params: &AdmmParams,
    solvers: &LaneSolvers,
) -> Result<TraceRecord> {
    let dims = y.dims();
    if state.x_hat.dims() != dims || mask.dims() != dims {
        return Err(Error::DimsMismatch {
            context: "solver step",
            expected: state.x_hat.dims().to_string(),
            found: format!("y {}, mask {}", dims, mask.dims()),
        });
    }
    let iteration = state.iteration + 1;
    let inv_rho = 1.0 / params.rho;
    let threshold = params.alpha / params.rho;

    // Mode-n singular value thresholding on x + t/rho.
    let mut nuclear_surrogate = 0.0;
    for lane in 0..3 {
        let w = state.x_lanes[lane].scaled_add(inv_rho, &state.t_lanes[lane])?;
        if !w.is_finite() {
            return Err(Error::Divergence { iteration, lane });
        }
        let unfolded = unfold(&w, lane)?;
        let (shrunk, values) = svt(&unfolded.matrix, threshold)?;
        nuclear_surrogate += values.iter().sum::<f64>();
        state.z_lanes[lane] = fold(
            &Unfolding {
                mode: lane,
                matrix: shrunk,
            },
            dims,
        )?;
    }

    // Per-lane intermediate update, then data consistency on observed
    // cells.
    for lane in 0..3 {
        let mut v = match &solvers.updates[lane] {
            LaneUpdate::Direct => {
                state.z_lanes[lane].scaled_add(-inv_rho, &state.t_lanes[lane])?
            }
            LaneUpdate::Smoothed(solver) => {
                let rhs = state.z_lanes[lane]
                    .scale(params.rho)
                    .sub(&state.t_lanes[lane])?;
                let mut unfolded = unfold(&rhs, lane)?;
                solver.solve_in_place(&mut unfolded.matrix)?;
                fold(&unfolded, dims)?
            }
        };
        impose_observed(&mut v, y, mask);
        if !v.is_finite() {
            return Err(Error::Divergence { iteration, lane });
        }
        state.x_lanes[lane] = v;
    }

    // Average the lanes into the consensus reconstruction. In exact
    // arithmetic observed cells of the average already equal y (all
    // lanes agree there); re-imposing them removes the last-bit
    // rounding of the three-way mean so the constraint holds exactly
    // at every iterate.
    let mut x_hat = state.x_lanes[0].clone();
    {
        let s = x_hat.as_mut_slice();
        for lane in 1..3 {
            for (a, &b) in s.iter_mut().zip(state.x_lanes[lane].as_slice()) {
                *a += b;
            }
        }
        for a in s.iter_mut() {
            *a /= 3.0;
        }
    }
    impose_observed(&mut x_hat, y, mask);

    // Dual update t += rho·(x̂ − z) against the consensus, so each
    // multiplier tracks how its unfolding disagrees with the average;
    // the primal residual falls out as a byproduct.
    let mut primal_sq = 0.0;
    for lane in 0..3 {
        let z = state.z_lanes[lane].as_slice();
        for ((t, &xv), &zv) in state.t_lanes[lane]
            .as_mut_slice()
            .iter_mut()
            .zip(x_hat.as_slice())
            .zip(z)
        {
            let diff = xv - zv;
            primal_sq += diff * diff;
            *t += params.rho * diff;
        }
    }

    let diff_norm = x_hat.sub(&state.x_hat)?.frobenius_norm();
    let prev_norm = state.x_hat.frobenius_norm();
    let rel_change = if diff_norm == 0.0 {
        0.0
    } else if prev_norm == 0.0 {
        f64::INFINITY
    } else {
        diff_norm / prev_norm
    };

    // Restack for the next iteration.
    state.x_lanes = [x_hat.clone(), x_hat.clone(), x_hat.clone()];
    state.x_hat = x_hat;
    state.iteration = iteration;

    Ok(TraceRecord {
        iteration,
        rel_change,
        primal_residual: primal_sq.sqrt(),
        nuclear_surrogate,
    })
}

/// True once the latest relative iterate change has dropped below
/// `rel_tol`; false for an empty trace.
pub fn check_convergence(trace: &ConvergenceTrace, params: &AdmmParams) -> bool {
    trace
        .last()
        .is_some_and(|r| r.rel_change < params.rel_tol)
}

fn run(
    y: &Field3,
    mask: &Mask3,
    params: &AdmmParams,
    solvers: LaneSolvers,
) -> Result<(Field3, ConvergenceTrace)> {
    params.validate()?;
    if y.dims() != mask.dims() {
        return Err(Error::DimsMismatch {
            context: "completion",
            expected: y.dims().to_string(),
            found: mask.dims().to_string(),
        });
    }
    if !mask.has_observed() {
        return Err(Error::MaskUnusable(
            "completion needs at least one observed cell".to_string(),
        ));
    }
    let mut trace = ConvergenceTrace::new();
    if mask.is_all_observed() {
        // Nothing to complete; the constraint pins every cell.
        return Ok((y.clone(), trace));
    }
    let mut state = AdmmState::initialize(y, mask)?;
    for _ in 0..params.max_iters {
        let record = admm_step(&mut state, y, mask, params, &solvers)?;
        trace.push(record);
        if check_convergence(&trace, params) {
            break;
        }
    }
    let mut result = state.x_hat.clone();
    impose_observed(&mut result, y, mask);
    Ok((result, trace))
}

/// Completes `y` on the unobserved cells of `mask` by plain
/// nuclear-norm-sum ADMM (no smoothing; `params.beta` is ignored).
pub fn complete_plain(
    y: &Field3,
    mask: &Mask3,
    params: &AdmmParams,
) -> Result<(Field3, ConvergenceTrace)> {
    run(y, mask, params, LaneSolvers::plain())
}

/// Completes `y` on the unobserved cells of `mask` with additional
/// smoothing along the two horizontal axes (strength `params.beta`).
pub fn complete_smoothed(
    y: &Field3,
    mask: &Mask3,
    params: &AdmmParams,
) -> Result<(Field3, ConvergenceTrace)> {
    params.validate()?;
    let solvers = LaneSolvers::smoothed(y.dims(), params)?;
    run(y, mask, params, solvers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rse;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Outer product u ⊗ v ⊗ w.
    fn rank_one(u: &[f64], v: &[f64], w: &[f64]) -> Field3 {
        let dims = Dims3::new(u.len(), v.len(), w.len()).unwrap();
        Field3::from_fn(dims, |i, j, k| u[i] * v[j] * w[k])
    }

    fn seeded_rank_one(dims: Dims3, seed: u64) -> Field3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
        };
        let (u, v, w) = (draw(dims.i), draw(dims.j), draw(dims.k));
        rank_one(&u, &v, &w)
    }

    fn random_mask(dims: Dims3, observed_fraction: f64, seed: u64) -> Mask3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        let target = ((n as f64) * observed_fraction).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut observed = vec![false; n];
        for &p in idx.iter().take(target) {
            observed[p] = true;
        }
        Mask3::new(dims, observed).unwrap()
    }

    fn random_field(dims: Dims3, seed: u64) -> Field3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fully_observed_returns_input_immediately() {
        let dims = Dims3::new(4, 4, 4).unwrap();
        let y = random_field(dims, 1);
        let mask = Mask3::all_observed(dims);
        let params = AdmmParams::default();
        for result in [
            complete_plain(&y, &mask, &params).unwrap(),
            complete_smoothed(&y, &mask, &params).unwrap(),
        ] {
            assert_eq!(result.0, y);
            assert!(result.1.is_empty());
        }
    }

    #[test]
    fn rank_one_missing_cell_is_forced() {
        // With all but one cell of a rank-1 tensor observed, the
        // missing cell is algebraically pinned to u_i·v_j·w_k.
        let (u, v, w) = ([0.6, 1.1], [0.9, 1.4], [1.0, 0.7]);
        let y = rank_one(&u, &v, &w);
        let dims = y.dims();
        let mut mask = Mask3::all_observed(dims);
        mask.set_observed(1, 1, 1, false);
        let params = AdmmParams::new(1e-2, 1.0)
            .with_beta(0.0)
            .with_max_iters(1500)
            .with_rel_tol(1e-13);
        let (result, _) = complete_plain(&y, &mask, &params).unwrap();
        let forced = u[1] * v[1] * w[1];
        assert!(
            (result.get(1, 1, 1) - forced).abs() <= 1e-4,
            "recovered {} vs forced {}",
            result.get(1, 1, 1),
            forced
        );
    }

    #[test]
    fn rank_one_half_observed_recovers() {
        let dims = Dims3::new(10, 10, 10).unwrap();
        let y = seeded_rank_one(dims, 42);
        let mask = random_mask(dims, 0.5, 7);
        let params = AdmmParams::new(0.1, 1.0)
            .with_beta(0.0)
            .with_max_iters(300)
            .with_rel_tol(1e-12);
        let (result, trace) = complete_plain(&y, &mask, &params).unwrap();
        let error = rse(&result, &y, &mask).unwrap();
        assert!(error <= 1e-2, "RSE {error} after {} iterations", trace.len());

        // Primal residual collapses on an exactly low-rank instance.
        let final_residual = trace.last().unwrap().primal_residual;
        let bound = 1e-3 * project(&y, &mask).unwrap().frobenius_norm();
        assert!(
            final_residual <= bound,
            "primal residual {final_residual} vs bound {bound}"
        );
    }

    #[test]
    fn beta_zero_smoothed_equals_plain_exactly() {
        let dims = Dims3::new(5, 6, 4).unwrap();
        let y = random_field(dims, 3);
        let mask = random_mask(dims, 0.3, 4);
        let params = AdmmParams::new(0.05, 0.9)
            .with_beta(0.0)
            .with_max_iters(40);
        let plain = complete_plain(&y, &mask, &params).unwrap();
        let smoothed = complete_smoothed(&y, &mask, &params).unwrap();
        assert_eq!(plain.0, smoothed.0);
        assert_eq!(plain.1, smoothed.1);
    }

    #[test]
    fn smoothing_lowers_error_on_layered_field() {
        // Smooth separable field: lateral waves times a 3-level
        // vertical step; at 5% observed the roughness penalty should
        // pay for itself.
        let dims = Dims3::new(16, 16, 8).unwrap();
        let step = |k: usize| match k {
            0..=2 => 1.0,
            3..=5 => 2.0,
            _ => 0.5,
        };
        let y = Field3::from_fn(dims, |i, j, k| {
            let a = (2.0 * std::f64::consts::PI * i as f64 / dims.i as f64).sin();
            let b = (2.0 * std::f64::consts::PI * j as f64 / dims.j as f64).cos();
            2.0 + a * b * step(k)
        });
        let mask = random_mask(dims, 0.05, 11);
        let base = AdmmParams::new(0.1, 1.0)
            .with_max_iters(150)
            .with_rel_tol(1e-12);
        let (plain, _) = complete_plain(&y, &mask, &base.with_beta(0.0)).unwrap();
        let (smoothed, _) = complete_smoothed(&y, &mask, &base).unwrap();
        let plain_rse = rse(&plain, &y, &mask).unwrap();
        let smoothed_rse = rse(&smoothed, &y, &mask).unwrap();
        assert!(
            smoothed_rse < plain_rse,
            "smoothed {smoothed_rse} vs plain {plain_rse}"
        );
    }

    #[test]
    fn manual_stepping_reproduces_solver_trace() {
        let dims = Dims3::new(6, 5, 4).unwrap();
        let y = random_field(dims, 9);
        let mask = random_mask(dims, 0.4, 10);
        let params = AdmmParams::new(0.05, 1.01).with_max_iters(25);

        let (result, trace) = complete_smoothed(&y, &mask, &params).unwrap();

        let solvers = LaneSolvers::smoothed(dims, &params).unwrap();
        let mut state = AdmmState::initialize(&y, &mask).unwrap();
        let mut manual = ConvergenceTrace::new();
        for _ in 0..params.max_iters {
            manual.push(admm_step(&mut state, &y, &mask, &params, &solvers).unwrap());
            if check_convergence(&manual, &params) {
                break;
            }
        }
        assert_eq!(trace, manual);
        let mut expected = state.reconstruction().clone();
        impose_observed(&mut expected, &y, &mask);
        assert_eq!(result, expected);
    }

    #[test]
    fn every_step_restores_observed_cells_exactly() {
        let dims = Dims3::new(5, 5, 5).unwrap();
        let y = random_field(dims, 13);
        let mask = random_mask(dims, 0.35, 14);
        let params = AdmmParams::new(0.2, 1.1);
        let solvers = LaneSolvers::smoothed(dims, &params).unwrap();
        let mut state = AdmmState::initialize(&y, &mask).unwrap();
        for _ in 0..5 {
            admm_step(&mut state, &y, &mask, &params, &solvers).unwrap();
            for lane in state.x_lanes() {
                for p in 0..dims.len() {
                    let (i, j, k) = dims.unravel(p);
                    if mask.is_observed(i, j, k) {
                        assert_eq!(lane.get(i, j, k), y.get(i, j, k));
                    }
                }
            }
        }
    }

    #[test]
    fn huge_alpha_zeroes_auxiliaries() {
        let dims = Dims3::new(4, 4, 4).unwrap();
        let y = random_field(dims, 15);
        let mask = random_mask(dims, 0.5, 16);
        let params = AdmmParams::new(1e12, 1.0).with_beta(0.0);
        let solvers = LaneSolvers::plain();
        let mut state = AdmmState::initialize(&y, &mask).unwrap();
        let record = admm_step(&mut state, &y, &mask, &params, &solvers).unwrap();
        for z in state.z_lanes() {
            assert!(z.as_slice().iter().all(|&v| v == 0.0));
        }
        assert_eq!(record.nuclear_surrogate, 0.0);
    }

    #[test]
    fn fixed_point_is_svt_stationary() {
        // At convergence each auxiliary unfolding must reproduce
        // itself under thresholding of x + t/rho.
        let dims = Dims3::new(4, 4, 4).unwrap();
        let y = seeded_rank_one(dims, 21);
        let mask = random_mask(dims, 0.6, 22);
        let params = AdmmParams::new(0.05, 1.0)
            .with_beta(0.0)
            .with_max_iters(3000)
            .with_rel_tol(1e-13);
        let solvers = LaneSolvers::plain();
        let mut state = AdmmState::initialize(&y, &mask).unwrap();
        let mut trace = ConvergenceTrace::new();
        for _ in 0..params.max_iters {
            trace.push(admm_step(&mut state, &y, &mask, &params, &solvers).unwrap());
            if check_convergence(&trace, &params) {
                break;
            }
        }
        for lane in 0..3 {
            let w = state.x_lanes()[lane]
                .scaled_add(1.0 / params.rho, &state.t_lanes()[lane])
                .unwrap();
            let unfolded = unfold(&w, lane).unwrap();
            let (again, _) = svt(&unfolded.matrix, params.alpha / params.rho).unwrap();
            let z = unfold(&state.z_lanes()[lane], lane).unwrap();
            let mut gap = 0.0f64;
            for c in 0..z.cols() {
                for r in 0..z.rows() {
                    gap = gap.max((again.get(r, c) - z.matrix.get(r, c)).abs());
                }
            }
            assert!(gap <= 1e-6, "lane {lane} stationarity gap {gap}");
        }
    }

    #[test]
    fn lane_symmetry_under_axis_rotation() {
        // Without smoothing all three modes are treated identically,
        // so rotating the axes must rotate the reconstruction.
        let dims = Dims3::new(4, 5, 6).unwrap();
        let y = random_field(dims, 31);
        let mask = random_mask(dims, 0.4, 32);
        let params = AdmmParams::new(0.05, 1.0)
            .with_beta(0.0)
            .with_max_iters(60);

        let rot_dims = Dims3::new(dims.j, dims.k, dims.i).unwrap();
        let y_rot = Field3::from_fn(rot_dims, |a, b, c| y.get(c, a, b));
        let mut mask_rot = Mask3::none_observed(rot_dims);
        for p in 0..dims.len() {
            let (i, j, k) = dims.unravel(p);
            if mask.is_observed(i, j, k) {
                mask_rot.set_observed(j, k, i, true);
            }
        }

        let (base, _) = complete_plain(&y, &mask, &params).unwrap();
        let (rotated, _) = complete_plain(&y_rot, &mask_rot, &params).unwrap();
        for p in 0..dims.len() {
            let (i, j, k) = dims.unravel(p);
            assert_relative_eq!(
                base.get(i, j, k),
                rotated.get(j, k, i),
                epsilon = 1e-9,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn determinism_across_runs() {
        let dims = Dims3::new(6, 6, 5).unwrap();
        let y = random_field(dims, 41);
        let mask = random_mask(dims, 0.3, 42);
        let params = AdmmParams::new(0.05, 1.01).with_max_iters(30);
        let a = complete_smoothed(&y, &mask, &params).unwrap();
        let b = complete_smoothed(&y, &mask, &params).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn convergence_check_cases() {
        let params = AdmmParams::default().with_rel_tol(1e-3);
        let mut trace = ConvergenceTrace::new();
        assert!(!check_convergence(&trace, &params));

        // geometric decay 0.5^t from 1.0 crosses 1e-3 at t = 10
        let mut first_converged = None;
        for t in 1..=12usize {
            trace.push(TraceRecord {
                iteration: t,
                rel_change: 0.5f64.powi(t as i32),
                primal_residual: 0.0,
                nuclear_surrogate: 0.0,
            });
            if first_converged.is_none() && check_convergence(&trace, &params) {
                first_converged = Some(t);
            }
        }
        assert_eq!(first_converged, Some(10));

        // identical consecutive iterates
        trace.push(TraceRecord {
            iteration: 13,
            rel_change: 0.0,
            primal_residual: 0.0,
            nuclear_surrogate: 0.0,
        });
        assert!(check_convergence(&trace, &params));

        // a large first step is not convergence
        let mut fresh = ConvergenceTrace::new();
        fresh.push(TraceRecord {
            iteration: 1,
            rel_change: 0.8,
            primal_residual: 1.0,
            nuclear_surrogate: 1.0,
        });
        assert!(!check_convergence(&fresh, &AdmmParams::default().with_rel_tol(1e-6)));
    }

    #[test]
    fn divergence_names_iteration_and_lane() {
        let dims = Dims3::new(3, 3, 3).unwrap();
        let y = random_field(dims, 51);
        let mask = random_mask(dims, 0.5, 52);
        let params = AdmmParams::default();
        let solvers = LaneSolvers::plain();
        let mut state = AdmmState::initialize(&y, &mask).unwrap();
        state.t_lanes[1].as_mut_slice()[0] = f64::INFINITY;
        let err = admm_step(&mut state, &y, &mask, &params, &solvers).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 1, lane: 1 }));
    }

    #[test]
    fn parameter_validation_rejects_bad_values() {
        let bad = [
            AdmmParams::new(0.0, 1.0),
            AdmmParams::new(-1.0, 1.0),
            AdmmParams::new(1.0, 0.0),
            AdmmParams::new(1.0, -0.5),
            AdmmParams::new(1.0, 1.0).with_beta(-0.1),
            AdmmParams::new(1.0, 1.0).with_max_iters(0),
            AdmmParams::new(1.0, 1.0).with_rel_tol(0.0),
            AdmmParams::new(f64::NAN, 1.0),
        ];
        for params in bad {
            assert!(params.validate().is_err(), "accepted {params:?}");
        }
        assert!(AdmmParams::default().validate().is_ok());
    }

    #[test]
    fn default_beta_tracks_rho() {
        let p = AdmmParams::new(0.01, 0.5);
        assert_relative_eq!(p.beta, 0.05);
        let q = AdmmParams::new(0.01, 1.1);
        assert_relative_eq!(q.beta, 0.11);
    }

    #[test]
    fn trace_csv_format() {
        let mut trace = ConvergenceTrace::new();
        trace.push(TraceRecord {
            iteration: 1,
            rel_change: 0.25,
            primal_residual: 1.5,
            nuclear_surrogate: 12.0,
        });
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("iteration,rel_change,primal_residual,nuclear_surrogate")
        );
        assert_eq!(lines.next(), Some("1,0.25,1.5,12"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn rejects_unusable_inputs() {
        let dims = Dims3::new(3, 3, 3).unwrap();
        let y = random_field(dims, 61);
        let params = AdmmParams::default();
        let none = Mask3::none_observed(dims);
        assert!(matches!(
            complete_plain(&y, &none, &params),
            Err(Error::MaskUnusable(_))
        ));
        let other = Mask3::all_observed(Dims3::new(3, 3, 2).unwrap());
        assert!(matches!(
            complete_plain(&y, &other, &params),
            Err(Error::DimsMismatch { .. })
        ));

        // smoothing needs two cells along each horizontal axis
        let thin = Dims3::new(1, 4, 4).unwrap();
        let y_thin = random_field(thin, 62);
        let mask_thin = random_mask(thin, 0.5, 63);
        assert!(complete_smoothed(&y_thin, &mask_thin, &params).is_err());
        let relaxed = params.with_beta(0.0);
        assert!(complete_smoothed(&y_thin, &mask_thin, &relaxed).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn observed_cells_always_bit_exact(
            di in 2usize..6, dj in 2usize..6, dk in 2usize..6,
            seed in 0u64..200,
            alpha in 1e-3f64..0.5,
            rho_idx in 0usize..6,
        ) {
            let rho = [0.1, 0.5, 0.9, 1.001, 1.01, 1.1][rho_idx];
            let dims = Dims3::new(di, dj, dk).unwrap();
            let y = random_field(dims, seed);
            let mask = random_mask(dims, 0.4, seed.wrapping_add(1));
            prop_assume!(mask.has_observed());
            let params = AdmmParams::new(alpha, rho).with_max_iters(10);
            let (result, _) = complete_smoothed(&y, &mask, &params).unwrap();
            for p in 0..dims.len() {
                let (i, j, k) = dims.unravel(p);
                if mask.is_observed(i, j, k) {
                    prop_assert_eq!(result.get(i, j, k).to_bits(), y.get(i, j, k).to_bits());
                }
            }
        }
    }
}
