use geofill::completion::{admm_step, complete_plain, AdmmParams, AdmmState, LaneSolvers};
use geofill::synthetic;
use geofill::tensor::{project, rse, Dims3};

fn main() -> Result<(), geofill::Error> {
    let dims = Dims3::new(40, 40, 40)?;
    let n = (dims.len() as f64 * 0.10).round() as usize;

    // Does any (alpha, rho) reach RSE <= 0.05 within 500 iterations at
    // 10% observed?
    let truth = synthetic::tucker(dims, [3, 3, 3], 11);
    let mask = synthetic::sample_cells_uniform(dims, n, 2)?;
    let y = project(&truth, &mask)?;
    for (alpha, rho) in [(1.0, 1.0), (0.3, 1.0), (3.0, 1.0), (1.0, 0.3), (0.1, 0.1)] {
        let params = AdmmParams {
            alpha,
            rho,
            beta: 0.0,
            max_iters: 500,
            rel_tol: 1e-8,
        };
        let (x, trace) = complete_plain(&y, &mask, &params)?;
        println!(
            "alpha={alpha} rho={rho}: rse={:.3e} iters={}",
            rse(&x, &truth, &mask)?,
            trace.len()
        );
    }

    // Long-horizon run on the easiest failing seed pair: does the
    // error keep falling (slow convergence) or stall (different
    // optimum)?
    let truth = synthetic::tucker(dims, [3, 3, 3], 13);
    let mask = synthetic::sample_cells_uniform(dims, n, 4)?;
    let y = project(&truth, &mask)?;
    let params = AdmmParams {
        alpha: 1.0,
        rho: 0.1,
        beta: 0.0,
        max_iters: 3000,
        rel_tol: 0.0,
    };
    let solvers = LaneSolvers::plain();
    let mut state = AdmmState::initialize(&y, &mask)?;
    for it in 1..=3000usize {
        let rec = admm_step(&mut state, &y, &mask, &params, &solvers)?;
        if it % 250 == 0 {
            println!(
                "long run it={it}: rse={:.4e} rel={:.3e}",
                rse(state.reconstruction(), &truth, &mask)?,
                rec.rel_change
            );
        }
    }
    Ok(())
}
