//! Dense normal equations, damped solves, Schur complements and a generic
//! Levenberg-damped Gauss-Newton step.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use super::SolverError;

/// `H xi = -b` for a stack of 6-dof pose increments, plus the energy at the
/// linearization point. `b` is the energy gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub energy: f64,
}

impl NormalEquations {
    pub fn zeros(dim: usize) -> Self {
        Self { h: DMatrix::zeros(dim, dim), b: DVector::zeros(dim), energy: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Adds a dense `N x N` block (and its gradient) whose rows map onto
    /// consecutive 6-blocks starting at pose `first`.
    pub fn add_block<const N: usize>(&mut self, first: usize, h: &SMatrix<f64, N, N>, b: &SVector<f64, N>) {
        let o = 6 * first;
        let mut view = self.h.view_mut((o, o), (N, N));
        view += h;
        let mut bv = self.b.rows_mut(o, N);
        bv += b;
    }

    pub fn add(&mut self, other: &NormalEquations) {
        self.h += &other.h;
        self.b += &other.b;
        self.energy += other.energy;
    }

    /// Mirrors the upper triangle onto the lower one.
    pub fn symmetrize(&mut self) {
        let n = self.h.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.h[(i, j)] + self.h[(j, i)]);
                self.h[(i, j)] = v;
                self.h[(j, i)] = v;
            }
        }
    }
}

/// Solves `(H + lambda * D) xi = -b` by Cholesky, with `D = diag(H)` floored
/// at `diag_floor`.
pub fn solve_damped(h: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, diag_floor: f64) -> Result<DVector<f64>, SolverError> {
    let mut a = h.clone();
    if lambda > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * h[(i, i)].max(diag_floor);
        }
    }
    let chol = a.cholesky().ok_or(SolverError::Singular)?;
    let xi = -chol.solve(b);
    if xi.iter().all(|x| x.is_finite()) {
        Ok(xi)
    } else {
        Err(SolverError::Singular)
    }
}

/// Result of eliminating the leading `marg` variables from a quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurResult {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// The eliminated block was numerically singular and got `1e-9 I`.
    pub regularized: bool,
}

/// `H_rr - H_rm H_mm^-1 H_mr` and `b_r - H_rm H_mm^-1 b_m` with the first
/// `marg` rows/columns eliminated.
pub fn schur_complement(h: &DMatrix<f64>, b: &DVector<f64>, marg: usize) -> SchurResult {
    let n = h.nrows();
    let keep = n - marg;
    let h_mm = h.view((0, 0), (marg, marg)).clone_owned();
    let h_rm = h.view((marg, 0), (keep, marg)).clone_owned();
    let h_rr = h.view((marg, marg), (keep, keep)).clone_owned();
    let b_m = b.rows(0, marg).clone_owned();
    let b_r = b.rows(marg, keep).clone_owned();

    // Judge singularity relative to the block's scale.
    let scale = (0..marg).map(|i| h_mm[(i, i)].abs()).fold(0.0, f64::max);
    let eig_min = h_mm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    let mut regularized = !(eig_min > 1e-12 * scale.max(1.0));
    let mut block = h_mm.clone();
    if regularized {
        for i in 0..marg {
            block[(i, i)] += 1e-9;
        }
    }
    let chol = match block.clone().cholesky() {
        Some(c) => c,
        None => {
            regularized = true;
            for i in 0..marg {
                block[(i, i)] += 1e-9 * scale.max(1.0);
            }
            match block.cholesky() {
                Some(c) => c,
                None => {
                    return SchurResult { h: h_rr, b: b_r, regularized: true };
                }
            }
        }
    };
    let x_h = chol.solve(&h_rm.transpose());
    let x_b = chol.solve(&b_m);
    let mut hm = h_rr - &h_rm * x_h;
    let bm = b_r - &h_rm * x_b;
    // Restore exact symmetry lost to rounding.
    hm = (&hm + hm.transpose()) * 0.5;
    SchurResult { h: hm, b: bm, regularized }
}

/// A nonlinear least-squares problem on some manifold state.
pub trait LeastSquares {
    type State: Clone;

    /// Energy only; used to judge candidate steps.
    fn energy(&self, state: &Self::State) -> Result<f64, SolverError>;

    /// Normal equations and energy at `state`.
    fn linearize(&self, state: &Self::State) -> Result<NormalEquations, SolverError>;

    /// Applies a stacked increment.
    fn retract(&self, state: &Self::State, xi: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub lambda: f64,
    pub up: f64,
    pub down: f64,
    pub max_retries: usize,
    pub diag_floor: f64,
    pub min_lambda: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self { lambda: 1e-4, up: 10.0, down: 3.0, max_retries: 8, diag_floor: 1e-6, min_lambda: 1e-12 }
    }
}

impl Damping {
    /// Undamped Gauss-Newton.
    pub fn none() -> Self {
        Self { lambda: 0.0, max_retries: 0, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    pub state: S,
    pub energy: f64,
    pub increment_norm: f64,
    pub accepted: bool,
}

/// One damped Gauss-Newton step from `state`, whose linearization is `eqs`.
///
/// The candidate is accepted only if it does not increase the energy;
/// otherwise damping grows and the solve is retried. When every retry is
/// rejected the original state is returned with `accepted = false`, which
/// callers treat as convergence. The caller relinearizes the new state.
pub fn step<P: LeastSquares>(problem: &P, state: &P::State, eqs: &NormalEquations, damping: &mut Damping) -> Result<StepOutcome<P::State>, SolverError> {
    let mut solved_once = false;
    let mut last_norm = 0.0;
    for _ in 0..=damping.max_retries {
        let xi = match solve_damped(&eqs.h, &eqs.b, damping.lambda, damping.diag_floor) {
            Ok(xi) => xi,
            Err(_) => {
                damping.lambda = (damping.lambda * damping.up).max(1e-6);
                continue;
            }
        };
        solved_once = true;
        last_norm = xi.norm();
        if last_norm == 0.0 {
            return Ok(StepOutcome { state: state.clone(), energy: eqs.energy, increment_norm: 0.0, accepted: true });
        }
        let candidate = problem.retract(state, &xi);
        let energy = problem.energy(&candidate)?;
        if energy.is_finite() && (energy <= eqs.energy || damping.max_retries == 0) {
            damping.lambda = (damping.lambda / damping.down).max(damping.min_lambda);
            return Ok(StepOutcome { state: candidate, energy, increment_norm: last_norm, accepted: true });
        }
        damping.lambda = (damping.lambda * damping.up).max(1e-9);
    }
    if !solved_once {
        return Err(SolverError::Singular);
    }
    Ok(StepOutcome { state: state.clone(), energy: eqs.energy, increment_norm: last_norm, accepted: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `1/2 |A x - c|^2` on plain vectors.
    struct Linear {
        a: DMatrix<f64>,
        c: DVector<f64>,
    }

    impl LeastSquares for Linear {
        type State = DVector<f64>;

        fn energy(&self, x: &DVector<f64>) -> Result<f64, SolverError> {
            Ok(0.5 * (&self.a * x - &self.c).norm_squared())
        }

        fn linearize(&self, x: &DVector<f64>) -> Result<NormalEquations, SolverError> {
            let r = &self.a * x - &self.c;
            Ok(NormalEquations { h: self.a.transpose() * &self.a, b: self.a.transpose() * &r, energy: 0.5 * r.norm_squared() })
        }

        fn retract(&self, x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
            x + xi
        }
    }

    fn random_linear(rng: &mut impl Rng, rows: usize, cols: usize) -> Linear {
        Linear { a: DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)), c: DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)) }
    }

    #[test]
    fn zero_gradient_gives_zero_increment() {
        let p = Linear { a: DMatrix::identity(3, 3), c: DVector::zeros(3) };
        let x = DVector::zeros(3);
        let eqs = p.linearize(&x).unwrap();
        let out = step(&p, &x, &eqs, &mut Damping::default()).unwrap();
        assert_eq!(out.increment_norm, 0.0);
        assert_eq!(out.state, x);
    }

    #[test]
    fn undamped_step_solves_quadratic_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_linear(&mut rng, 12, 6);
            let x0 = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
            let eqs = p.linearize(&x0).unwrap();
            let out = step(&p, &x0, &eqs, &mut Damping::none()).unwrap();
            let exact = (p.a.transpose() * &p.a).cholesky().unwrap().solve(&(p.a.transpose() * &p.c));
            assert!((out.state - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn damped_steps_never_increase_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_linear(&mut rng, 20, 8);
        let mut x = DVector::from_fn(8, |_, _| rng.random_range(-5.0..5.0));
        let mut eqs = p.linearize(&x).unwrap();
        let mut damping = Damping { lambda: 10.0, ..Damping::default() };
        for _ in 0..30 {
            let out = step(&p, &x, &eqs, &mut damping).unwrap();
            assert!(out.energy <= eqs.energy);
            x = out.state;
            eqs = p.linearize(&x).unwrap();
        }
    }

    #[test]
    fn schur_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
            let h = &g * g.transpose() + DMatrix::identity(12, 12) * 0.1;
            let b = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let s = schur_complement(&h, &b, 6);
            assert!(!s.regularized);
            // Marginal covariance of the kept block is the kept block of H^-1.
            let cov = h.clone().try_inverse().unwrap();
            let marginal = cov.view((6, 6), (6, 6)).clone_owned().try_inverse().unwrap();
            assert!((&s.h - &marginal).abs().max() < 1e-9 * marginal.abs().max());
            // The marginal mean agrees with the joint minimizer.
            let joint = -h.clone().cholesky().unwrap().solve(&b);
            let reduced = -s.h.clone().cholesky().unwrap().solve(&s.b);
            assert!((joint.rows(6, 6) - reduced).norm() < 1e-9);
        }
    }

    #[test]
    fn schur_of_singular_block_is_regularized() {
        let mut h = DMatrix::zeros(12, 12);
        for i in 6..12 {
            h[(i, i)] = 2.0;
        }
        let s = schur_complement(&h, &DVector::zeros(12), 6);
        assert!(s.regularized);
        assert_eq!(s.h, DMatrix::identity(6, 6) * 2.0);
    }

    #[test]
    fn non_finite_system_is_singular() {
        let h = DMatrix::from_element(2, 2, f64::NAN);
        assert_eq!(solve_damped(&h, &DVector::zeros(2), 1e-4, 1e-6), Err(SolverError::Singular));
    }
}
