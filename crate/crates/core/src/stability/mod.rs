//! Stability analysis of the locally implicit scheme.
//!
//! In 1D the corrector differs from the predictor by `psi`, driven only by the
//! predictor jump `beta` at the upwind face. With `gamma = psi(tau = +1)`,
//!
//! ```text
//! M psi = L beta,   gamma = S psi = nu A beta,
//! dE = 1/2 sum_k ( |gamma_k|_w^2 - nu |beta_k|_w^2 )
//! ```
//!
//! so `sqrt(nu) |A|_w <= 1` is sufficient for energy stability.
//! [`vonneumann`] covers the multi-dimensional schemes numerically.

pub mod vonneumann;

pub use vonneumann::{
    amplification_matrix, amplification_stencil, max_stable_cfl, radius_profile,
    scan_max_radius, spectral_radius, AmplificationSample, Stencil, RADIUS_TOL,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::Side;
use crate::scheme::{FieldState, LinearSolver};
use crate::spacetime::{assemble_g, FaceSet, Layout};

/// The 1D matrices relating the predictor jump to the corrector update.
#[derive(Debug, Clone)]
pub struct StabilityMatrices {
    pub p: usize,
    pub nu: f64,
    /// Corrector operator, both faces penalized.
    pub m: DMatrix<f64>,
    /// Lifts the low-face jump, `L[(0, t), t] = nu w_t`.
    pub l: DMatrix<f64>,
    /// Selects the `tau = +1` slice.
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    weights: Vec<f64>,
}

pub fn stability_matrices(p: usize, nu: f64) -> Result<StabilityMatrices> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::Config(format!("CFL must be >= 0, got {nu}")));
    }
    let op = assemble_g(p, 1, &[nu], FaceSet::both_sides([0]))?;
    let layout: &Layout = &op.layout;
    let n = layout.n;
    let w = layout.weights().to_vec();
    let low = layout.face_nodes(0, Side::Low);

    let mut l0 = DMatrix::zeros(layout.n_st, n);
    for (t, &k) in low.iter().enumerate() {
        l0[(k, t)] = w[t];
    }
    let mut s = DMatrix::zeros(n, layout.n_st);
    let start = layout.time_slice_start(Side::High);
    for i in 0..n {
        s[(i, start + i)] = 1.0;
    }
    // A = S M^-1 L / nu, computed from the unscaled lift so nu = 0 is defined.
    let a = &s * op.solve_matrix(&l0);
    Ok(StabilityMatrices {
        p,
        nu,
        m: op.matrix.clone(),
        l: l0 * nu,
        s,
        a,
        weights: w,
    })
}

impl StabilityMatrices {
    fn scaled(&self) -> DMatrix<f64> {
        let n = self.weights.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.a[(i, j)] * (self.weights[i] / self.weights[j]).sqrt()
        })
    }

    /// `|A|_w = |W^1/2 A W^-1/2|_2` in the GLL-weighted norm.
    pub fn weighted_norm(&self) -> f64 {
        self.scaled().singular_values().max()
    }

    pub fn norm_2(&self) -> f64 {
        self.a.singular_values().max()
    }

    pub fn spectral_radius(&self) -> f64 {
        let zero = DMatrix::zeros(self.a.nrows(), self.a.ncols());
        spectral_radius(&self.a, &zero).expect("eigenvalues of a small dense matrix")
    }

    /// `sqrt(nu) |A|_w`; at most one means the energy cannot grow.
    pub fn energy_bound(&self) -> f64 {
        self.nu.sqrt() * self.weighted_norm()
    }

    pub fn weighted_vec_norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.weights)
            .map(|(x, w)| x * x * w)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct PsiSolution {
    pub psi: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `max |gamma - nu A beta|`.
    pub consistency: f64,
}

/// Solves `M psi = L beta` for one element.
pub fn psi_from_jump(mats: &StabilityMatrices, beta: &[f64]) -> Result<PsiSolution> {
    let n = mats.p + 1;
    if beta.len() != n {
        return Err(Error::Config(format!("jump has {} values, expected {n}", beta.len())));
    }
    let b = DVector::from_column_slice(beta);
    let rhs = &mats.l * &b;
    let psi = mats
        .m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularOperator {
            p: mats.p,
            nu: vec![mats.nu],
        })?;
    let gamma = &mats.s * &psi;
    let via_a = &mats.a * &b * mats.nu;
    let consistency = (&gamma - via_a).amax();
    Ok(PsiSolution {
        psi: psi.as_slice().to_vec(),
        gamma: gamma.as_slice().to_vec(),
        consistency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub delta_e: f64,
    /// `1/2 sum_k |gamma_k|_w^2`.
    pub rhs_psi_term: f64,
    /// `1/2 nu sum_k |beta_k|_w^2`.
    pub rhs_jump_term: f64,
    /// `|dE - (psi term - jump term)|` relative to the largest term.
    pub identity_residual: f64,
}

/// Evaluates both sides of the 1D energy identity for one step of `state`.
pub fn energy_identity_check(state: &FieldState, nu: f64) -> Result<EnergyReport> {
    if state.mesh.dim != 1 {
        return Err(Error::Config("the energy identity is one-dimensional".into()));
    }
    let p = state.order_p;
    let solver = LinearSolver::new(p, 1)?;
    let layout = solver.layout().clone();
    let detail = solver.step_lidg_detailed(state, &[nu], 0.0)?;
    let pred = detail.predictor();
    let corr = detail.corrector();
    let w = layout.weights();
    let n_elem = state.mesh.n_total();
    let high = layout.face_nodes(0, Side::High);
    let low = layout.face_nodes(0, Side::Low);
    let start = layout.time_slice_start(Side::High);

    let mut delta_e = 0.0;
    let mut psi_term = 0.0;
    let mut jump_term = 0.0;
    for e in 0..n_elem {
        let old = state.element(e);
        let new = detail.state.element(e);
        delta_e += 0.5
            * (0..layout.n)
                .map(|i| w[i] * (new[i] - old[i]) * (new[i] + old[i]))
                .sum::<f64>();
        let (pk, ck) = (pred.element(e), corr.element(e));
        psi_term += 0.5
            * (0..layout.n)
                .map(|i| w[i] * (ck[start + i] - pk[start + i]).powi(2))
                .sum::<f64>();
        let up = pred.element(state.mesh.neighbor(e, 0, Side::Low));
        jump_term += 0.5
            * nu
            * (0..layout.n)
                .map(|t| w[t] * (up[high[t]] - pk[low[t]]).powi(2))
                .sum::<f64>();
    }
    let scale = delta_e.abs().max(psi_term).max(jump_term).max(f64::MIN_POSITIVE);
    Ok(EnergyReport {
        delta_e,
        rhs_psi_term: psi_term,
        rhs_jump_term: jump_term,
        identity_residual: (delta_e - (psi_term - jump_term)).abs() / scale,
    })
}
