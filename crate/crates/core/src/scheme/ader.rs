//! Classic ADER-DG with exactly integrated mass and stiffness matrices.
//!
//! The predictor is element-local (no face terms); the corrector integrates
//! the predicted volume and upwind face fluxes explicitly.

use nalgebra::DMatrix;

use crate::basis::{gauss_legendre, lagrange_basis};
use crate::error::{Error, Result};
use crate::linalg::RefinedLu;
use crate::mesh::{CartesianMesh, Side};
use crate::spacetime::Layout;

/// Kronecker product over axes given fastest first.
pub(crate) fn kron_axes(mats: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for m in mats.iter().rev() {
        out = out.kronecker(m);
    }
    out
}

/// Exact 1D mass `int l_i l_j` and stiffness `int l_i l_j'`.
pub(crate) fn exact_mass_stiffness(layout: &Layout) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = layout.n;
    let nodes = &layout.basis.rule.nodes;
    let d = &layout.basis.ops.diff_matrix;
    let gauss = gauss_legendre(n + 1);
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    for (&x, &w) in gauss.nodes.iter().zip(&gauss.weights) {
        let l: Vec<f64> = (0..n).map(|j| lagrange_basis(nodes, j, x)).collect();
        let dl: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|m| d[(m, j)] * l[m]).sum())
            .collect();
        for i in 0..n {
            for j in 0..n {
                mass[(i, j)] += w * l[i] * l[j];
                stiff[(i, j)] += w * l[i] * dl[j];
            }
        }
    }
    (mass, stiff)
}

pub struct AderOperators {
    pub layout: Layout,
    pub nu: Vec<f64>,
    /// `n_st x n_space`, the `tau = -1` injection of the previous level.
    pub inj: DMatrix<f64>,
    /// `sum_a nu_a <phi, dq/dxi_a>`.
    pub vol: DMatrix<f64>,
    /// Per axis, `n_st x n_face`: `nu_a` times the low-face mass.
    pub lift: Vec<DMatrix<f64>>,
    pub pred_matrix: DMatrix<f64>,
    pub time_matrix: DMatrix<f64>,
    pred_lu: RefinedLu,
    time_lu: RefinedLu,
}

impl std::fmt::Debug for AderOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AderOperators")
            .field("p", &self.layout.p)
            .field("dim", &self.layout.dim)
            .field("nu", &self.nu)
            .finish()
    }
}

// Plain LU is already linear to ~1e-14 here; refinement only costs time.
fn checked_lu(m: &DMatrix<f64>, p: usize, nu: &[f64]) -> Result<RefinedLu> {
    RefinedLu::with_refinement(m, false)
        .ok_or_else(|| Error::SingularOperator { p, nu: nu.to_vec() })
}

impl AderOperators {
    pub fn new(layout: Layout, nu: &[f64]) -> Result<Self> {
        let dim = layout.dim;
        if nu.len() != dim || nu.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Config(format!("invalid CFL vector {nu:?}")));
        }
        let n = layout.n;
        let (mass, stiff) = exact_mass_stiffness(&layout);
        let mut kt = stiff.clone();
        kt[(0, 0)] += 1.0;

        let mass_space = kron_axes(&vec![&mass; dim]);
        let time_matrix = kt.kronecker(&mass_space);
        let mut vol = DMatrix::zeros(layout.n_st, layout.n_st);
        for a in 0..dim {
            let mut axes: Vec<&DMatrix<f64>> = vec![&mass; dim + 1];
            axes[a] = &stiff;
            vol += kron_axes(&axes) * nu[a];
        }
        let pred_matrix = &time_matrix + &vol;

        let mut e0 = DMatrix::zeros(n, 1);
        e0[(0, 0)] = 1.0;
        let inj = e0.kronecker(&mass_space);

        // Face-local order is the other spatial axes, then time, all with
        // the same mass matrix.
        let face_mass = kron_axes(&vec![&mass; dim]);
        let lift = (0..dim)
            .map(|a| {
                let mut l = DMatrix::zeros(layout.n_st, layout.n_face());
                for (f, &k) in layout.face_nodes(a, Side::Low).iter().enumerate() {
                    for g in 0..layout.n_face() {
                        l[(k, g)] = nu[a] * face_mass[(f, g)];
                    }
                }
                l
            })
            .collect();

        let pred_lu = checked_lu(&pred_matrix, layout.p, nu)?;
        let time_lu = checked_lu(&time_matrix, layout.p, nu)?;
        Ok(AderOperators {
            layout,
            nu: nu.to_vec(),
            inj,
            vol,
            lift,
            pred_matrix,
            time_matrix,
            pred_lu,
            time_lu,
        })
    }

    pub fn solve_pred(&self, m: &mut DMatrix<f64>) {
        let n = m.nrows();
        self.pred_lu.solve_columns(m.as_mut_slice(), n);
    }

    pub fn solve_time(&self, m: &mut DMatrix<f64>) {
        let n = m.nrows();
        self.time_lu.solve_columns(m.as_mut_slice(), n);
    }

    /// Low-face rows of each column of `q` along `axis`.
    pub(crate) fn face_rows(&self, q: &DMatrix<f64>, axis: usize, side: Side) -> DMatrix<f64> {
        let nodes = self.layout.face_nodes(axis, side);
        q.select_rows(nodes.iter())
    }

    /// One step; `values` is element-major with `n_space` entries each.
    /// Solves act on deviations from the per-element `means`.
    pub fn step(&self, mesh: &CartesianMesh, values: &[f64], means: &[f64]) -> Vec<f64> {
        let layout = &self.layout;
        let n_elem = mesh.n_total();
        let mut prev = DMatrix::from_column_slice(layout.n_space, n_elem, values);
        for (mut col, c) in prev.column_iter_mut().zip(means) {
            col.add_scalar_mut(-c);
        }
        let injected = &self.inj * &prev;
        let mut pred = injected.clone();
        self.solve_pred(&mut pred);
        // Jumps need absolute values across elements.
        let mut pred_abs = pred.clone();
        for (mut col, c) in pred_abs.column_iter_mut().zip(means) {
            col.add_scalar_mut(*c);
        }

        let mut rhs = injected - &self.vol * &pred;
        for a in 0..layout.dim {
            let high = self.face_rows(&pred_abs, a, Side::High);
            let low = self.face_rows(&pred_abs, a, Side::Low);
            let mut jump = DMatrix::zeros(layout.n_face(), n_elem);
            for e in 0..n_elem {
                let up = mesh.neighbor(e, a, Side::Low);
                jump.set_column(e, &(high.column(up) - low.column(e)));
            }
            rhs += &self.lift[a] * jump;
        }
        self.solve_time(&mut rhs);
        let start = layout.time_slice_start(Side::High);
        let mut out = rhs.rows(start, layout.n_space).into_owned();
        for (mut col, c) in out.column_iter_mut().zip(means) {
            col.add_scalar_mut(*c);
        }
        out.as_slice().to_vec()
    }
}
