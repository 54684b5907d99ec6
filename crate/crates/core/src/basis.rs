//! Gauss–Lobatto–Legendre quadrature and the collocated Lagrange operators.
//!
//! Every space and time direction of the solver uses the same 1D rule: nodes
//! include both endpoints, so face traces are plain read-offs and the mass
//! matrix is the diagonal of the weights. Together with the collocation
//! derivative this gives the summation-by-parts identity
//! `W D + (W D)^T = diag(-1, 0, .., 0, 1)` for `p >= 1`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 14;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub order_p: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over [-1, 1] with this rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct LagrangeOps1D {
    /// `D[i][j] = l_j'(x_i)`.
    pub diff_matrix: DMatrix<f64>,
    /// `l_j(-1)`.
    pub left_trace: Vec<f64>,
    /// `l_j(+1)`.
    pub right_trace: Vec<f64>,
}

/// Rule and operators for one polynomial order.
#[derive(Debug, Clone)]
pub struct Basis1D {
    pub rule: QuadratureRule1D,
    pub ops: LagrangeOps1D,
}

impl Basis1D {
    pub fn order(&self) -> usize {
        self.rule.order_p
    }

    pub fn n(&self) -> usize {
        self.rule.len()
    }
}

/// Legendre polynomials `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
pub(crate) fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut prev, mut cur) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * x * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

pub fn gll_rule(p: usize) -> Result<QuadratureRule1D> {
    if p > MAX_ORDER {
        return Err(Error::UnsupportedOrder(p));
    }
    if p == 0 {
        return Ok(QuadratureRule1D {
            order_p: 0,
            nodes: vec![0.0],
            weights: vec![2.0],
        });
    }

    let pf = p as f64;
    // Chebyshev–Gauss–Lobatto initial guesses, ascending.
    let mut nodes: Vec<f64> = (0..=p)
        .map(|j| -(std::f64::consts::PI * j as f64 / pf).cos())
        .collect();
    nodes[0] = -1.0;
    nodes[p] = 1.0;

    // Newton on f(x) = (1 - x^2) P_p'(x) = p (P_{p-1} - x P_p), using
    // f'(x) = -p (p + 1) P_p(x) from the Legendre equation.
    for x in nodes.iter_mut().take(p).skip(1) {
        for _ in 0..NEWTON_MAX_ITERS {
            let (pp, pm) = legendre_pair(p, *x);
            let dx = (pm - *x * pp) / ((pf + 1.0) * pp);
            *x += dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (pp, _) = legendre_pair(p, x);
            2.0 / (pf * (pf + 1.0) * pp * pp)
        })
        .collect();

    // Enforce exact symmetry.
    for i in 0..(p + 1) / 2 {
        let j = p - i;
        let a = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -a;
        nodes[j] = a;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if p % 2 == 0 {
        nodes[p / 2] = 0.0;
    }

    Ok(QuadratureRule1D {
        order_p: p,
        nodes,
        weights,
    })
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| nodes[j] - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

pub fn lagrange_ops(rule: &QuadratureRule1D) -> LagrangeOps1D {
    let n = rule.len();
    let x = &rule.nodes;
    let lambda = barycentric_weights(x);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lambda[j] / lambda[i]) / (x[i] - x[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    let left_trace = (0..n).map(|j| lagrange_basis(x, j, -1.0)).collect();
    let right_trace = (0..n).map(|j| lagrange_basis(x, j, 1.0)).collect();
    LagrangeOps1D {
        diff_matrix: d,
        left_trace,
        right_trace,
    }
}

/// `l_j(x)` in product form.
pub fn lagrange_basis(nodes: &[f64], j: usize, x: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &xk)| (x - xk) / (nodes[j] - xk))
        .product()
}

pub fn interpolate(rule: &QuadratureRule1D, nodal_values: &[f64], x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(x));
    }
    assert_eq!(nodal_values.len(), rule.len(), "nodal value count");
    Ok(nodal_values
        .iter()
        .enumerate()
        .map(|(j, &v)| v * lagrange_basis(&rule.nodes, j, x))
        .sum())
}

static BASES: [OnceLock<Basis1D>; MAX_ORDER + 1] = [const { OnceLock::new() }; MAX_ORDER + 1];

/// Shared, lazily built basis for order `p`.
pub fn basis(p: usize) -> Result<&'static Basis1D> {
    if p > MAX_ORDER {
        return Err(Error::UnsupportedOrder(p));
    }
    Ok(BASES[p].get_or_init(|| {
        let rule = gll_rule(p).expect("order checked above");
        let ops = lagrange_ops(&rule);
        Basis1D { rule, ops }
    }))
}

/// Gauss–Legendre rule with `n` points. Only used to measure errors.
pub fn gauss_legendre(n: usize) -> QuadratureRule1D {
    assert!(n >= 1);
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..NEWTON_MAX_ITERS {
            let (pn, pm) = legendre_pair(n, x);
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        let (pn, pm) = legendre_pair(n, x);
        dp = if (x * x - 1.0).abs() > 0.0 {
            nf * (x * pn - pm) / (x * x - 1.0)
        } else {
            dp
        };
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    QuadratureRule1D {
        order_p: n.saturating_sub(1),
        nodes,
        weights,
    }
}
