//! Numerical von Neumann analysis on periodic Cartesian lattices.
//!
//! One step of either scheme maps the previous nodal values of an element and
//! its upwind neighbors linearly onto the new values. The map is recorded as a
//! stencil `{offset -> matrix}`; for a Bloch mode `q_e = v exp(i theta . e)`
//! the step multiplies `v` by `A(theta) = sum_o M_o exp(i theta . o)`.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Side;
use crate::scheme::{AderOperators, SchemeChoice};
use crate::spacetime::{FaceSet, Layout, OperatorCache};

type Offset = [i8; 3];

/// A lattice-translation-invariant linear map onto one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub rows: usize,
    pub cols: usize,
    pub terms: BTreeMap<Offset, DMatrix<f64>>,
}

impl Stencil {
    pub fn identity(n: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert([0; 3], DMatrix::identity(n, n));
        Stencil {
            rows: n,
            cols: n,
            terms,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Stencil {
            rows,
            cols,
            terms: BTreeMap::new(),
        }
    }

    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        Stencil {
            rows: m.nrows(),
            cols: self.cols,
            terms: self.terms.iter().map(|(o, t)| (*o, m * t)).collect(),
        }
    }

    pub fn map_terms(&self, rows: usize, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Stencil {
            rows,
            cols: self.cols,
            terms: self.terms.iter().map(|(o, t)| (*o, f(t))).collect(),
        }
    }

    /// The same map evaluated at the low neighbor along `axis`.
    pub fn shifted_low(&self, axis: usize) -> Self {
        Stencil {
            rows: self.rows,
            cols: self.cols,
            terms: self
                .terms
                .iter()
                .map(|(o, t)| {
                    let mut o = *o;
                    o[axis] -= 1;
                    (o, t.clone())
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Stencil) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (o, t) in &other.terms {
            self.terms
                .entry(*o)
                .and_modify(|m| *m += t)
                .or_insert_with(|| t.clone());
        }
    }

    /// `sum_o M_o exp(i theta . o)` as real and imaginary parts.
    pub fn symbol(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut re = DMatrix::zeros(self.rows, self.cols);
        let mut im = DMatrix::zeros(self.rows, self.cols);
        for (o, m) in &self.terms {
            let phase: f64 = theta.iter().zip(o).map(|(t, &k)| t * k as f64).sum();
            re += m * phase.cos();
            im += m * phase.sin();
        }
        (re, im)
    }
}

fn select_rows(rows: &[usize], n_cols: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(rows.len(), n_cols);
    for (r, &k) in rows.iter().enumerate() {
        s[(r, k)] = 1.0;
    }
    s
}

fn injection(layout: &Layout) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout.n_st, layout.n_space);
    for (s, &w) in layout.space_weights().iter().enumerate() {
        m[(s, s)] = w;
    }
    m
}

fn penalty_lift(layout: &Layout, nu: f64, axis: usize, side: Side) -> DMatrix<f64> {
    let sign = match side {
        Side::Low => 1.0,
        Side::High => -1.0,
    };
    let fw = layout.face_weights(axis);
    let mut m = DMatrix::zeros(layout.n_st, layout.n_face());
    for (f, &k) in layout.face_nodes(axis, side).iter().enumerate() {
        m[(k, f)] = sign * nu * fw[f];
    }
    m
}

fn lidg_stencil(cache: &OperatorCache, nu: &[f64]) -> Result<Stencil> {
    let layout = cache.layout();
    let dim = layout.dim;
    let inj = injection(layout);
    let mut stages: BTreeMap<u8, Stencil> = BTreeMap::new();
    for level in 0..=dim {
        for mask in (0u8..(1 << dim)).filter(|m| m.count_ones() as usize == level) {
            let axes: Vec<usize> = (0..dim).filter(|a| mask & (1 << a) != 0).collect();
            let op = cache.get(nu, FaceSet::both_sides(axes.iter().copied()))?;
            let mut rhs = Stencil::identity(layout.n_space).left_mul(&inj);
            for &a in &axes {
                let source = &stages[&(mask & !(1 << a))];
                let trace = source.left_mul(&select_rows(layout.face_nodes(a, Side::High), layout.n_st));
                rhs.add_assign(&trace.shifted_low(a).left_mul(&penalty_lift(layout, nu[a], a, Side::Low)));
                rhs.add_assign(&trace.left_mul(&penalty_lift(layout, nu[a], a, Side::High)));
            }
            stages.insert(mask, rhs.map_terms(layout.n_st, |t| op.solve_matrix(t)));
        }
    }
    let full = &stages[&((1u8 << dim) - 1)];
    let start = layout.time_slice_start(Side::High);
    let slice: Vec<usize> = (start..start + layout.n_space).collect();
    Ok(full.left_mul(&select_rows(&slice, layout.n_st)))
}

fn ader_stencil(ops: &AderOperators) -> Stencil {
    let layout = &ops.layout;
    let mut pred = Stencil::identity(layout.n_space).left_mul(&ops.inj);
    pred = pred.map_terms(layout.n_st, |t| {
        let mut t = t.clone();
        ops.solve_pred(&mut t);
        t
    });
    let mut rhs = Stencil::identity(layout.n_space).left_mul(&ops.inj);
    rhs.add_assign(&pred.left_mul(&(-&ops.vol)));
    for a in 0..layout.dim {
        let high = pred.left_mul(&select_rows(layout.face_nodes(a, Side::High), layout.n_st));
        let low = pred.left_mul(&select_rows(layout.face_nodes(a, Side::Low), layout.n_st));
        rhs.add_assign(&high.shifted_low(a).left_mul(&ops.lift[a]));
        rhs.add_assign(&low.left_mul(&(-&ops.lift[a])));
    }
    let corr = rhs.map_terms(layout.n_st, |t| {
        let mut t = t.clone();
        ops.solve_time(&mut t);
        t
    });
    let start = layout.time_slice_start(Side::High);
    let slice: Vec<usize> = (start..start + layout.n_space).collect();
    corr.left_mul(&select_rows(&slice, layout.n_st))
}

/// The one-step map of `scheme` with CFL vector `nu` (one entry per axis).
pub fn amplification_stencil(scheme: SchemeChoice, p: usize, nu: &[f64]) -> Result<Stencil> {
    let dim = nu.len();
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!("dimension {dim} not in 1..=3")));
    }
    match scheme {
        SchemeChoice::Lidg => lidg_stencil(&OperatorCache::new(p, dim)?, nu),
        SchemeChoice::Ader => Ok(ader_stencil(&AderOperators::new(Layout::new(p, dim)?, nu)?)),
    }
}

pub fn amplification_matrix(
    scheme: SchemeChoice,
    p: usize,
    nu: &[f64],
    theta: &[f64],
) -> Result<DMatrix<Complex<f64>>> {
    if theta.len() != nu.len() {
        return Err(Error::Config("theta and CFL dimensions differ".into()));
    }
    let (re, im) = amplification_stencil(scheme, p, nu)?.symbol(theta);
    Ok(DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex::new(re[(i, j)], im[(i, j)])
    }))
}

/// Spectral radius of `re + i im`.
pub fn spectral_radius(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<f64> {
    let n = re.nrows();
    let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| faer::c64::new(re[(i, j)], im[(i, j)]));
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::Config(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(ev.iter().fold(0.0, |acc, z| acc.max(z.re.hypot(z.im))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplificationSample {
    pub theta: Vec<f64>,
    pub radius: f64,
}

/// Largest spectral radius over `samples^d` equispaced wavenumbers.
pub fn scan_max_radius(
    scheme: SchemeChoice,
    p: usize,
    nu: &[f64],
    samples: usize,
) -> Result<AmplificationSample> {
    if samples == 0 {
        return Err(Error::Config("need at least one wavenumber sample".into()));
    }
    let stencil = amplification_stencil(scheme, p, nu)?;
    let dim = nu.len();
    let total = samples.pow(dim as u32);
    let step = 2.0 * std::f64::consts::PI / samples as f64;
    (0..total)
        .into_par_iter()
        .map(|j| {
            let mut rest = j;
            let theta: Vec<f64> = (0..dim)
                .map(|_| {
                    let t = (rest % samples) as f64 * step;
                    rest /= samples;
                    t
                })
                .collect();
            let (re, im) = stencil.symbol(&theta);
            spectral_radius(&re, &im).map(|radius| AmplificationSample { theta, radius })
        })
        .try_reduce_with(|a, b| Ok(if b.radius > a.radius { b } else { a }))
        .expect("at least one sample")
}

/// `(cfl, max radius)` for equal per-axis components `cfl / sqrt(d)`.
pub fn radius_profile(
    scheme: SchemeChoice,
    p: usize,
    dim: usize,
    cfl_values: &[f64],
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    cfl_values
        .iter()
        .map(|&c| {
            let nu = vec![c / (dim as f64).sqrt(); dim];
            scan_max_radius(scheme, p, &nu, samples).map(|s| (c, s.radius))
        })
        .collect()
}

/// Stability predicate tolerance on the spectral radius.
pub const RADIUS_TOL: f64 = 1e-9;

/// Largest `|nu|` (equal components) with all sampled radii `<= 1 + 1e-9`,
/// by bisection to within `tol`.
pub fn max_stable_cfl(
    scheme: SchemeChoice,
    p: usize,
    dim: usize,
    samples: usize,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Config("bisection tolerance must be positive".into()));
    }
    let stable = |c: f64| -> Result<bool> {
        let nu = vec![c / (dim as f64).sqrt(); dim];
        Ok(scan_max_radius(scheme, p, &nu, samples)?.radius <= 1.0 + RADIUS_TOL)
    };
    let mut lo = 0.0;
    let mut hi = 1.5;
    while stable(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::Config("no instability found below |nu| = 64".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
