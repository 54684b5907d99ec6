//! Element-local space-time operators.
//!
//! Every stage of both schemes is a solve with the reference-element operator
//!
//! ```text
//! G{q} = <phi, dq/dtau> + sum_a nu_a <phi, dq/dxi_a> + <phi, q>|_{tau=-1}
//! ```
//!
//! optionally augmented by the implicit part of upwind face penalties
//! `<phi, nu_a n_a (g - q)>` on a subset of the spatial faces. The known trace
//! `g` and the previous time level only enter through the right-hand side.
//!
//! Nodal values are stored with spatial axis 0 fastest and time slowest, so a
//! time slice is a contiguous block of `(p+1)^d` values.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::basis::{basis, Basis1D};
use crate::error::{Error, Result};
use crate::linalg::RefinedLu;
use crate::mesh::Side;

/// Index bookkeeping for one `(p, d)` pair.
#[derive(Debug, Clone)]
pub struct Layout {
    pub p: usize,
    pub dim: usize,
    pub n: usize,
    pub n_space: usize,
    pub n_st: usize,
    pub basis: &'static Basis1D,
    space_weights: Vec<f64>,
    /// `face_nodes[axis][side]`, face-local order: other spatial axes, then time.
    face_nodes: Vec<[Vec<usize>; 2]>,
    face_weights: Vec<Vec<f64>>,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Low => 0,
        Side::High => 1,
    }
}

impl Layout {
    pub fn new(p: usize, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("dimension {dim} not in 1..=3")));
        }
        let basis = basis(p)?;
        let n = p + 1;
        let n_space = n.pow(dim as u32);
        let n_st = n_space * n;
        let w = &basis.rule.weights;

        let space_weights = (0..n_space)
            .map(|s| {
                let mut rest = s;
                let mut prod = 1.0;
                for _ in 0..dim {
                    prod *= w[rest % n];
                    rest /= n;
                }
                prod
            })
            .collect();

        let mut face_nodes = Vec::with_capacity(dim);
        let mut face_weights = Vec::with_capacity(dim);
        for axis in 0..dim {
            let n_face = n_space / n * n;
            let mut low = Vec::with_capacity(n_face);
            let mut high = Vec::with_capacity(n_face);
            let mut fw = Vec::with_capacity(n_face);
            for f in 0..n_face {
                // Decode face-local index into (other axes..., t).
                let mut rest = f;
                let mut idx = [0usize; 4];
                let mut weight = 1.0;
                for b in 0..dim {
                    if b == axis {
                        continue;
                    }
                    idx[b] = rest % n;
                    weight *= w[idx[b]];
                    rest /= n;
                }
                let t = rest;
                weight *= w[t];
                idx[dim] = t;
                idx[axis] = 0;
                low.push(Self::flat(n, dim, &idx));
                idx[axis] = p;
                high.push(Self::flat(n, dim, &idx));
                fw.push(weight);
            }
            face_nodes.push([low, high]);
            face_weights.push(fw);
        }

        Ok(Layout {
            p,
            dim,
            n,
            n_space,
            n_st,
            basis,
            space_weights,
            face_nodes,
            face_weights,
        })
    }

    fn flat(n: usize, dim: usize, idx: &[usize]) -> usize {
        let mut k = 0;
        for a in (0..=dim).rev() {
            k = k * n + idx[a];
        }
        k
    }

    /// Flat index of `(i_0, .., i_{d-1}, t)`.
    pub fn index(&self, idx: &[usize]) -> usize {
        Self::flat(self.n, self.dim, idx)
    }

    /// Inverse of [`Layout::index`]; the last entry is the time index.
    pub fn multi_index(&self, k: usize) -> [usize; 4] {
        let mut idx = [0; 4];
        let mut rest = k;
        for slot in idx.iter_mut().take(self.dim + 1) {
            *slot = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn weights(&self) -> &[f64] {
        &self.basis.rule.weights
    }

    pub fn space_weights(&self) -> &[f64] {
        &self.space_weights
    }

    pub fn node_weight(&self, k: usize) -> f64 {
        self.space_weights[k % self.n_space] * self.weights()[k / self.n_space]
    }

    pub fn n_face(&self) -> usize {
        self.n_space
    }

    pub fn face_nodes(&self, axis: usize, side: Side) -> &[usize] {
        &self.face_nodes[axis][side_index(side)]
    }

    pub fn face_weights(&self, axis: usize) -> &[f64] {
        &self.face_weights[axis]
    }

    /// Offset of the time slice at `tau = -1` (low) or `tau = +1` (high).
    pub fn time_slice_start(&self, side: Side) -> usize {
        match side {
            Side::Low => 0,
            Side::High => self.p * self.n_space,
        }
    }

    /// Stride between consecutive nodes along `axis` (`axis == dim` is time).
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }
}

/// Nodal coefficients of a space-time polynomial on one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSolution {
    pub order_p: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSelector {
    Space(usize),
    Time,
}

impl ElementSolution {
    pub fn new(order_p: usize, dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), (order_p + 1).pow(dim as u32 + 1));
        ElementSolution {
            order_p,
            dim,
            values,
        }
    }

    pub fn time_slice(&self, side: Side) -> Vec<f64> {
        extract_trace(self, TraceSelector::Time, side)
    }
}

/// Collocated read-off of a face (spatial axis) or a time slice.
pub fn extract_trace(sol: &ElementSolution, selector: TraceSelector, side: Side) -> Vec<f64> {
    let n = sol.order_p + 1;
    let d = sol.dim;
    let n_space = n.pow(d as u32);
    let end = match side {
        Side::Low => 0,
        Side::High => sol.order_p,
    };
    match selector {
        TraceSelector::Time => sol.values[end * n_space..(end + 1) * n_space].to_vec(),
        TraceSelector::Space(axis) => {
            assert!(axis < d, "axis {axis} out of range for d = {d}");
            let stride = n.pow(axis as u32);
            let mut out = Vec::with_capacity(n_space);
            let n_face = n_space;
            for f in 0..n_face {
                let mut rest = f;
                let mut k = 0;
                let mut mult = 1;
                for b in 0..=d {
                    let i = if b == axis {
                        end
                    } else {
                        let i = rest % n;
                        rest /= n;
                        i
                    };
                    k += i * mult;
                    mult *= n;
                }
                debug_assert_eq!((k / stride) % n, end);
                out.push(sol.values[k]);
            }
            out
        }
    }
}

/// Set of penalized spatial faces, one bit per (axis, side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct FaceSet(u8);

impl FaceSet {
    pub const EMPTY: FaceSet = FaceSet(0);

    fn bit(axis: usize, side: Side) -> u8 {
        1 << (2 * axis + side_index(side))
    }

    pub fn with(self, axis: usize, side: Side) -> Self {
        FaceSet(self.0 | Self::bit(axis, side))
    }

    /// Both faces of every axis in `axes`.
    pub fn both_sides(axes: impl IntoIterator<Item = usize>) -> Self {
        axes.into_iter().fold(FaceSet::EMPTY, |s, a| {
            s.with(a, Side::Low).with(a, Side::High)
        })
    }

    pub fn contains(self, axis: usize, side: Side) -> bool {
        self.0 & Self::bit(axis, side) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = (usize, Side)> {
        (0..3)
            .flat_map(|a| [(a, Side::Low), (a, Side::High)])
            .filter(move |&(a, s)| self.contains(a, s))
    }
}

/// Known upwind trace on one penalized face.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePenalty {
    pub axis: usize,
    pub side: Side,
    pub trace_values: Vec<f64>,
}

pub struct LocalOperator {
    pub layout: Layout,
    pub nu: Vec<f64>,
    pub faces: FaceSet,
    pub matrix: DMatrix<f64>,
    lu: RefinedLu,
}

impl std::fmt::Debug for LocalOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalOperator")
            .field("p", &self.layout.p)
            .field("dim", &self.layout.dim)
            .field("nu", &self.nu)
            .field("faces", &self.faces)
            .finish()
    }
}

impl LocalOperator {
    pub fn p(&self) -> usize {
        self.layout.p
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn solve_vec(&self, rhs: &mut [f64]) {
        self.lu.solve_vec(rhs);
    }

    /// Solves for every column of a column-major `n_st x cols` buffer.
    pub fn solve_columns(&self, data: &mut [f64]) {
        self.lu.solve_columns(data, self.layout.n_st);
    }

    /// Estimated condition number; solves are refined above
    /// [`REFINE_THRESHOLD`](crate::linalg::REFINE_THRESHOLD).
    pub fn condition_estimate(&self) -> f64 {
        self.lu.condition_estimate
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rhs.clone();
        self.solve_columns(out.as_mut_slice());
        out
    }
}

pub fn assemble_g(p: usize, dim: usize, nu: &[f64], faces: FaceSet) -> Result<LocalOperator> {
    let layout = Layout::new(p, dim)?;
    assemble_with_layout(layout, nu, faces)
}

pub fn assemble_with_layout(layout: Layout, nu: &[f64], faces: FaceSet) -> Result<LocalOperator> {
    let dim = layout.dim;
    if nu.len() != dim {
        return Err(Error::Config(format!(
            "expected {dim} CFL components, got {}",
            nu.len()
        )));
    }
    if nu.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Config(format!("CFL components must be >= 0: {nu:?}")));
    }
    if faces.iter().any(|(a, _)| a >= dim) {
        return Err(Error::FaceMismatch(format!("face axis out of range for d = {dim}")));
    }
    let n = layout.n;
    let n_st = layout.n_st;
    let d = &layout.basis.ops.diff_matrix;
    let mut g = DMatrix::<f64>::zeros(n_st, n_st);

    for k in 0..n_st {
        let idx = layout.multi_index(k);
        let wk = layout.node_weight(k);
        // Time derivative.
        let (t, ts) = (idx[dim], layout.stride(dim));
        for j in 0..n {
            g[(k, k - t * ts + j * ts)] += wk * d[(t, j)];
        }
        // Advection volume terms.
        for a in 0..dim {
            if nu[a] == 0.0 {
                continue;
            }
            let (i, s) = (idx[a], layout.stride(a));
            for j in 0..n {
                g[(k, k - i * s + j * s)] += nu[a] * wk * d[(i, j)];
            }
        }
        // Upwind temporal jump at tau = -1.
        if t == 0 {
            g[(k, k)] += layout.space_weights()[k % layout.n_space];
        }
    }
    for (axis, side) in faces.iter() {
        let fw = layout.face_weights(axis);
        let sign = match side {
            Side::Low => 1.0,
            Side::High => -1.0,
        };
        for (f, &k) in layout.face_nodes(axis, side).iter().enumerate() {
            g[(k, k)] += sign * nu[axis] * fw[f];
        }
    }

    let lu = RefinedLu::new(&g).ok_or_else(|| Error::SingularOperator {
        p: layout.p,
        nu: nu.to_vec(),
    })?;
    Ok(LocalOperator {
        layout,
        nu: nu.to_vec(),
        faces,
        matrix: g,
        lu,
    })
}

/// Adds `<phi, q_prev>|_{tau=-1}` to a right-hand side.
pub fn add_temporal_rhs(layout: &Layout, prev: &[f64], rhs: &mut [f64]) {
    debug_assert_eq!(prev.len(), layout.n_space);
    for (s, (&w, &q)) in layout.space_weights().iter().zip(prev).enumerate() {
        rhs[s] += w * q;
    }
}

/// Adds the known-trace part of a face penalty to a right-hand side.
pub fn add_penalty_rhs(
    layout: &Layout,
    nu_axis: f64,
    axis: usize,
    side: Side,
    trace: &[f64],
    rhs: &mut [f64],
) {
    let sign = match side {
        Side::Low => 1.0,
        Side::High => -1.0,
    };
    let fw = layout.face_weights(axis);
    for (f, &k) in layout.face_nodes(axis, side).iter().enumerate() {
        rhs[k] += sign * nu_axis * fw[f] * trace[f];
    }
}

/// `sum_a nu_a <phi, dq/dxi_a>` evaluated for a given `q`.
pub fn advection_volume(layout: &Layout, nu: &[f64], q: &[f64], out: &mut [f64]) {
    let n = layout.n;
    let d = &layout.basis.ops.diff_matrix;
    for (k, o) in out.iter_mut().enumerate().take(layout.n_st) {
        let idx = layout.multi_index(k);
        let mut acc = 0.0;
        for (a, &nua) in nu.iter().enumerate() {
            if nua == 0.0 {
                continue;
            }
            let (i, s) = (idx[a], layout.stride(a));
            let base = k - i * s;
            let mut da = 0.0;
            for j in 0..n {
                da += d[(i, j)] * q[base + j * s];
            }
            acc += nua * da;
        }
        *o = layout.node_weight(k) * acc;
    }
}

pub fn predictor_free(op: &LocalOperator, prev_end_slice: &[f64]) -> Result<ElementSolution> {
    if op.faces != FaceSet::EMPTY {
        return Err(Error::FaceMismatch("free predictor needs an operator without faces".into()));
    }
    solve_penalized(op, prev_end_slice, &[])
}

pub fn solve_penalized(
    op: &LocalOperator,
    prev_end_slice: &[f64],
    penalties: &[FacePenalty],
) -> Result<ElementSolution> {
    let layout = &op.layout;
    if prev_end_slice.len() != layout.n_space {
        return Err(Error::Config(format!(
            "previous slice has {} values, expected {}",
            prev_end_slice.len(),
            layout.n_space
        )));
    }
    let given = penalties
        .iter()
        .fold(FaceSet::EMPTY, |s, pen| s.with(pen.axis, pen.side));
    if given != op.faces || given.iter().count() != penalties.len() {
        return Err(Error::FaceMismatch(format!(
            "operator faces {:?}, penalties {:?}",
            op.faces.iter().collect::<Vec<_>>(),
            penalties.iter().map(|p| (p.axis, p.side)).collect::<Vec<_>>()
        )));
    }
    // Solve for the deviation from the weighted mean; constants are in the
    // kernel of every spatial and temporal difference term.
    let total: f64 = layout.space_weights().iter().sum();
    let c = layout
        .space_weights()
        .iter()
        .zip(prev_end_slice)
        .map(|(w, q)| w * q)
        .sum::<f64>()
        / total;
    let shifted = |v: &[f64]| v.iter().map(|x| x - c).collect::<Vec<_>>();
    let mut rhs = vec![0.0; layout.n_st];
    add_temporal_rhs(layout, &shifted(prev_end_slice), &mut rhs);
    for pen in penalties {
        if pen.trace_values.len() != layout.n_face() {
            return Err(Error::FaceMismatch(format!(
                "trace on axis {} has {} values, expected {}",
                pen.axis,
                pen.trace_values.len(),
                layout.n_face()
            )));
        }
        add_penalty_rhs(layout, op.nu[pen.axis], pen.axis, pen.side, &shifted(&pen.trace_values), &mut rhs);
    }
    op.solve_vec(&mut rhs);
    rhs.iter_mut().for_each(|v| *v += c);
    Ok(ElementSolution::new(layout.p, layout.dim, rhs))
}

pub const PICARD_TOL: f64 = 1e-12;

pub fn picard_default_max_iters(p: usize) -> usize {
    2 * (p + 2)
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: ElementSolution,
    pub iterations: usize,
    pub residual: f64,
}

/// Fixed-point iteration that keeps only the time derivative and the
/// temporal jump implicit:
///
/// `K q^{i+1} = <phi, q_prev>|_{tau=-1} - R(q^i)`
///
/// where `time_op` is `K` (an operator assembled with zero CFL and no faces)
/// and `residual_terms` writes `R(q)`, the remaining spatial terms, into its
/// second argument. Starts from the previous slice held constant in time.
pub fn picard_iterate<F>(
    time_op: &LocalOperator,
    prev_end_slice: &[f64],
    mut residual_terms: F,
    max_iters: usize,
    tol: f64,
) -> Result<PicardOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let layout = &time_op.layout;
    if time_op.faces != FaceSet::EMPTY || time_op.nu.iter().any(|&v| v != 0.0) {
        return Err(Error::Config("Picard needs the zero-CFL time operator".into()));
    }
    let (n_space, n_st) = (layout.n_space, layout.n_st);
    let mut q: Vec<f64> = (0..n_st).map(|k| prev_end_slice[k % n_space]).collect();
    let mut r = vec![0.0; n_st];
    let mut next = vec![0.0; n_st];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        residual_terms(&q, &mut r);
        next.iter_mut().zip(&r).for_each(|(x, ri)| *x = -ri);
        add_temporal_rhs(layout, prev_end_slice, &mut next);
        time_op.solve_vec(&mut next);
        residual = q
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut q, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(PicardOutcome {
                solution: ElementSolution::new(layout.p, layout.dim, q),
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::Divergence {
        iterations: max_iters,
        residual,
    })
}

/// Linear advection residual terms for [`picard_iterate`]: the volume term
/// plus the face penalties (implicit and known parts).
pub fn advection_residual<'a>(
    layout: &'a Layout,
    nu: &'a [f64],
    penalties: &'a [FacePenalty],
) -> impl FnMut(&[f64], &mut [f64]) + 'a {
    move |q, out| {
        advection_volume(layout, nu, q, out);
        for pen in penalties {
            let sign = match pen.side {
                Side::Low => -1.0,
                Side::High => 1.0,
            };
            let fw = layout.face_weights(pen.axis);
            for (f, &k) in layout.face_nodes(pen.axis, pen.side).iter().enumerate() {
                out[k] += sign * nu[pen.axis] * fw[f] * (pen.trace_values[f] - q[k]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct OperatorKey {
    nu_bits: Vec<u64>,
    faces: FaceSet,
}

/// Lazily assembled, shared operators for one `(p, d)`.
pub struct OperatorCache {
    layout: Layout,
    ops: Mutex<HashMap<OperatorKey, Arc<LocalOperator>>>,
}

impl OperatorCache {
    pub fn new(p: usize, dim: usize) -> Result<Self> {
        Ok(OperatorCache {
            layout: Layout::new(p, dim)?,
            ops: Mutex::new(HashMap::new()),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn get(&self, nu: &[f64], faces: FaceSet) -> Result<Arc<LocalOperator>> {
        let key = OperatorKey {
            nu_bits: nu.iter().map(|v| v.to_bits()).collect(),
            faces,
        };
        if let Some(op) = self.ops.lock().expect("cache lock").get(&key) {
            return Ok(op.clone());
        }
        let op = Arc::new(assemble_with_layout(self.layout.clone(), nu, faces)?);
        self.ops
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| op.clone());
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.ops.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
