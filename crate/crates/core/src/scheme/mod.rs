//! Time stepping over the mesh.
//!
//! The locally implicit scheme is organised by subsets of the spatial axes.
//! The predictor `q^S` penalizes the faces of every axis in `S`, and its face
//! on axis `a` is fed by the upwind trace of `q^{S \ a}`. The empty set is the
//! free ADER predictor and the full set is the corrector, which gives
//! `2^d` local solves per element and `d` trace exchanges per step:
//!
//! ```text
//! d = 1:  q0 -> corrector(x <- q0)
//! d = 2:  q0 -> q1(x <- q0), q2(y <- q0) -> corrector(x <- q2, y <- q1)
//! d = 3:  q0 -> q1, q2, q3 -> q12, q13, q23 -> corrector(x <- q23, y <- q13, z <- q12)
//! ```

mod ader;

pub use ader::AderOperators;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, SchemeConfig, Side};
use crate::spacetime::{add_penalty_rhs, add_temporal_rhs, FaceSet, Layout, OperatorCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeChoice {
    /// Locally implicit, globally explicit scheme.
    Lidg,
    /// Classic ADER-DG: one predictor, explicit corrector.
    Ader,
}

impl std::str::FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lidg" => Ok(SchemeChoice::Lidg),
            "ader" => Ok(SchemeChoice::Ader),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeChoice::Lidg => "lidg",
            SchemeChoice::Ader => "ader",
        })
    }
}

/// Spatial nodal values of every element at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub mesh: CartesianMesh,
    pub order_p: usize,
    /// Element-major: element `e` owns `values[e * n_space..(e + 1) * n_space]`.
    pub values: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn n_space(&self) -> usize {
        (self.order_p + 1).pow(self.mesh.dim as u32)
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let n = self.n_space();
        &self.values[e * n..(e + 1) * n]
    }

    /// Point samples of `f` at the mapped GLL nodes.
    pub fn from_fn(
        mesh: &CartesianMesh,
        order_p: usize,
        f: impl Fn(&[f64; 3]) -> f64 + Sync,
    ) -> Result<Self> {
        let layout = Layout::new(order_p, mesh.dim)?;
        let nodes = &layout.basis.rule.nodes;
        let n_space = layout.n_space;
        let mut values = vec![0.0; mesh.n_total() * n_space];
        values
            .par_chunks_mut(n_space)
            .enumerate()
            .for_each(|(e, chunk)| {
                for (s, v) in chunk.iter_mut().enumerate() {
                    let idx = layout.multi_index(s);
                    let xi: Vec<f64> = (0..mesh.dim).map(|a| nodes[idx[a]]).collect();
                    *v = f(&mesh.map_point(e, &xi));
                }
            });
        Ok(FieldState {
            mesh: mesh.clone(),
            order_p,
            values,
            time: 0.0,
        })
    }

    pub fn constant(mesh: &CartesianMesh, order_p: usize, c: f64) -> Result<Self> {
        Self::from_fn(mesh, order_p, |_| c)
    }

    fn space_weights(&self) -> Vec<f64> {
        Layout::new(self.order_p, self.mesh.dim)
            .expect("state order validated at construction")
            .space_weights()
            .to_vec()
    }

    /// `sum_k int q` in physical units, summed in element order.
    pub fn mass(&self) -> f64 {
        let w = self.space_weights();
        let jac = self.mesh.jacobian();
        self.values
            .chunks(w.len())
            .map(|c| c.iter().zip(&w).map(|(q, w)| q * w).sum::<f64>())
            .sum::<f64>()
            * jac
    }

    /// `sum_k int |q|`, the scale for relative conservation checks.
    pub fn abs_mass(&self) -> f64 {
        let w = self.space_weights();
        let jac = self.mesh.jacobian();
        self.values
            .chunks(w.len())
            .map(|c| c.iter().zip(&w).map(|(q, w)| q.abs() * w).sum::<f64>())
            .sum::<f64>()
            * jac
    }

    /// Reference-element energy `1/2 sum_k <q^2>`.
    pub fn energy(&self) -> f64 {
        let w = self.space_weights();
        0.5 * self
            .values
            .chunks(w.len())
            .map(|c| c.iter().zip(&w).map(|(q, w)| q * q * w).sum::<f64>())
            .sum::<f64>()
    }

    /// Weighted mean of each element's nodal values.
    pub fn element_means(&self) -> Vec<f64> {
        let w = self.space_weights();
        let total: f64 = w.iter().sum();
        self.values
            .chunks(w.len())
            .map(|c| c.iter().zip(&w).map(|(q, w)| q * w).sum::<f64>() / total)
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageReport {
    pub local_solves_per_element: usize,
    pub communication_stages: usize,
}

/// Face traces of one stage solution on one side along one axis, one block
/// of `n_face` values per element. Neighbors read each other's blocks; this
/// is the only inter-element data flow.
#[derive(Debug, Clone)]
pub struct TraceBuffer {
    pub axis: usize,
    pub n_face: usize,
    pub data: Vec<f64>,
}

impl TraceBuffer {
    pub fn element(&self, e: usize) -> &[f64] {
        &self.data[e * self.n_face..(e + 1) * self.n_face]
    }
}

/// Space-time nodal values for every element.
#[derive(Debug, Clone, PartialEq)]
pub struct StageField {
    pub n_st: usize,
    pub data: Vec<f64>,
}

impl StageField {
    pub fn element(&self, e: usize) -> &[f64] {
        &self.data[e * self.n_st..(e + 1) * self.n_st]
    }
}

pub(crate) fn gather_faces(
    layout: &Layout,
    field: &StageField,
    axis: usize,
    side: Side,
) -> TraceBuffer {
    let nodes = layout.face_nodes(axis, side);
    let n_face = nodes.len();
    let n_elem = field.data.len() / field.n_st;
    let mut data = vec![0.0; n_elem * n_face];
    data.par_chunks_mut(n_face)
        .enumerate()
        .for_each(|(e, out)| {
            let col = field.element(e);
            for (o, &k) in out.iter_mut().zip(nodes) {
                *o = col[k];
            }
        });
    TraceBuffer { axis, n_face, data }
}

/// All intermediate solutions of one locally implicit step.
#[derive(Debug, Clone)]
pub struct StepDetail {
    /// Keyed by the axis bitmask `S`; `0` is the free predictor and
    /// `(1 << d) - 1` the corrector.
    pub stages: HashMap<u8, StageField>,
    pub state: FieldState,
    pub report: StageReport,
}

impl StepDetail {
    pub fn corrector(&self) -> &StageField {
        let full = (1u8 << self.state.mesh.dim) - 1;
        &self.stages[&full]
    }

    pub fn predictor(&self) -> &StageField {
        &self.stages[&0]
    }
}

/// Holds cached operators for one `(p, d)`; steps both schemes.
pub struct LinearSolver {
    cache: OperatorCache,
    ader: Mutex<HashMap<Vec<u64>, Arc<AderOperators>>>,
}

impl LinearSolver {
    pub fn new(p: usize, dim: usize) -> Result<Self> {
        Ok(LinearSolver {
            cache: OperatorCache::new(p, dim)?,
            ader: Mutex::new(HashMap::new()),
        })
    }

    pub fn layout(&self) -> &Layout {
        self.cache.layout()
    }

    pub fn operators(&self) -> &OperatorCache {
        &self.cache
    }

    pub fn ader_operators(&self, nu: &[f64]) -> Result<Arc<AderOperators>> {
        let key: Vec<u64> = nu.iter().map(|v| v.to_bits()).collect();
        if let Some(ops) = self.ader.lock().expect("ader cache").get(&key) {
            return Ok(ops.clone());
        }
        let ops = Arc::new(AderOperators::new(self.layout().clone(), nu)?);
        self.ader
            .lock()
            .expect("ader cache")
            .insert(key, ops.clone());
        Ok(ops)
    }

    fn check_state(&self, state: &FieldState, nu: &[f64]) -> Result<()> {
        let layout = self.layout();
        if state.mesh.dim != layout.dim || state.order_p != layout.p {
            return Err(Error::Config(format!(
                "state (p = {}, d = {}) does not match solver (p = {}, d = {})",
                state.order_p, state.mesh.dim, layout.p, layout.dim
            )));
        }
        if nu.len() != layout.dim || nu.iter().any(|&v| v < 0.0) {
            return Err(Error::Config(format!("invalid CFL vector {nu:?}")));
        }
        Ok(())
    }

    /// One step of the locally implicit scheme, keeping every stage.
    pub fn step_lidg_detailed(&self, state: &FieldState, nu: &[f64], dt: f64) -> Result<StepDetail> {
        self.check_state(state, nu)?;
        let layout = self.layout();
        let dim = layout.dim;
        let mesh = &state.mesh;
        let n_elem = mesh.n_total();
        let (n_st, n_space) = (layout.n_st, layout.n_space);

        // Every local solve works on the deviation from the element mean of
        // the previous level; the operators annihilate constants, so this is
        // exact and keeps constant states free of solver roundoff.
        let means = state.element_means();
        let mut stages: HashMap<u8, StageField> = HashMap::new();
        let mut buffers: HashMap<(u8, usize), TraceBuffer> = HashMap::new();
        let mut solves = 0;
        let mut comms = 0;

        for level in 0..=dim {
            if level > 0 {
                // Communication: publish high-face traces of the previous level.
                for (&mask, field) in stages.iter().filter(|(m, _)| m.count_ones() as usize == level - 1) {
                    for axis in (0..dim).filter(|a| mask & (1 << a) == 0) {
                        buffers.insert((mask, axis), gather_faces(layout, field, axis, Side::High));
                    }
                }
                comms += 1;
            }
            let masks: Vec<u8> = (0u8..(1 << dim))
                .filter(|m| m.count_ones() as usize == level)
                .collect();
            for mask in masks {
                let axes: Vec<usize> = (0..dim).filter(|a| mask & (1 << a) != 0).collect();
                let op = self.cache.get(nu, FaceSet::both_sides(axes.iter().copied()))?;
                let feeds: Vec<&TraceBuffer> = axes
                    .iter()
                    .map(|&a| &buffers[&(mask & !(1 << a), a)])
                    .collect();
                let mut data = vec![0.0; n_elem * n_st];
                data.par_chunks_mut(n_st).enumerate().for_each(|(e, rhs)| {
                    let c = means[e];
                    let shifted = |v: &[f64]| v.iter().map(|x| x - c).collect::<Vec<_>>();
                    add_temporal_rhs(layout, &shifted(state.element(e)), rhs);
                    for (&a, buf) in axes.iter().zip(&feeds) {
                        let upwind = mesh.neighbor(e, a, Side::Low);
                        add_penalty_rhs(layout, nu[a], a, Side::Low, &shifted(buf.element(upwind)), rhs);
                        add_penalty_rhs(layout, nu[a], a, Side::High, &shifted(buf.element(e)), rhs);
                    }
                });
                op.solve_columns(&mut data);
                data.par_chunks_mut(n_st).zip(&means).for_each(|(col, c)| {
                    col.iter_mut().for_each(|v| *v += c);
                });
                solves += 1;
                stages.insert(mask, StageField { n_st, data });
            }
        }

        let full = (1u8 << dim) - 1;
        let corr = &stages[&full];
        let start = layout.time_slice_start(Side::High);
        let mut values = vec![0.0; n_elem * n_space];
        values
            .par_chunks_mut(n_space)
            .enumerate()
            .for_each(|(e, out)| out.copy_from_slice(&corr.element(e)[start..start + n_space]));

        Ok(StepDetail {
            stages,
            state: FieldState {
                mesh: mesh.clone(),
                order_p: state.order_p,
                values,
                time: state.time + dt,
            },
            report: StageReport {
                local_solves_per_element: solves,
                communication_stages: comms,
            },
        })
    }

    pub fn step_lidg(&self, state: &FieldState, nu: &[f64], dt: f64) -> Result<(FieldState, StageReport)> {
        let d = self.step_lidg_detailed(state, nu, dt)?;
        Ok((d.state, d.report))
    }

    pub fn step_ader(&self, state: &FieldState, nu: &[f64], dt: f64) -> Result<FieldState> {
        self.check_state(state, nu)?;
        let ops = self.ader_operators(nu)?;
        let values = ops.step(&state.mesh, &state.values, &state.element_means());
        Ok(FieldState {
            mesh: state.mesh.clone(),
            order_p: state.order_p,
            values,
            time: state.time + dt,
        })
    }

    pub fn step(&self, scheme: SchemeChoice, state: &FieldState, nu: &[f64], dt: f64) -> Result<FieldState> {
        match scheme {
            SchemeChoice::Lidg => Ok(self.step_lidg(state, nu, dt)?.0),
            SchemeChoice::Ader => self.step_ader(state, nu, dt),
        }
    }
}

fn step_lidg_dim(state: &FieldState, config: &SchemeConfig, dim: usize) -> Result<(FieldState, StageReport)> {
    if state.mesh.dim != dim || config.dim != dim {
        return Err(Error::Config(format!(
            "expected a {dim}D state and configuration, got {}D / {}D",
            state.mesh.dim, config.dim
        )));
    }
    LinearSolver::new(config.order_p, dim)?.step_lidg(state, &config.cfl_vector, config.dt)
}

pub fn step_lidg_1d(state: &FieldState, config: &SchemeConfig) -> Result<(FieldState, StageReport)> {
    step_lidg_dim(state, config, 1)
}

pub fn step_lidg_2d(state: &FieldState, config: &SchemeConfig) -> Result<(FieldState, StageReport)> {
    step_lidg_dim(state, config, 2)
}

pub fn step_lidg_3d(state: &FieldState, config: &SchemeConfig) -> Result<(FieldState, StageReport)> {
    step_lidg_dim(state, config, 3)
}

pub fn step_ader_standard(state: &FieldState, config: &SchemeConfig) -> Result<FieldState> {
    LinearSolver::new(config.order_p, config.dim)?.step_ader(state, &config.cfl_vector, config.dt)
}

/// Growth factor over the initial maximum (at least 1) that aborts a run.
pub const BLOWUP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: FieldState,
    pub steps: usize,
}

/// Step sizes landing exactly on `t_final`; the last one may be shorter.
pub fn step_schedule(dt: f64, t_final: f64) -> Vec<f64> {
    let ratio = t_final / dt;
    let n = ((ratio - 1e-9).ceil() as usize).max(1);
    let mut steps = vec![dt; n];
    let last = t_final - (n - 1) as f64 * dt;
    steps[n - 1] = last.min(dt);
    steps
}

pub fn run(
    mesh: &CartesianMesh,
    config: &SchemeConfig,
    initial_condition: impl Fn(&[f64; 3]) -> f64 + Sync,
    scheme: SchemeChoice,
) -> Result<RunOutcome> {
    let state = FieldState::from_fn(mesh, config.order_p, initial_condition)?;
    run_from_state(state, config, scheme)
}

pub fn run_from_state(mut state: FieldState, config: &SchemeConfig, scheme: SchemeChoice) -> Result<RunOutcome> {
    if !(config.t_final > 0.0) {
        return Err(Error::Config("t_final must be positive".into()));
    }
    if config.dim != state.mesh.dim {
        return Err(Error::Config("configuration and mesh dimensions differ".into()));
    }
    let solver = LinearSolver::new(config.order_p, config.dim)?;
    let limit = BLOWUP_FACTOR * state.max_abs().max(1.0);
    let schedule = step_schedule(config.dt, config.t_final);
    let t0 = state.time;
    for (i, &dt) in schedule.iter().enumerate() {
        let nu = if dt == config.dt {
            config.cfl_vector.clone()
        } else {
            config.cfl_for_dt(dt)
        };
        state = solver.step(scheme, &state, &nu, dt)?;
        state.time = if i + 1 == schedule.len() {
            t0 + config.t_final
        } else {
            t0 + (i + 1) as f64 * config.dt
        };
        let max_abs = state.max_abs();
        if !(max_abs <= limit) {
            return Err(Error::Unstable {
                time: state.time,
                max_abs,
                limit,
            });
        }
    }
    Ok(RunOutcome {
        state,
        steps: schedule.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn pseudo_random(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn schedule_truncates_last_step() {
        assert_eq!(step_schedule(0.1, 0.30000000000000004).len(), 3);
        let s = step_schedule(0.2, 0.5);
        assert_eq!(s.len(), 3);
        assert!((s[2] - 0.1).abs() < 1e-15);
        assert_eq!(step_schedule(1.0, 3.0), vec![1.0; 3]);
    }

    #[test]
    fn stage_counts() {
        for (dim, solves, comms) in [(1, 2, 1), (2, 4, 2), (3, 8, 3)] {
            let mesh = build_mesh(dim, &vec![3; dim], &vec![1.0; dim]).unwrap();
            let state = FieldState::constant(&mesh, 1, 1.0).unwrap();
            let solver = LinearSolver::new(1, dim).unwrap();
            let (_, rep) = solver.step_lidg(&state, &vec![0.3; dim], 0.1).unwrap();
            assert_eq!(rep.local_solves_per_element, solves);
            assert_eq!(rep.communication_stages, comms);
        }
    }

    #[test]
    fn p0_unit_cfl_is_exact_shift() {
        let mesh = build_mesh(1, &[7], &[7.0]).unwrap();
        let mut state = FieldState::constant(&mesh, 0, 0.0).unwrap();
        state.values = pseudo_random(3, 7);
        let cfg = SchemeConfig::new(0, &mesh, &[1.0], 1.0, 1.0).unwrap();
        let (next, _) = step_lidg_1d(&state, &cfg).unwrap();
        for k in 0..7 {
            assert!((next.values[k] - state.values[(k + 6) % 7]).abs() < 1e-15);
        }
        let next = step_ader_standard(&state, &cfg).unwrap();
        for k in 0..7 {
            assert!((next.values[k] - state.values[(k + 6) % 7]).abs() < 1e-15);
        }
    }

    #[test]
    fn full_period_at_unit_cfl_returns_initial() {
        let mesh = build_mesh(1, &[10], &[1.0]).unwrap();
        let cfg = SchemeConfig::new(0, &mesh, &[1.0], 0.1, 1.0).unwrap();
        let ic = |x: &[f64; 3]| (2.0 * std::f64::consts::PI * x[0]).sin() + x[0];
        let init = FieldState::from_fn(&mesh, 0, ic).unwrap();
        let out = run(&mesh, &cfg, ic, SchemeChoice::Lidg).unwrap();
        assert_eq!(out.steps, 10);
        for (a, b) in out.state.values.iter().zip(&init.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn run_step_counts() {
        let mesh = build_mesh(1, &[8], &[1.0]).unwrap();
        let cfg = SchemeConfig::new(2, &mesh, &[1.0], 0.01, 0.03).unwrap();
        let out = run(&mesh, &cfg, |x| x[0].sin(), SchemeChoice::Lidg).unwrap();
        assert_eq!(out.steps, 3);
        assert_eq!(out.state.time, 0.03);
        let cfg = SchemeConfig::new(2, &mesh, &[1.0], 0.01, 0.025).unwrap();
        let out = run(&mesh, &cfg, |x| x[0].sin(), SchemeChoice::Lidg).unwrap();
        assert_eq!(out.steps, 3);
        assert_eq!(out.state.time, 0.025);
    }

    #[test]
    fn truncated_step_uses_scaled_cfl() {
        let mesh = build_mesh(1, &[8], &[1.0]).unwrap();
        let ic = |x: &[f64; 3]| (2.0 * std::f64::consts::PI * x[0]).cos();
        let cfg = SchemeConfig::new(3, &mesh, &[1.0], 0.1, 0.25).unwrap();
        let out = run(&mesh, &cfg, ic, SchemeChoice::Lidg).unwrap();
        let solver = LinearSolver::new(3, 1).unwrap();
        let mut s = FieldState::from_fn(&mesh, 3, ic).unwrap();
        for (dt, nu) in [(0.1, 0.8), (0.1, 0.8), (0.05, 0.4)] {
            s = solver.step_lidg(&s, &[nu], dt).unwrap().0;
        }
        for (a, b) in out.state.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn instability_is_detected() {
        let mesh = build_mesh(1, &[16], &[1.0]).unwrap();
        let cfg = SchemeConfig::from_cfl(3, &mesh, &[1.0], 0.9, 50.0).unwrap();
        let ic = |x: &[f64; 3]| (2.0 * std::f64::consts::PI * x[0]).sin();
        let err = run(&mesh, &cfg, ic, SchemeChoice::Ader).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mesh = build_mesh(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let state = FieldState::constant(&mesh, 1, 1.0).unwrap();
        let cfg = SchemeConfig::new(1, &mesh, &[1.0, 1.0], 0.1, 1.0).unwrap();
        assert!(step_lidg_1d(&state, &cfg).is_err());
        assert!(step_lidg_2d(&state, &cfg).is_ok());
    }
}
