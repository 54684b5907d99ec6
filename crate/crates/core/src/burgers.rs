//! Inviscid Burgers equation `q_t + (q^2/2)_x + (q^2/2)_y = 0` in the locally
//! implicit stage structure.
//!
//! Spatial terms follow the entropy-stable DG-SEM: flux differencing with the
//! entropy-conservative two-point flux `(a^2 + ab + b^2) / 6` in the volume and
//! a Rusanov flux at interfaces, both sides taken from the feeding predictor.
//! Local problems are solved by Picard iteration.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{build_mesh, dt_from_cfl, CartesianMesh, Side};
use crate::scheme::{gather_faces, step_schedule, FieldState, StageField, TraceBuffer};
use crate::spacetime::{picard_iterate, FaceSet, Layout, LocalOperator, OperatorCache, PICARD_TOL};

pub fn flux(q: f64) -> f64 {
    0.5 * q * q
}

/// Entropy-conservative two-point flux for the square entropy.
pub fn two_point_flux(a: f64, b: f64) -> f64 {
    (a * a + a * b + b * b) / 6.0
}

/// Rusanov flux with `left` on the low side of the interface.
pub fn rusanov(left: f64, right: f64) -> f64 {
    0.5 * (flux(left) + flux(right)) - 0.5 * left.abs().max(right.abs()) * (right - left)
}

/// Iteration budget for the local Picard solves. The contraction rate is
/// about 0.5 on coarse meshes, so this is well above the linear budget.
pub fn picard_max_iters(p: usize) -> usize {
    16 * (p + 2)
}

/// The initial condition `1/4 (1 - cos x)(1 - cos y)`.
pub fn cosine_bump_initial(x: f64, y: f64) -> f64 {
    0.25 * (1.0 - x.cos()) * (1.0 - y.cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurgersConfig {
    pub order_p: usize,
    pub mesh: CartesianMesh,
    pub dt: f64,
    pub t_final: f64,
    pub cfl_norm: f64,
}

impl BurgersConfig {
    /// `n x n` elements on `[0, 2 pi]^2`; `dt` from `|nu| = cfl_norm` with the
    /// wave speed `u_max` in both directions.
    pub fn new(order_p: usize, n: usize, cfl_norm: f64, t_final: f64, u_max: f64) -> Result<Self> {
        let mesh = build_mesh(2, &[n, n], &[2.0 * PI, 2.0 * PI])?;
        if !(u_max > 0.0) {
            return Err(Error::Config("wave speed must be positive".into()));
        }
        if !(t_final > 0.0) {
            return Err(Error::Config("t_final must be positive".into()));
        }
        let dt = dt_from_cfl(&mesh, &[u_max, u_max], cfl_norm)?;
        Ok(BurgersConfig {
            order_p,
            mesh,
            dt,
            t_final,
            cfl_norm,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BurgersStepReport {
    pub max_picard_iterations: usize,
}

pub struct BurgersSolver {
    cache: OperatorCache,
    time_op: std::sync::Arc<LocalOperator>,
    pub max_iters: usize,
    pub tol: f64,
}

/// Interface fluxes of one element on the penalized faces of one stage.
struct FaceFluxes {
    axis: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl BurgersSolver {
    pub fn new(p: usize, dim: usize) -> Result<Self> {
        let cache = OperatorCache::new(p, dim)?;
        let time_op = cache.get(&vec![0.0; dim], FaceSet::EMPTY)?;
        Ok(BurgersSolver {
            cache,
            time_op,
            max_iters: picard_max_iters(p),
            tol: PICARD_TOL,
        })
    }

    pub fn layout(&self) -> &Layout {
        self.cache.layout()
    }

    /// Spatial terms of the weighted residual for one element.
    fn residual(layout: &Layout, lambda: &[f64], faces: &[FaceFluxes], q: &[f64], out: &mut [f64]) {
        let n = layout.n;
        let d = &layout.basis.ops.diff_matrix;
        for (k, o) in out.iter_mut().enumerate() {
            let idx = layout.multi_index(k);
            let mut acc = 0.0;
            for (a, &la) in lambda.iter().enumerate() {
                let (i, s) = (idx[a], layout.stride(a));
                let base = k - i * s;
                let mut v = 0.0;
                for j in 0..n {
                    v += d[(i, j)] * two_point_flux(q[k], q[base + j * s]);
                }
                acc += 2.0 * la * v;
            }
            *o = layout.node_weight(k) * acc;
        }
        for ff in faces {
            let fw = layout.face_weights(ff.axis);
            let la = lambda[ff.axis];
            for (f, &k) in layout.face_nodes(ff.axis, Side::Low).iter().enumerate() {
                out[k] -= la * fw[f] * (ff.low[f] - flux(q[k]));
            }
            for (f, &k) in layout.face_nodes(ff.axis, Side::High).iter().enumerate() {
                out[k] += la * fw[f] * (ff.high[f] - flux(q[k]));
            }
        }
    }

    /// One step of length `dt`. Returns the new state and Picard statistics.
    pub fn step(&self, state: &FieldState, dt: f64) -> Result<(FieldState, BurgersStepReport)> {
        let layout = self.layout();
        let mesh = &state.mesh;
        if mesh.dim != layout.dim || state.order_p != layout.p {
            return Err(Error::Config("state does not match the solver".into()));
        }
        if state.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("state contains non-finite values".into()));
        }
        let dim = layout.dim;
        let lambda: Vec<f64> = mesh.elem_sizes.iter().map(|h| dt / h).collect();
        let n_elem = mesh.n_total();
        let n_st = layout.n_st;
        let mut stages: std::collections::HashMap<u8, StageField> = Default::default();
        let mut buffers: std::collections::HashMap<(u8, usize, Side), TraceBuffer> = Default::default();
        let mut report = BurgersStepReport::default();

        for level in 0..=dim {
            if level > 0 {
                for (&mask, field) in stages.iter().filter(|(m, _)| m.count_ones() as usize == level - 1) {
                    for axis in (0..dim).filter(|a| mask & (1 << a) == 0) {
                        for side in [Side::Low, Side::High] {
                            buffers.insert((mask, axis, side), gather_faces(layout, field, axis, side));
                        }
                    }
                }
            }
            let masks: Vec<u8> = (0u8..(1 << dim))
                .filter(|m| m.count_ones() as usize == level)
                .collect();
            for mask in masks {
                let axes: Vec<usize> = (0..dim).filter(|a| mask & (1 << a) != 0).collect();
                let mut data = vec![0.0; n_elem * n_st];
                let iters: Vec<usize> = data
                    .par_chunks_mut(n_st)
                    .enumerate()
                    .map(|(e, out)| -> Result<usize> {
                        let faces: Vec<FaceFluxes> = axes
                            .iter()
                            .map(|&a| {
                                let src = mask & !(1 << a);
                                let hi = &buffers[&(src, a, Side::High)];
                                let lo = &buffers[&(src, a, Side::Low)];
                                let below = hi.element(mesh.neighbor(e, a, Side::Low));
                                let above = lo.element(mesh.neighbor(e, a, Side::High));
                                let (own_lo, own_hi) = (lo.element(e), hi.element(e));
                                FaceFluxes {
                                    axis: a,
                                    low: below.iter().zip(own_lo).map(|(&l, &r)| rusanov(l, r)).collect(),
                                    high: own_hi.iter().zip(above).map(|(&l, &r)| rusanov(l, r)).collect(),
                                }
                            })
                            .collect();
                        let res = |q: &[f64], o: &mut [f64]| Self::residual(layout, &lambda, &faces, q, o);
                        let outcome = picard_iterate(&self.time_op, state.element(e), res, self.max_iters, self.tol)
                            .map_err(|err| err.context(format!("Burgers local solve, element {e}, stage {mask:#b}")))?;
                        out.copy_from_slice(&outcome.solution.values);
                        Ok(outcome.iterations)
                    })
                    .collect::<Result<_>>()?;
                report.max_picard_iterations = report
                    .max_picard_iterations
                    .max(iters.into_iter().max().unwrap_or(0));
                stages.insert(mask, StageField { n_st, data });
            }
        }

        let corr = &stages[&((1u8 << dim) - 1)];
        let start = layout.time_slice_start(Side::High);
        let n_space = layout.n_space;
        let mut values = vec![0.0; n_elem * n_space];
        values
            .par_chunks_mut(n_space)
            .enumerate()
            .for_each(|(e, out)| out.copy_from_slice(&corr.element(e)[start..start + n_space]));
        Ok((
            FieldState {
                mesh: mesh.clone(),
                order_p: state.order_p,
                values,
                time: state.time + dt,
            },
            report,
        ))
    }
}

pub fn burgers_step_2d(state: &FieldState, config: &BurgersConfig) -> Result<FieldState> {
    if state.mesh.dim != 2 {
        return Err(Error::Config("expected a 2D state".into()));
    }
    Ok(BurgersSolver::new(config.order_p, 2)?.step(state, config.dt)?.0)
}

#[derive(Debug, Clone)]
pub struct BurgersRun {
    pub state: FieldState,
    pub steps: usize,
    pub max_picard_iterations: usize,
    /// `1/2 int q^2` after each step, starting with the initial value.
    pub entropy: Vec<f64>,
    pub mass: Vec<f64>,
}

pub fn run_burgers(config: &BurgersConfig, initial: impl Fn(f64, f64) -> f64 + Sync) -> Result<BurgersRun> {
    let mut state = FieldState::from_fn(&config.mesh, config.order_p, |x| initial(x[0], x[1]))?;
    let solver = BurgersSolver::new(config.order_p, 2)?;
    let schedule = step_schedule(config.dt, config.t_final);
    let mut entropy = vec![state.energy() * config.mesh.jacobian()];
    let mut mass = vec![state.mass()];
    let mut max_iters = 0;
    for (i, &dt) in schedule.iter().enumerate() {
        let (next, rep) = solver.step(&state, dt)?;
        state = next;
        state.time = if i + 1 == schedule.len() {
            config.t_final
        } else {
            (i + 1) as f64 * config.dt
        };
        max_iters = max_iters.max(rep.max_picard_iterations);
        entropy.push(state.energy() * config.mesh.jacobian());
        mass.push(state.mass());
    }
    Ok(BurgersRun {
        state,
        steps: schedule.len(),
        max_picard_iterations: max_iters,
        entropy,
        mass,
    })
}

/// First time at which characteristics of `initial` cross on the periodic
/// square `[0, length]^2`, `-1 / min(dq0/dx + dq0/dy)`, sampled on a grid.
pub fn shock_time_estimate(initial: impl Fn(f64, f64) -> f64, length: f64, samples: usize) -> f64 {
    let h = length / samples as f64;
    let eps = 1e-6 * length;
    let mut min_slope = f64::INFINITY;
    for i in 0..samples {
        for j in 0..samples {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let s = (initial(x + eps, y) - initial(x - eps, y) + initial(x, y + eps) - initial(x, y - eps))
                / (2.0 * eps);
            min_slope = min_slope.min(s);
        }
    }
    if min_slope < 0.0 {
        -1.0 / min_slope
    } else {
        f64::INFINITY
    }
}

/// Solution by characteristics: `q = q0(x - q t, y - q t)`, solved by Newton
/// iteration with a central-difference derivative.
pub fn burgers_exact(x: f64, y: f64, t: f64, initial: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let q0 = initial(x, y);
    if t == 0.0 {
        return Ok(q0);
    }
    let residual = |q: f64| q - initial(x - q * t, y - q * t);
    let mut q = q0;
    for _ in 0..100 {
        let r = residual(q);
        if r.abs() <= 1e-13 {
            return Ok(q);
        }
        let h = 1e-6 * (1.0 + q.abs());
        let slope = (residual(q + h) - residual(q - h)) / (2.0 * h);
        if !(slope.abs() > 1e-8) {
            return Err(Error::Characteristics {
                x,
                y,
                t,
                reason: "characteristics cross (zero Newton slope)".into(),
            });
        }
        q -= r / slope;
        if !q.is_finite() {
            break;
        }
    }
    let r = residual(q);
    if r.abs() <= 1e-13 {
        return Ok(q);
    }
    Err(Error::Characteristics {
        x,
        y,
        t,
        reason: format!("Newton did not converge (residual {r:e})"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fluxes() {
        assert_eq!(two_point_flux(0.7, 0.7), flux(0.7));
        assert_eq!(rusanov(0.3, 0.3), flux(0.3));
        assert!((rusanov(0.5, 0.2) - 0.1475).abs() < 1e-15);
        assert!((rusanov(-1.0, 1.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shock_time_of_default_initial_condition() {
        // The steepest descent of q0 along (1, 1) is -3 sqrt(3) / 8.
        let t = shock_time_estimate(cosine_bump_initial, 2.0 * PI, 600);
        assert!((t - 8.0 / (3.0 * 3f64.sqrt())).abs() < 1e-3, "{t}");
        assert!(t > 0.4);
    }

    #[test]
    fn exact_trivial_cases() {
        let q = burgers_exact(1.0, 2.0, 0.0, cosine_bump_initial).unwrap();
        assert_eq!(q, cosine_bump_initial(1.0, 2.0));
        assert_eq!(burgers_exact(1.0, 2.0, 0.3, |_, _| 0.7).unwrap(), 0.7);
    }

    #[test]
    fn exact_residual_at_centre() {
        let (x, y, t) = (PI, PI, 0.4);
        let q = burgers_exact(x, y, t, cosine_bump_initial).unwrap();
        assert!((q - cosine_bump_initial(x - q * t, y - q * t)).abs() <= 1e-13);
    }

    #[test]
    fn constant_state_is_preserved() {
        let cfg = BurgersConfig::new(2, 4, 0.6, 0.1, 1.0).unwrap();
        let state = FieldState::constant(&cfg.mesh, 2, 0.4).unwrap();
        let next = burgers_step_2d(&state, &cfg).unwrap();
        for v in &next.values {
            assert!((v - 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_is_conserved() {
        let cfg = BurgersConfig::new(2, 6, 0.6, 0.1, 1.0).unwrap();
        let state = FieldState::from_fn(&cfg.mesh, 2, |x| cosine_bump_initial(x[0], x[1])).unwrap();
        let next = burgers_step_2d(&state, &cfg).unwrap();
        let (m0, m1) = (state.mass(), next.mass());
        assert!((m1 - m0).abs() <= 1e-12 * state.abs_mass(), "{m0} {m1}");
    }
}
