//! Error measurement, convergence studies and CSV output.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::basis::{gauss_legendre, lagrange_basis};
use crate::burgers::{burgers_exact, cosine_bump_initial, run_burgers, shock_time_estimate, BurgersConfig};
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, SchemeConfig};
use crate::scheme::{run, FieldState, SchemeChoice};
use crate::spacetime::Layout;

pub const DEFAULT_QUADRATURE_BOOST: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Advection1d,
    Advection2d,
    Advection3d,
    Burgers2d,
}

impl Problem {
    pub fn dim(self) -> usize {
        match self {
            Problem::Advection1d => 1,
            Problem::Advection2d | Problem::Burgers2d => 2,
            Problem::Advection3d => 3,
        }
    }

    pub fn domain_length(self) -> f64 {
        match self {
            Problem::Burgers2d => 2.0 * PI,
            _ => 2.0,
        }
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advection1d" => Ok(Problem::Advection1d),
            "advection2d" => Ok(Problem::Advection2d),
            "advection3d" => Ok(Problem::Advection3d),
            "burgers2d" => Ok(Problem::Burgers2d),
            _ => Err(Error::Config(format!(
                "unknown problem '{s}' (expected advection1d, advection2d, advection3d or burgers2d)"
            ))),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Advection1d => "advection1d",
            Problem::Advection2d => "advection2d",
            Problem::Advection3d => "advection3d",
            Problem::Burgers2d => "burgers2d",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub problem: Problem,
    pub order_p: usize,
    /// Elements per axis, strictly increasing.
    pub sizes: Vec<usize>,
    pub cfl_norm: f64,
    pub t_final: f64,
    pub scheme: SchemeChoice,
    pub output: Option<PathBuf>,
    /// Advection only: use `sin(16 pi x)` per axis instead of `sin(2 pi x)`.
    pub high_frequency: bool,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("at least one mesh size is required".into()));
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) || self.sizes[0] == 0 {
            return Err(Error::Config(format!(
                "mesh sizes must be positive and strictly increasing, got {:?}",
                self.sizes
            )));
        }
        if !(self.cfl_norm > 0.0 && self.cfl_norm.is_finite()) {
            return Err(Error::Config(format!("cfl must be positive, got {}", self.cfl_norm)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.order_p > crate::basis::MAX_ORDER {
            return Err(Error::UnsupportedOrder(self.order_p));
        }
        if self.problem == Problem::Burgers2d {
            if self.scheme != SchemeChoice::Lidg {
                return Err(Error::Config("burgers2d runs only with the lidg scheme".into()));
            }
            let t_shock = shock_time_estimate(cosine_bump_initial, 2.0 * PI, 400);
            if self.t_final >= t_shock {
                return Err(Error::Config(format!(
                    "t_final {} is past the shock time {t_shock:.4}",
                    self.t_final
                )));
            }
        }
        Ok(())
    }

    fn wave_number(&self) -> f64 {
        if self.high_frequency {
            16.0 * PI
        } else {
            2.0 * PI
        }
    }

    /// Initial condition for the advection problems.
    pub fn advection_initial(&self) -> impl Fn(&[f64; 3]) -> f64 + Sync + '_ {
        let k = self.wave_number();
        let dim = self.problem.dim();
        move |x: &[f64; 3]| x[..dim].iter().map(|&xi| (k * xi).sin()).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_per_dim: usize,
    pub h: f64,
    pub rel_l2_error: f64,
    pub observed_rate: Option<f64>,
}

pub fn observed_rate(err_prev: f64, err_curr: f64, h_prev: f64, h_curr: f64) -> f64 {
    (err_prev / err_curr).ln() / (h_prev / h_curr).ln()
}

/// Rows with rates filled in from consecutive `(n, h, error)` triples.
pub fn rows_with_rates(data: &[(usize, f64, f64)]) -> Vec<ConvergenceRow> {
    data.iter()
        .enumerate()
        .map(|(i, &(n, h, e))| ConvergenceRow {
            n_per_dim: n,
            h,
            rel_l2_error: e,
            observed_rate: (i > 0).then(|| observed_rate(data[i - 1].2, e, data[i - 1].1, h)),
        })
        .collect()
}

/// Relative L2 error against `exact`, integrated with `p + 1 + boost` Gauss
/// points per axis in every element.
pub fn relative_l2_error(
    state: &FieldState,
    exact: impl Fn(&[f64; 3]) -> f64 + Sync,
    quadrature_boost: usize,
) -> Result<f64> {
    let mesh = &state.mesh;
    let dim = mesh.dim;
    let layout = Layout::new(state.order_p, dim)?;
    let n = layout.n;
    let gauss = gauss_legendre(n + quadrature_boost);
    let ng = gauss.len();
    let nodes = &layout.basis.rule.nodes;
    // interp[g][j] = l_j(x_g)
    let interp: Vec<Vec<f64>> = gauss
        .nodes
        .iter()
        .map(|&x| (0..n).map(|j| lagrange_basis(nodes, j, x)).collect())
        .collect();
    let n_points = ng.pow(dim as u32);

    let parts: Vec<(f64, f64)> = (0..mesh.n_total())
        .into_par_iter()
        .map(|e| {
            let vals = state.element(e);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut g = [0usize; 3];
            for flat in 0..n_points {
                let mut rem = flat;
                for ga in g.iter_mut().take(dim) {
                    *ga = rem % ng;
                    rem /= ng;
                }
                let mut q = 0.0;
                for (s, v) in vals.iter().enumerate() {
                    let idx = layout.multi_index(s);
                    q += v * (0..dim).map(|a| interp[g[a]][idx[a]]).product::<f64>();
                }
                let xi: Vec<f64> = (0..dim).map(|a| gauss.nodes[g[a]]).collect();
                let w: f64 = (0..dim).map(|a| gauss.weights[g[a]]).product();
                let qe = exact(&mesh.map_point(e, &xi));
                num += w * (q - qe) * (q - qe);
                den += w * qe * qe;
            }
            (num, den)
        })
        .collect();
    // Summed in element order so the result does not depend on the thread count.
    let (num, den) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if !(den > 0.0) {
        return Err(Error::Config("exact solution has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub n_per_dim: usize,
    pub h: f64,
    pub steps: usize,
    pub rel_l2_error: f64,
    pub state: FieldState,
}

/// One simulation of `spec.problem` on `n` elements per axis.
pub fn run_single(spec: &RunSpec, n: usize) -> Result<SingleRun> {
    let dim = spec.problem.dim();
    let length = spec.problem.domain_length();
    let mesh = build_mesh(dim, &vec![n; dim], &vec![length; dim])?;
    let h = mesh.max_elem_size();
    match spec.problem {
        Problem::Burgers2d => {
            let cfg = BurgersConfig::new(spec.order_p, n, spec.cfl_norm, spec.t_final, 1.0)?;
            let out = run_burgers(&cfg, cosine_bump_initial)?;
            let t = spec.t_final;
            // Exact values are cached per point inside the error integral.
            let exact = |x: &[f64; 3]| burgers_exact(x[0], x[1], t, cosine_bump_initial);
            check_exact(&out.state, &exact)?;
            let err = relative_l2_error(
                &out.state,
                |x| exact(x).expect("checked above"),
                DEFAULT_QUADRATURE_BOOST,
            )?;
            Ok(SingleRun {
                n_per_dim: n,
                h,
                steps: out.steps,
                rel_l2_error: err,
                state: out.state,
            })
        }
        _ => {
            let velocity = vec![1.0; dim];
            let config = SchemeConfig::from_cfl(spec.order_p, &mesh, &velocity, spec.cfl_norm, spec.t_final)?;
            let init = spec.advection_initial();
            let out = run(&mesh, &config, &init, spec.scheme)?;
            let t = spec.t_final;
            let err = relative_l2_error(
                &out.state,
                |x| {
                    let mut y = [0.0; 3];
                    for a in 0..dim {
                        y[a] = (x[a] - t).rem_euclid(length);
                    }
                    init(&y)
                },
                DEFAULT_QUADRATURE_BOOST,
            )?;
            Ok(SingleRun {
                n_per_dim: n,
                h,
                steps: out.steps,
                rel_l2_error: err,
                state: out.state,
            })
        }
    }
}

/// The characteristics solve must succeed everywhere the error is measured;
/// checking the element centres and corners catches a shock early.
fn check_exact(state: &FieldState, exact: &(impl Fn(&[f64; 3]) -> Result<f64> + Sync)) -> Result<()> {
    let mesh = &state.mesh;
    (0..mesh.n_total()).into_par_iter().try_for_each(|e| {
        for xi in [[0.0, 0.0], [-1.0, -1.0]] {
            exact(&mesh.map_point(e, &xi))?;
        }
        Ok(())
    })
}

pub fn convergence_study(spec: &RunSpec) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    let mut data = Vec::with_capacity(spec.sizes.len());
    for &n in &spec.sizes {
        let r = run_single(spec, n).map_err(|e| e.context(format!("{} with {n} elements per axis", spec.problem)))?;
        data.push((n, r.h, r.rel_l2_error));
    }
    let rows = rows_with_rates(&data);
    if let Some(path) = &spec.output {
        write_convergence_csv(path, &rows)?;
    }
    Ok(rows)
}

/// Scientific notation with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const CONVERGENCE_HEADER: [&str; 4] = ["n", "h", "rel_l2", "rate"];

pub fn convergence_records(rows: &[ConvergenceRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n_per_dim.to_string(),
                fmt_real(r.h),
                fmt_real(r.rel_l2_error),
                r.observed_rate.map(fmt_real).unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_csv(path, &CONVERGENCE_HEADER, &convergence_records(rows))
}
