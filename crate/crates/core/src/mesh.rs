//! Periodic uniform Cartesian meshes and time-step bookkeeping.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Low => Side::High,
            Side::High => Side::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMesh {
    pub dim: usize,
    pub n_elems: Vec<usize>,
    pub domain_lengths: Vec<f64>,
    pub elem_sizes: Vec<f64>,
}

impl CartesianMesh {
    pub fn n_total(&self) -> usize {
        self.n_elems.iter().product()
    }

    /// Element multi-index, axis 0 fastest.
    pub fn multi_index(&self, elem: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = elem;
        for (a, &n) in self.n_elems.iter().enumerate() {
            idx[a] = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut e = 0;
        for a in (0..self.dim).rev() {
            e = e * self.n_elems[a] + idx[a];
        }
        e
    }

    pub fn neighbor(&self, elem: usize, axis: usize, side: Side) -> usize {
        debug_assert!(axis < self.dim);
        let mut idx = self.multi_index(elem);
        let n = self.n_elems[axis];
        idx[axis] = match side {
            Side::Low => (idx[axis] + n - 1) % n,
            Side::High => (idx[axis] + 1) % n,
        };
        self.linear_index(&idx[..self.dim])
    }

    /// Neighbor at an arbitrary lattice offset (periodic).
    pub fn offset(&self, elem: usize, offset: &[i64]) -> usize {
        let mut idx = self.multi_index(elem);
        for a in 0..self.dim {
            let n = self.n_elems[a] as i64;
            idx[a] = (idx[a] as i64 + offset[a]).rem_euclid(n) as usize;
        }
        self.linear_index(&idx[..self.dim])
    }

    /// Physical coordinate of reference point `xi` in element `elem`.
    pub fn map_point(&self, elem: usize, xi: &[f64]) -> [f64; 3] {
        let idx = self.multi_index(elem);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.elem_sizes[a] * (idx[a] as f64 + 0.5 * (xi[a] + 1.0));
        }
        x
    }

    /// Jacobian of the reference-to-physical map.
    pub fn jacobian(&self) -> f64 {
        self.elem_sizes.iter().map(|h| 0.5 * h).product()
    }

    pub fn max_elem_size(&self) -> f64 {
        self.elem_sizes.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn build_mesh(dim: usize, n_per_dim: &[usize], lengths: &[f64]) -> Result<CartesianMesh> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Mesh(format!("dimension {dim} not in 1..=3")));
    }
    if n_per_dim.len() != dim || lengths.len() != dim {
        return Err(Error::Mesh(format!(
            "expected {dim} sizes and lengths, got {} and {}",
            n_per_dim.len(),
            lengths.len()
        )));
    }
    if n_per_dim.iter().any(|&n| n == 0) {
        return Err(Error::Mesh("element counts must be >= 1".into()));
    }
    if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Mesh("domain lengths must be positive".into()));
    }
    let elem_sizes: Vec<f64> = lengths
        .iter()
        .zip(n_per_dim)
        .map(|(l, &n)| l / n as f64)
        .collect();
    let domain_lengths = elem_sizes
        .iter()
        .zip(n_per_dim)
        .map(|(h, &n)| h * n as f64)
        .collect();
    Ok(CartesianMesh {
        dim,
        n_elems: n_per_dim.to_vec(),
        domain_lengths,
        elem_sizes,
    })
}

/// Per-axis CFL numbers `u_i dt / dx_i`.
pub fn cfl_vector(mesh: &CartesianMesh, velocity: &[f64], dt: f64) -> Vec<f64> {
    velocity
        .iter()
        .zip(&mesh.elem_sizes)
        .map(|(u, h)| u * dt / h)
        .collect()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dt_from_cfl(mesh: &CartesianMesh, velocity: &[f64], cfl_norm: f64) -> Result<f64> {
    if velocity.len() != mesh.dim {
        return Err(Error::Config("velocity dimension mismatch".into()));
    }
    if !(cfl_norm > 0.0) {
        return Err(Error::Config(format!("cfl must be positive, got {cfl_norm}")));
    }
    let rate = norm2(&cfl_vector(mesh, velocity, 1.0));
    if rate == 0.0 {
        return Err(Error::Config("zero velocity gives an unbounded time step".into()));
    }
    Ok(cfl_norm / rate)
}

/// Everything that fixes a linear advection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub order_p: usize,
    pub dim: usize,
    pub velocity: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub cfl_vector: Vec<f64>,
}

impl SchemeConfig {
    pub fn new(
        order_p: usize,
        mesh: &CartesianMesh,
        velocity: &[f64],
        dt: f64,
        t_final: f64,
    ) -> Result<Self> {
        if order_p > crate::basis::MAX_ORDER {
            return Err(Error::UnsupportedOrder(order_p));
        }
        if velocity.len() != mesh.dim {
            return Err(Error::Config("velocity dimension mismatch".into()));
        }
        if velocity.iter().any(|&u| u < 0.0 || !u.is_finite()) {
            return Err(Error::Config(
                "velocity components must be >= 0; reflect negative axes first".into(),
            ));
        }
        if !(dt > 0.0) || !(t_final > 0.0) {
            return Err(Error::Config("dt and t_final must be positive".into()));
        }
        Ok(SchemeConfig {
            order_p,
            dim: mesh.dim,
            velocity: velocity.to_vec(),
            dt,
            t_final,
            cfl_vector: cfl_vector(mesh, velocity, dt),
        })
    }

    pub fn from_cfl(
        order_p: usize,
        mesh: &CartesianMesh,
        velocity: &[f64],
        cfl_norm: f64,
        t_final: f64,
    ) -> Result<Self> {
        let dt = dt_from_cfl(mesh, velocity, cfl_norm)?;
        Self::new(order_p, mesh, velocity, dt, t_final)
    }

    pub fn cfl_norm(&self) -> f64 {
        norm2(&self.cfl_vector)
    }

    /// CFL vector for a (possibly truncated) step of length `dt`.
    pub fn cfl_for_dt(&self, dt: f64) -> Vec<f64> {
        self.cfl_vector.iter().map(|nu| nu * dt / self.dt).collect()
    }
}

/// Maps a velocity with negative components onto one with `u >= 0` by
/// mirroring the affected axes, `x_a -> L_a - x_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisReflection {
    pub flipped: Vec<bool>,
    pub lengths: Vec<f64>,
}

impl AxisReflection {
    pub fn for_velocity(velocity: &[f64], lengths: &[f64]) -> (Self, Vec<f64>) {
        let flipped: Vec<bool> = velocity.iter().map(|&u| u < 0.0).collect();
        let u = velocity.iter().map(|u| u.abs()).collect();
        (
            AxisReflection {
                flipped,
                lengths: lengths.to_vec(),
            },
            u,
        )
    }

    /// The map is an involution, so it converts in both directions.
    pub fn apply(&self, x: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (a, &xa) in x.iter().enumerate().take(self.flipped.len()) {
            out[a] = if self.flipped[a] {
                self.lengths[a] - xa
            } else {
                xa
            };
        }
        out
    }
}
