//! Finite-vertex representation of the value cone and the data-moment state.
//!
//! The value function of the adaptive game is represented by a finite list of
//! [`ValueVertex`] pairs `(S, Q)`. Its value at `(Z, x, u)` is the maximum of
//! `trace(S^T Z) + (x,u)^T Q (x,u)` over the vertices; maximizing over the
//! generators suffices for the convex hull because the objective is linear in
//! `(S, Q)`.
//!
//! [`DataMoment`] is the running sum of outer products of observed
//! `(x_t, u_t, x_{t+1})` triples, a sufficient statistic for all past data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mat;
use crate::model::{ScenarioSet, SYM_TOL};

/// One generator `(S, Q)` of the value cone.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVertex {
    s: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl ValueVertex {
    /// Builds a vertex, checking symmetry of both blocks and consistency of
    /// their dimensions with a single `(n, m)`.
    pub fn new(s: DMatrix<f64>, q: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        let d = 2 * n + m;
        if s.nrows() != d || s.ncols() != d {
            return Err(Error::Shape(format!("S must be {d}x{d}, got {}x{}", s.nrows(), s.ncols())));
        }
        if q.nrows() != n + m || q.ncols() != n + m {
            return Err(Error::Shape(format!(
                "Q must be {}x{}, got {}x{}",
                n + m,
                n + m,
                q.nrows(),
                q.ncols()
            )));
        }
        if mat::asymmetry(&s) > SYM_TOL || mat::asymmetry(&q) > SYM_TOL {
            return Err(Error::Shape("vertex blocks must be symmetric".into()));
        }
        Ok(Self { s, q })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Vertex value `trace(S^T Z) + (x,u)^T Q (x,u)`.
    pub fn value(&self, z: &DMatrix<f64>, xu: &DVector<f64>) -> f64 {
        mat::frob_inner(&self.s, z) + mat::quad_form(&self.q, xu)
    }

    fn is_witness(&self) -> bool {
        self.q.iter().all(|v| v.abs() <= 1e-14)
    }
}

/// The value cone: a non-empty generator list plus the S-matrices of the
/// generating scenario set (kept for containment checks and expansion).
#[derive(Debug, Clone)]
pub struct ValueCone {
    vertices: Vec<ValueVertex>,
    scenario_s: Vec<DMatrix<f64>>,
    n: usize,
    m: usize,
}

impl ValueCone {
    /// Builds a cone and verifies that for every scenario S-matrix there is a
    /// vertex whose S block equals it (containment of `S x {0}` up to the
    /// linear-in-Z part).
    pub fn new(vertices: Vec<ValueVertex>, scenarios: &ScenarioSet) -> Result<Self> {
        let (n, m) = (scenarios.state_dim(), scenarios.input_dim());
        if vertices.is_empty() {
            return Err(Error::InvalidCone("vertex list is empty".into()));
        }
        let scenario_s: Vec<DMatrix<f64>> =
            scenarios.s_matrices().into_iter().map(|s| s.matrix().clone()).collect();
        for (i, s) in scenario_s.iter().enumerate() {
            let covered = vertices.iter().any(|v| mat::max_abs_diff(&v.s, s) <= 1e-9);
            if !covered {
                return Err(Error::InvalidCone(format!(
                    "no vertex covers scenario {i}: the cone must contain S x {{0}}"
                )));
            }
        }
        Ok(Self { vertices, scenario_s, n, m })
    }

    /// Rebuilds a cone from a bare vertex list (e.g. a deserialized cone
    /// file). The scenario S-matrices are recovered from the witness
    /// vertices (those with `Q = 0`), which every valid cone contains.
    pub fn from_vertex_list(vertices: Vec<ValueVertex>, n: usize, m: usize) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidCone("vertex list is empty".into()));
        }
        for v in &vertices {
            if v.s.nrows() != 2 * n + m || v.q.nrows() != n + m {
                return Err(Error::Shape(
                    "vertex dimensions do not match the declared (n, m)".into(),
                ));
            }
        }
        let scenario_s: Vec<DMatrix<f64>> =
            vertices.iter().filter(|v| v.is_witness()).map(|v| v.s.clone()).collect();
        if scenario_s.is_empty() {
            return Err(Error::InvalidCone(
                "no witness vertex (Q = 0): cannot recover the scenario S-matrices".into(),
            ));
        }
        Ok(Self { vertices, scenario_s, n, m })
    }

    pub fn vertices(&self) -> &[ValueVertex] {
        &self.vertices
    }

    pub fn scenario_s_matrices(&self) -> &[DMatrix<f64>] {
        &self.scenario_s
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Appends a vertex (used by cone expansion). The containment invariant
    /// is preserved since vertices are only added.
    pub fn push_vertex(&mut self, v: ValueVertex) {
        self.vertices.push(v);
    }

    /// Per-vertex values at `(Z, x, u)`.
    pub fn vertex_values(&self, z: &DataMoment, x: &DVector<f64>, u: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_point(z, x, u)?;
        let xu = mat::concat(&[x, u]);
        Ok(self.vertices.iter().map(|v| v.value(z.matrix(), &xu)).collect())
    }

    fn check_point(&self, z: &DataMoment, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if z.state_dim() != self.n || z.input_dim() != self.m {
            return Err(Error::Shape("data moment dimensions do not match the cone".into()));
        }
        if x.len() != self.n || u.len() != self.m {
            return Err(Error::Shape(format!(
                "expected (x, u) of dimensions ({}, {}), got ({}, {})",
                self.n,
                self.m,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }
}

/// Max over vertices of `trace(S^T Z) + (x,u)^T Q (x,u)`.
pub fn evaluate(cone: &ValueCone, z: &DataMoment, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let vals = cone.vertex_values(z, x, u)?;
    vals.into_iter()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or_else(|| Error::InvalidCone("vertex list is empty".into()))
}

/// The accumulated second-moment matrix of observed `(x, u, x+)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMoment {
    z: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl DataMoment {
    /// The zero moment (no data).
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { z: DMatrix::zeros(2 * n + m, 2 * n + m), n, m }
    }

    /// Wraps an existing matrix, checking symmetry and near positive
    /// semidefiniteness.
    pub fn new(z: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        let d = 2 * n + m;
        if z.nrows() != d || z.ncols() != d {
            return Err(Error::Shape(format!("Z must be {d}x{d}, got {}x{}", z.nrows(), z.ncols())));
        }
        if mat::asymmetry(&z) > 1e-9 {
            return Err(Error::Shape("Z must be symmetric".into()));
        }
        let scale = 1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if mat::min_eigenvalue(&z) < -1e-9 * scale {
            return Err(Error::Domain("Z must be positive semidefinite".into()));
        }
        Ok(Self { z: mat::symmetrize(&z), n, m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }
}

/// `Z' = Z + outer((x, u, x+))`.
pub fn update_z(z: &DataMoment, x: &DVector<f64>, u: &DVector<f64>, xplus: &DVector<f64>) -> Result<DataMoment> {
    if x.len() != z.n || u.len() != z.m || xplus.len() != z.n {
        return Err(Error::Shape(format!(
            "expected (x, u, x+) of dimensions ({}, {}, {}), got ({}, {}, {})",
            z.n,
            z.m,
            z.n,
            x.len(),
            u.len(),
            xplus.len()
        )));
    }
    let v = mat::concat(&[x, u, xplus]);
    Ok(DataMoment { z: &z.z + mat::outer(&v), n: z.n, m: z.m })
}

/// Removes exact duplicates and vertices that are never within `tol` of the
/// maximum at any of the given samples. Scenario witnesses (vertices with
/// `Q = 0` whose S block matches a scenario S-matrix) are never removed.
pub fn prune(
    cone: &ValueCone,
    samples: &[(DataMoment, DVector<f64>, DVector<f64>)],
    tol: f64,
) -> Result<ValueCone> {
    if samples.is_empty() {
        return Err(Error::Config("prune requires at least one sample".into()));
    }
    let k = cone.vertices.len();

    // Exact duplicates: keep the first occurrence.
    let mut keep = vec![true; k];
    for i in 0..k {
        if !keep[i] {
            continue;
        }
        for j in (i + 1)..k {
            if keep[j]
                && mat::max_abs_diff(&cone.vertices[i].s, &cone.vertices[j].s) <= 1e-14
                && mat::max_abs_diff(&cone.vertices[i].q, &cone.vertices[j].q) <= 1e-14
            {
                keep[j] = false;
            }
        }
    }

    let protected: Vec<bool> = cone
        .vertices
        .iter()
        .map(|v| {
            v.is_witness()
                && cone.scenario_s.iter().any(|s| mat::max_abs_diff(&v.s, s) <= 1e-9)
        })
        .collect();

    let mut active = vec![false; k];
    for (z, x, u) in samples {
        let vals = cone.vertex_values(z, x, u)?;
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, v) in vals.iter().enumerate() {
            if keep[i] && *v >= best - tol {
                active[i] = true;
                // Among surviving duplicates only the kept one is marked.
            }
        }
    }

    let vertices: Vec<ValueVertex> = cone
        .vertices
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i] && (active[*i] || protected[*i]))
        .map(|(_, v)| v.clone())
        .collect();
    if vertices.is_empty() {
        return Ok(cone.clone());
    }
    Ok(ValueCone { vertices, scenario_s: cone.scenario_s.clone(), n: cone.n, m: cone.m })
}
