//! Brute-force finite-horizon minimax game values on discretized scalar
//! instances: ground truth for the certified value cones and controllers.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::games::policy_moments;
use crate::model::{stage_payoff, ScenarioSet};
use crate::valuefn::{update_z, DataMoment, ValueCone};

/// Discretization of the scalar game: decision and next-state atoms uniform
/// on `[-x_clip, x_clip]`, accumulated payoffs per hypothesis on a saturated
/// uniform grid.
#[derive(Debug, Clone)]
pub struct OracleGrids {
    pub u_atoms: usize,
    pub w_atoms: usize,
    pub x_clip: f64,
    pub c_points: usize,
    pub c_min: f64,
    pub c_max: f64,
    /// The payoff-grid spacing must not exceed this bound; the terminal
    /// payoff is 1-Lipschitz in each accumulated payoff, so the spacing
    /// bounds the per-stage interpolation error.
    pub accuracy_tol: f64,
    /// Restrict the minimizer to pure decisions. With mixing allowed, the
    /// minimizer collects disturbance-energy credit from every hypothesis
    /// by dithering, which drives finite-horizon values far below zero;
    /// the pure game is the sharper feasibility probe.
    pub pure_decisions: bool,
}

impl Default for OracleGrids {
    fn default() -> Self {
        Self {
            u_atoms: 21,
            w_atoms: 21,
            x_clip: 2.0,
            c_points: 61,
            c_min: -20.0,
            c_max: 5.0,
            accuracy_tol: 1.0,
            pure_decisions: false,
        }
    }
}

impl OracleGrids {
    fn validate(&self) -> Result<()> {
        if self.u_atoms > 41 || self.w_atoms > 41 {
            return Err(Error::Unsupported("atom counts above 41 are not supported".into()));
        }
        if self.u_atoms < 3 || self.w_atoms < 3 || self.w_atoms % 2 == 0 {
            return Err(Error::Config(
                "need at least 3 atoms per axis and an odd next-state count (zero atom)".into(),
            ));
        }
        if self.c_points < 2 || !(self.c_min < 0.0 && self.c_max > 0.0) {
            return Err(Error::Config("payoff grid must straddle zero".into()));
        }
        if !(self.x_clip > 0.0) {
            return Err(Error::Config("x_clip must be positive".into()));
        }
        let spacing = (self.c_max - self.c_min) / (self.c_points - 1) as f64;
        if spacing > self.accuracy_tol {
            return Err(Error::Accuracy(format!(
                "payoff grid spacing {spacing:.3} exceeds the accuracy bound {:.3}",
                self.accuracy_tol
            )));
        }
        Ok(())
    }

    fn atoms(count: usize, clip: f64) -> Vec<f64> {
        (0..count).map(|i| -clip + 2.0 * clip * i as f64 / (count - 1) as f64).collect()
    }

    fn c_grid(&self) -> Vec<f64> {
        (0..self.c_points)
            .map(|i| {
                self.c_min + (self.c_max - self.c_min) * i as f64 / (self.c_points - 1) as f64
            })
            .collect()
    }
}

/// The value of the zero-sum matrix game where the row player mixes to
/// minimize and the column player responds: `min_p max_k sum_j p_j g[j][k]`.
/// Solved exactly by primal simplex on the standard reduction.
pub fn matrix_game_value(g: &[Vec<f64>]) -> Result<f64> {
    let rows = g.len();
    if rows == 0 || g[0].is_empty() {
        return Err(Error::Config("matrix game needs at least one row and column".into()));
    }
    let cols = g[0].len();
    if g.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged game matrix".into()));
    }
    // Shift all payoffs positive so the game value is positive, then solve
    // max 1'q subject to G^T q <= 1, q >= 0; the value is shift + 1/(1'q*).
    let lo = g.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let shift = lo - 1.0;
    // Tableau: cols constraints (one per adversary column), rows variables.
    let n_vars = rows;
    let n_cons = cols;
    let width = n_vars + n_cons + 1;
    let mut tab = vec![vec![0.0f64; width]; n_cons + 1];
    for k in 0..n_cons {
        for j in 0..n_vars {
            tab[k][j] = g[j][k] - shift;
        }
        tab[k][n_vars + k] = 1.0;
        tab[k][width - 1] = 1.0;
    }
    for j in 0..n_vars {
        tab[n_cons][j] = -1.0; // maximize sum q_j
    }
    let mut basis: Vec<usize> = (n_vars..n_vars + n_cons).collect();
    for _ in 0..10_000 {
        // Bland's rule: first negative reduced cost.
        let Some(pivot_col) = (0..width - 1).find(|&j| tab[n_cons][j] < -1e-12) else {
            break;
        };
        let mut pivot_row = None;
        let mut best = f64::INFINITY;
        for k in 0..n_cons {
            if tab[k][pivot_col] > 1e-12 {
                let ratio = tab[k][width - 1] / tab[k][pivot_col];
                if ratio < best - 1e-12
                    || (ratio < best + 1e-12
                        && pivot_row.map_or(true, |r: usize| basis[k] < basis[r]))
                {
                    best = ratio;
                    pivot_row = Some(k);
                }
            }
        }
        let Some(pr) = pivot_row else {
            return Err(Error::Unbounded { direction: vec![0.0] });
        };
        let pv = tab[pr][pivot_col];
        for v in tab[pr].iter_mut() {
            *v /= pv;
        }
        for k in 0..=n_cons {
            if k != pr {
                let f = tab[k][pivot_col];
                if f != 0.0 {
                    for j in 0..width {
                        tab[k][j] -= f * tab[pr][j];
                    }
                }
            }
        }
        basis[pr] = pivot_col;
    }
    let total = tab[n_cons][width - 1];
    if total <= 0.0 {
        return Err(Error::Accuracy("simplex failed to make progress on the game".into()));
    }
    Ok(shift + 1.0 / total)
}

/// Approximate value of the same game by fictitious play; used as an
/// independent cross-check of the simplex solver in tests.
pub fn fictitious_play_value(g: &[Vec<f64>], iters: usize) -> Result<(f64, f64)> {
    let rows = g.len();
    let cols = g.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Config("matrix game needs at least one row and column".into()));
    }
    let mut row_counts = vec![0.0f64; rows];
    let mut col_counts = vec![0.0f64; cols];
    let mut row_payoff = vec![0.0f64; rows]; // cumulative payoff of each pure row vs col history
    let mut col_payoff = vec![0.0f64; cols];
    row_counts[0] = 1.0;
    for k in 0..cols {
        col_payoff[k] = g[0][k];
    }
    for _ in 0..iters {
        // Column player maximizes against the row history.
        let bk = (0..cols)
            .max_by(|&a, &b| col_payoff[a].partial_cmp(&col_payoff[b]).unwrap())
            .unwrap();
        col_counts[bk] += 1.0;
        for j in 0..rows {
            row_payoff[j] += g[j][bk];
        }
        // Row player minimizes against the column history.
        let bj = (0..rows)
            .min_by(|&a, &b| row_payoff[a].partial_cmp(&row_payoff[b]).unwrap())
            .unwrap();
        row_counts[bj] += 1.0;
        for k in 0..cols {
            col_payoff[k] += g[bj][k];
        }
    }
    let plays = row_counts.iter().sum::<f64>();
    let upper = col_payoff.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / plays;
    let lower = row_payoff.iter().cloned().fold(f64::INFINITY, f64::min)
        / col_counts.iter().sum::<f64>();
    Ok((lower, upper))
}

struct GameOracle<'a> {
    scenarios: &'a ScenarioSet,
    grids: &'a OracleGrids,
    horizon: usize,
    u_atoms: Vec<f64>,
    w_atoms: Vec<f64>,
    c_grid: Vec<f64>,
    memo: HashMap<(usize, usize, Vec<usize>), f64>,
}

impl<'a> GameOracle<'a> {
    /// Multilinear interpolation of the node value over the payoff grid at
    /// a real payoff vector, saturating outside the grid range.
    fn interp(&mut self, t: usize, xi: usize, c: &[f64]) -> Result<f64> {
        let hyp = c.len();
        // Per-dimension bracketing index and weight.
        let mut lo = vec![0usize; hyp];
        let mut frac = vec![0.0f64; hyp];
        let last = self.c_grid.len() - 1;
        let span = self.c_grid[last] - self.c_grid[0];
        for (i, &ci) in c.iter().enumerate() {
            let clamped = ci.clamp(self.c_grid[0], self.c_grid[last]);
            let pos = (clamped - self.c_grid[0]) / span * last as f64;
            let below = (pos.floor() as usize).min(last - 1);
            lo[i] = below;
            frac[i] = pos - below as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << hyp) {
            let mut weight = 1.0;
            let mut idx = Vec::with_capacity(hyp);
            for i in 0..hyp {
                if corner >> i & 1 == 1 {
                    weight *= frac[i];
                    idx.push(lo[i] + 1);
                } else {
                    weight *= 1.0 - frac[i];
                    idx.push(lo[i]);
                }
            }
            if weight > 0.0 {
                total += weight * self.node(t, xi, idx)?;
            }
        }
        Ok(total)
    }

    /// Value at a grid node `(t, x-atom, payoff-grid indices)`.
    fn node(&mut self, t: usize, xi: usize, ci: Vec<usize>) -> Result<f64> {
        if let Some(&v) = self.memo.get(&(t, xi, ci.clone())) {
            return Ok(v);
        }
        let c: Vec<f64> = ci.iter().map(|&i| self.c_grid[i]).collect();
        let v = if t == self.horizon {
            c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            let g = self.stage_matrix(t, self.w_atoms[xi], &c)?;
            if self.grids.pure_decisions {
                g.iter()
                    .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .fold(f64::INFINITY, f64::min)
            } else {
                matrix_game_value(&g)?
            }
        };
        self.memo.insert((t, xi, ci), v);
        Ok(v)
    }

    /// Payoff matrix of the stage game at state `x` with accumulated
    /// payoffs `c`: rows are decision atoms, columns next-state atoms.
    fn stage_matrix(&mut self, t: usize, x: f64, c: &[f64]) -> Result<Vec<Vec<f64>>> {
        let gamma = self.scenarios.gamma();
        let mut g = vec![vec![0.0; self.w_atoms.len()]; self.u_atoms.len()];
        for (j, &u) in self.u_atoms.clone().iter().enumerate() {
            for (k, &zeta) in self.w_atoms.clone().iter().enumerate() {
                let xv = DVector::from_element(1, x);
                let uv = DVector::from_element(1, u);
                let zv = DVector::from_element(1, zeta);
                let cn: Vec<f64> = self
                    .scenarios
                    .hypotheses()
                    .iter()
                    .zip(c.iter())
                    .map(|(h, ci)| Ok(ci + stage_payoff(h, gamma, &xv, &uv, &zv)?))
                    .collect::<Result<_>>()?;
                g[j][k] = self.interp(t + 1, k, &cn)?;
            }
        }
        Ok(g)
    }
}

/// The exact (up to discretization) value of the `T`-step minimax game from
/// `x = 0` with zero accumulated payoffs: the controller mixes over decision
/// atoms, the adversary picks the next state from its atoms, and each
/// hypothesis accrues its stage payoff. Nonpositive value means the gain
/// bound holds on the discretized game.
pub fn exact_game_value(
    scenarios: &ScenarioSet,
    horizon: usize,
    grids: &OracleGrids,
) -> Result<f64> {
    if scenarios.state_dim() != 1 || scenarios.input_dim() != 1 {
        return Err(Error::Unsupported("the oracle is scalar-only (n = m = 1)".into()));
    }
    if horizon > 4 {
        return Err(Error::Unsupported("oracle horizons above 4 are not supported".into()));
    }
    grids.validate()?;
    let mut oracle = GameOracle {
        scenarios,
        grids,
        horizon,
        u_atoms: OracleGrids::atoms(grids.u_atoms, grids.x_clip),
        w_atoms: OracleGrids::atoms(grids.w_atoms, grids.x_clip),
        c_grid: grids.c_grid(),
        memo: HashMap::new(),
    };
    let center = grids.w_atoms / 2; // odd count: exact zero atom
    let zeros = vec![0.0; scenarios.hypotheses().len()];
    oracle.interp(0, center, &zeros)
}

/// Worst-case discretized payoff of the cone controller over the same
/// next-state atoms: the adversary sees the controller's two-point mixed
/// strategy at each step but not its realized draw, and the expectation
/// over realizations is enumerated exactly along the tree.
pub fn controller_discretized_payoff(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    horizon: usize,
    grids: &OracleGrids,
) -> Result<f64> {
    if scenarios.state_dim() != 1 || scenarios.input_dim() != 1 {
        return Err(Error::Unsupported("the oracle is scalar-only (n = m = 1)".into()));
    }
    if horizon > 4 {
        return Err(Error::Unsupported("oracle horizons above 4 are not supported".into()));
    }
    grids.validate()?;
    let w_atoms = OracleGrids::atoms(grids.w_atoms, grids.x_clip);
    let zeros = vec![0.0; scenarios.hypotheses().len()];
    let z0 = DataMoment::zeros(1, 1);
    payoff_rec(scenarios, cone, &w_atoms, horizon, &z0, 0.0, &zeros)
}

fn payoff_rec(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    w_atoms: &[f64],
    steps_left: usize,
    z: &DataMoment,
    x: f64,
    c: &[f64],
) -> Result<f64> {
    if steps_left == 0 {
        return Ok(c.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let xv = DVector::from_element(1, x);
    let (p, _) = policy_moments(cone, z, &xv)?;
    // Exact two-point law: u = mu +- s with equal mass.
    let sigma = (p.w[(0, 0)] - p.mu[0] * p.mu[0]).max(0.0).sqrt();
    let atoms: Vec<(f64, f64)> = if sigma < 1e-12 {
        vec![(p.mu[0], 1.0)]
    } else {
        vec![(p.mu[0] + sigma, 0.5), (p.mu[0] - sigma, 0.5)]
    };
    let gamma = scenarios.gamma();
    let mut best = f64::NEG_INFINITY;
    for &zeta in w_atoms {
        let zv = DVector::from_element(1, zeta);
        let mut expect = 0.0;
        for &(u, mass) in &atoms {
            let uv = DVector::from_element(1, u);
            let cn: Vec<f64> = scenarios
                .hypotheses()
                .iter()
                .zip(c.iter())
                .map(|(h, ci)| Ok(ci + stage_payoff(h, gamma, &xv, &uv, &zv)?))
                .collect::<Result<_>>()?;
            let zn = update_z(z, &xv, &uv, &zv)?;
            expect += mass * payoff_rec(scenarios, cone, w_atoms, steps_left - 1, &zn, zeta, &cn)?;
        }
        best = best.max(expect);
    }
    Ok(best)
}
