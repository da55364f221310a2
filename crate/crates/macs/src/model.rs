//! Model hypotheses, gain levels, S-matrix construction and membership
//! testing for the explicitly solvable model class.
//!
//! A [`Hypothesis`] is a triple `(A, B, M)`: state dynamics, input map and
//! stage-cost weight. A [`ScenarioSet`] is a finite list of hypotheses with a
//! gain level `gamma`. Each hypothesis generates an [`SMatrix`]
//!
//! ```text
//! S = diag{M, 0} - gamma^2 [A B -I]^T [A B -I]
//! ```
//!
//! whose quadratic form on `(x, u, x+)` is the one-step payoff
//! `|(x,u)|^2_M - gamma^2 |Ax + Bu - x+|^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mat;

/// Symmetry tolerance for constructed matrices.
pub const SYM_TOL: f64 = 1e-12;
/// Default absolute eigenvalue tolerance for semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-9;

/// One model triple `(A, B, M)` with state dimension `n` and input dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    m: DMatrix<f64>,
}

impl Hypothesis {
    /// Builds a hypothesis, checking dimension consistency and that `M` is
    /// symmetric and positive semidefinite.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, m: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Shape(format!(
                "B must have {} rows to match A, got {}",
                n,
                b.nrows()
            )));
        }
        let nm = n + b.ncols();
        if m.nrows() != nm || m.ncols() != nm {
            return Err(Error::Shape(format!(
                "M must be {}x{}, got {}x{}",
                nm,
                nm,
                m.nrows(),
                m.ncols()
            )));
        }
        if mat::asymmetry(&m) > SYM_TOL {
            return Err(Error::Shape("M is not symmetric".into()));
        }
        if !mat::is_psd(&m, PSD_TOL) {
            return Err(Error::Domain(format!(
                "M must be positive semidefinite (min eigenvalue {})",
                mat::min_eigenvalue(&m)
            )));
        }
        Ok(Self { a, b, m })
    }

    /// Scalar hypothesis with `M = m_scale * I_2`.
    pub fn scalar(a: f64, b: f64, m_scale: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::identity(2, 2) * m_scale,
        )
        .expect("scalar hypothesis is always well formed for m_scale >= 0")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Same hypothesis with the sign of `B` flipped.
    pub fn flip_input_sign(&self) -> Self {
        Self { a: self.a.clone(), b: -&self.b, m: self.m.clone() }
    }
}

/// A finite list of hypotheses sharing dimensions, plus the gain level.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    hypotheses: Vec<Hypothesis>,
    gamma: f64,
}

impl ScenarioSet {
    /// Builds a scenario set. Requires a non-empty hypothesis list with
    /// matching dimensions and `gamma > 1`; the inner adversary maximum
    /// diverges for gamma <= 1.
    pub fn new(hypotheses: Vec<Hypothesis>, gamma: f64) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::Config("scenario set must contain at least one hypothesis".into()));
        }
        if !(gamma > 1.0) {
            return Err(Error::DegenerateGain(format!(
                "gamma must exceed 1, got {gamma}"
            )));
        }
        let (n, m) = (hypotheses[0].state_dim(), hypotheses[0].input_dim());
        for (i, h) in hypotheses.iter().enumerate() {
            if h.state_dim() != n || h.input_dim() != m {
                return Err(Error::Shape(format!(
                    "hypothesis {i} has dimensions ({}, {}), expected ({n}, {m})",
                    h.state_dim(),
                    h.input_dim()
                )));
            }
        }
        Ok(Self { hypotheses, gamma })
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_dim(&self) -> usize {
        self.hypotheses[0].state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.hypotheses[0].input_dim()
    }

    /// S-matrices of all hypotheses, in order.
    pub fn s_matrices(&self) -> Vec<SMatrix> {
        self.hypotheses.iter().map(|h| build_s(h, self.gamma)).collect()
    }
}

/// The explicitly solvable model class, parameterized by a spectral bound
/// `alpha`, with derived gain level `gamma_alpha = alpha + sqrt(1 + alpha^2)`.
#[derive(Debug, Clone, Copy)]
pub struct ModelClassSpec {
    alpha: f64,
    gamma_alpha: f64,
}

impl ModelClassSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(Self { alpha, gamma_alpha: gamma_alpha(alpha)? })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma_alpha(&self) -> f64 {
        self.gamma_alpha
    }
}

/// The symmetric `(2n+m) x (2n+m)` payoff matrix of one hypothesis at a
/// given gain level, block-ordered as `(x, u, x+)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SMatrix {
    s: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl SMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Quadratic form on a stacked `(x, u, x+)` vector.
    pub fn quadratic_form(&self, x: &DVector<f64>, u: &DVector<f64>, xplus: &DVector<f64>) -> Result<f64> {
        if x.len() != self.n || u.len() != self.m || xplus.len() != self.n {
            return Err(Error::Shape(format!(
                "expected (x, u, x+) of dimensions ({}, {}, {}), got ({}, {}, {})",
                self.n,
                self.m,
                self.n,
                x.len(),
                u.len(),
                xplus.len()
            )));
        }
        Ok(mat::quad_form(&self.s, &mat::concat(&[x, u, xplus])))
    }
}

/// The derived gain level `gamma_alpha := alpha + sqrt(1 + alpha^2)`.
///
/// ```
/// assert_eq!(macs::model::gamma_alpha(0.75).unwrap(), 2.0);
/// assert_eq!(macs::model::gamma_alpha(0.0).unwrap(), 1.0);
/// ```
pub fn gamma_alpha(alpha: f64) -> Result<f64> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
    }
    Ok(alpha + (1.0 + alpha * alpha).sqrt())
}

/// Builds `S = diag{M, 0} - gamma^2 [A B -I]^T [A B -I]` in `(x, u, x+)`
/// block order.
pub fn build_s(h: &Hypothesis, gamma: f64) -> SMatrix {
    let (n, m) = (h.state_dim(), h.input_dim());
    let d = 2 * n + m;
    // R = [A B -I], n x (2n+m)
    let mut r = DMatrix::zeros(n, d);
    r.view_mut((0, 0), (n, n)).copy_from(h.a());
    r.view_mut((0, n), (n, m)).copy_from(h.b());
    r.view_mut((0, n + m), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
    let mut s = DMatrix::zeros(d, d);
    s.view_mut((0, 0), (n + m, n + m)).copy_from(h.m());
    s -= r.transpose() * &r * (gamma * gamma);
    SMatrix { s: mat::symmetrize(&s), n, m }
}

/// One-step payoff `|(x,u)|^2_M - gamma^2 |Ax + Bu - x+|^2`.
pub fn stage_payoff(
    h: &Hypothesis,
    gamma: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xplus: &DVector<f64>,
) -> Result<f64> {
    let (n, m) = (h.state_dim(), h.input_dim());
    if x.len() != n || u.len() != m || xplus.len() != n {
        return Err(Error::Shape(format!(
            "expected (x, u, x+) of dimensions ({n}, {m}, {n}), got ({}, {}, {})",
            x.len(),
            u.len(),
            xplus.len()
        )));
    }
    let xu = mat::concat(&[x, u]);
    let residual = h.a() * x + h.b() * u - xplus;
    Ok(mat::quad_form(h.m(), &xu) - gamma * gamma * residual.norm_squared())
}

/// Diagnostics from [`membership_check`].
#[derive(Debug, Clone)]
pub struct MembershipReport {
    /// Result of the overall test.
    pub member: bool,
    /// max eigenvalue of `A^T A - alpha^2 I` (condition (a), needs <= tol).
    pub spectral_excess: f64,
    /// `|B^T B - I|_inf` (condition (b), needs <= tol).
    pub input_map_error: f64,
    /// max eigenvalue of the Schur complement minus `I` (condition (c),
    /// needs <= tol).
    pub riccati_excess: f64,
}

/// Tests membership of a hypothesis in the model class: spectral bound
/// `A^T A <= alpha^2 I`, orthogonal input map `B^T B = I`, and the
/// closed-form Riccati-type condition. With
/// `Q := M + [A B]^T [A B] / (1 - gamma_alpha^-2)` the latter requires
/// `Q_uu > 0` and `Q_xx - Q_xu Q_uu^-1 Q_ux <= I`.
pub fn membership_check(h: &Hypothesis, spec: &ModelClassSpec, tol: f64) -> Result<MembershipReport> {
    let ga = spec.gamma_alpha();
    if !(ga > 1.0) {
        return Err(Error::DegenerateGain(format!(
            "gamma_alpha = {ga}; the inner maximum over the next state diverges"
        )));
    }
    let (n, m) = (h.state_dim(), h.input_dim());

    let ata = h.a().transpose() * h.a();
    let spectral_excess = mat::sym_eigenvalues(&(ata - DMatrix::<f64>::identity(n, n) * spec.alpha() * spec.alpha()))
        .last()
        .copied()
        .unwrap();

    let btb = h.b().transpose() * h.b();
    let input_map_error = mat::max_abs_diff(&btb, &DMatrix::identity(m, m));

    // Q = M + [A B]^T [A B] / (1 - gamma^-2)
    let mut ab = DMatrix::zeros(n, n + m);
    ab.view_mut((0, 0), (n, n)).copy_from(h.a());
    ab.view_mut((0, n), (n, m)).copy_from(h.b());
    let q = h.m() + ab.transpose() * &ab / (1.0 - ga.powi(-2));
    let q_xx = q.view((0, 0), (n, n)).into_owned();
    let q_xu = q.view((0, n), (n, m)).into_owned();
    let q_uu = q.view((n, n), (m, m)).into_owned();

    let eig = mat::symmetrize(&q_uu).symmetric_eigen();
    let min_idx = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if eig.eigenvalues[min_idx] <= tol {
        let witness: Vec<f64> = eig.eigenvectors.column(min_idx).iter().copied().collect();
        return Err(Error::Indefiniteness {
            message: format!("Q_uu is not positive definite (min eigenvalue {})", eig.eigenvalues[min_idx]),
            witness,
        });
    }

    let q_uu_inv = q_uu.clone().try_inverse().ok_or_else(|| Error::Indefiniteness {
        message: "Q_uu is numerically singular".into(),
        witness: vec![0.0; m],
    })?;
    let schur = &q_xx - &q_xu * q_uu_inv * q_xu.transpose();
    let riccati_excess = mat::sym_eigenvalues(&(schur - DMatrix::<f64>::identity(n, n)))
        .last()
        .copied()
        .unwrap();

    let member = spectral_excess <= tol && input_map_error <= tol && riccati_excess <= tol;
    Ok(MembershipReport { member, spectral_excess, input_map_error, riccati_excess })
}
