//! The one-step game machinery: exact inner minimization over randomized
//! decisions via their first two moments, adversary maximization over the
//! next state, and the Bellman residual.
//!
//! A randomized decision is described by its mean `mu` and second moment `W`
//! with `W >= mu mu^T`. The one-step objective
//!
//! ```text
//! g(mu, W) = max_k [ trace(S_k^T Z) + x^T Qxx_k x + 2 x^T Qxu_k mu + <Quu_k, W> ]
//! ```
//!
//! is a pointwise maximum of affine functions of `(mu, W)` over a convex
//! feasible set, so the inner minimization is a convex program. The scalar
//! path solves it by exact piecewise-linear minimization in `W` nested in a
//! golden-section search over `mu`; the general path uses a projected
//! subgradient method.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mat;
use crate::valuefn::{evaluate, DataMoment, ValueCone};

/// First two moments of a randomized decision.
#[derive(Debug, Clone)]
pub struct PolicyMoments {
    pub mu: DVector<f64>,
    pub w: DMatrix<f64>,
}

/// Search configuration for the adversary maximization over the next state.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Box center; defaults to the origin.
    pub center: Option<DVector<f64>>,
    /// Per-coordinate half-width. `None` selects `4 (1 + |x| + |u|)`.
    pub radius: Option<f64>,
    /// Grid step.
    pub step: f64,
    /// Number of local-ascent restarts from the best grid points.
    pub restarts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { center: None, radius: None, step: 1e-2, restarts: 5 }
    }
}

/// Adversary maximizer and the attained inner value.
#[derive(Debug, Clone)]
pub struct AdversaryResponse {
    pub zeta: DVector<f64>,
    pub value: f64,
}

/// The point attaining the worst Bellman residual during certification.
#[derive(Debug, Clone)]
pub struct WorstPoint {
    pub z: DMatrix<f64>,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub zeta: DVector<f64>,
}

/// Aggregate of Bellman-residual checks over a sample set.
#[derive(Debug, Clone)]
pub struct BellmanReport {
    pub max_residual: f64,
    pub min_residual: f64,
    pub worst_point: Option<WorstPoint>,
    pub samples_checked: usize,
    /// True iff `max_residual <= tol` and the containment check passed.
    pub certified: bool,
    /// Set when the report was produced from zero samples.
    pub vacuous: bool,
}

// ---------------------------------------------------------------------------
// Piecewise-affine moment program
// ---------------------------------------------------------------------------

/// One affine piece per cone vertex: value = c + b^T mu + <G, W>.
pub(crate) struct Pieces {
    pub c: Vec<f64>,
    pub b: Vec<DVector<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub m: usize,
}

fn golden_min(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    let mut iters = 0;
    while hi - lo > tol && iters < 200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INVPHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INVPHI * (hi - lo);
            fb = f(b);
        }
        iters += 1;
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Minimizes `max_k (c2[k] + g[k] * w)` over `w >= lo`.
/// Exact via envelope breakpoints for small piece counts.
fn inner_min_w(c2: &[f64], g: &[f64], lo: f64) -> (f64, f64) {
    let envelope = |w: f64| {
        c2.iter().zip(g).map(|(c, s)| c + s * w).fold(f64::NEG_INFINITY, f64::max)
    };
    let k = c2.len();
    if k <= 32 {
        // The minimizer of a piecewise-linear convex envelope sits either at
        // the boundary or at a crossing of two pieces. Ties go to smaller w.
        let mut cands = vec![lo];
        for i in 0..k {
            for j in (i + 1)..k {
                let ds = g[i] - g[j];
                if ds.abs() > 1e-14 {
                    let w = (c2[j] - c2[i]) / ds;
                    if w > lo {
                        cands.push(w);
                    }
                }
            }
        }
        let mut best_w = lo;
        let mut best_v = f64::INFINITY;
        for &w in &cands {
            let v = envelope(w);
            if v < best_v - 1e-12 || (v < best_v + 1e-12 && w < best_w) {
                best_v = best_v.min(v);
                best_w = w;
            }
        }
        (best_w, best_v)
    } else {
        // Bracket the minimum of the convex envelope, then golden section.
        let mut hi = lo + 1.0;
        let mut prev = envelope(hi);
        loop {
            let nhi = lo + (hi - lo) * 2.0;
            let v = envelope(nhi);
            if v >= prev || nhi - lo > 1e12 {
                hi = nhi;
                break;
            }
            prev = v;
            hi = nhi;
        }
        golden_min(lo, hi, 1e-10 * (1.0 + hi.abs()), envelope)
    }
}

/// Scalar-decision moment program: minimizes
/// `max_k (c[k] + b[k] mu + g[k] w)` over `w >= mu^2`.
/// Returns `(mu, w, value)`.
fn solve_scalar(c: &[f64], b: &[f64], g: &[f64]) -> Result<(f64, f64, f64)> {
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if gmax < -1e-12 {
        return Err(Error::Unbounded { direction: vec![1.0] });
    }
    let mut phi = |mu: f64| inner_min_w(&c.iter().zip(b).map(|(ci, bi)| ci + bi * mu).collect::<Vec<_>>(), g, mu * mu).1;

    // Expand the bracket until the convex outer function turns upward on
    // both sides.
    let mut r = 4.0;
    loop {
        let grow_left = phi(-r) < phi(-r * 0.5);
        let grow_right = phi(r) < phi(r * 0.5);
        if (!grow_left && !grow_right) || r > 1e9 {
            break;
        }
        r *= 4.0;
    }
    let (mut mu, _) = golden_min(-r, r, 1e-9 * (1.0 + r), &mut phi);
    // Canonical tie-break: prefer mu = 0 when it is as good.
    if phi(0.0) <= phi(mu) + 1e-12 {
        mu = 0.0;
    }
    let c2: Vec<f64> = c.iter().zip(b).map(|(ci, bi)| ci + bi * mu).collect();
    let (w, val) = inner_min_w(&c2, g, mu * mu);
    Ok((mu, w, val))
}

/// General moment program via projected subgradient descent.
fn solve_general(p: &Pieces) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let m = p.m;
    // Unboundedness certificate: a direction with negative curvature in
    // every piece lets W run off to -infinity in value.
    let mut candidates: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect();
    for gk in &p.g {
        let eig = mat::symmetrize(gk).symmetric_eigen();
        for j in 0..m {
            let col = eig.eigenvectors.column(j).into_owned();
            candidates.push(col);
        }
    }
    for d in &candidates {
        let worst = p.g.iter().map(|gk| mat::quad_form(gk, d)).fold(f64::NEG_INFINITY, f64::max);
        if worst < -1e-10 {
            return Err(Error::Unbounded { direction: d.iter().copied().collect() });
        }
    }

    let eval = |mu: &DVector<f64>, w: &DMatrix<f64>| -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for k in 0..p.c.len() {
            let v = p.c[k] + p.b[k].dot(mu) + mat::frob_inner(&p.g[k], w);
            if v > best {
                best = v;
                arg = k;
            }
        }
        (best, arg)
    };
    let project = |mu: &DVector<f64>, w: &DMatrix<f64>| -> DMatrix<f64> {
        let sigma = mat::symmetrize(&(w - mat::outer(mu)));
        let eig = sigma.symmetric_eigen();
        let mut clipped = DMatrix::zeros(p.m, p.m);
        for j in 0..p.m {
            let lam = eig.eigenvalues[j].max(0.0);
            let v = eig.eigenvectors.column(j);
            clipped += lam * v * v.transpose();
        }
        mat::outer(mu) + clipped
    };

    let scale = 1.0 + p.b.iter().map(|b| b.norm()).fold(0.0f64, f64::max);
    let mut mu = DVector::zeros(m);
    let mut w = DMatrix::zeros(m, m);
    let (mut best_val, _) = eval(&mu, &w);
    let mut best = (mu.clone(), w.clone());
    let iters = 4000 * m.max(1);
    for k in 0..iters {
        let (_, arg) = eval(&mu, &w);
        let step = scale / ((k + 1) as f64).sqrt();
        mu -= &p.b[arg] * step;
        w -= &p.g[arg] * step;
        w = project(&mu, &w);
        let (v, _) = eval(&mu, &w);
        if v < best_val {
            best_val = v;
            best = (mu.clone(), w.clone());
        }
    }
    Ok((best.0, best.1, best_val))
}

pub(crate) fn solve_moments(p: &Pieces) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    if p.m == 1 {
        let b: Vec<f64> = p.b.iter().map(|v| v[0]).collect();
        let g: Vec<f64> = p.g.iter().map(|gk| gk[(0, 0)]).collect();
        let (mu, w, val) = solve_scalar(&p.c, &b, &g)?;
        Ok((DVector::from_element(1, mu), DMatrix::from_element(1, 1, w), val))
    } else {
        solve_general(p)
    }
}

pub(crate) fn pieces_at_state(cone: &ValueCone, z_inner: &[f64], x: &DVector<f64>) -> Pieces {
    let (n, m) = (cone.state_dim(), cone.input_dim());
    let mut c = Vec::with_capacity(cone.vertices().len());
    let mut b = Vec::with_capacity(cone.vertices().len());
    let mut g = Vec::with_capacity(cone.vertices().len());
    for (k, v) in cone.vertices().iter().enumerate() {
        let q = v.q();
        let qxx = q.view((0, 0), (n, n));
        let qux = q.view((n, 0), (m, n));
        let quu = q.view((n, n), (m, m)).into_owned();
        c.push(z_inner[k] + (x.transpose() * qxx * x)[(0, 0)]);
        b.push(qux * x * 2.0);
        g.push(quu);
    }
    Pieces { c, b, g, m }
}

pub(crate) fn z_inner_products(cone: &ValueCone, z: &DMatrix<f64>) -> Vec<f64> {
    cone.vertices().iter().map(|v| mat::frob_inner(v.s(), z)).collect()
}

/// Minimizes the vertex-max objective over randomized decisions described by
/// their first two moments. Returns the minimizer and the attained value.
pub fn policy_moments(cone: &ValueCone, z: &DataMoment, x: &DVector<f64>) -> Result<(PolicyMoments, f64)> {
    if x.len() != cone.state_dim() || z.state_dim() != cone.state_dim() || z.input_dim() != cone.input_dim() {
        return Err(Error::Shape("policy_moments: dimensions do not match the cone".into()));
    }
    let zi = z_inner_products(cone, z.matrix());
    let p = pieces_at_state(cone, &zi, x);
    let (mu, w, val) = solve_moments(&p)?;
    Ok((PolicyMoments { mu, w }, val))
}

/// Draws a decision with exact mean `mu` and second moment `W`: factor
/// `Sigma = W - mu mu^T` into eigenpairs, pick one uniformly, and return
/// `mu +- sqrt(rank * lambda) e` with equal probability. Rank-one covariance
/// gives the symmetric two-point dither `mu +- d`.
pub fn realize_decision<R: Rng + ?Sized>(p: &PolicyMoments, rng: &mut R) -> Result<DVector<f64>> {
    let m = p.mu.len();
    if p.w.nrows() != m || p.w.ncols() != m {
        return Err(Error::Shape("W must be m x m".into()));
    }
    let sigma = mat::symmetrize(&(&p.w - mat::outer(&p.mu)));
    let scale = 1.0 + sigma.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let eig = sigma.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-8 * scale) {
        return Err(Error::Realizability(format!(
            "W - mu mu^T has eigenvalue {} < 0",
            eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let dirs: Vec<(f64, DVector<f64>)> = (0..m)
        .filter(|&j| eig.eigenvalues[j] > 1e-12 * scale)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).into_owned()))
        .collect();
    if dirs.is_empty() {
        return Ok(p.mu.clone());
    }
    let r = dirs.len();
    let k = rng.gen_range(0..r);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (lam, e) = &dirs[k];
    Ok(&p.mu + e * (sign * (r as f64 * lam).sqrt()))
}

// ---------------------------------------------------------------------------
// Adversary search
// ---------------------------------------------------------------------------

/// Precomputed coefficients for the one-step objective as a function of the
/// adversary's next state zeta:
/// piece value = a0 + a1 . zeta + zeta^T A2 zeta  (constant part),
/// with affine decision terms b(zeta) = 2 Qxu^T zeta and G = Quu.
struct ZetaObjective {
    a0: Vec<f64>,
    a1: Vec<DVector<f64>>,
    a2: Vec<DMatrix<f64>>,
    bmap: Vec<DMatrix<f64>>, // m x n: b(zeta) = 2 * bmap * zeta
    g: Vec<DMatrix<f64>>,
    n: usize,
    m: usize,
}

impl ZetaObjective {
    fn new(cone: &ValueCone, z: &DataMoment, x: &DVector<f64>, u: &DVector<f64>) -> Self {
        let (n, m) = (cone.state_dim(), cone.input_dim());
        let p = n + m;
        let xu = mat::concat(&[x, u]);
        let mut a0 = Vec::new();
        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        let mut bmap = Vec::new();
        let mut g = Vec::new();
        for v in cone.vertices() {
            let s = v.s();
            let q = v.q();
            let s_tl = s.view((0, 0), (p, p));
            let s_tr = s.view((0, p), (p, n)).into_owned();
            let s_br = s.view((p, p), (n, n)).into_owned();
            let qxx = q.view((0, 0), (n, n)).into_owned();
            let qux = q.view((n, 0), (m, n)).into_owned();
            let quu = q.view((n, n), (m, m)).into_owned();
            a0.push(mat::frob_inner(s, z.matrix()) + (xu.transpose() * s_tl * &xu)[(0, 0)]);
            a1.push(s_tr.transpose() * &xu * 2.0);
            a2.push(mat::symmetrize(&(s_br + qxx)));
            bmap.push(qux);
            g.push(quu);
        }
        Self { a0, a1, a2, bmap, g, n, m }
    }

    /// Inner moment-program value at a fixed zeta (`-inf` when unbounded).
    fn value(&self, zeta: &DVector<f64>) -> Result<f64> {
        let k = self.a0.len();
        if self.m == 1 {
            let mut c = Vec::with_capacity(k);
            let mut b = Vec::with_capacity(k);
            let mut g = Vec::with_capacity(k);
            for i in 0..k {
                c.push(self.a0[i] + self.a1[i].dot(zeta) + mat::quad_form(&self.a2[i], zeta));
                b.push(2.0 * (&self.bmap[i] * zeta)[0]);
                g.push(self.g[i][(0, 0)]);
            }
            match solve_scalar(&c, &b, &g) {
                Ok((_, _, v)) => Ok(v),
                Err(Error::Unbounded { .. }) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e),
            }
        } else {
            let mut c = Vec::with_capacity(k);
            let mut b = Vec::with_capacity(k);
            for i in 0..k {
                c.push(self.a0[i] + self.a1[i].dot(zeta) + mat::quad_form(&self.a2[i], zeta));
                b.push(&self.bmap[i] * zeta * 2.0);
            }
            let p = Pieces { c, b, g: self.g.clone(), m: self.m };
            match solve_moments(&p) {
                Ok((_, _, v)) => Ok(v),
                Err(Error::Unbounded { .. }) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e),
            }
        }
    }

    /// Coordinate-ascent refinement around a starting point.
    fn refine(&self, start: &DVector<f64>, delta0: f64) -> Result<(DVector<f64>, f64)> {
        let mut zeta = start.clone();
        let mut best = self.value(&zeta)?;
        let sweeps = if self.n == 1 { 2 } else { 4 };
        let mut delta = delta0;
        for _ in 0..sweeps {
            for i in 0..self.n {
                let zi = zeta[i];
                let obj = |t: f64| -> f64 {
                    let mut zz = zeta.clone();
                    zz[i] = t;
                    self.value(&zz).unwrap_or(f64::NEG_INFINITY)
                };
                let (t, neg) = golden_min(zi - delta, zi + delta, 1e-11 * (1.0 + zi.abs()), |t| -obj(t));
                if -neg > best {
                    best = -neg;
                    zeta[i] = t;
                }
            }
            delta *= 0.5;
        }
        Ok((zeta, best))
    }
}

fn default_radius(x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    4.0 * (1.0 + x.norm() + u.norm())
}

/// Approximately maximizes the one-step inner value over the adversary's
/// next state via a grid seeded multi-start coordinate ascent. The result is
/// never below the grid maximum.
pub fn adversary_best_response(
    cone: &ValueCone,
    z: &DataMoment,
    x: &DVector<f64>,
    u: &DVector<f64>,
    search: &SearchConfig,
) -> Result<AdversaryResponse> {
    let n = cone.state_dim();
    if x.len() != n || u.len() != cone.input_dim() {
        return Err(Error::Shape("adversary_best_response: dimension mismatch".into()));
    }
    let radius = search.radius.unwrap_or_else(|| default_radius(x, u));
    if radius < 0.0 || !radius.is_finite() {
        return Err(Error::Config(format!("search radius must be finite and >= 0, got {radius}")));
    }
    let center = match &search.center {
        Some(c) => {
            if c.len() != n {
                return Err(Error::Config("search center has wrong dimension".into()));
            }
            c.clone()
        }
        None => DVector::zeros(n),
    };
    let obj = ZetaObjective::new(cone, z, x, u);
    if radius == 0.0 {
        let v = obj.value(&center)?;
        return Ok(AdversaryResponse { zeta: center, value: v });
    }
    if !(search.step > 0.0) {
        return Err(Error::Config(format!("grid step must be positive, got {}", search.step)));
    }

    // Per-axis grid, capped so multi-dimensional boxes stay tractable.
    let want = (2.0 * radius / search.step).ceil() as usize + 1;
    let cap = match n {
        1 => 400_001,
        2 => 201,
        _ => 9,
    };
    let pts_per_axis = want.min(cap).max(2);
    let axis: Vec<f64> = (0..pts_per_axis)
        .map(|i| -radius + 2.0 * radius * (i as f64) / ((pts_per_axis - 1) as f64))
        .collect();
    let eff_step = 2.0 * radius / ((pts_per_axis - 1) as f64);

    // Evaluate the grid (cartesian product across axes).
    let total = axis.len().pow(n as u32);
    let mut values: Vec<f64> = Vec::with_capacity(total);
    let mut zeta_buf = DVector::zeros(n);
    for flat in 0..total {
        let mut rem = flat;
        for d in 0..n {
            zeta_buf[d] = center[d] + axis[rem % axis.len()];
            rem /= axis.len();
        }
        values.push(obj.value(&zeta_buf)?);
    }

    // Candidate starts: local maxima for the 1-D case, top values otherwise.
    let mut cand: Vec<usize> = if n == 1 {
        (0..total)
            .filter(|&i| {
                (i == 0 || values[i] >= values[i - 1]) && (i + 1 == total || values[i] >= values[i + 1])
            })
            .collect()
    } else {
        (0..total).collect()
    };
    cand.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    cand.truncate(search.restarts.max(1));

    let grid_best = cand.first().map(|&i| values[i]).unwrap_or(f64::NEG_INFINITY);
    let mut best_val = grid_best;
    let mut best_zeta = {
        let mut zz = DVector::zeros(n);
        if let Some(&i0) = cand.first() {
            let mut rem = i0;
            for d in 0..n {
                zz[d] = center[d] + axis[rem % axis.len()];
                rem /= axis.len();
            }
        }
        zz
    };
    for &i in &cand {
        let mut start = DVector::zeros(n);
        let mut rem = i;
        for d in 0..n {
            start[d] = center[d] + axis[rem % axis.len()];
            rem /= axis.len();
        }
        let (zz, v) = obj.refine(&start, eff_step)?;
        if v > best_val {
            best_val = v;
            best_zeta = zz;
        }
    }
    Ok(AdversaryResponse { zeta: best_zeta, value: best_val })
}

/// `RHS - LHS` of the one-step identity at a point. Nonpositive residual
/// certifies the descent inequality; a positive residual beyond tolerance
/// witnesses Bellman failure.
pub fn bellman_residual(
    cone: &ValueCone,
    z: &DataMoment,
    x: &DVector<f64>,
    u: &DVector<f64>,
    search: &SearchConfig,
) -> Result<f64> {
    Ok(bellman_residual_detailed(cone, z, x, u, search)?.0)
}

/// Residual plus the adversary response attaining it.
pub fn bellman_residual_detailed(
    cone: &ValueCone,
    z: &DataMoment,
    x: &DVector<f64>,
    u: &DVector<f64>,
    search: &SearchConfig,
) -> Result<(f64, AdversaryResponse)> {
    let rhs = adversary_best_response(cone, z, x, u, search)?;
    let lhs = evaluate(cone, z, x, u)?;
    Ok((rhs.value - lhs, rhs))
}

/// Best deterministic decision (W = u u^T) by grid search plus local
/// refinement; scalar inputs only. Used as the no-dither ablation baseline.
pub fn deterministic_decision_value(
    cone: &ValueCone,
    z: &DataMoment,
    x: &DVector<f64>,
    radius: f64,
    step: f64,
) -> Result<(f64, f64)> {
    if cone.input_dim() != 1 {
        return Err(Error::Unsupported("deterministic grid baseline requires m = 1".into()));
    }
    let zi = z_inner_products(cone, z.matrix());
    let p = pieces_at_state(cone, &zi, x);
    let c: Vec<f64> = p.c.clone();
    let b: Vec<f64> = p.b.iter().map(|v| v[0]).collect();
    let g: Vec<f64> = p.g.iter().map(|m| m[(0, 0)]).collect();
    let f = |u: f64| -> f64 {
        (0..c.len()).map(|k| c[k] + b[k] * u + g[k] * u * u).fold(f64::NEG_INFINITY, f64::max)
    };
    let npts = ((2.0 * radius / step).ceil() as usize + 1).max(2);
    let mut best_u = -radius;
    let mut best_v = f(best_u);
    for i in 0..npts {
        let u = -radius + 2.0 * radius * (i as f64) / ((npts - 1) as f64);
        let v = f(u);
        if v < best_v {
            best_v = v;
            best_u = u;
        }
    }
    let (u, v) = golden_min(best_u - step, best_u + step, 1e-11, f);
    if v < best_v {
        best_u = u;
        best_v = v;
    }
    Ok((best_u, best_v))
}

/// Minimizes over decision moments the maximum over a fixed zeta grid of the
/// one-step objective. Test hook for the minimax exchange inequality.
pub fn moment_min_over_zeta_grid(
    cone: &ValueCone,
    z: &DataMoment,
    x: &DVector<f64>,
    u: &DVector<f64>,
    zeta_grid: &[DVector<f64>],
) -> Result<f64> {
    let obj = ZetaObjective::new(cone, z, x, u);
    let k = obj.a0.len();
    let mut c = Vec::new();
    let mut b = Vec::new();
    let mut g = Vec::new();
    for zeta in zeta_grid {
        for i in 0..k {
            c.push(obj.a0[i] + obj.a1[i].dot(zeta) + mat::quad_form(&obj.a2[i], zeta));
            b.push(&obj.bmap[i] * zeta * 2.0);
            g.push(obj.g[i].clone());
        }
    }
    let p = Pieces { c, b, g, m: obj.m };
    Ok(solve_moments(&p)?.2)
}
