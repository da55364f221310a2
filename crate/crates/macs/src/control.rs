//! The online adaptive controller: keeps the running data moment, computes
//! the randomized minimax decision each step, and enforces the strict
//! decide/observe alternation.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::games::{policy_moments, realize_decision, PolicyMoments};
use crate::valuefn::{update_z, DataMoment, ValueCone};

/// Whether decisions are realized from the optimal two-point law or
/// collapsed to the mean. The deterministic mode exists for ablation only:
/// the minimax guarantee is proved for the randomized law, and reports must
/// label deterministic outputs as non-certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    Deterministic,
    Randomized,
}

/// One controller instance. Single-owner and sequential: `decide` and
/// `observe` must strictly alternate, starting with `decide`.
#[derive(Debug, Clone)]
pub struct Controller {
    cone: ValueCone,
    z: DataMoment,
    mode: DecisionMode,
    rng: ChaCha8Rng,
    pending: Option<(DVector<f64>, DVector<f64>)>,
}

impl Controller {
    pub fn new(cone: ValueCone, mode: DecisionMode, seed: u64) -> Self {
        let z = DataMoment::zeros(cone.state_dim(), cone.input_dim());
        Self { cone, z, mode, rng: ChaCha8Rng::seed_from_u64(seed), pending: None }
    }

    pub fn cone(&self) -> &ValueCone {
        &self.cone
    }

    /// The accumulated data moment: the sum of outer products of all
    /// completed `(x, u, x_next)` triples since construction.
    pub fn z(&self) -> &DataMoment {
        &self.z
    }

    pub fn mode(&self) -> DecisionMode {
        self.mode
    }

    pub fn pending(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.pending.as_ref()
    }

    /// The optimal decision moments at the current data and a given state,
    /// without advancing the protocol. Exposed for expectation estimates.
    pub fn moments_at(&self, x: &DVector<f64>) -> Result<(PolicyMoments, f64)> {
        policy_moments(&self.cone, &self.z, x)
    }

    /// Computes the minimax decision at `x` and records it as pending until
    /// the next state is observed.
    pub fn decide(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "decide called twice without an intervening observe".into(),
            ));
        }
        let (p, _) = policy_moments(&self.cone, &self.z, x)?;
        let u = match self.mode {
            DecisionMode::Randomized => realize_decision(&p, &mut self.rng)?,
            DecisionMode::Deterministic => p.mu.clone(),
        };
        self.pending = Some((x.clone(), u.clone()));
        Ok(u)
    }

    /// Folds the observed next state into the data moment and clears the
    /// pending decision.
    pub fn observe(&mut self, x_next: &DVector<f64>) -> Result<()> {
        let (x, u) = self.pending.take().ok_or_else(|| {
            Error::Protocol("observe called without a pending decision".into())
        })?;
        self.z = update_z(&self.z, &x, &u, x_next)?;
        Ok(())
    }
}
