//! Closed-loop rollouts against disturbance adversaries and empirical gain
//! estimation for the worst-case performance ratio.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::control::{Controller, DecisionMode};
use crate::error::{Error, Result};
use crate::mat;
use crate::model::ScenarioSet;
use crate::valuefn::ValueCone;

/// How the adversary picks `w_t`. Every strategy respects `|w_t| <= cap`.
#[derive(Debug, Clone)]
pub enum DisturbanceStrategy {
    Zero,
    /// Constant disturbance at a fixed level: the near-resonant worst case
    /// for stable linear closed loops.
    Constant { level: f64 },
    /// Gaussian `w_t`, clipped to the cap, from a dedicated seed (independent
    /// of the controller's randomization).
    IidSeeded { seed: u64, cap: f64 },
    /// `w_t = (A' - A*) x_t + (B' - B*) u_t` toward a decoy hypothesis,
    /// capped: the closed-loop data stays consistent with the decoy until
    /// the cap binds.
    ModelConfusion { decoy: usize, cap: f64 },
    /// Coordinate ascent on the whole `w` sequence maximizing the truth's
    /// cumulative payoff `sum cost - gamma^2 sum |w|^2` by repeated
    /// re-simulation against the same controller seed.
    AdversarialAscent { passes: usize, cap: f64, seed: u64 },
}

impl DisturbanceStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Constant { .. } => "constant",
            Self::IidSeeded { .. } => "iid_seeded",
            Self::ModelConfusion { .. } => "model_confusion",
            Self::AdversarialAscent { .. } => "adversarial_ascent",
        }
    }

    pub fn cap(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { level } => level.abs(),
            Self::IidSeeded { cap, .. }
            | Self::ModelConfusion { cap, .. }
            | Self::AdversarialAscent { cap, .. } => *cap,
        }
    }
}

/// One closed-loop run: states `x_0..x_T`, decisions and disturbances
/// `0..T-1`, and the per-hypothesis stage costs `|(x_t,u_t)|^2_{M_i}`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub ws: Vec<DVector<f64>>,
    /// `stage_costs[t][i]` for hypothesis `i` at step `t`.
    pub stage_costs: Vec<Vec<f64>>,
    pub seed: u64,
    pub truth: usize,
    pub strategy: String,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.us.len()
    }

    /// Cumulative cost of hypothesis `i` over the prefix `t < tp`.
    pub fn cum_cost(&self, i: usize, tp: usize) -> f64 {
        self.stage_costs[..tp].iter().map(|s| s[i]).sum()
    }

    /// Cumulative disturbance energy over the prefix `t < tp`.
    pub fn cum_wnorm(&self, tp: usize) -> f64 {
        self.ws[..tp].iter().map(|w| w.norm_squared()).sum()
    }
}

fn cap_vec(w: DVector<f64>, cap: f64) -> DVector<f64> {
    let n = w.norm();
    if n > cap {
        if cap == 0.0 {
            return DVector::zeros(w.len());
        }
        w * (cap / n)
    } else {
        w
    }
}

/// Simulates `T` steps of decide/observe against a fixed disturbance
/// sequence. Returns the trace; the controller seed fixes its randomization.
fn rollout_fixed_w(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    truth: usize,
    ws: &[DVector<f64>],
    mode: DecisionMode,
    seed: u64,
    x0: &DVector<f64>,
    strategy: &str,
) -> Result<Trace> {
    let h = &scenarios.hypotheses()[truth];
    let mut ctrl = Controller::new(cone.clone(), mode, seed);
    let mut xs = vec![x0.clone()];
    let mut us = Vec::with_capacity(ws.len());
    let mut stage_costs = Vec::with_capacity(ws.len());
    let mut x = x0.clone();
    for w in ws {
        let u = ctrl.decide(&x)?;
        let xn = h.a() * &x + h.b() * &u + w;
        ctrl.observe(&xn)?;
        let xu = mat::concat(&[&x, &u]);
        stage_costs.push(
            scenarios.hypotheses().iter().map(|hi| mat::quad_form(hi.m(), &xu)).collect(),
        );
        us.push(u);
        xs.push(xn.clone());
        x = xn;
    }
    Ok(Trace {
        xs,
        us,
        ws: ws.to_vec(),
        stage_costs,
        seed,
        truth,
        strategy: strategy.to_string(),
    })
}

/// Simulates `T` steps against the chosen disturbance strategy.
pub fn rollout(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    truth: usize,
    strategy: &DisturbanceStrategy,
    mode: DecisionMode,
    horizon: usize,
    seed: u64,
) -> Result<Trace> {
    rollout_from(scenarios, cone, truth, strategy, mode, horizon, seed, None)
}

/// As [`rollout`], with an explicit nonzero initial state. The gain
/// guarantee is stated from `x0 = 0`; overriding it voids the bound.
#[allow(clippy::too_many_arguments)]
pub fn rollout_from(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    truth: usize,
    strategy: &DisturbanceStrategy,
    mode: DecisionMode,
    horizon: usize,
    seed: u64,
    x0: Option<DVector<f64>>,
) -> Result<Trace> {
    let n = scenarios.state_dim();
    if truth >= scenarios.hypotheses().len() {
        return Err(Error::Config(format!(
            "truth index {truth} out of range for {} hypotheses",
            scenarios.hypotheses().len()
        )));
    }
    let x0 = x0.unwrap_or_else(|| DVector::zeros(n));
    if x0.len() != n {
        return Err(Error::Shape("x0 dimension does not match the scenario set".into()));
    }
    let name = strategy.name();
    match strategy {
        DisturbanceStrategy::Zero => {
            let ws = vec![DVector::zeros(n); horizon];
            rollout_fixed_w(scenarios, cone, truth, &ws, mode, seed, &x0, name)
        }
        DisturbanceStrategy::Constant { level } => {
            let ws = vec![DVector::from_element(n, level / (n as f64).sqrt()); horizon];
            rollout_fixed_w(scenarios, cone, truth, &ws, mode, seed, &x0, name)
        }
        DisturbanceStrategy::IidSeeded { seed: wseed, cap } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*wseed);
            let ws: Vec<DVector<f64>> = (0..horizon)
                .map(|_| {
                    let w = DVector::from_iterator(
                        n,
                        (0..n).map(|_| 0.6 * rng.sample::<f64, _>(StandardNormal)),
                    );
                    cap_vec(w, *cap)
                })
                .collect();
            rollout_fixed_w(scenarios, cone, truth, &ws, mode, seed, &x0, name)
        }
        DisturbanceStrategy::ModelConfusion { decoy, cap } => {
            if *decoy >= scenarios.hypotheses().len() {
                return Err(Error::Config(format!("decoy index {decoy} out of range")));
            }
            // The disturbance reacts to (x_t, u_t), so the loop is explicit.
            let h = &scenarios.hypotheses()[truth];
            let d = &scenarios.hypotheses()[*decoy];
            let mut ctrl = Controller::new(cone.clone(), mode, seed);
            let mut xs = vec![x0.clone()];
            let mut us = Vec::new();
            let mut ws = Vec::new();
            let mut stage_costs = Vec::new();
            let mut x = x0.clone();
            for _ in 0..horizon {
                let u = ctrl.decide(&x)?;
                let w = cap_vec((d.a() - h.a()) * &x + (d.b() - h.b()) * &u, *cap);
                let xn = h.a() * &x + h.b() * &u + &w;
                ctrl.observe(&xn)?;
                let xu = mat::concat(&[&x, &u]);
                stage_costs.push(
                    scenarios
                        .hypotheses()
                        .iter()
                        .map(|hi| mat::quad_form(hi.m(), &xu))
                        .collect(),
                );
                us.push(u);
                ws.push(w);
                xs.push(xn.clone());
                x = xn;
            }
            Ok(Trace {
                xs,
                us,
                ws,
                stage_costs,
                seed,
                truth,
                strategy: name.to_string(),
            })
        }
        DisturbanceStrategy::AdversarialAscent { passes, cap, seed: wseed } => {
            let gamma2 = scenarios.gamma() * scenarios.gamma();
            let objective = |ws: &[DVector<f64>]| -> Result<f64> {
                let tr = rollout_fixed_w(scenarios, cone, truth, ws, mode, seed, &x0, name)?;
                let t = tr.horizon();
                Ok(tr.cum_cost(truth, t) - gamma2 * tr.cum_wnorm(t))
            };
            let mut rng = ChaCha8Rng::seed_from_u64(*wseed);
            let mut ws: Vec<DVector<f64>> = (0..horizon)
                .map(|_| {
                    let w = DVector::from_iterator(
                        n,
                        (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)),
                    );
                    cap_vec(w, *cap)
                })
                .collect();
            let mut best = objective(&ws)?;
            let mut delta = 0.5 * cap.max(0.1);
            for _ in 0..*passes {
                let mut improved = false;
                for t in 0..horizon {
                    for coord in 0..n {
                        for dir in [delta, -delta] {
                            let mut cand = ws.clone();
                            cand[t][coord] += dir;
                            cand[t] = cap_vec(cand[t].clone(), *cap);
                            let val = objective(&cand)?;
                            if val > best + 1e-12 {
                                best = val;
                                ws = cand;
                                improved = true;
                            }
                        }
                    }
                }
                if !improved {
                    delta *= 0.5;
                    if delta < 1e-3 {
                        break;
                    }
                }
            }
            rollout_fixed_w(scenarios, cone, truth, &ws, mode, seed, &x0, name)
        }
    }
}

/// The worst cost/disturbance ratio of hypothesis `i` over all traces and
/// prefixes, with the convention `0/0 = 0`. A prefix with zero disturbance
/// energy and positive cost yields `+inf` (a gain-bound violation).
pub fn empirical_gain(traces: &[Trace], i: usize) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Config("empirical_gain needs at least one trace".into()));
    }
    let mut worst: f64 = 0.0;
    for tr in traces {
        if i >= tr.stage_costs.first().map_or(usize::MAX, Vec::len) && tr.horizon() > 0 {
            return Err(Error::Config(format!("hypothesis index {i} out of range")));
        }
        let mut cost = 0.0;
        let mut wn = 0.0;
        for t in 0..tr.horizon() {
            cost += tr.stage_costs[t][i];
            wn += tr.ws[t].norm_squared();
            let ratio = if wn > 0.0 {
                cost / wn
            } else if cost > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
    }
    Ok(worst)
}

/// Worst prefix ratio of mean cost to mean disturbance energy over `reps`
/// controller seeds sharing one disturbance strategy: the empirical version
/// of the expected gain bound.
#[allow(clippy::too_many_arguments)]
pub fn expected_gain(
    scenarios: &ScenarioSet,
    cone: &ValueCone,
    truth: usize,
    strategy: &DisturbanceStrategy,
    mode: DecisionMode,
    horizon: usize,
    reps: u64,
    base_seed: u64,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::Config("expected_gain needs reps >= 1".into()));
    }
    // The adversary commits to its strategy before the controller draws its
    // randomization: the ascent sequence is frozen against the base seed and
    // replayed across the replicas, never re-tuned per realization.
    let traces: Vec<Trace> = match strategy {
        DisturbanceStrategy::AdversarialAscent { .. } => {
            let reference =
                rollout(scenarios, cone, truth, strategy, mode, horizon, base_seed)?;
            let x0 = DVector::zeros(scenarios.state_dim());
            (0..reps)
                .into_par_iter()
                .map(|r| {
                    rollout_fixed_w(
                        scenarios,
                        cone,
                        truth,
                        &reference.ws,
                        mode,
                        base_seed + r,
                        &x0,
                        strategy.name(),
                    )
                })
                .collect::<Result<_>>()?
        }
        _ => (0..reps)
            .into_par_iter()
            .map(|r| rollout(scenarios, cone, truth, strategy, mode, horizon, base_seed + r))
            .collect::<Result<_>>()?,
    };
    let mut worst: f64 = 0.0;
    let mut mean_cost = 0.0;
    let mut mean_wn = 0.0;
    for t in 0..horizon {
        mean_cost +=
            traces.iter().map(|tr| tr.stage_costs[t][truth]).sum::<f64>() / reps as f64;
        mean_wn += traces.iter().map(|tr| tr.ws[t].norm_squared()).sum::<f64>() / reps as f64;
        let ratio = if mean_wn > 1e-12 {
            mean_cost / mean_wn
        } else if mean_cost > 1e-9 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Rollout of the static feedback `u = -k x` (no adaptation, no learning)
/// against the same disturbance strategies.
pub fn static_rollout(
    scenarios: &ScenarioSet,
    truth: usize,
    k: f64,
    strategy: &DisturbanceStrategy,
    horizon: usize,
) -> Result<Trace> {
    if scenarios.state_dim() != 1 || scenarios.input_dim() != 1 {
        return Err(Error::Unsupported("static gain sweep requires n = m = 1".into()));
    }
    if truth >= scenarios.hypotheses().len() {
        return Err(Error::Config(format!("truth index {truth} out of range")));
    }
    let h = &scenarios.hypotheses()[truth];
    let (a, b) = (h.a()[(0, 0)], h.b()[(0, 0)]);
    let mut x = 0.0f64;
    let mut xs = vec![DVector::from_element(1, 0.0)];
    let mut us = Vec::new();
    let mut ws = Vec::new();
    let mut stage_costs = Vec::new();
    let mut rng = match strategy {
        DisturbanceStrategy::IidSeeded { seed, .. } => ChaCha8Rng::seed_from_u64(*seed),
        _ => ChaCha8Rng::seed_from_u64(0),
    };
    for _ in 0..horizon {
        let u = -k * x;
        let w = match strategy {
            DisturbanceStrategy::Zero => 0.0,
            DisturbanceStrategy::Constant { level } => *level,
            DisturbanceStrategy::IidSeeded { cap, .. } => {
                (0.6 * rng.sample::<f64, _>(StandardNormal)).clamp(-*cap, *cap)
            }
            DisturbanceStrategy::ModelConfusion { decoy, cap } => {
                let d = &scenarios.hypotheses()[*decoy];
                ((d.a()[(0, 0)] - a) * x + (d.b()[(0, 0)] - b) * u).clamp(-*cap, *cap)
            }
            DisturbanceStrategy::AdversarialAscent { .. } => {
                return Err(Error::Unsupported(
                    "ascent adversary is defined against the adaptive controller".into(),
                ))
            }
        };
        let xu = DVector::from_row_slice(&[x, u]);
        stage_costs.push(
            scenarios.hypotheses().iter().map(|hi| mat::quad_form(hi.m(), &xu)).collect(),
        );
        us.push(DVector::from_element(1, u));
        ws.push(DVector::from_element(1, w));
        x = a * x + b * u + w;
        xs.push(DVector::from_element(1, x));
    }
    Ok(Trace {
        xs,
        us,
        ws,
        stage_costs,
        seed: 0,
        truth,
        strategy: format!("static(k={k})"),
    })
}

/// For each candidate static gain `k`, the worst empirical gain over all
/// truths and the given disturbance suite. The minimum over `k` is the best
/// any non-adaptive linear law achieves on the suite.
pub fn gain_sweep(
    scenarios: &ScenarioSet,
    ks: &[f64],
    strategies: &[DisturbanceStrategy],
    horizon: usize,
) -> Result<Vec<(f64, f64)>> {
    ks.par_iter()
        .map(|&k| {
            let mut worst: f64 = 0.0;
            for truth in 0..scenarios.hypotheses().len() {
                for strat in strategies {
                    let tr = static_rollout(scenarios, truth, k, strat, horizon)?;
                    worst = worst.max(empirical_gain(std::slice::from_ref(&tr), truth)?);
                }
            }
            Ok((k, worst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_s, stage_payoff};
    use crate::synthesis::{demo_cone, demo_scenarios};
    use crate::valuefn::{update_z, DataMoment};

    #[test]
    fn zero_disturbance_stays_at_origin() {
        let scen = demo_scenarios();
        let tr = rollout(
            &scen,
            &demo_cone(),
            0,
            &DisturbanceStrategy::Zero,
            DecisionMode::Randomized,
            10,
            4,
        )
        .unwrap();
        for t in 0..tr.horizon() {
            assert_eq!(tr.xs[t][0], 0.0);
            assert_eq!(tr.us[t][0], 0.0);
            assert_eq!(tr.stage_costs[t][0], 0.0);
        }
        assert_eq!(empirical_gain(&[tr], 0).unwrap(), 0.0);
    }

    #[test]
    fn dynamics_invariant_holds_exactly() {
        let scen = demo_scenarios();
        let h = &scen.hypotheses()[1];
        let tr = rollout(
            &scen,
            &demo_cone(),
            1,
            &DisturbanceStrategy::IidSeeded { seed: 2, cap: 1.0 },
            DecisionMode::Randomized,
            40,
            7,
        )
        .unwrap();
        for t in 0..tr.horizon() {
            let pred = h.a() * &tr.xs[t] + h.b() * &tr.us[t] + &tr.ws[t];
            assert_eq!((pred - &tr.xs[t + 1]).abs().max(), 0.0);
            assert!(tr.ws[t].norm() <= 1.0 + 1e-12);
        }
        // cum_wnorm is nondecreasing.
        let mut prev = 0.0;
        for t in 0..=tr.horizon() {
            let c = tr.cum_wnorm(t.min(tr.horizon()));
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn data_moment_ties_to_stage_payoffs() {
        // <S_truth, Z_T> from the accumulated data equals the sum of stage
        // payoffs of the truth along the trace.
        let scen = demo_scenarios();
        let truth = 0;
        let h = &scen.hypotheses()[truth];
        let tr = rollout(
            &scen,
            &demo_cone(),
            truth,
            &DisturbanceStrategy::IidSeeded { seed: 5, cap: 1.0 },
            DecisionMode::Randomized,
            30,
            9,
        )
        .unwrap();
        let mut z = DataMoment::zeros(1, 1);
        let mut total = 0.0;
        for t in 0..tr.horizon() {
            z = update_z(&z, &tr.xs[t], &tr.us[t], &tr.xs[t + 1]).unwrap();
            total += stage_payoff(h, scen.gamma(), &tr.xs[t], &tr.us[t], &tr.xs[t + 1]).unwrap();
        }
        let s = build_s(h, scen.gamma());
        let inner = mat::frob_inner(s.matrix(), z.matrix());
        assert!((inner - total).abs() < 1e-8, "{inner} vs {total}");
    }

    #[test]
    fn model_confusion_matches_decoy_dynamics() {
        // Until the cap binds, the data is exactly consistent with the
        // decoy: x_{t+1} = A' x_t + B' u_t.
        let scen = demo_scenarios();
        let (truth, decoy) = (1usize, 0usize);
        let tr = rollout(
            &scen,
            &demo_cone(),
            truth,
            &DisturbanceStrategy::ModelConfusion { decoy, cap: 10.0 },
            DecisionMode::Randomized,
            20,
            3,
        )
        .unwrap();
        let d = &scen.hypotheses()[decoy];
        for t in 0..tr.horizon() {
            let pred = d.a() * &tr.xs[t] + d.b() * &tr.us[t];
            assert!((pred - &tr.xs[t + 1]).abs().max() < 1e-12);
        }
    }

    #[test]
    fn ascent_objective_stays_nonpositive() {
        // The certified cone guarantees sum cost - gamma^2 sum |w|^2 <= 0
        // in expectation; the ascent adversary searches for a violation.
        let scen = demo_scenarios();
        let strat = DisturbanceStrategy::AdversarialAscent { passes: 12, cap: 1.0, seed: 6 };
        for truth in 0..2 {
            let g = expected_gain(
                &scen,
                &demo_cone(),
                truth,
                &strat,
                DecisionMode::Randomized,
                20,
                200,
                100,
            )
            .unwrap();
            assert!(g <= 4.0 + 1e-2, "truth {truth}: expected gain {g}");
        }
    }

    #[test]
    fn gain_bound_over_strategy_suite() {
        let scen = demo_scenarios();
        let cone = demo_cone();
        let strategies = [
            DisturbanceStrategy::IidSeeded { seed: 11, cap: 1.0 },
            DisturbanceStrategy::ModelConfusion { decoy: 1, cap: 1.0 },
            DisturbanceStrategy::ModelConfusion { decoy: 0, cap: 1.0 },
        ];
        for truth in 0..2 {
            for strat in &strategies {
                let g = expected_gain(
                    &scen,
                    &cone,
                    truth,
                    strat,
                    DecisionMode::Randomized,
                    40,
                    200,
                    1000,
                )
                .unwrap();
                assert!(
                    g <= 4.0 + 1e-2,
                    "truth {truth} strategy {}: expected gain {g}",
                    strat.name()
                );
            }
        }
    }

    #[test]
    fn zero_energy_positive_cost_flags_violation() {
        let scen = demo_scenarios();
        // Nonzero start with zero disturbance: positive cost, zero energy.
        let tr = rollout_from(
            &scen,
            &demo_cone(),
            0,
            &DisturbanceStrategy::Zero,
            DecisionMode::Randomized,
            5,
            1,
            Some(DVector::from_element(1, 1.0)),
        )
        .unwrap();
        assert_eq!(empirical_gain(&[tr], 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn static_gains_cannot_match_adaptive() {
        // No single linear law handles both input signs: every k in the
        // sweep suffers at least double the adaptive controller's certified
        // gain level on the same suite.
        let scen = demo_scenarios();
        let ks: Vec<f64> = (0..=8).map(|i| -0.25 + 0.0625 * i as f64).collect();
        let strategies = [
            DisturbanceStrategy::IidSeeded { seed: 11, cap: 1.0 },
            DisturbanceStrategy::Constant { level: 1.0 },
            DisturbanceStrategy::ModelConfusion { decoy: 0, cap: 1.0 },
            DisturbanceStrategy::ModelConfusion { decoy: 1, cap: 1.0 },
        ];
        let sweep = gain_sweep(&scen, &ks, &strategies, 200).unwrap();
        let best = sweep.iter().map(|(_, g)| *g).fold(f64::INFINITY, f64::min);
        assert!(best >= 6.0, "best static gain {best} not clearly above the adaptive level");
    }

    #[test]
    fn bad_indices_are_config_errors() {
        let scen = demo_scenarios();
        assert!(matches!(
            rollout(
                &scen,
                &demo_cone(),
                5,
                &DisturbanceStrategy::Zero,
                DecisionMode::Randomized,
                3,
                0
            ),
            Err(Error::Config(_))
        ));
        assert!(matches!(empirical_gain(&[], 0), Err(Error::Config(_))));
    }
}
