//! The local-realistic (LR) polytope and projections onto it.
//!
//! An LR model assigns each party a deterministic outcome per setting; the
//! polytope is the convex hull of the distributions these strategies induce
//! under the fixed setting probabilities. The central operation is the
//! Kullback-Leibler projection of an observed distribution onto this
//! polytope. Its value in bits per trial is the statistical strength of the
//! violation, and the projection itself yields a prediction-based-ratio
//! (PBR) table whose expectation under every LR model is at most one, the
//! property that makes the PBR protocol's p-values valid.

use crate::scenario::{JointDistribution, Scenario, SettingDistribution};
use crate::{Error, Result};

/// Default cap on the number of deterministic strategies enumerated.
pub const DEFAULT_STRATEGY_CAP: usize = 1_000_000;

/// Default convergence tolerance on the optimality gap of [`minimize_kl`].
pub const DEFAULT_EM_TOL: f64 = 1e-8;

/// Default iteration cap of [`minimize_kl`].
pub const DEFAULT_EM_ITERATION_CAP: usize = 1_000_000;

/// Slack allowed on the LR expectation of a verified [`RatioTable`].
pub const LR_BOUND_TOL: f64 = 1e-9;

/// One deterministic local strategy: a fixed outcome per setting for each
/// party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicStrategy {
    pub alice_map: Vec<usize>,
    pub bob_map: Vec<usize>,
}

/// Number of deterministic strategies of a scenario, `None` on overflow.
fn strategy_count(scenario: &Scenario) -> Option<u128> {
    let ka = scenario.alice_outcomes() as u128;
    let kb = scenario.bob_outcomes() as u128;
    let na = u32::try_from(scenario.alice_settings()).ok()?;
    let nb = u32::try_from(scenario.bob_settings()).ok()?;
    ka.checked_pow(na)?.checked_mul(kb.checked_pow(nb)?)
}

fn check_strategy_cap(scenario: &Scenario, cap: usize) -> Result<usize> {
    // A saturated count of u128::MAX reports an overflowing product.
    let count = strategy_count(scenario).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::StrategyCapExceeded { count, cap });
    }
    Ok(count as usize)
}

/// Calls `f` for every deterministic strategy in lexicographic order of
/// `(alice_map, bob_map)`.
fn for_each_strategy(
    scenario: &Scenario,
    cap: usize,
    mut f: impl FnMut(&[usize], &[usize]),
) -> Result<()> {
    check_strategy_cap(scenario, cap)?;
    let ka = scenario.alice_outcomes();
    let kb = scenario.bob_outcomes();
    let mut alice = vec![0usize; scenario.alice_settings()];
    loop {
        let mut bob = vec![0usize; scenario.bob_settings()];
        loop {
            f(&alice, &bob);
            if !increment(&mut bob, kb) {
                break;
            }
        }
        if !increment(&mut alice, ka) {
            break;
        }
    }
    Ok(())
}

/// Lexicographic odometer step; false once the sequence wraps around.
fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// All deterministic strategies in lexicographic order of
/// `(alice_map, bob_map)`, erroring beyond [`DEFAULT_STRATEGY_CAP`].
pub fn enumerate_strategies(scenario: &Scenario) -> Result<Vec<DeterministicStrategy>> {
    enumerate_strategies_capped(scenario, DEFAULT_STRATEGY_CAP)
}

/// As [`enumerate_strategies`] with an explicit cap.
pub fn enumerate_strategies_capped(
    scenario: &Scenario,
    cap: usize,
) -> Result<Vec<DeterministicStrategy>> {
    let count = check_strategy_cap(scenario, cap)?;
    let mut out = Vec::with_capacity(count);
    for_each_strategy(scenario, cap, |alice, bob| {
        out.push(DeterministicStrategy {
            alice_map: alice.to_vec(),
            bob_map: bob.to_vec(),
        });
    })?;
    Ok(out)
}

/// The joint distribution a deterministic strategy induces: all conditional
/// mass of each setting pair sits on the strategy's outcome pair.
pub fn strategy_distribution(
    strategy: &DeterministicStrategy,
    scenario: &Scenario,
    setting_dist: &SettingDistribution,
) -> Result<JointDistribution> {
    if strategy.alice_map.len() != scenario.alice_settings()
        || strategy.bob_map.len() != scenario.bob_settings()
    {
        return Err(Error::DimensionMismatch {
            what: "strategy maps",
            expected: scenario.alice_settings() + scenario.bob_settings(),
            got: strategy.alice_map.len() + strategy.bob_map.len(),
        });
    }
    if strategy
        .alice_map
        .iter()
        .any(|&a| a >= scenario.alice_outcomes())
        || strategy
            .bob_map
            .iter()
            .any(|&b| b >= scenario.bob_outcomes())
    {
        return Err(Error::InvalidConfig(
            "strategy maps outcomes outside the scenario".into(),
        ));
    }
    let mut probs = vec![0.0; scenario.num_combinations()];
    for i in 0..scenario.alice_settings() {
        for j in 0..scenario.bob_settings() {
            let x = scenario.index_of(i, j, strategy.alice_map[i], strategy.bob_map[j]);
            probs[x] = setting_dist.prob(i, j);
        }
    }
    JointDistribution::new(scenario.clone(), setting_dist.clone(), probs)
}

/// Kullback-Leibler divergence `D(q || p)` in bits.
///
/// Terms with `q_x = 0` contribute zero; any cell with `q_x > 0` and
/// `p_x = 0` makes the divergence positive infinity.
pub fn kl_divergence(q: &JointDistribution, p: &JointDistribution) -> Result<f64> {
    if q.scenario() != p.scenario() {
        return Err(Error::DimensionMismatch {
            what: "distributions",
            expected: q.scenario().num_combinations(),
            got: p.scenario().num_combinations(),
        });
    }
    let mut sum = 0.0;
    for (&qx, &px) in q.probs().iter().zip(p.probs()) {
        if qx > 0.0 {
            if px <= 0.0 {
                return Ok(f64::INFINITY);
            }
            sum += qx * (qx / px).log2();
        }
    }
    Ok(sum)
}

/// A point in the LR polytope expressed as a mixture over the
/// deterministic strategies, `weights` indexed in the order of
/// [`enumerate_strategies`].
#[derive(Debug, Clone)]
pub struct LrMixture {
    pub weights: Vec<f64>,
    pub induced: JointDistribution,
}

/// Result of the KL projection [`minimize_kl`].
#[derive(Debug, Clone)]
pub struct StrengthResult {
    /// The projection: the closest LR model found.
    pub mixture: LrMixture,
    /// `D(q || induced)` in bits per trial.
    pub strength_bits: f64,
    /// Optimality-gap certificate: `max_lambda <q/induced>_lambda - 1`,
    /// clamped at zero below. The true minimum divergence lies within
    /// `log2(1 + epsilon)` bits below `strength_bits`.
    pub epsilon: f64,
    /// Multiplicative updates performed.
    pub iterations: usize,
    /// Whether `epsilon <= tol` was reached before the iteration cap.
    pub converged: bool,
}

/// Per-strategy hit lists: for each strategy, the flat cell index and
/// setting probability of the one outcome pair it realizes per setting pair.
/// Pairs with zero setting probability are omitted.
struct StrategyHits {
    hits: Vec<Vec<(usize, f64)>>,
}

impl StrategyHits {
    fn build(scenario: &Scenario, sd: &SettingDistribution, cap: usize) -> Result<Self> {
        let mut hits = Vec::new();
        for_each_strategy(scenario, cap, |alice, bob| {
            let mut cells = Vec::with_capacity(scenario.num_setting_pairs());
            for (i, &a) in alice.iter().enumerate() {
                for (j, &b) in bob.iter().enumerate() {
                    let pij = sd.prob(i, j);
                    if pij > 0.0 {
                        cells.push((scenario.index_of(i, j, a, b), pij));
                    }
                }
            }
            hits.push(cells);
        })?;
        Ok(Self { hits })
    }

    fn len(&self) -> usize {
        self.hits.len()
    }

    /// `p_x = sum_lambda w_lambda p_(lambda,x)`, accumulated in fixed order.
    fn mixture_probs(&self, weights: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (w, cells) in weights.iter().zip(&self.hits) {
            for &(x, pij) in cells {
                out[x] += w * pij;
            }
        }
    }

    /// `<f>_lambda = sum_x p_(lambda,x) f_x` for each strategy.
    fn expectations(&self, f: &[f64], out: &mut [f64]) {
        for (r, cells) in out.iter_mut().zip(&self.hits) {
            *r = cells.iter().map(|&(x, pij)| pij * f[x]).sum();
        }
    }
}

fn check_feasible(q: &JointDistribution) -> Result<()> {
    let scenario = q.scenario();
    for i in 0..scenario.alice_settings() {
        for j in 0..scenario.bob_settings() {
            if q.setting_dist().prob(i, j) > 0.0 {
                continue;
            }
            for a in 0..scenario.alice_outcomes() {
                for b in 0..scenario.bob_outcomes() {
                    if q.prob(i, j, a, b) > 0.0 {
                        return Err(Error::Infeasible(format!(
                            "q places mass on setting pair ({i}, {j}) which has zero probability; \
                             no LR model can match it"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// KL projection of `q` onto the LR polytope with default caps.
///
/// Iterates the multiplicative update `w_lambda <- w_lambda * r_lambda` with
/// `r_lambda = sum_x q_x p_(lambda,x) / p_x` from uniform weights. Each
/// update never increases the divergence, and the gap certificate
/// `epsilon = max_lambda r_lambda - 1` bounds the distance from optimal.
/// Stops once `epsilon <= tol` or after the iteration cap, reporting which
/// via `converged`.
pub fn minimize_kl(q: &JointDistribution, tol: f64) -> Result<StrengthResult> {
    minimize_kl_capped(q, tol, DEFAULT_EM_ITERATION_CAP, DEFAULT_STRATEGY_CAP)
}

/// As [`minimize_kl`] with explicit iteration and strategy caps.
pub fn minimize_kl_capped(
    q: &JointDistribution,
    tol: f64,
    iteration_cap: usize,
    strategy_cap: usize,
) -> Result<StrengthResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "convergence tolerance must be positive".into(),
        ));
    }
    check_feasible(q)?;
    let scenario = q.scenario();
    let d = scenario.num_combinations();
    let hits = StrategyHits::build(scenario, q.setting_dist(), strategy_cap)?;
    let l = hits.len();

    let mut weights = vec![1.0 / l as f64; l];
    let mut p = vec![0.0; d];
    let mut ratio = vec![0.0; d];
    let mut r = vec![0.0; l];
    let qp = q.probs();

    let mut iterations = 0;
    let (epsilon, converged) = loop {
        hits.mixture_probs(&weights, &mut p);
        for x in 0..d {
            ratio[x] = if qp[x] > 0.0 { qp[x] / p[x] } else { 0.0 };
        }
        hits.expectations(&ratio, &mut r);
        let eps = (r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1.0).max(0.0);
        if eps <= tol {
            break (eps, true);
        }
        if iterations >= iteration_cap {
            break (eps, false);
        }
        for (w, rl) in weights.iter_mut().zip(&r) {
            *w *= rl;
        }
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        iterations += 1;
    };

    let induced = JointDistribution::new(
        scenario.clone(),
        q.setting_dist().clone(),
        p.clone(),
    )?;
    let strength_bits = kl_divergence(q, &induced)?;
    Ok(StrengthResult {
        mixture: LrMixture { weights, induced },
        strength_bits,
        epsilon,
        iterations,
        converged,
    })
}

/// Exhaustive correction bound for a numerically obtained projection:
/// `max(0, max_lambda sum_x p_(lambda,x) q_x / p_x - 1)`, the amount by
/// which the best deterministic strategy still beats `p` on predicting `q`.
///
/// Cells with `q_x = 0` contribute zero. A cell with `q_x > 0` and
/// `p_x = 0` has no finite bound and is rejected.
pub fn epsilon_bound(q: &JointDistribution, p: &JointDistribution) -> Result<f64> {
    epsilon_bound_capped(q, p, DEFAULT_STRATEGY_CAP)
}

/// As [`epsilon_bound`] with an explicit strategy cap.
pub fn epsilon_bound_capped(
    q: &JointDistribution,
    p: &JointDistribution,
    strategy_cap: usize,
) -> Result<f64> {
    let ratio = pointwise_ratio(q, p)?;
    let hits = StrategyHits::build(q.scenario(), q.setting_dist(), strategy_cap)?;
    let mut r = vec![0.0; hits.len()];
    hits.expectations(&ratio, &mut r);
    Ok((r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1.0).max(0.0))
}

fn pointwise_ratio(q: &JointDistribution, p: &JointDistribution) -> Result<Vec<f64>> {
    if q.scenario() != p.scenario() {
        return Err(Error::DimensionMismatch {
            what: "distributions",
            expected: q.scenario().num_combinations(),
            got: p.scenario().num_combinations(),
        });
    }
    q.probs()
        .iter()
        .zip(p.probs())
        .enumerate()
        .map(|(x, (&qx, &px))| {
            if qx > 0.0 && px <= 0.0 {
                let (i, j, a, b) = q.scenario().combination(x);
                Err(Error::Infeasible(format!(
                    "q is positive but p is zero at (i={i}, j={j}, a={a}, b={b})"
                )))
            } else if qx > 0.0 {
                Ok(qx / px)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// A per-combination ratio table `R(x)` whose expectation under every LR
/// model stays at or below one; the PBR protocol multiplies `R` over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    scenario: Scenario,
    ratios: Vec<f64>,
}

impl RatioTable {
    pub fn new(scenario: Scenario, ratios: Vec<f64>) -> Result<Self> {
        if ratios.len() != scenario.num_combinations() {
            return Err(Error::DimensionMismatch {
                what: "ratio table",
                expected: scenario.num_combinations(),
                got: ratios.len(),
            });
        }
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig(
                "ratios must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { scenario, ratios })
    }

    /// The trivial table `R(x) = 1`, whose product leaves the p-value at 1.
    pub fn ones(scenario: Scenario) -> Self {
        let d = scenario.num_combinations();
        Self {
            scenario,
            ratios: vec![1.0; d],
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn ratio(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.ratios[self.scenario.index_of(i, j, a, b)]
    }

    /// `max_lambda sum_x p_(lambda,x) R(x)` over all deterministic
    /// strategies, reduced in a fixed order.
    pub fn max_lr_expectation(&self, setting_dist: &SettingDistribution) -> Result<f64> {
        if !setting_dist.matches_scenario(&self.scenario) {
            return Err(Error::DimensionMismatch {
                what: "setting distribution",
                expected: self.scenario.num_setting_pairs(),
                got: setting_dist.probs().len(),
            });
        }
        let hits = StrategyHits::build(&self.scenario, setting_dist, DEFAULT_STRATEGY_CAP)?;
        let mut r = vec![0.0; hits.len()];
        hits.expectations(&self.ratios, &mut r);
        Ok(r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Errors unless the LR expectation stays within [`LR_BOUND_TOL`] of 1;
    /// returns the maximum found.
    pub fn verify_lr_bound(&self, setting_dist: &SettingDistribution) -> Result<f64> {
        let max = self.max_lr_expectation(setting_dist)?;
        if max > 1.0 + LR_BOUND_TOL {
            return Err(Error::LrBoundViolation {
                max_expectation: max,
                tolerance: LR_BOUND_TOL,
            });
        }
        Ok(max)
    }
}

/// Builds the corrected PBR table `R(x) = q_x / (p_x (1 + epsilon))`.
///
/// With `epsilon` from [`epsilon_bound`], every LR expectation of `R` is at
/// most one by construction even though `p` is only a numerical projection.
/// Cells with `q_x = 0` get `R(x) = 0`.
pub fn make_pbr(
    q: &JointDistribution,
    p: &JointDistribution,
    epsilon: f64,
) -> Result<RatioTable> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(
            "epsilon must be finite and nonnegative".into(),
        ));
    }
    let mut ratio = pointwise_ratio(q, p)?;
    for r in ratio.iter_mut() {
        *r /= 1.0 + epsilon;
    }
    RatioTable::new(q.scenario().clone(), ratio)
}
