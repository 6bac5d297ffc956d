//! Estimation of the next-trial distribution from observed trials.
//!
//! The estimator turns raw trial counts into a valid joint distribution by
//! constrained maximum likelihood (known setting probabilities, optionally
//! no-signaling), then mixes in a little conditional-uniform mass so that no
//! supported cell is ever predicted with probability zero. Blocking,
//! priming with pseudo-counts, and exponential forgetting make the same
//! machinery usable on drifting sources.

use nalgebra::{DMatrix, DVector};

use crate::scenario::{JointDistribution, Scenario, SettingDistribution, TrialRecord};
use crate::{Error, Result};

/// Iteration cap shared by the constrained maximum-likelihood solver.
pub const DEFAULT_FIT_ITERATION_CAP: usize = 100_000;

/// Per-combination trial counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    scenario: Scenario,
    counts: Vec<u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn new(scenario: Scenario) -> Self {
        let d = scenario.num_combinations();
        Self {
            scenario,
            counts: vec![0; d],
            total: 0,
        }
    }

    pub fn from_counts(scenario: Scenario, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != scenario.num_combinations() {
            return Err(Error::DimensionMismatch {
                what: "count table",
                expected: scenario.num_combinations(),
                got: counts.len(),
            });
        }
        let total = counts.iter().sum();
        Ok(Self {
            scenario,
            counts,
            total,
        })
    }

    pub fn record(&mut self, trial: &TrialRecord) -> Result<()> {
        if !self.scenario.contains(trial) {
            return Err(Error::TrialOutOfRange {
                index: self.total as usize,
                detail: format!(
                    "({}, {}, {}, {}) outside scenario",
                    trial.alice_setting, trial.bob_setting, trial.alice_outcome, trial.bob_outcome
                ),
            });
        }
        let x = self.scenario.index_of(
            trial.alice_setting,
            trial.bob_setting,
            trial.alice_outcome,
            trial.bob_outcome,
        );
        self.counts[x] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, i: usize, j: usize, a: usize, b: usize) -> u64 {
        self.counts[self.scenario.index_of(i, j, a, b)]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Trials observed at setting pair `(i, j)`.
    pub fn pair_total(&self, i: usize, j: usize) -> u64 {
        let mut sum = 0;
        for a in 0..self.scenario.alice_outcomes() {
            for b in 0..self.scenario.bob_outcomes() {
                sum += self.count(i, j, a, b);
            }
        }
        sum
    }
}

/// Counts each combination's occurrences; order-free.
pub fn empirical_frequencies(
    trials: &[TrialRecord],
    scenario: &Scenario,
) -> Result<FrequencyTable> {
    let mut table = FrequencyTable::new(scenario.clone());
    for (index, trial) in trials.iter().enumerate() {
        if !scenario.contains(trial) {
            return Err(Error::TrialOutOfRange {
                index,
                detail: format!(
                    "({}, {}, {}, {}) outside scenario",
                    trial.alice_setting, trial.bob_setting, trial.alice_outcome, trial.bob_outcome
                ),
            });
        }
        table.record(trial)?;
    }
    Ok(table)
}

/// Log-likelihood `sum_x counts_x ln q_x` in nats; zero-count cells
/// contribute nothing, a zero-probability cell with counts gives `-inf`.
pub fn log_likelihood(counts: &[f64], q: &JointDistribution) -> f64 {
    counts
        .iter()
        .zip(q.probs())
        .filter(|(&n, _)| n > 0.0)
        .map(|(&n, &qx)| n * qx.ln())
        .sum()
}

/// Block length used by the adaptive protocols: the estimate is refreshed
/// every `max(ceil(total/1000), ceil(ln(2 d) d))` trials, which keeps the
/// number of fits manageable while letting each block carry enough counts.
pub fn block_size(planned_trials: u64, num_combinations: usize) -> Result<usize> {
    if planned_trials == 0 || num_combinations == 0 {
        return Err(Error::InvalidConfig(
            "block size needs at least one trial and one combination".into(),
        ));
    }
    let a = planned_trials.div_ceil(1000) as usize;
    let d = num_combinations as f64;
    let b = ((2.0 * d).ln() * d).ceil() as usize;
    Ok(a.max(b))
}

/// Mixes one conditional-uniform pseudo-trial into `n` effective trials:
/// `q1 = (n q0 + u) / (n + 1)`. Every cell on a supported setting pair
/// comes out strictly positive, so downstream likelihood ratios never hit
/// an impossible prediction.
pub fn smooth(q0: &JointDistribution, n: f64) -> Result<JointDistribution> {
    if !n.is_finite() || n < 0.0 {
        return Err(Error::InvalidConfig(
            "effective count must be finite and nonnegative".into(),
        ));
    }
    let u = JointDistribution::conditional_uniform(q0.scenario().clone(), q0.setting_dist().clone());
    let probs: Vec<f64> = q0
        .probs()
        .iter()
        .zip(u.probs())
        .map(|(&q, &ux)| (n * q + ux) / (n + 1.0))
        .collect();
    JointDistribution::new(q0.scenario().clone(), q0.setting_dist().clone(), probs)
}

/// Constrained maximum-likelihood estimate from integer counts.
///
/// Maximizes `sum_x counts_x log q_x` over distributions whose setting-pair
/// masses equal `setting_dist` exactly, optionally intersected with the
/// no-signaling set. Constraint residuals stay below 1e-9 and the
/// objective lands within 1e-9 nats of the optimum. An all-zero table
/// returns the conditional-uniform distribution, the likelihood being flat.
pub fn ml_fit(
    f: &FrequencyTable,
    setting_dist: &SettingDistribution,
    enforce_no_signaling: bool,
) -> Result<JointDistribution> {
    let weights: Vec<f64> = f.counts().iter().map(|&c| c as f64).collect();
    fit_weighted(f.scenario(), setting_dist, &weights, enforce_no_signaling)
}

/// As [`ml_fit`] but over real-valued pseudo-counts, which is what priming
/// and forgetting produce.
pub fn fit_weighted(
    scenario: &Scenario,
    setting_dist: &SettingDistribution,
    weights: &[f64],
    enforce_no_signaling: bool,
) -> Result<JointDistribution> {
    if weights.len() != scenario.num_combinations() {
        return Err(Error::DimensionMismatch {
            what: "weighted counts",
            expected: scenario.num_combinations(),
            got: weights.len(),
        });
    }
    if !setting_dist.matches_scenario(scenario) {
        return Err(Error::DimensionMismatch {
            what: "setting distribution",
            expected: scenario.num_setting_pairs(),
            got: setting_dist.probs().len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig(
            "counts must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Ok(JointDistribution::conditional_uniform(
            scenario.clone(),
            setting_dist.clone(),
        ));
    }
    let probs = if enforce_no_signaling {
        barrier_fit(scenario, setting_dist, weights)?
    } else {
        per_pair_fit(scenario, setting_dist, weights)
    };
    JointDistribution::new(scenario.clone(), setting_dist.clone(), probs)
}

/// Without no-signaling the likelihood separates per setting pair and the
/// maximizer is the conditional frequency, completed to conditional uniform
/// on pairs without data.
fn per_pair_fit(scenario: &Scenario, sd: &SettingDistribution, weights: &[f64]) -> Vec<f64> {
    let k = (scenario.alice_outcomes() * scenario.bob_outcomes()) as f64;
    let mut probs = vec![0.0; scenario.num_combinations()];
    for i in 0..scenario.alice_settings() {
        for j in 0..scenario.bob_settings() {
            let pij = sd.prob(i, j);
            if pij == 0.0 {
                continue;
            }
            let mut pair_total = 0.0;
            for a in 0..scenario.alice_outcomes() {
                for b in 0..scenario.bob_outcomes() {
                    pair_total += weights[scenario.index_of(i, j, a, b)];
                }
            }
            for a in 0..scenario.alice_outcomes() {
                for b in 0..scenario.bob_outcomes() {
                    let x = scenario.index_of(i, j, a, b);
                    probs[x] = if pair_total > 0.0 {
                        pij * weights[x] / pair_total
                    } else {
                        pij / k
                    };
                }
            }
        }
    }
    probs
}

/// Equality constraints of the no-signaling fit over the cells of
/// supported setting pairs: pair masses, then conditional marginals tied
/// across the other party's settings (last outcome dropped per setting to
/// keep rows independent of the pair-mass rows).
struct Constraints {
    free_cells: Vec<usize>,
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn build_constraints(scenario: &Scenario, sd: &SettingDistribution) -> Constraints {
    let (na, nb) = (scenario.alice_settings(), scenario.bob_settings());
    let (ka, kb) = (scenario.alice_outcomes(), scenario.bob_outcomes());

    let mut free_cells = Vec::new();
    let mut col_of = vec![usize::MAX; scenario.num_combinations()];
    for i in 0..na {
        for j in 0..nb {
            if sd.prob(i, j) == 0.0 {
                continue;
            }
            for a in 0..ka {
                for b in 0..kb {
                    let x = scenario.index_of(i, j, a, b);
                    col_of[x] = free_cells.len();
                    free_cells.push(x);
                }
            }
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let df = free_cells.len();

    for i in 0..na {
        for j in 0..nb {
            let pij = sd.prob(i, j);
            if pij == 0.0 {
                continue;
            }
            let mut row = vec![0.0; df];
            for a in 0..ka {
                for b in 0..kb {
                    row[col_of[scenario.index_of(i, j, a, b)]] = 1.0;
                }
            }
            rows.push(row);
            rhs.push(pij);
        }
    }

    // Alice's conditional marginal at setting i must match between each
    // supported Bob setting and the first one; likewise for Bob.
    for i in 0..na {
        let supported: Vec<usize> = (0..nb).filter(|&j| sd.prob(i, j) > 0.0).collect();
        if let Some((&j0, rest)) = supported.split_first() {
            for &j in rest {
                for a in 0..ka.saturating_sub(1) {
                    let mut row = vec![0.0; df];
                    for b in 0..kb {
                        row[col_of[scenario.index_of(i, j0, a, b)]] += 1.0 / sd.prob(i, j0);
                        row[col_of[scenario.index_of(i, j, a, b)]] -= 1.0 / sd.prob(i, j);
                    }
                    rows.push(row);
                    rhs.push(0.0);
                }
            }
        }
    }
    for j in 0..nb {
        let supported: Vec<usize> = (0..na).filter(|&i| sd.prob(i, j) > 0.0).collect();
        if let Some((&i0, rest)) = supported.split_first() {
            for &i in rest {
                for b in 0..kb.saturating_sub(1) {
                    let mut row = vec![0.0; df];
                    for a in 0..ka {
                        row[col_of[scenario.index_of(i0, j, a, b)]] += 1.0 / sd.prob(i0, j);
                        row[col_of[scenario.index_of(i, j, a, b)]] -= 1.0 / sd.prob(i, j);
                    }
                    rows.push(row);
                    rhs.push(0.0);
                }
            }
        }
    }

    let m = rows.len();
    let matrix = DMatrix::from_fn(m, df, |r, c| rows[r][c]);
    Constraints {
        free_cells,
        matrix,
        rhs: DVector::from_vec(rhs),
    }
}

/// Interior-point solve of the no-signaling maximum-likelihood program:
/// Newton steps on the log-barrier along a decreasing barrier weight. The
/// final barrier weight bounds the objective gap by weight times the cell
/// count, far below the 1e-9 contract.
fn barrier_fit(
    scenario: &Scenario,
    sd: &SettingDistribution,
    weights: &[f64],
) -> Result<Vec<f64>> {
    let cons = build_constraints(scenario, sd);
    let df = cons.free_cells.len();
    let m = cons.matrix.nrows();
    let n: Vec<f64> = cons.free_cells.iter().map(|&x| weights[x]).collect();
    let total: f64 = n.iter().sum();
    let k = (scenario.alice_outcomes() * scenario.bob_outcomes()) as f64;

    // Conditional uniform: feasible and strictly positive.
    let mut q: Vec<f64> = cons
        .free_cells
        .iter()
        .map(|&x| {
            let (i, j, _, _) = scenario.combination(x);
            sd.prob(i, j) / k
        })
        .collect();

    let trace = std::env::var_os("BARRIER_TRACE").is_some();
    let mut iterations = 0usize;
    let mut mu = total.max(1.0);
    loop {
        // Centering accuracy per stage: loose while the barrier weight is
        // large (the next stage re-centers anyway), tight at the last one.
        let tol_dec = if mu <= 1.5e-12 {
            1e-18
        } else {
            (mu * 1e-3).max(1e-18)
        };
        // Inner Newton loop at fixed barrier weight.
        for _ in 0..100 {
            iterations += 1;
            if iterations > DEFAULT_FIT_ITERATION_CAP {
                return Err(nonconvergence(scenario, &cons, &q, iterations));
            }
            // Newton step from the full KKT system
            //   [ H  A^T ] [delta]   [ (n+mu)/q ]
            //   [ A   0  ] [ nu  ] = [ b - A q  ]
            // with H = diag((n+mu)/q^2). Solving the unreduced system keeps
            // the step accurate when boundary cells make H badly scaled;
            // the Schur-complement reduction squares that conditioning and
            // stalls. The b - A q block also contracts any rounding drift
            // off the constraint manifold.
            let dim = df + m;
            let mut kkt = DMatrix::zeros(dim, dim);
            for c in 0..df {
                kkt[(c, c)] = (n[c] + mu) / (q[c] * q[c]);
            }
            for r in 0..m {
                for c in 0..df {
                    let v = cons.matrix[(r, c)];
                    kkt[(df + r, c)] = v;
                    kkt[(c, df + r)] = v;
                }
            }
            let mut rhs = DVector::zeros(dim);
            for c in 0..df {
                rhs[c] = (n[c] + mu) / q[c];
            }
            let aq = &cons.matrix * DVector::from_column_slice(&q);
            for r in 0..m {
                rhs[df + r] = cons.rhs[r] - aq[r];
            }
            let sol = match kkt.clone().lu().solve(&rhs) {
                Some(sol) => sol,
                None => kkt
                    .full_piv_lu()
                    .solve(&rhs)
                    .ok_or_else(|| nonconvergence(scenario, &cons, &q, iterations))?,
            };
            let delta: Vec<f64> = (0..df).map(|c| sol[c]).collect();
            let decrement: f64 = delta
                .iter()
                .zip(&q)
                .zip(&n)
                .map(|((&dx, &qx), &nx)| (nx + mu) * (dx / qx) * (dx / qx))
                .sum();
            if decrement <= tol_dec {
                break;
            }
            // Step length: stay strictly inside, then backtrack on the
            // barrier objective.
            let mut t: f64 = 1.0;
            for (dx, qx) in delta.iter().zip(&q) {
                if *dx < 0.0 {
                    t = t.min(0.99 * qx / -dx);
                }
            }
            let phi = |qv: &[f64]| -> f64 {
                qv.iter()
                    .zip(&n)
                    .map(|(&qx, &nx)| -(nx + mu) * qx.ln())
                    .sum()
            };
            let f0 = phi(&q);
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = q.iter().zip(&delta).map(|(&qx, &dx)| qx + t * dx).collect();
                if trial.iter().all(|&v| v > 0.0) && phi(&trial) <= f0 - 0.25 * t * decrement {
                    q = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if trace {
                eprintln!(
                    "mu={mu:.3e} it={iterations} dec={decrement:.3e} t={t:.3e} res={:.3e} qmin={:.3e}",
                    max_residual(&cons, &q),
                    q.iter().cloned().fold(f64::INFINITY, f64::min)
                );
            }
            // A failed line search, or an accepted step that moves no cell
            // by more than a relative 1e-13, means rounding noise dominates
            // the computed direction; more iterations cannot help.
            let max_rel = delta
                .iter()
                .zip(&q)
                .map(|(&dx, &qx)| (dx / qx).abs())
                .fold(0.0f64, f64::max);
            if !accepted || t * max_rel <= 1e-13 {
                break;
            }
        }
        if mu <= 1e-12 {
            break;
        }
        mu = (mu / 10.0).max(1e-12);
    }

    let mut probs = vec![0.0; scenario.num_combinations()];
    for (c, &x) in cons.free_cells.iter().enumerate() {
        probs[x] = q[c];
    }
    let residual = max_residual(&cons, &q);
    if residual > 1e-9 {
        return Err(Error::FitNonConvergence {
            iterations,
            residual,
            best: probs,
        });
    }
    Ok(probs)
}

fn max_residual(cons: &Constraints, q: &[f64]) -> f64 {
    let qv = DVector::from_column_slice(q);
    let r = &cons.matrix * qv - &cons.rhs;
    r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn nonconvergence(
    scenario: &Scenario,
    cons: &Constraints,
    q: &[f64],
    iterations: usize,
) -> Error {
    let mut probs = vec![0.0; scenario.num_combinations()];
    for (c, &x) in cons.free_cells.iter().enumerate() {
        probs[x] = q[c];
    }
    Error::FitNonConvergence {
        iterations,
        residual: max_residual(cons, q),
        best: probs,
    }
}

/// Prior folded into every fit as pseudo-counts: `weight` trial-equivalents
/// distributed as `dist`. Must be fixed before looking at the data for the
/// protocols' p-values to stay valid.
#[derive(Debug, Clone)]
pub struct Prior {
    pub dist: JointDistribution,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub enforce_no_signaling: bool,
    pub prior: Option<Prior>,
    /// Exponential forgetting half-life in trials; unset disables decay.
    pub half_life: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            enforce_no_signaling: true,
            prior: None,
            half_life: None,
        }
    }
}

/// Rolling estimator state: weighted per-combination counts plus the fixed
/// analysis configuration.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    scenario: Scenario,
    setting_dist: SettingDistribution,
    options: EstimatorOptions,
    weighted_counts: Vec<f64>,
}

impl EstimatorState {
    pub fn new(
        scenario: Scenario,
        setting_dist: SettingDistribution,
        options: EstimatorOptions,
    ) -> Result<Self> {
        if !setting_dist.matches_scenario(&scenario) {
            return Err(Error::DimensionMismatch {
                what: "setting distribution",
                expected: scenario.num_setting_pairs(),
                got: setting_dist.probs().len(),
            });
        }
        if let Some(prior) = &options.prior {
            if prior.dist.scenario() != &scenario {
                return Err(Error::DimensionMismatch {
                    what: "prior distribution",
                    expected: scenario.num_combinations(),
                    got: prior.dist.scenario().num_combinations(),
                });
            }
            if !prior.weight.is_finite() || prior.weight < 0.0 {
                return Err(Error::InvalidConfig(
                    "prior weight must be finite and nonnegative".into(),
                ));
            }
        }
        if let Some(hl) = options.half_life {
            if !(hl > 0.0) || !hl.is_finite() {
                return Err(Error::InvalidConfig(
                    "half-life must be positive and finite".into(),
                ));
            }
        }
        let d = scenario.num_combinations();
        Ok(Self {
            scenario,
            setting_dist,
            options,
            weighted_counts: vec![0.0; d],
        })
    }

    pub fn weighted_counts(&self) -> &[f64] {
        &self.weighted_counts
    }

    /// Weight the next fit rests on: decayed counts plus prior weight.
    pub fn effective_n(&self) -> f64 {
        let prior = self.options.prior.as_ref().map_or(0.0, |p| p.weight);
        self.weighted_counts.iter().sum::<f64>() + prior
    }

    /// Absorbs one block and returns the smoothed estimate for the trials
    /// after it: decay by `2^(-len/half_life)`, add the block's counts,
    /// fit with the prior's pseudo-counts folded in, then smooth with the
    /// effective count.
    pub fn update(&mut self, block: &[TrialRecord]) -> Result<JointDistribution> {
        if let Some(hl) = self.options.half_life {
            let factor = (-(block.len() as f64) / hl).exp2();
            for w in self.weighted_counts.iter_mut() {
                *w *= factor;
            }
        }
        for (index, trial) in block.iter().enumerate() {
            if !self.scenario.contains(trial) {
                return Err(Error::TrialOutOfRange {
                    index,
                    detail: format!(
                        "({}, {}, {}, {}) outside scenario",
                        trial.alice_setting,
                        trial.bob_setting,
                        trial.alice_outcome,
                        trial.bob_outcome
                    ),
                });
            }
            let x = self.scenario.index_of(
                trial.alice_setting,
                trial.bob_setting,
                trial.alice_outcome,
                trial.bob_outcome,
            );
            self.weighted_counts[x] += 1.0;
        }
        let mut table = self.weighted_counts.clone();
        if let Some(prior) = &self.options.prior {
            for (t, &p) in table.iter_mut().zip(prior.dist.probs()) {
                *t += prior.weight * p;
            }
        }
        let q0 = fit_weighted(
            &self.scenario,
            &self.setting_dist,
            &table,
            self.options.enforce_no_signaling,
        )?;
        smooth(&q0, self.effective_n())
    }
}
