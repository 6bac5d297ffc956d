//! The three p-value protocols over an ordered trial stream, plus their
//! asymptotic confidence-gain rates.
//!
//! All three consume trials in observation order. The prediction-based
//! ratio (PBR) protocol multiplies per-trial ratios whose tables are
//! refitted at block boundaries from the trials already seen, so each
//! trial is scored by a table that never looked at it. The martingale
//! protocol turns the running mean of a normalized Bell functional into a
//! concentration bound. The standard-deviation protocol reports the
//! Gaussian tail of the violation measured in propagated standard errors;
//! it is the customary figure of merit but not a valid p-value.

use crate::estimation::{block_size, EstimatorOptions, EstimatorState};
use crate::lr::{
    epsilon_bound_capped, make_pbr, minimize_kl, minimize_kl_capped, RatioTable,
    DEFAULT_EM_ITERATION_CAP, DEFAULT_EM_TOL, DEFAULT_STRATEGY_CAP,
};
use crate::scenario::{BellFunctional, JointDistribution, Scenario, SettingDistribution, TrialRecord};
use crate::stats::log2_q;
use crate::{Error, Result};

/// One emitted point of a protocol run; fields a protocol does not produce
/// stay `None`, and a merged result carries several columns at once.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningRow {
    /// Number of trials consumed so far (1-based).
    pub trial: usize,
    pub log2_p_pbr: Option<f64>,
    pub log2_p_mart: Option<f64>,
    pub log2_p_sd: Option<f64>,
    /// Sequential mean of the functional, `(1/n) sum I(x_k)`.
    pub i_hat: Option<f64>,
    /// Ratio-estimator value of the functional from per-pair conditional
    /// means; undefined until every supported setting pair has a trial.
    pub i_tilde: Option<f64>,
    /// Propagated standard error attached to `i_tilde`.
    pub sigma: Option<f64>,
}

impl RunningRow {
    fn empty(trial: usize) -> Self {
        Self {
            trial,
            log2_p_pbr: None,
            log2_p_mart: None,
            log2_p_sd: None,
            i_hat: None,
            i_tilde: None,
            sigma: None,
        }
    }
}

/// Per-trial series produced by a protocol run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunningResult {
    pub rows: Vec<RunningRow>,
}

impl RunningResult {
    /// Column-wise union of several runs over the same stream. Rows are
    /// matched by position; the first run providing a column wins.
    pub fn merge(parts: &[&RunningResult]) -> Result<RunningResult> {
        let Some(first) = parts.first() else {
            return Ok(RunningResult::default());
        };
        let len = first.rows.len();
        for part in parts {
            if part.rows.len() != len {
                return Err(Error::DimensionMismatch {
                    what: "running results",
                    expected: len,
                    got: part.rows.len(),
                });
            }
        }
        let mut rows = Vec::with_capacity(len);
        for k in 0..len {
            let mut row = RunningRow::empty(first.rows[k].trial);
            for part in parts {
                let r = &part.rows[k];
                if r.trial != row.trial {
                    return Err(Error::InvalidConfig(
                        "running results disagree on trial numbering".into(),
                    ));
                }
                row.log2_p_pbr = row.log2_p_pbr.or(r.log2_p_pbr);
                row.log2_p_mart = row.log2_p_mart.or(r.log2_p_mart);
                row.log2_p_sd = row.log2_p_sd.or(r.log2_p_sd);
                row.i_hat = row.i_hat.or(r.i_hat);
                row.i_tilde = row.i_tilde.or(r.i_tilde);
                row.sigma = row.sigma.or(r.sigma);
            }
            rows.push(row);
        }
        Ok(RunningResult { rows })
    }
}

/// Configuration of a PBR run.
#[derive(Debug, Clone)]
pub struct PbrOptions {
    /// Trials per block; `None` derives it from the stream length via
    /// [`block_size`].
    pub block_len: Option<usize>,
    pub estimator: EstimatorOptions,
    /// Optimality-gap tolerance passed to the KL projection.
    pub em_tol: f64,
    pub em_iteration_cap: usize,
    pub strategy_cap: usize,
    /// Optional significance gate: the ratio table stays trivial after a
    /// block unless `effective_n * strength` reaches this threshold, which
    /// avoids spending log-p on noise around the polytope boundary.
    pub significance_threshold: Option<f64>,
}

impl Default for PbrOptions {
    fn default() -> Self {
        Self {
            block_len: None,
            estimator: EstimatorOptions::default(),
            em_tol: DEFAULT_EM_TOL,
            em_iteration_cap: DEFAULT_EM_ITERATION_CAP,
            strategy_cap: DEFAULT_STRATEGY_CAP,
            significance_threshold: None,
        }
    }
}

/// Streaming state of the PBR protocol.
///
/// The p-value after any prefix is `min(2^(-log2_product), 1)`; because
/// every installed table has LR expectation at most one, this is a valid
/// p-value against local realism at every trial simultaneously.
#[derive(Debug, Clone)]
pub struct PbrAccumulator {
    scenario: Scenario,
    setting_dist: SettingDistribution,
    table: RatioTable,
    log2_product: f64,
    zero_hit: bool,
    trials_seen: usize,
    estimator: EstimatorState,
    block_len: usize,
    block_buf: Vec<TrialRecord>,
    options: PbrOptions,
    ledger: Vec<f64>,
}

impl PbrAccumulator {
    pub fn new(
        scenario: Scenario,
        setting_dist: SettingDistribution,
        block_len: usize,
        options: PbrOptions,
    ) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::InvalidConfig("block length must be positive".into()));
        }
        if !(options.em_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "convergence tolerance must be positive".into(),
            ));
        }
        let estimator = EstimatorState::new(
            scenario.clone(),
            setting_dist.clone(),
            options.estimator.clone(),
        )?;
        Ok(Self {
            table: RatioTable::ones(scenario.clone()),
            scenario,
            setting_dist,
            log2_product: 0.0,
            zero_hit: false,
            trials_seen: 0,
            estimator,
            block_len,
            block_buf: Vec::new(),
            options,
            ledger: Vec::new(),
        })
    }

    pub fn trials_seen(&self) -> usize {
        self.trials_seen
    }

    pub fn table(&self) -> &RatioTable {
        &self.table
    }

    /// Maximum LR expectation recorded at each table replacement; every
    /// entry must stay at or below `1 + 1e-9` for the run to be valid.
    pub fn ledger(&self) -> &[f64] {
        &self.ledger
    }

    /// `log2` of the current p-value, never positive. A ratio of zero ever
    /// observed pins the p-value at 1 with no possibility of recovery.
    pub fn log2_p(&self) -> f64 {
        if self.zero_hit {
            return 0.0;
        }
        // The subtraction form avoids producing a negative zero.
        0.0 - self.log2_product.max(0.0)
    }

    pub fn p_value(&self) -> f64 {
        self.log2_p().exp2()
    }

    /// Replaces the table in force, re-verifying the LR bound exhaustively
    /// and recording the attained maximum in the ledger.
    pub fn install_table(&mut self, table: RatioTable) -> Result<()> {
        if table.scenario() != &self.scenario {
            return Err(Error::DimensionMismatch {
                what: "ratio table",
                expected: self.scenario.num_combinations(),
                got: table.scenario().num_combinations(),
            });
        }
        let max = table.verify_lr_bound(&self.setting_dist)?;
        self.ledger.push(max);
        self.table = table;
        Ok(())
    }

    /// Scores one trial with the table currently in force, then refits the
    /// table at block boundaries so later trials face the updated one.
    pub fn push(&mut self, trial: &TrialRecord) -> Result<f64> {
        if !self.scenario.contains(trial) {
            return Err(Error::TrialOutOfRange {
                index: self.trials_seen,
                detail: format!(
                    "({}, {}, {}, {}) outside scenario",
                    trial.alice_setting, trial.bob_setting, trial.alice_outcome, trial.bob_outcome
                ),
            });
        }
        let r = self.table.ratio(
            trial.alice_setting,
            trial.bob_setting,
            trial.alice_outcome,
            trial.bob_outcome,
        );
        if r == 0.0 {
            self.zero_hit = true;
        } else if !self.zero_hit {
            self.log2_product += r.log2();
        }
        self.trials_seen += 1;
        self.block_buf.push(*trial);
        if self.block_buf.len() == self.block_len {
            let block = std::mem::take(&mut self.block_buf);
            self.refit(&block)?;
        }
        Ok(self.log2_p())
    }

    fn refit(&mut self, block: &[TrialRecord]) -> Result<()> {
        let q1 = self.estimator.update(block)?;
        let projection = minimize_kl_capped(
            &q1,
            self.options.em_tol,
            self.options.em_iteration_cap,
            self.options.strategy_cap,
        )?;
        let armed = match self.options.significance_threshold {
            None => true,
            Some(c) => self.estimator.effective_n() * projection.strength_bits >= c,
        };
        if armed {
            let eps =
                epsilon_bound_capped(&q1, &projection.mixture.induced, self.options.strategy_cap)?;
            let table = make_pbr(&q1, &projection.mixture.induced, eps)?;
            self.install_table(table)
        } else {
            self.install_table(RatioTable::ones(self.scenario.clone()))
        }
    }
}

/// Runs the PBR protocol over a full stream, emitting one row per trial.
pub fn pbr_run(
    trials: &[TrialRecord],
    scenario: &Scenario,
    setting_dist: &SettingDistribution,
    options: &PbrOptions,
) -> Result<RunningResult> {
    let block_len = match options.block_len {
        Some(h) => h,
        None => block_size(trials.len().max(1) as u64, scenario.num_combinations())?,
    };
    let mut acc = PbrAccumulator::new(
        scenario.clone(),
        setting_dist.clone(),
        block_len,
        options.clone(),
    )?;
    let mut rows = Vec::with_capacity(trials.len());
    for trial in trials {
        let log2_p = acc.push(trial)?;
        let mut row = RunningRow::empty(acc.trials_seen());
        row.log2_p_pbr = Some(log2_p);
        rows.push(row);
    }
    Ok(RunningResult { rows })
}

/// Runs the martingale protocol: the running mean of the functional,
/// normalized onto `[-4, 4]`, yields `p = exp(-n (mean - bound)^2 / 32)`
/// one-sided, so prefixes at or below the bound report p = 1.
pub fn martingale_run(
    trials: &[TrialRecord],
    functional: &BellFunctional,
) -> Result<RunningResult> {
    let scenario = functional.scenario();
    let normalized = functional.normalized();
    let b_norm = normalized.bound();
    let mut sum_raw = 0.0;
    let mut sum_norm = 0.0;
    let mut rows = Vec::with_capacity(trials.len());
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
        sum_raw += functional.value(
            trial.alice_setting,
            trial.bob_setting,
            trial.alice_outcome,
            trial.bob_outcome,
        );
        sum_norm += normalized.value(
            trial.alice_setting,
            trial.bob_setting,
            trial.alice_outcome,
            trial.bob_outcome,
        );
        let n = (index + 1) as f64;
        let margin = sum_norm / n - b_norm;
        let log2_p = if margin > 0.0 {
            -(n * margin * margin / 32.0) * std::f64::consts::LOG2_E
        } else {
            0.0
        };
        let mut row = RunningRow::empty(index + 1);
        row.i_hat = Some(sum_raw / n);
        row.log2_p_mart = Some(log2_p);
        rows.push(row);
    }
    Ok(RunningResult { rows })
}

/// Per-setting-pair running sums for the ratio estimator.
struct PairStats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

/// Runs the standard-deviation protocol.
///
/// The estimate weights each setting pair's conditional mean by its known
/// probability, and the error bar comes from first-order propagation with
/// each count treated as an independent Poisson variable. The reported
/// `log2 p` is the Gaussian upper-tail probability of the violation in
/// standard-error units, computed in log space so that very large
/// violations do not underflow.
pub fn sd_run(
    trials: &[TrialRecord],
    functional: &BellFunctional,
    setting_dist: &SettingDistribution,
) -> Result<RunningResult> {
    let scenario = functional.scenario();
    if !setting_dist.matches_scenario(scenario) {
        return Err(Error::DimensionMismatch {
            what: "setting distribution",
            expected: scenario.num_setting_pairs(),
            got: setting_dist.probs().len(),
        });
    }
    let bound = functional.bound();
    let num_pairs = scenario.num_setting_pairs();
    let mut stats: Vec<PairStats> = (0..num_pairs)
        .map(|_| PairStats {
            n: 0.0,
            sum: 0.0,
            sum_sq: 0.0,
        })
        .collect();
    let supported: Vec<usize> = (0..scenario.alice_settings())
        .flat_map(|i| (0..scenario.bob_settings()).map(move |j| (i, j)))
        .filter(|&(i, j)| setting_dist.prob(i, j) > 0.0)
        .map(|(i, j)| scenario.pair_index(i, j))
        .collect();

    let mut sum_raw = 0.0;
    let mut rows = Vec::with_capacity(trials.len());
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
        let value = functional.value(
            trial.alice_setting,
            trial.bob_setting,
            trial.alice_outcome,
            trial.bob_outcome,
        );
        sum_raw += value;
        let pair = scenario.pair_index(trial.alice_setting, trial.bob_setting);
        let s = &mut stats[pair];
        s.n += 1.0;
        s.sum += value;
        s.sum_sq += value * value;

        let mut row = RunningRow::empty(index + 1);
        row.i_hat = Some(sum_raw / (index + 1) as f64);
        if supported.iter().all(|&p| stats[p].n > 0.0) {
            let mut i_tilde = 0.0;
            let mut var = 0.0;
            for (i, j, pij) in setting_pairs(scenario, setting_dist) {
                let s = &stats[scenario.pair_index(i, j)];
                let mean = s.sum / s.n;
                i_tilde += pij * mean;
                // sum_x n_x (I_x - M)^2 = sum_sq - sum^2 / n
                let centered = (s.sum_sq - s.sum * s.sum / s.n).max(0.0);
                var += pij * pij * centered / (s.n * s.n);
            }
            let sigma = var.sqrt();
            let z = if sigma > 0.0 {
                (i_tilde - bound) / sigma
            } else if i_tilde > bound {
                f64::INFINITY
            } else if i_tilde < bound {
                f64::NEG_INFINITY
            } else {
                0.0
            };
            row.i_tilde = Some(i_tilde);
            row.sigma = Some(sigma);
            row.log2_p_sd = Some(log2_q(z));
        }
        rows.push(row);
    }
    Ok(RunningResult { rows })
}

fn setting_pairs<'a>(
    scenario: &'a Scenario,
    sd: &'a SettingDistribution,
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    (0..scenario.alice_settings()).flat_map(move |i| {
        (0..scenario.bob_settings()).filter_map(move |j| {
            let pij = sd.prob(i, j);
            (pij > 0.0).then_some((i, j, pij))
        })
    })
}

/// Asymptotic per-trial confidence-gain rates of the three protocols on
/// i.i.d. trials from `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRates {
    /// Expectation of the functional under `q`.
    pub i_mean: f64,
    /// Effective one-trial standard deviation of the ratio estimator.
    pub sigma1: f64,
    /// Gain rate of the standard-deviation protocol, bits per trial.
    pub g_sd: f64,
    /// Gain rate of the martingale protocol, bits per trial.
    pub g_mart: f64,
    /// Statistical strength: the KL distance from `q` to the LR polytope,
    /// which is the PBR protocol's asymptotic rate.
    pub strength: f64,
}

/// Computes [`GainRates`] for a distribution and functional.
///
/// `sigma1^2` is the setting-probability-weighted conditional variance of
/// the functional, the large-`n` limit of `n sigma^2` under the Poisson
/// propagation used by [`sd_run`]. Rates are zero when `q` does not
/// violate the bound; a violating `q` with zero variance has no finite
/// standard-deviation rate and errors instead.
pub fn gain_rates(q: &JointDistribution, functional: &BellFunctional) -> Result<GainRates> {
    if functional.scenario() != q.scenario() {
        return Err(Error::DimensionMismatch {
            what: "functional",
            expected: q.scenario().num_combinations(),
            got: functional.scenario().num_combinations(),
        });
    }
    let scenario = q.scenario();
    let i_mean = q.expectation(functional)?;
    let bound = functional.bound();

    let mut sigma1_sq = 0.0;
    for (i, j, pij) in setting_pairs(scenario, q.setting_dist()) {
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for a in 0..scenario.alice_outcomes() {
            for b in 0..scenario.bob_outcomes() {
                let c = q.prob(i, j, a, b) / pij;
                let v = functional.value(i, j, a, b);
                mean += c * v;
                mean_sq += c * v * v;
            }
        }
        sigma1_sq += pij * (mean_sq - mean * mean).max(0.0);
    }

    let g_sd = if i_mean > bound {
        if sigma1_sq <= 0.0 {
            return Err(Error::DegenerateGain {
                mean: i_mean,
                bound,
            });
        }
        std::f64::consts::LOG2_E * (i_mean - bound) * (i_mean - bound) / (2.0 * sigma1_sq)
    } else {
        0.0
    };

    let normalized = functional.normalized();
    let span = functional.range_high() - functional.range_low();
    let margin_norm = 8.0 * (i_mean - bound) / span;
    let g_mart = if margin_norm > 0.0 {
        std::f64::consts::LOG2_E * margin_norm * margin_norm / 32.0
    } else {
        0.0
    };
    debug_assert!((normalized.bound() - (8.0 * (bound - functional.range_low()) / span - 4.0)).abs() < 1e-12);

    let strength = minimize_kl(q, DEFAULT_EM_TOL)?.strength_bits;

    Ok(GainRates {
        i_mean,
        sigma1: sigma1_sq.sqrt(),
        g_sd,
        g_mart,
        strength,
    })
}
