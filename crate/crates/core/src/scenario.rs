//! Scenario bookkeeping: measurement settings, outcomes, trial records,
//! joint distributions over setting-outcome combinations, and Bell
//! functionals.
//!
//! A combination is a tuple `(i, j, a, b)`: Alice's setting, Bob's setting,
//! Alice's outcome, Bob's outcome, all 0-based. Combinations are stored flat
//! in the index order `((i * n_b + j) * k_a + a) * k_b + b`.

use std::fmt;

use crate::{Error, Result};

/// Absolute tolerance for distribution constraints (nonnegativity,
/// normalization, setting marginals, no-signaling).
pub const DIST_TOL: f64 = 1e-9;

/// Absolute tolerance for the setting-distribution normalization.
pub const SETTING_TOL: f64 = 1e-12;

/// Party arities of a bipartite Bell test: number of measurement settings
/// and number of outcomes per setting for each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    alice_settings: usize,
    bob_settings: usize,
    alice_outcomes: usize,
    bob_outcomes: usize,
    combinations: usize,
}

impl Scenario {
    pub fn new(
        alice_settings: usize,
        bob_settings: usize,
        alice_outcomes: usize,
        bob_outcomes: usize,
    ) -> Result<Self> {
        if alice_settings == 0 || bob_settings == 0 || alice_outcomes == 0 || bob_outcomes == 0 {
            return Err(Error::InvalidScenario(
                "every arity must be at least 1".into(),
            ));
        }
        let combinations = alice_settings
            .checked_mul(bob_settings)
            .and_then(|v| v.checked_mul(alice_outcomes))
            .and_then(|v| v.checked_mul(bob_outcomes))
            .ok_or_else(|| Error::InvalidScenario("combination count overflows".into()))?;
        Ok(Self {
            alice_settings,
            bob_settings,
            alice_outcomes,
            bob_outcomes,
            combinations,
        })
    }

    /// The 2-setting 2-outcome scenario on both sides (CHSH-type).
    pub fn chsh() -> Self {
        Self::new(2, 2, 2, 2).expect("valid scenario")
    }

    pub fn alice_settings(&self) -> usize {
        self.alice_settings
    }

    pub fn bob_settings(&self) -> usize {
        self.bob_settings
    }

    pub fn alice_outcomes(&self) -> usize {
        self.alice_outcomes
    }

    pub fn bob_outcomes(&self) -> usize {
        self.bob_outcomes
    }

    /// Number of setting-outcome combinations `(i, j, a, b)`.
    pub fn num_combinations(&self) -> usize {
        self.combinations
    }

    pub fn num_setting_pairs(&self) -> usize {
        self.alice_settings * self.bob_settings
    }

    pub fn num_outcome_pairs(&self) -> usize {
        self.alice_outcomes * self.bob_outcomes
    }

    pub fn is_chsh(&self) -> bool {
        self.alice_settings == 2
            && self.bob_settings == 2
            && self.alice_outcomes == 2
            && self.bob_outcomes == 2
    }

    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        i * self.bob_settings + j
    }

    pub fn index_of(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.bob_settings + j) * self.alice_outcomes + a) * self.bob_outcomes + b
    }

    /// Inverse of [`Scenario::index_of`].
    pub fn combination(&self, index: usize) -> (usize, usize, usize, usize) {
        let b = index % self.bob_outcomes;
        let rest = index / self.bob_outcomes;
        let a = rest % self.alice_outcomes;
        let rest = rest / self.alice_outcomes;
        let j = rest % self.bob_settings;
        let i = rest / self.bob_settings;
        (i, j, a, b)
    }

    /// All combinations in flat index order.
    pub fn combinations(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.combinations).map(|x| self.combination(x))
    }

    pub fn contains(&self, trial: &TrialRecord) -> bool {
        trial.alice_setting < self.alice_settings
            && trial.bob_setting < self.bob_settings
            && trial.alice_outcome < self.alice_outcomes
            && trial.bob_outcome < self.bob_outcomes
    }
}

/// One recorded trial: settings chosen and outcomes observed, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialRecord {
    pub alice_setting: usize,
    pub bob_setting: usize,
    pub alice_outcome: usize,
    pub bob_outcome: usize,
}

impl TrialRecord {
    pub fn new(
        alice_setting: usize,
        bob_setting: usize,
        alice_outcome: usize,
        bob_outcome: usize,
    ) -> Self {
        Self {
            alice_setting,
            bob_setting,
            alice_outcome,
            bob_outcome,
        }
    }
}

/// Probabilities of the setting pairs `(i, j)`, fixed by experiment design.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingDistribution {
    alice_settings: usize,
    bob_settings: usize,
    probs: Vec<f64>,
}

impl SettingDistribution {
    pub fn new(alice_settings: usize, bob_settings: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = alice_settings * bob_settings;
        if probs.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "setting probabilities",
                expected,
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(
                "setting probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SETTING_TOL {
            return Err(Error::InvalidConfig(format!(
                "setting probabilities sum to {sum}, which is off 1 by more than {SETTING_TOL:e}"
            )));
        }
        Ok(Self {
            alice_settings,
            bob_settings,
            probs,
        })
    }

    pub fn uniform(alice_settings: usize, bob_settings: usize) -> Self {
        let n = alice_settings * bob_settings;
        assert!(n > 0, "need at least one setting pair");
        Self {
            alice_settings,
            bob_settings,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn alice_settings(&self) -> usize {
        self.alice_settings
    }

    pub fn bob_settings(&self) -> usize {
        self.bob_settings
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.bob_settings + j]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn matches_scenario(&self, scenario: &Scenario) -> bool {
        self.alice_settings == scenario.alice_settings()
            && self.bob_settings == scenario.bob_settings()
    }
}

/// Which distribution constraint a [`Violation`] refers to.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// `q(i, j, a, b)` is negative beyond tolerance.
    Negative {
        i: usize,
        j: usize,
        a: usize,
        b: usize,
    },
    /// The entries do not sum to 1 within tolerance.
    Normalization,
    /// `sum_(a,b) q(i, j, a, b)` differs from the setting probability.
    SettingMarginal { i: usize, j: usize },
    /// Alice's conditional outcome marginal for `(i, a)` depends on Bob's
    /// setting.
    NoSignalingAlice { i: usize, a: usize },
    /// Bob's conditional outcome marginal for `(j, b)` depends on Alice's
    /// setting.
    NoSignalingBob { j: usize, b: usize },
}

/// One violated constraint together with how large the violation is.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Negative { i, j, a, b } => write!(
                f,
                "negative entry at (i={i}, j={j}, a={a}, b={b}): magnitude {:.3e}",
                self.magnitude
            ),
            ViolationKind::Normalization => write!(
                f,
                "entries sum off 1 by {:.3e}",
                self.magnitude
            ),
            ViolationKind::SettingMarginal { i, j } => write!(
                f,
                "setting-pair marginal (i={i}, j={j}) off by {:.3e}",
                self.magnitude
            ),
            ViolationKind::NoSignalingAlice { i, a } => write!(
                f,
                "Alice's marginal for (i={i}, a={a}) varies across Bob's settings by {:.3e}",
                self.magnitude
            ),
            ViolationKind::NoSignalingBob { j, b } => write!(
                f,
                "Bob's marginal for (j={j}, b={b}) varies across Alice's settings by {:.3e}",
                self.magnitude
            ),
        }
    }
}

/// Outcome of [`validate_parts`]: empty means all checked constraints hold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks raw probabilities against the distribution constraints without
/// constructing a [`JointDistribution`], so invalid data can be inspected.
///
/// Checks nonnegativity, normalization, and the setting marginals, each at
/// [`DIST_TOL`]. With `check_no_signaling` the conditional outcome marginals
/// of each party are additionally required not to depend on the other
/// party's setting; pairs with zero setting probability are skipped there.
pub fn validate_parts(
    scenario: &Scenario,
    setting_dist: &SettingDistribution,
    probs: &[f64],
    check_no_signaling: bool,
) -> Result<ValidationReport> {
    if probs.len() != scenario.num_combinations() {
        return Err(Error::DimensionMismatch {
            what: "distribution entries",
            expected: scenario.num_combinations(),
            got: probs.len(),
        });
    }
    if !setting_dist.matches_scenario(scenario) {
        return Err(Error::DimensionMismatch {
            what: "setting distribution",
            expected: scenario.num_setting_pairs(),
            got: setting_dist.probs().len(),
        });
    }
    let mut report = ValidationReport::default();
    for (x, &p) in probs.iter().enumerate() {
        if !(p >= -DIST_TOL) {
            let (i, j, a, b) = scenario.combination(x);
            report.violations.push(Violation {
                kind: ViolationKind::Negative { i, j, a, b },
                magnitude: if p.is_nan() { f64::NAN } else { -p },
            });
        }
    }
    let sum: f64 = probs.iter().sum();
    if !((sum - 1.0).abs() <= DIST_TOL) {
        report.violations.push(Violation {
            kind: ViolationKind::Normalization,
            magnitude: (sum - 1.0).abs(),
        });
    }
    for i in 0..scenario.alice_settings() {
        for j in 0..scenario.bob_settings() {
            let mut m = 0.0;
            for a in 0..scenario.alice_outcomes() {
                for b in 0..scenario.bob_outcomes() {
                    m += probs[scenario.index_of(i, j, a, b)];
                }
            }
            let dev = (m - setting_dist.prob(i, j)).abs();
            if !(dev <= DIST_TOL) {
                report.violations.push(Violation {
                    kind: ViolationKind::SettingMarginal { i, j },
                    magnitude: dev,
                });
            }
        }
    }
    if check_no_signaling {
        // Alice: for each (i, a), the conditional marginal sum_b q(a, b | i, j)
        // must agree across all j with positive setting probability.
        for i in 0..scenario.alice_settings() {
            for a in 0..scenario.alice_outcomes() {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for j in 0..scenario.bob_settings() {
                    let pij = setting_dist.prob(i, j);
                    if pij <= 0.0 {
                        continue;
                    }
                    let mut m = 0.0;
                    for b in 0..scenario.bob_outcomes() {
                        m += probs[scenario.index_of(i, j, a, b)];
                    }
                    let cond = m / pij;
                    lo = lo.min(cond);
                    hi = hi.max(cond);
                }
                if hi - lo > DIST_TOL {
                    report.violations.push(Violation {
                        kind: ViolationKind::NoSignalingAlice { i, a },
                        magnitude: hi - lo,
                    });
                }
            }
        }
        for j in 0..scenario.bob_settings() {
            for b in 0..scenario.bob_outcomes() {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..scenario.alice_settings() {
                    let pij = setting_dist.prob(i, j);
                    if pij <= 0.0 {
                        continue;
                    }
                    let mut m = 0.0;
                    for a in 0..scenario.alice_outcomes() {
                        m += probs[scenario.index_of(i, j, a, b)];
                    }
                    let cond = m / pij;
                    lo = lo.min(cond);
                    hi = hi.max(cond);
                }
                if hi - lo > DIST_TOL {
                    report.violations.push(Violation {
                        kind: ViolationKind::NoSignalingBob { j, b },
                        magnitude: hi - lo,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// A joint distribution over combinations `(i, j, a, b)` whose marginal on
/// setting pairs equals a fixed [`SettingDistribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    scenario: Scenario,
    setting_dist: SettingDistribution,
    probs: Vec<f64>,
}

impl JointDistribution {
    /// Validates nonnegativity, normalization, and the setting marginals at
    /// [`DIST_TOL`]. No-signaling is not a type invariant; check it via
    /// [`validate_distribution`] when needed.
    pub fn new(
        scenario: Scenario,
        setting_dist: SettingDistribution,
        probs: Vec<f64>,
    ) -> Result<Self> {
        let report = validate_parts(&scenario, &setting_dist, &probs, false)?;
        if !report.is_ok() {
            return Err(Error::InvalidDistribution(report));
        }
        Ok(Self {
            scenario,
            setting_dist,
            probs,
        })
    }

    /// The conditionally uniform distribution: every setting pair gets the
    /// uniform conditional outcome distribution.
    pub fn conditional_uniform(scenario: Scenario, setting_dist: SettingDistribution) -> Self {
        let k = scenario.num_outcome_pairs() as f64;
        let mut probs = vec![0.0; scenario.num_combinations()];
        for (x, p) in probs.iter_mut().enumerate() {
            let (i, j, _, _) = scenario.combination(x);
            *p = setting_dist.prob(i, j) / k;
        }
        Self {
            scenario,
            setting_dist,
            probs,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn setting_dist(&self) -> &SettingDistribution {
        &self.setting_dist
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.probs[self.scenario.index_of(i, j, a, b)]
    }

    /// Expected value of a Bell functional under this distribution.
    pub fn expectation(&self, functional: &BellFunctional) -> Result<f64> {
        if functional.scenario() != &self.scenario {
            return Err(Error::DimensionMismatch {
                what: "functional values",
                expected: self.scenario.num_combinations(),
                got: functional.values().len(),
            });
        }
        Ok(self
            .probs
            .iter()
            .zip(functional.values())
            .map(|(q, v)| q * v)
            .sum())
    }
}

/// Re-checks a constructed distribution, optionally including no-signaling.
pub fn validate_distribution(q: &JointDistribution, check_no_signaling: bool) -> ValidationReport {
    validate_parts(&q.scenario, &q.setting_dist, &q.probs, check_no_signaling)
        .expect("dimensions hold by construction")
}

/// A linear functional of the joint distribution together with its
/// local-realistic bound: a test statistic `I` with `sum_x q_x I(x) <= bound`
/// for every local-realistic `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BellFunctional {
    scenario: Scenario,
    values: Vec<f64>,
    bound: f64,
    range_low: f64,
    range_high: f64,
}

impl BellFunctional {
    pub fn new(scenario: Scenario, values: Vec<f64>, bound: f64) -> Result<Self> {
        if values.len() != scenario.num_combinations() {
            return Err(Error::DimensionMismatch {
                what: "functional values",
                expected: scenario.num_combinations(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) || !bound.is_finite() {
            return Err(Error::InvalidConfig(
                "functional values and bound must be finite".into(),
            ));
        }
        let range_low = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let range_high = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(range_low < range_high) {
            return Err(Error::InvalidConfig(
                "functional is constant: its value range is degenerate".into(),
            ));
        }
        Ok(Self {
            scenario,
            values,
            bound,
            range_low,
            range_high,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.values[self.scenario.index_of(i, j, a, b)]
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn range_low(&self) -> f64 {
        self.range_low
    }

    pub fn range_high(&self) -> f64 {
        self.range_high
    }

    /// Affine rescaling of the functional (and its bound) onto the range
    /// `[-4, 4]`, the normal form used by the martingale protocol.
    pub fn normalized(&self) -> BellFunctional {
        let lo = self.range_low;
        let span = self.range_high - self.range_low;
        let map = |v: f64| 8.0 * (v - lo) / span - 4.0;
        BellFunctional {
            scenario: self.scenario.clone(),
            values: self.values.iter().map(|&v| map(v)).collect(),
            bound: map(self.bound),
            range_low: -4.0,
            range_high: 4.0,
        }
    }
}

/// The CHSH functional for the 2-setting 2-outcome scenario, expressed per
/// trial: `I(i, j, a, b) = s_ij * v(a) * v(b) / p_ij` with outcome values
/// `v(0) = +1`, `v(1) = -1`, and `s_ij = -1` exactly for the setting pair
/// `(1, 1)`. Its expectation is the CHSH combination of correlators, with
/// local-realistic bound 2.
pub fn chsh_functional(setting_dist: &SettingDistribution) -> Result<BellFunctional> {
    let scenario = Scenario::chsh();
    if !setting_dist.matches_scenario(&scenario) {
        return Err(Error::DimensionMismatch {
            what: "setting distribution",
            expected: 4,
            got: setting_dist.probs().len(),
        });
    }
    let mut values = vec![0.0; scenario.num_combinations()];
    for i in 0..2 {
        for j in 0..2 {
            let pij = setting_dist.prob(i, j);
            if pij <= 0.0 {
                return Err(Error::ZeroSettingProbability { i, j });
            }
            let sign = if i == 1 && j == 1 { -1.0 } else { 1.0 };
            for a in 0..2 {
                for b in 0..2 {
                    let va = 1.0 - 2.0 * a as f64;
                    let vb = 1.0 - 2.0 * b as f64;
                    values[scenario.index_of(i, j, a, b)] = sign * va * vb / pij;
                }
            }
        }
    }
    BellFunctional::new(scenario, values, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_chsh() -> (Scenario, SettingDistribution) {
        (Scenario::chsh(), SettingDistribution::uniform(2, 2))
    }

    #[test]
    fn index_roundtrip() {
        let s = Scenario::new(3, 2, 2, 4).unwrap();
        for x in 0..s.num_combinations() {
            let (i, j, a, b) = s.combination(x);
            assert_eq!(s.index_of(i, j, a, b), x);
        }
    }

    #[test]
    fn rejects_zero_arity() {
        assert!(Scenario::new(0, 2, 2, 2).is_err());
        assert!(Scenario::new(2, 2, 0, 2).is_err());
    }

    #[test]
    fn rejects_overflowing_arity() {
        assert!(Scenario::new(usize::MAX, 2, 2, 2).is_err());
    }

    #[test]
    fn setting_distribution_enforces_normalization() {
        assert!(SettingDistribution::new(2, 2, vec![0.25; 4]).is_ok());
        let off = vec![0.25, 0.25, 0.25, 0.25 + 3e-12];
        assert!(SettingDistribution::new(2, 2, off).is_err());
        let neg = vec![0.5, 0.5, 0.25, -0.25];
        assert!(SettingDistribution::new(2, 2, neg).is_err());
    }

    #[test]
    fn chsh_functional_values_and_bound() {
        let (_, sd) = uniform_chsh();
        let f = chsh_functional(&sd).unwrap();
        assert_eq!(f.bound(), 2.0);
        // (i=0, j=0, a=0, b=0): +1 * (+1)(+1) / (1/4) = 4
        assert_eq!(f.value(0, 0, 0, 0), 4.0);
        assert_eq!(f.value(0, 0, 0, 1), -4.0);
        // (i=1, j=1): sign flips
        assert_eq!(f.value(1, 1, 0, 0), -4.0);
        assert_eq!(f.value(1, 1, 1, 0), 4.0);
        assert_eq!(f.range_low(), -4.0);
        assert_eq!(f.range_high(), 4.0);
    }

    #[test]
    fn chsh_functional_rejects_zero_setting_pair() {
        let sd = SettingDistribution::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            chsh_functional(&sd),
            Err(Error::ZeroSettingProbability { i: 1, j: 0 })
        ));
    }

    #[test]
    fn functional_rejects_degenerate_range() {
        let s = Scenario::chsh();
        let err = BellFunctional::new(s, vec![1.0; 16], 0.5);
        assert!(err.is_err());
    }

    #[test]
    fn normalization_of_functional_is_affine() {
        let (_, sd) = uniform_chsh();
        let f = chsh_functional(&sd).unwrap();
        let n = f.normalized();
        // CHSH already spans [-4, 4], so the map is the identity.
        assert_eq!(n.values(), f.values());
        assert_eq!(n.bound(), 2.0);
    }

    #[test]
    fn validation_flags_negative_entry() {
        let (s, sd) = uniform_chsh();
        let mut probs = vec![1.0 / 16.0; 16];
        probs[s.index_of(0, 1, 1, 1)] = -0.01;
        let report = validate_parts(&s, &sd, &probs, false).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::Negative { i: 0, j: 1, a: 1, b: 1 })
                && (v.magnitude - 0.01).abs() < 1e-15));
    }

    #[test]
    fn validation_flags_normalization() {
        let (s, sd) = uniform_chsh();
        let mut probs = vec![1.0 / 16.0; 16];
        for p in probs.iter_mut() {
            *p *= 1.1;
        }
        let report = validate_parts(&s, &sd, &probs, false).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::Normalization)
                && (v.magnitude - 0.1).abs() < 1e-9));
    }

    #[test]
    fn validation_flags_no_signaling_with_magnitude() {
        let (s, sd) = uniform_chsh();
        // Pair (0,0): Alice sees outcome 0 with probability 0.6;
        // pair (0,1): with probability 0.5. Both setting pairs normalize.
        let mut probs = vec![0.0; 16];
        let fill = |probs: &mut Vec<f64>, i: usize, j: usize, cond: [f64; 4]| {
            for a in 0..2 {
                for b in 0..2 {
                    probs[s.index_of(i, j, a, b)] = 0.25 * cond[2 * a + b];
                }
            }
        };
        fill(&mut probs, 0, 0, [0.6, 0.0, 0.0, 0.4]);
        fill(&mut probs, 0, 1, [0.25, 0.25, 0.25, 0.25]);
        fill(&mut probs, 1, 0, [0.25, 0.25, 0.25, 0.25]);
        fill(&mut probs, 1, 1, [0.25, 0.25, 0.25, 0.25]);
        let report = validate_parts(&s, &sd, &probs, true).unwrap();
        let alice: Vec<_> = report
            .violations
            .iter()
            .filter(|v| matches!(v.kind, ViolationKind::NoSignalingAlice { i: 0, .. }))
            .collect();
        assert_eq!(alice.len(), 2, "both outcomes of setting 0 shift");
        for v in alice {
            assert!(
                (v.magnitude - 0.1).abs() < 1e-12,
                "expected magnitude 0.1, got {}",
                v.magnitude
            );
        }
        // Without the flag the same distribution passes.
        let report = validate_parts(&s, &sd, &probs, false).unwrap();
        assert!(report.is_ok());
    }

    #[test]
    fn joint_distribution_rejects_marginal_mismatch() {
        let (s, sd) = uniform_chsh();
        let mut probs = vec![0.0; 16];
        // All mass on the first setting pair.
        probs[0] = 1.0;
        let err = JointDistribution::new(s, sd, probs);
        assert!(matches!(err, Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn conditional_uniform_is_valid() {
        let (s, sd) = uniform_chsh();
        let u = JointDistribution::conditional_uniform(s, sd);
        assert!(validate_distribution(&u, true).is_ok());
        assert_eq!(u.prob(1, 0, 1, 1), 1.0 / 16.0);
    }

    #[test]
    fn expectation_of_chsh_under_uniform_is_zero() {
        let (s, sd) = uniform_chsh();
        let f = chsh_functional(&sd).unwrap();
        let u = JointDistribution::conditional_uniform(s, sd);
        assert!(u.expectation(&f).unwrap().abs() < 1e-12);
    }
}
