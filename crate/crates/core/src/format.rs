//! Text file formats for trial streams, distributions, and functionals.
//!
//! All three are UTF-8 line formats sharing one header style: `#` starts a
//! comment, the first two mandatory comments announce the format version
//! and the scenario, and data lines are whitespace-separated fields.
//! Parsers report the 1-based line number of the first offending line.
//!
//! * Trial file (`# bell-trials v1`): data lines `i j a b`, one observed
//!   trial per line in time order, all fields 0-based integers.
//! * Distribution file (`# bell-dist v1`): data lines `i j a b p`; cells
//!   not listed default to probability zero, duplicates are rejected. The
//!   setting distribution is recovered from the pair masses.
//! * Bell-functional file (`# bell-functional v1`): one `B: <value>` line
//!   with the local-realistic bound, data lines `i j a b value` covering
//!   every combination exactly once.

use crate::scenario::{
    BellFunctional, JointDistribution, Scenario, SettingDistribution, TrialRecord, Violation,
    ViolationKind,
};
use crate::{Error, Result};

const TRIALS_MAGIC: &str = "bell-trials v1";
const DIST_MAGIC: &str = "bell-dist v1";
const FUNCTIONAL_MAGIC: &str = "bell-functional v1";

/// Upper bound on the combination count a file may declare, keeping
/// hostile headers from requesting huge allocations.
pub const MAX_FILE_COMBINATIONS: usize = 1 << 24;

/// Parsed trial file: the declared scenario and the ordered trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFile {
    pub scenario: Scenario,
    pub trials: Vec<TrialRecord>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Line classification shared by the three parsers: hands data lines and
/// scenario headers to callbacks, enforcing magic-before-data ordering.
struct HeaderState {
    magic: &'static str,
    seen_magic: bool,
    scenario: Option<Scenario>,
}

impl HeaderState {
    fn new(magic: &'static str) -> Self {
        Self {
            magic,
            seen_magic: false,
            scenario: None,
        }
    }

    /// Processes a comment line; errors on duplicate scenario headers.
    fn comment(&mut self, lineno: usize, body: &str) -> Result<()> {
        let body = body.trim();
        if body == self.magic {
            self.seen_magic = true;
            return Ok(());
        }
        if let Some(rest) = body.strip_prefix("scenario:") {
            if self.scenario.is_some() {
                return Err(parse_err(lineno, "duplicate scenario header"));
            }
            let dims: Vec<usize> = rest
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| parse_err(lineno, format!("bad scenario field {tok:?}")))
                })
                .collect::<Result<_>>()?;
            let [na, nb, ka, kb] = dims[..] else {
                return Err(parse_err(
                    lineno,
                    "scenario header needs exactly four fields: nA nB kA kB",
                ));
            };
            let scenario = Scenario::new(na, nb, ka, kb)
                .map_err(|e| parse_err(lineno, format!("invalid scenario: {e}")))?;
            if scenario.num_combinations() > MAX_FILE_COMBINATIONS {
                return Err(parse_err(lineno, "scenario too large for a file"));
            }
            self.scenario = Some(scenario);
        }
        Ok(())
    }

    /// The scenario, required before the first data line.
    fn require(&self, lineno: usize) -> Result<&Scenario> {
        if !self.seen_magic {
            return Err(parse_err(
                lineno,
                format!("data before the mandatory '# {}' header", self.magic),
            ));
        }
        self.scenario
            .as_ref()
            .ok_or_else(|| parse_err(lineno, "data before the '# scenario:' header"))
    }

    fn finish(&self, total_lines: usize) -> Result<Scenario> {
        if !self.seen_magic {
            return Err(parse_err(
                total_lines + 1,
                format!("missing mandatory '# {}' header", self.magic),
            ));
        }
        self.scenario
            .clone()
            .ok_or_else(|| parse_err(total_lines + 1, "missing '# scenario:' header"))
    }
}

fn parse_combination(
    scenario: &Scenario,
    lineno: usize,
    tokens: &[&str],
) -> Result<(usize, usize, usize, usize)> {
    let parse = |tok: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| parse_err(lineno, format!("expected a 0-based integer, got {tok:?}")))
    };
    let (i, j, a, b) = (
        parse(tokens[0])?,
        parse(tokens[1])?,
        parse(tokens[2])?,
        parse(tokens[3])?,
    );
    if i >= scenario.alice_settings()
        || j >= scenario.bob_settings()
        || a >= scenario.alice_outcomes()
        || b >= scenario.bob_outcomes()
    {
        return Err(parse_err(
            lineno,
            format!("combination ({i}, {j}, {a}, {b}) outside the declared scenario"),
        ));
    }
    Ok((i, j, a, b))
}

/// Parses a trial file, preserving trial order.
pub fn parse_trial_file(text: &str) -> Result<TrialFile> {
    let mut header = HeaderState::new(TRIALS_MAGIC);
    let mut trials = Vec::new();
    let mut lines = 0;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        lines = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = line.strip_prefix('#') {
            header.comment(lineno, body)?;
            continue;
        }
        let scenario = header.require(lineno)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 fields 'i j a b', got {}", tokens.len()),
            ));
        }
        let (i, j, a, b) = parse_combination(scenario, lineno, &tokens)?;
        trials.push(TrialRecord::new(i, j, a, b));
    }
    let scenario = header.finish(lines)?;
    Ok(TrialFile { scenario, trials })
}

/// Serializes a trial file; `extra_comments` lines (without the leading
/// `#`) land between the mandatory headers and the data.
pub fn write_trial_file(
    scenario: &Scenario,
    trials: &[TrialRecord],
    extra_comments: &[String],
) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {TRIALS_MAGIC}\n"));
    out.push_str(&format!(
        "# scenario: {} {} {} {}\n",
        scenario.alice_settings(),
        scenario.bob_settings(),
        scenario.alice_outcomes(),
        scenario.bob_outcomes()
    ));
    for comment in extra_comments {
        out.push_str(&format!("# {comment}\n"));
    }
    for t in trials {
        out.push_str(&format!(
            "{} {} {} {}\n",
            t.alice_setting, t.bob_setting, t.alice_outcome, t.bob_outcome
        ));
    }
    out
}

/// Parses a distribution file into a validated [`JointDistribution`].
///
/// The setting distribution is the parsed pair masses, so the file must
/// sum to 1 and carry nonnegative cells; violations surface as a
/// validation report rather than a parse error.
pub fn parse_distribution_file(text: &str) -> Result<JointDistribution> {
    let mut header = HeaderState::new(DIST_MAGIC);
    let mut probs: Option<Vec<f64>> = None;
    let mut seen: Option<Vec<bool>> = None;
    let mut lines = 0;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        lines = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = line.strip_prefix('#') {
            header.comment(lineno, body)?;
            continue;
        }
        let scenario = header.require(lineno)?;
        let probs = probs.get_or_insert_with(|| vec![0.0; scenario.num_combinations()]);
        let seen = seen.get_or_insert_with(|| vec![false; scenario.num_combinations()]);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(parse_err(
                lineno,
                format!("expected 5 fields 'i j a b p', got {}", tokens.len()),
            ));
        }
        let (i, j, a, b) = parse_combination(scenario, lineno, &tokens)?;
        let p: f64 = tokens[4]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad probability {:?}", tokens[4])))?;
        if !p.is_finite() {
            return Err(parse_err(lineno, "probability must be finite"));
        }
        let x = scenario.index_of(i, j, a, b);
        if seen[x] {
            return Err(parse_err(
                lineno,
                format!("duplicate entry for combination ({i}, {j}, {a}, {b})"),
            ));
        }
        seen[x] = true;
        probs[x] = p;
    }
    let scenario = header.finish(lines)?;
    let probs = probs.unwrap_or_else(|| vec![0.0; scenario.num_combinations()]);

    // Pair masses become the setting distribution; a total far from 1
    // cannot be represented and is reported as a normalization violation.
    let mut pair_mass = vec![0.0; scenario.num_setting_pairs()];
    for i in 0..scenario.alice_settings() {
        for j in 0..scenario.bob_settings() {
            let mut sum = 0.0;
            for a in 0..scenario.alice_outcomes() {
                for b in 0..scenario.bob_outcomes() {
                    sum += probs[scenario.index_of(i, j, a, b)];
                }
            }
            pair_mass[scenario.pair_index(i, j)] = sum.max(0.0);
        }
    }
    let total: f64 = pair_mass.iter().sum();
    if !((total - 1.0).abs() <= crate::scenario::DIST_TOL) {
        return Err(Error::InvalidDistribution(
            crate::scenario::ValidationReport {
                violations: vec![Violation {
                    kind: ViolationKind::Normalization,
                    magnitude: (total - 1.0).abs(),
                }],
            },
        ));
    }
    for m in pair_mass.iter_mut() {
        *m /= total;
    }
    let setting_dist = SettingDistribution::new(
        scenario.alice_settings(),
        scenario.bob_settings(),
        pair_mass,
    )?;
    JointDistribution::new(scenario, setting_dist, probs)
}

/// Serializes a distribution file with full precision, all cells listed.
pub fn write_distribution_file(q: &JointDistribution, extra_comments: &[String]) -> String {
    let scenario = q.scenario();
    let mut out = String::new();
    out.push_str(&format!("# {DIST_MAGIC}\n"));
    out.push_str(&format!(
        "# scenario: {} {} {} {}\n",
        scenario.alice_settings(),
        scenario.bob_settings(),
        scenario.alice_outcomes(),
        scenario.bob_outcomes()
    ));
    for comment in extra_comments {
        out.push_str(&format!("# {comment}\n"));
    }
    for (i, j, a, b) in scenario.combinations() {
        out.push_str(&format!(
            "{} {} {} {} {:.16e}\n",
            i,
            j,
            a,
            b,
            q.prob(i, j, a, b)
        ));
    }
    out
}

/// Parses a Bell-functional file. Every combination must be assigned a
/// value exactly once and the `B:` bound line must appear exactly once.
pub fn parse_functional_file(text: &str) -> Result<BellFunctional> {
    let mut header = HeaderState::new(FUNCTIONAL_MAGIC);
    let mut values: Option<Vec<f64>> = None;
    let mut seen: Option<Vec<bool>> = None;
    let mut bound: Option<f64> = None;
    let mut lines = 0;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        lines = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = line.strip_prefix('#') {
            header.comment(lineno, body)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("B:") {
            if bound.is_some() {
                return Err(parse_err(lineno, "duplicate bound line"));
            }
            let value: f64 = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad bound {:?}", rest.trim())))?;
            if !value.is_finite() {
                return Err(parse_err(lineno, "bound must be finite"));
            }
            bound = Some(value);
            continue;
        }
        let scenario = header.require(lineno)?;
        let values = values.get_or_insert_with(|| vec![0.0; scenario.num_combinations()]);
        let seen = seen.get_or_insert_with(|| vec![false; scenario.num_combinations()]);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(parse_err(
                lineno,
                format!("expected 5 fields 'i j a b value', got {}", tokens.len()),
            ));
        }
        let (i, j, a, b) = parse_combination(scenario, lineno, &tokens)?;
        let v: f64 = tokens[4]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad value {:?}", tokens[4])))?;
        if !v.is_finite() {
            return Err(parse_err(lineno, "functional value must be finite"));
        }
        let x = scenario.index_of(i, j, a, b);
        if seen[x] {
            return Err(parse_err(
                lineno,
                format!("duplicate entry for combination ({i}, {j}, {a}, {b})"),
            ));
        }
        seen[x] = true;
        values[x] = v;
    }
    let scenario = header.finish(lines)?;
    let Some(bound) = bound else {
        return Err(parse_err(lines + 1, "missing 'B:' bound line"));
    };
    let seen = seen.unwrap_or_else(|| vec![false; scenario.num_combinations()]);
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let (i, j, a, b) = scenario.combination(missing);
        return Err(parse_err(
            lines + 1,
            format!("no value assigned to combination ({i}, {j}, {a}, {b})"),
        ));
    }
    let values = values.unwrap_or_default();
    BellFunctional::new(scenario, values, bound)
}

/// Serializes a Bell-functional file with full precision.
pub fn write_functional_file(f: &BellFunctional, extra_comments: &[String]) -> String {
    let scenario = f.scenario();
    let mut out = String::new();
    out.push_str(&format!("# {FUNCTIONAL_MAGIC}\n"));
    out.push_str(&format!(
        "# scenario: {} {} {} {}\n",
        scenario.alice_settings(),
        scenario.bob_settings(),
        scenario.alice_outcomes(),
        scenario.bob_outcomes()
    ));
    for comment in extra_comments {
        out.push_str(&format!("# {comment}\n"));
    }
    out.push_str(&format!("B: {:.16e}\n", f.bound()));
    for (i, j, a, b) in scenario.combinations() {
        out.push_str(&format!(
            "{} {} {} {} {:.16e}\n",
            i,
            j,
            a,
            b,
            f.value(i, j, a, b)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::chsh_functional;

    #[test]
    fn trial_file_round_trips() {
        let scenario = Scenario::chsh();
        let trials = vec![
            TrialRecord::new(0, 0, 0, 0),
            TrialRecord::new(1, 1, 1, 0),
            TrialRecord::new(0, 1, 1, 1),
        ];
        let text = write_trial_file(&scenario, &trials, &["seed: 7".into()]);
        let parsed = parse_trial_file(&text).unwrap();
        assert_eq!(parsed.scenario, scenario);
        assert_eq!(parsed.trials, trials);
        // Writer output is byte-stable.
        assert_eq!(text, write_trial_file(&scenario, &trials, &["seed: 7".into()]));
    }

    #[test]
    fn trial_file_requires_headers_before_data() {
        let missing_magic = "# scenario: 2 2 2 2\n0 0 0 0\n";
        match parse_trial_file(missing_magic) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
        let missing_scenario = "# bell-trials v1\n0 0 0 0\n";
        assert!(matches!(
            parse_trial_file(missing_scenario),
            Err(Error::Parse { line: 2, .. })
        ));
        let empty = "# bell-trials v1\n";
        assert!(matches!(
            parse_trial_file(empty),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn trial_file_reports_offending_line() {
        let text = "# bell-trials v1\n# scenario: 2 2 2 2\n0 0 0 0\n0 2 0 0\n";
        match parse_trial_file(text) {
            Err(Error::Parse { line: 4, message }) => {
                assert!(message.contains("(0, 2, 0, 0)"), "{message}");
            }
            other => panic!("expected parse error on line 4, got {other:?}"),
        }
        let garbled = "# bell-trials v1\n# scenario: 2 2 2 2\n0 0 zero 0\n";
        assert!(matches!(
            parse_trial_file(garbled),
            Err(Error::Parse { line: 3, .. })
        ));
        let wrong_arity = "# bell-trials v1\n# scenario: 2 2 2 2\n0 0 0\n";
        assert!(matches!(
            parse_trial_file(wrong_arity),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn trial_file_ignores_unknown_comments_and_blank_lines() {
        let text = "\n# bell-trials v1\n# scenario: 1 1 2 2\n# generated for a test\n\n0 0 1 1\n\n";
        let parsed = parse_trial_file(text).unwrap();
        assert_eq!(parsed.trials, vec![TrialRecord::new(0, 0, 1, 1)]);
    }

    #[test]
    fn distribution_file_round_trips_and_defaults_missing_cells() {
        let q = crate::lr::tests::ideal_chsh_q();
        let text = write_distribution_file(&q, &[]);
        let parsed = parse_distribution_file(&text).unwrap();
        for x in 0..16 {
            assert!((parsed.probs()[x] - q.probs()[x]).abs() < 1e-15);
        }

        // Omitted cells are zero.
        let sparse = "# bell-dist v1\n# scenario: 1 1 2 2\n0 0 0 0 0.5\n0 0 1 1 0.5\n";
        let d = parse_distribution_file(sparse).unwrap();
        assert_eq!(d.prob(0, 0, 0, 1), 0.0);
        assert_eq!(d.prob(0, 0, 0, 0), 0.5);
    }

    #[test]
    fn distribution_file_rejects_duplicates_and_bad_normalization() {
        let dup = "# bell-dist v1\n# scenario: 1 1 2 2\n0 0 0 0 0.5\n0 0 0 0 0.5\n";
        assert!(matches!(
            parse_distribution_file(dup),
            Err(Error::Parse { line: 4, .. })
        ));

        let off = "# bell-dist v1\n# scenario: 1 1 2 2\n0 0 0 0 0.55\n0 0 1 1 0.55\n";
        match parse_distribution_file(off) {
            Err(Error::InvalidDistribution(report)) => {
                assert!(report.violations.iter().any(|v| matches!(
                    v.kind,
                    ViolationKind::Normalization
                )));
            }
            other => panic!("expected a validation report, got {other:?}"),
        }

        let negative = "# bell-dist v1\n# scenario: 1 1 2 2\n0 0 0 0 1.25\n0 0 1 1 -0.25\n";
        assert!(matches!(
            parse_distribution_file(negative),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn functional_file_round_trips() {
        let sd = SettingDistribution::uniform(2, 2);
        let f = chsh_functional(&sd).unwrap();
        let text = write_functional_file(&f, &[]);
        let parsed = parse_functional_file(&text).unwrap();
        assert_eq!(parsed.bound(), 2.0);
        for x in 0..16 {
            assert!((parsed.values()[x] - f.values()[x]).abs() < 1e-15);
        }
    }

    #[test]
    fn functional_file_requires_bound_and_full_coverage() {
        let no_bound = "# bell-functional v1\n# scenario: 1 1 1 2\n0 0 0 0 1\n0 0 0 1 -1\n";
        match parse_functional_file(no_bound) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("bound"), "{message}"),
            other => panic!("expected missing-bound error, got {other:?}"),
        }

        let missing_cell = "# bell-functional v1\n# scenario: 1 1 1 2\nB: 0.5\n0 0 0 0 1\n";
        match parse_functional_file(missing_cell) {
            Err(Error::Parse { message, .. }) => {
                assert!(message.contains("(0, 0, 0, 1)"), "{message}")
            }
            other => panic!("expected missing-cell error, got {other:?}"),
        }

        let dup_bound =
            "# bell-functional v1\n# scenario: 1 1 1 2\nB: 0.5\nB: 0.5\n0 0 0 0 1\n0 0 0 1 0\n";
        assert!(matches!(
            parse_functional_file(dup_bound),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn oversized_scenario_is_rejected() {
        let text = "# bell-dist v1\n# scenario: 1000 1000 100 100\n";
        assert!(matches!(
            parse_distribution_file(text),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
