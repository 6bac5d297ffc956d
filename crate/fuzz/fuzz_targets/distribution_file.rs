//! Parser must never panic; accepted distributions reparse to the same
//! cells up to renormalization noise.

#![no_main]

use belltest_core::format::{parse_distribution_file, write_distribution_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(q) = parse_distribution_file(text) {
        let written = write_distribution_file(&q, &[]);
        let again = parse_distribution_file(&written).expect("writer output must parse");
        assert_eq!(again.scenario(), q.scenario());
        for (a, b) in again.probs().iter().zip(q.probs()) {
            // The writer prints 17 significant digits and the parser
            // renormalizes, so cells may move by a few ulps.
            assert!((a - b).abs() <= 1e-12, "cell moved: {a} vs {b}");
        }
    }
});
