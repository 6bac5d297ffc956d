//! Parser must never panic; accepted functionals round-trip exactly
//! because coefficients are printed with full precision.

#![no_main]

use belltest_core::format::{parse_functional_file, write_functional_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(f) = parse_functional_file(text) {
        let written = write_functional_file(&f, &[]);
        let again = parse_functional_file(&written).expect("writer output must parse");
        assert_eq!(again.scenario(), f.scenario());
        assert_eq!(again.bound(), f.bound());
        assert_eq!(again.values(), f.values());
    }
});
