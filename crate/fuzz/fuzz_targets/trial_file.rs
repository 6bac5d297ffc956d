//! Parser must never panic, and accepted files must round-trip exactly
//! through the writer.

#![no_main]

use belltest_core::format::{parse_trial_file, write_trial_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_trial_file(text) {
        let written = write_trial_file(&file.scenario, &file.trials, &[]);
        let again = parse_trial_file(&written).expect("writer output must parse");
        assert_eq!(again.scenario, file.scenario);
        assert_eq!(again.trials, file.trials);
    }
});
