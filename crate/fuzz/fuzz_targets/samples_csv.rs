#![no_main]

use cutpost::io::{parse_samples_csv, write_samples_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(samples) = parse_samples_csv(text) {
        if samples.is_empty() {
            return;
        }
        let again = parse_samples_csv(&write_samples_csv(&samples)).expect("written samples parse");
        assert_eq!(again, samples);
    }
});
