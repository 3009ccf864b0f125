#![no_main]

use cutpost::io::{parse_mixture_json, write_mixture_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mixture) = parse_mixture_json(text) {
        let again = parse_mixture_json(&write_mixture_json(&mixture)).expect("written mixture parses");
        assert_eq!(again, mixture);
    }
});
