#![no_main]

use cutpost::io::{parse_design_csv, write_design_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(design) = parse_design_csv(text) {
        let again = parse_design_csv(&write_design_csv(&design)).expect("written design parses");
        assert_eq!(again, design);
    }
});
