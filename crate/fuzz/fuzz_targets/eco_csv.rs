#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(eco) = cutpost::io::parse_eco_csv(text) {
            assert!(!eco.is_empty());
            assert!(eco.z.iter().zip(&eco.n).all(|(z, n)| z <= n));
        }
    }
});
