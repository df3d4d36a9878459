#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::stats::ClassStats;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(stats) = ClassStats::from_json(text) {
        let again = ClassStats::from_json(&stats.to_json().unwrap()).expect("written stats parse");
        assert_eq!(again, stats);
    }
});
