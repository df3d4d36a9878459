#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::schedule::NoiseSchedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sched) = NoiseSchedule::from_json(text) {
        let again = NoiseSchedule::from_json(&sched.to_json().unwrap()).expect("written schedule parses");
        assert_eq!(again.alphas(), sched.alphas());
    }
});
