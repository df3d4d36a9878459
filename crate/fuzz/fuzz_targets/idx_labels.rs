#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::io::idx;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = idx::parse_labels(data) {
        assert_eq!(idx::parse_labels(&idx::encode_labels(&labels)).unwrap(), labels);
    }
});
