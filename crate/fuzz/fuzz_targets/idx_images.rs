#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::io::idx;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = idx::parse_images(data) {
        let again = idx::parse_images(&idx::encode_images(&images)).expect("re-encoded images parse");
        assert_eq!(again, images);
    }
});
