#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::io::pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pnm::decode(data) {
        // other maxvals rescale on the first pass, after that bytes are stable
        let bytes = pnm::encode(&img).expect("decoded image encodes");
        let again = pnm::decode(&bytes).expect("encoded image decodes");
        assert_eq!(pnm::encode(&again).unwrap(), bytes);
    }
});
