#![no_main]

use libfuzzer_sys::fuzz_target;
use spectral_diffusion::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        ckpt.model().expect("validated checkpoint builds a model");
        assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), ckpt);
    }
});
