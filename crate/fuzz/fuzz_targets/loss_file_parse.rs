#![no_main]
use hcvae::eval::read_classifier_losses;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_classifier_losses(data);
});
