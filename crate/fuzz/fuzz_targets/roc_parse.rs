#![no_main]
use hcvae::eval::read_roc_points;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_roc_points(data);
});
