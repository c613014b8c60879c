#![no_main]
use hcvae::metrics::read_scores;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_scores(data);
});
