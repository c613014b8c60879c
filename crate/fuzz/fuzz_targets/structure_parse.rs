#![no_main]
use hcvae::synth::CausalStructure;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = CausalStructure::from_json(text) {
        assert_eq!(CausalStructure::from_json(&s.to_json()).unwrap(), s);
    }
});
