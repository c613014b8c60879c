#![no_main]
use hcvae::cvae::CvaeModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = CvaeModel::from_bytes(data) {
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(model.to_bytes(), data);
    }
});
