#![no_main]
use hcvae::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let printed = cfg.to_string();
        assert_eq!(RunConfig::parse(&printed).unwrap().to_string(), printed);
    }
});
