#![no_main]

use hdh::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let _ = cfg.train_config().digest();
        let _ = cfg.network_spec().fingerprint();
    }
});
