#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::parse(text) {
        assert_eq!(TrainConfig::parse(&cfg.to_config_string()).expect("written config parses"), cfg);
    }
});
