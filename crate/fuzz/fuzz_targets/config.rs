#![no_main]

use libfuzzer_sys::fuzz_target;
use prl::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for desk in [false, true] {
        if let Ok(cfg) = ExperimentConfig::from_toml_over(text, desk) {
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).expect("printed config parses");
            assert_eq!(again, cfg);
        }
    }
});
