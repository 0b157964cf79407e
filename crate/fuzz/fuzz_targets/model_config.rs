#![no_main]

use cicd_core::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ModelConfig::from_json_str(text) {
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ModelConfig::from_json_str(&json).expect("resolved config reparses"), cfg);
    }
});
