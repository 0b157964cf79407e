#![no_main]

use cicd_core::data::{parse_jsonl, write_jsonl};
use cicd_core::LabelPreset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    for labels in [LabelPreset::Snopes2, LabelPreset::Politifact3, LabelPreset::Fever3] {
        let Ok(instances) = parse_jsonl(text, labels) else {
            continue;
        };
        let mut out = Vec::new();
        write_jsonl(&mut out, &instances, labels).unwrap();
        let again = parse_jsonl(std::str::from_utf8(&out).unwrap(), labels).expect("written corpus reparses");
        assert_eq!(instances, again);
    }
});
