#![no_main]

use cicd_core::data::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let tokens = tokenize(text);
    assert!(tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
    // re-tokenising the space-joined output is a fixed point
    assert_eq!(tokenize(&tokens.join(" ")), tokens);
});
