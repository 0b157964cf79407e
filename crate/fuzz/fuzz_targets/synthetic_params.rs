#![no_main]

use cicd_core::data::{gen_synthetic, SyntheticParams};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(params) = SyntheticParams::from_json_str(text) else {
        return;
    };
    // generation cost is linear in the corpus size; keep iterations fast
    if params.n_instances <= 64 && params.articles_max <= 16 && params.article_len_max <= 64 && params.claim_len_max <= 64 {
        let corpus = gen_synthetic(&params).expect("accepted parameters generate");
        assert_eq!(corpus.instances.len(), params.n_instances);
    }
});
