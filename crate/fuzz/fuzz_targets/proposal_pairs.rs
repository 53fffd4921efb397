#![no_main]

use libfuzzer_sys::fuzz_target;
use pseudolabel::cst::{all_losses, parse_proposal_pairs};

fuzz_target!(|data: &[u8]| {
    if let Ok(pairs) = parse_proposal_pairs(data, "fuzz.json") {
        let _ = all_losses(&pairs);
    }
});
