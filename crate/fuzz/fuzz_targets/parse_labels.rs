#![no_main]

use libfuzzer_sys::fuzz_target;
use pseudolabel::io::{encode_labels, parse_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = parse_labels(data, "fuzz.jsonl") {
        let again = parse_labels(&encode_labels(&labels), "again.jsonl").expect("re-encoded labels parse");
        assert_eq!(again, labels);
    }
});
