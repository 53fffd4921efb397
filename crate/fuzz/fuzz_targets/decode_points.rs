#![no_main]

use libfuzzer_sys::fuzz_target;
use pseudolabel::io::{decode_points, encode_points};

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = decode_points(data, "fuzz.bin") {
        assert!(points.iter().all(|p| p.is_finite()));
        assert_eq!(encode_points(&points), data);
    }
});
