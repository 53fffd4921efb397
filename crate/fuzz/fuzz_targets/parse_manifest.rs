#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = pseudolabel::io::parse_manifest(data) {
        assert!(!m.frames.is_empty());
        assert!(m.frames.windows(2).all(|w| w[0].index < w[1].index));
    }
});
