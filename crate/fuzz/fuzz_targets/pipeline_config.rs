#![no_main]

use libfuzzer_sys::fuzz_target;
use pseudolabel::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = PipelineConfig::from_json(data, "fuzz.json") {
        let _ = config.validate();
    }
});
