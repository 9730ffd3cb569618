#![no_main]

use ladderseg::build_default_space;
use ladderseg::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::parse(text, &[]) {
        let _ = config.validate(&build_default_space());
        let _ = RunConfig::parse(&config.to_toml(), &[]).expect("serialized config parses");
    }
});
