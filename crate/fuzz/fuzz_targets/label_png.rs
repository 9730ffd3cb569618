#![no_main]

use std::path::Path;

use ladderseg::dataset_io::decode_labels;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = decode_labels(data, Path::new("fuzz.png")) {
        let (h, w) = labels.dims();
        assert_eq!(labels.data().len(), h * w);
    }
});
