#![no_main]

use ladderseg::LabelSpace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(space) = LabelSpace::parse(text) {
            // every accepted table must map its own classes back and forth
            for id in space.dataset_ids() {
                let map = space.dataset(id).unwrap();
                for c in map.classes() {
                    let native = map.native(c).unwrap();
                    assert_eq!(map.unified(native), Some(c));
                }
            }
        }
    }
});
