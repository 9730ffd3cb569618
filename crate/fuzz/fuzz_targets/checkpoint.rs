#![no_main]

use ladderseg::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let round = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(round.iteration, ckpt.iteration);
    }
});
