#![no_main]

use libfuzzer_sys::fuzz_target;
use prl::experiment::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::parse(text) {
        assert_eq!(Checkpoint::parse(&ck.to_text()).expect("printed checkpoint parses"), ck);
    }
});
