#![no_main]

use libfuzzer_sys::fuzz_target;
use prl::planner::Macro;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = text.parse::<Macro>() {
        assert_eq!(m.to_string().parse::<Macro>().expect("printed macro parses"), m);
    }
});
