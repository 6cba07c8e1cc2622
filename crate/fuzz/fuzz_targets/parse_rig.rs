#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::{parse_rig, rig_to_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(rig) = parse_rig(data) {
        let again = parse_rig(rig_to_json(&rig).as_bytes()).expect("written rig parses");
        assert_eq!(again, rig);
    }
});
