#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::{checkpoint_to_json, parse_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = parse_checkpoint(data) {
        let again = parse_checkpoint(checkpoint_to_json(&net).as_bytes()).expect("written checkpoint parses");
        assert_eq!(again, net);
    }
});
