#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::{parse_pose, pose_to_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(pose) = parse_pose(data) {
        assert_eq!(parse_pose(pose_to_json(&pose).as_bytes()).expect("written pose parses"), pose);
    }
});
