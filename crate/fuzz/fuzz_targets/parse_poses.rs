#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::{parse_poses, poses_to_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(poses) = parse_poses(data) {
        assert_eq!(parse_poses(poses_to_json(&poses).as_bytes()).expect("written poses parse"), poses);
    }
});
