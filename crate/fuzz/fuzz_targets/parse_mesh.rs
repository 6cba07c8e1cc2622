#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::{mesh_to_json, parse_mesh};

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = parse_mesh(data) {
        let again = parse_mesh(mesh_to_json(&mesh).as_bytes()).expect("written mesh parses");
        assert_eq!(again.vertices(), mesh.vertices());
        assert_eq!(again.weights(), mesh.weights());
    }
});
