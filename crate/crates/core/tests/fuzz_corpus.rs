//! The fuzz seeds must stay valid inputs for their parsers.

use std::fs;
use std::path::PathBuf;

use nilbs_core::io;
use nilbs_core::render::GrayImage;
use nilbs_core::trainer::TrainConfig;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn json_seeds_parse_and_round_trip() {
    for (p, b) in seeds("parse_rig") {
        let rig = io::parse_rig(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(io::parse_rig(io::rig_to_json(&rig).as_bytes()).unwrap(), rig);
    }
    for (p, b) in seeds("parse_pose") {
        let pose = io::parse_pose(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(io::parse_pose(io::pose_to_json(&pose).as_bytes()).unwrap(), pose);
    }
    for (p, b) in seeds("parse_poses") {
        io::parse_poses(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_mesh") {
        io::parse_mesh(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_meta") {
        io::parse_meta(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_grid") {
        io::parse_grid(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_checkpoint") {
        let net = io::parse_checkpoint(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(io::parse_checkpoint(io::checkpoint_to_json(&net).as_bytes()).unwrap(), net);
    }
}

#[test]
fn text_seeds_parse() {
    for (p, b) in seeds("train_config") {
        TrainConfig::parse(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_pgm") {
        GrayImage::parse_pgm(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
