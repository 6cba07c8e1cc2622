#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::render::GrayImage;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(img) = GrayImage::parse_pgm(text) {
        assert_eq!(GrayImage::parse_pgm(&img.to_pgm()).expect("written image parses"), img);
    }
});
