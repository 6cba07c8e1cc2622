#![no_main]

use libfuzzer_sys::fuzz_target;
use nilbs_core::io::parse_grid;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = parse_grid(data) {
        // Queries anywhere must stay in range.
        let b = grid.bbox();
        for p in [b.min, b.max, b.center(), [b.max[0] + 1.0, b.min[1]]] {
            let v = grid.query(p);
            assert!((0.0..=1.0).contains(&v));
        }
    }
});
