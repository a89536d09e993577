#![no_main]

use hdh::network::WeightSet;
use libfuzzer_sys::fuzz_target;

// Input layout: manifest text, a NUL byte, then the weight blob.
fuzz_target!(|data: &[u8]| {
    let (manifest, blob) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    if let Ok(text) = std::str::from_utf8(manifest) {
        let _ = WeightSet::<f32>::from_parts(text, blob);
    }
});
