#![no_main]

use hdh::ecc::{ecc_decode, EccConfig};
use libfuzzer_sys::fuzz_target;

// The first two bytes pick the code, the rest is the received codeword stream.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = usize::from(data[0]).max(2);
    let k = usize::from(data[1]).clamp(1, n - 1);
    if let Ok(cfg) = EccConfig::reed_solomon(n, k) {
        let _ = ecc_decode(&data[2..], &cfg);
    }
});
