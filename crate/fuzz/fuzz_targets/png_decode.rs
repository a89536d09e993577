#![no_main]

use hdh::image_model::{normalize, RawImage};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = RawImage::from_png_bytes(data) {
        if img.width() == img.height() && img.width() <= 512 {
            let _ = normalize(&img);
        }
    }
});
