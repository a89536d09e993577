#![no_main]

use hdh::image_model::ImageTensor;
use hdh::message::decode_plane;
use libfuzzer_sys::fuzz_target;

// First byte is log2 of the block size; the rest fills a 16x16 plane.
fuzz_target!(|data: &[u8]| {
    let Some((&shift, rest)) = data.split_first() else {
        return;
    };
    let values: Vec<f32> = (0..768)
        .map(|i| rest.get(i).map_or(0.0, |&b| f32::from(b) / 127.5 - 1.0))
        .collect();
    let plane = ImageTensor::clamped(16, 3, values);
    let _ = decode_plane(&plane, 1usize << (shift % 8));
});
