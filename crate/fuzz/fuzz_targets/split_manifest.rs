#![no_main]

use hdh::image_model::DatasetSplit;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(split) = DatasetSplit::from_manifest(text) {
        let again = DatasetSplit::from_manifest(&split.to_manifest()).expect("manifest round trip");
        assert_eq!(again, split);
    }
});
