#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = lspredict::pipeline::parse_manifest_bytes(data);
});
