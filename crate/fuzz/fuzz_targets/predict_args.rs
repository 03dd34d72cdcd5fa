#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let args: Vec<String> = text.split('\u{1f}').map(str::to_string).collect();
        let _ = lspredict::cli::parse_predict_args(&args);
    }
});
