#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Run configs come from user-written TOML; bad input must surface as an
    // error, never a panic.
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = mpmtl::config::from_toml_str(text);
    }
});
