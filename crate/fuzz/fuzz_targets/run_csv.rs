#![no_main]

use libfuzzer_sys::fuzz_target;
use tankrl::experiment::SeedData;

// Input: epochs.csv contents, a NUL byte, then episodes.csv contents.
fuzz_target!(|data: &[u8]| {
    let (epochs, episodes) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    let _ = SeedData::parse(0, epochs, episodes);
});
