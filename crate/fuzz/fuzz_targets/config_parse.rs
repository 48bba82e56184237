#![no_main]

use libfuzzer_sys::fuzz_target;
use tankrl::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // The last line, if it looks like `key=value`, doubles as an override.
    let (body, overrides) = match text.rsplit_once('\n') {
        Some((body, last)) if last.contains('=') && !last.contains(' ') => {
            (body, vec![last.to_string()])
        }
        _ => (text, Vec::new()),
    };
    let Ok(config) = ExperimentConfig::parse_with_overrides(body, &overrides) else {
        return;
    };
    // A valid config must reproduce itself through its canonical form.
    let canonical = config.canonical_toml();
    let again = ExperimentConfig::parse(&canonical).expect("canonical config parses");
    assert_eq!(again.content_hash(), config.content_hash());
});
