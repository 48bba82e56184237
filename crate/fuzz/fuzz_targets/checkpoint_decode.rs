#![no_main]

use libfuzzer_sys::fuzz_target;
use tankrl::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::decode(data) else {
        return;
    };
    // Anything that decodes must survive a round trip and produce an action.
    let again = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
    assert_eq!(again.encode(), ckpt.encode());
    let obs = [0.0, 1.0, 0.0];
    let _ = ckpt.act(&obs);
    if ckpt.training.is_some() {
        let _ = ckpt.into_agent();
    }
});
