#![no_main]
use libfuzzer_sys::fuzz_target;
use weighted_eps::ResourceManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = ResourceManifest::from_json(text) {
        m.check().expect("accepted manifest is valid");
        let again = ResourceManifest::from_json(&m.to_json()).expect("round trip");
        assert_eq!(m, again);
        let _ = m.summary_csv();
    }
});
