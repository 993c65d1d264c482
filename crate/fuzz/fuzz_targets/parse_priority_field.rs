#![no_main]
use libfuzzer_sys::fuzz_target;
use weighted_eps::parse_priority_field;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = parse_priority_field(text) {
        assert!(p.urgency.level() <= 7);
        // Serialized form must parse back to the same value.
        let again = parse_priority_field(&p.to_string()).expect("reparse");
        assert_eq!(p, again);
    }
});
