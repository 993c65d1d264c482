#![no_main]
use libfuzzer_sys::fuzz_target;
use weighted_eps::DeliveryTrace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(trace) = DeliveryTrace::from_csv(text) {
        let again = DeliveryTrace::from_csv(&trace.to_csv()).expect("round trip");
        assert_eq!(trace.events.len(), again.events.len());
        let _ = trace.completion_times();
        let _ = trace.granted_bytes();
    }
});
