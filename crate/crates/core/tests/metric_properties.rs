use proptest::prelude::*;
use weighted_eps::manifest::{generate_synthetic, SyntheticProfile};
use weighted_eps::metrics::{derive_report, improvement_table, Metric, QoeReport};
use weighted_eps::{simulate, Alpha, DeliveryTrace, LinkParams, Quantum, ResourceManifest, Strategy, Urgency};

fn manifest(count: usize, seed: u64) -> ResourceManifest {
    let profile = SyntheticProfile {
        resource_count: count,
        total_bytes: 40_000 * count as u64,
        urgency_mix: [(0u8, 0.2), (3, 0.5), (6, 0.3)]
            .into_iter()
            .map(|(u, f)| (Urgency::new(u).unwrap(), f))
            .collect(),
        depth: count.min(3),
    };
    generate_synthetic(&profile, seed).unwrap()
}

fn run(m: &ResourceManifest, strategy: Strategy, seed: u64) -> DeliveryTrace {
    simulate(m, LinkParams::default().with_seed(seed), strategy, Quantum::default()).unwrap()
}

fn scaled(trace: &DeliveryTrace, k: f64) -> DeliveryTrace {
    let mut out = trace.clone();
    for e in &mut out.events {
        e.time_ms *= k;
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scaling_time_scales_the_report(count in 2usize..20, seed in any::<u64>(), k in 0.01f64..100.0) {
        let m = manifest(count, seed);
        let base = run(&m, Strategy::SequentialFifo, seed);
        let variant = run(&m, Strategy::WeightedIncremental(Alpha::STRICT), seed);
        let (rb, rv) = (derive_report(&base, &m).unwrap(), derive_report(&variant, &m).unwrap());
        let (sb, sv) = (
            derive_report(&scaled(&base, k), &m).unwrap(),
            derive_report(&scaled(&variant, k), &m).unwrap(),
        );
        for metric in Metric::ALL {
            match (rb.get(metric), sb.get(metric)) {
                (Some(a), Some(b)) => prop_assert!(close(a * k, b), "{} {} {}", metric, a * k, b),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
        let plain = improvement_table(&rb, &[("w".to_string(), rv)]);
        let stretched = improvement_table(&sb, &[("w".to_string(), sv)]);
        prop_assert_eq!(plain.cells.len(), stretched.cells.len());
        for (p, s) in plain.cells.iter().zip(&stretched.cells) {
            prop_assert!((p.improvement_pct - s.improvement_pct).abs() < 1e-9);
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact(count in 2usize..20, seed in any::<u64>(), e in -4i32..5) {
        let m = manifest(count, seed);
        let trace = run(&m, Strategy::RoundRobin, seed);
        let k = 2f64.powi(e);
        let r = derive_report(&trace, &m).unwrap();
        let s = derive_report(&scaled(&trace, k), &m).unwrap();
        for metric in Metric::ALL {
            prop_assert_eq!(r.get(metric).map(|v| v * k), s.get(metric));
        }
    }

    #[test]
    fn simultaneous_events_can_be_reordered(count in 2usize..20, seed in any::<u64>()) {
        let m = manifest(count, seed);
        let trace = run(&m, Strategy::WeightedIncremental(Alpha::new(0.5).unwrap()), seed);
        let mut shuffled = trace.clone();
        // Reverse every run of equal timestamps.
        let mut start = 0;
        while start < shuffled.events.len() {
            let t = shuffled.events[start].time_ms;
            let end = start + shuffled.events[start..].iter().take_while(|e| e.time_ms == t).count();
            shuffled.events[start..end].reverse();
            start = end;
        }
        prop_assert_eq!(derive_report(&trace, &m).unwrap(), derive_report(&shuffled, &m).unwrap());
    }

    #[test]
    fn self_comparison_is_zero(fcp in prop::option::of(1.0f64..1e5), page in 1.0f64..1e5, mean in 1.0f64..1e5) {
        let r = QoeReport {
            proxy_fcp_ms: fcp,
            proxy_lcp_ms: None,
            proxy_tti_ms: Some(page),
            page_complete_ms: page,
            mean_completion_ms: mean,
            median_completion_ms: mean,
        };
        let table = improvement_table(&r, &[("same".to_string(), r.clone())]);
        prop_assert!(table.cells.iter().all(|c| c.improvement_pct == 0.0));
    }
}
