use proptest::prelude::*;
use std::collections::HashSet;
use urnflow::ingest::{observables, TokenStreams};
use urnflow::params::{mean_field, ModelParams};
use urnflow::simulator::{Schedule, SystemState};

fn params(n: usize, phi: f64, iota_g: f64, iota_w: f64, theta: f64) -> Option<ModelParams> {
    ModelParams::validate(vec![theta; n], mean_field(phi, iota_g, n).ok()?, mean_field(1.0, iota_w, n).ok()?).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulator_counts_are_consistent(
        n in 2usize..5, phi in 0.3f64..0.9, iota_g in 0.55f64..1.0, iota_w in 0.55f64..1.0,
        theta in 0.2f64..3.0, seed in any::<u64>(), t in 1u64..400,
    ) {
        let p = params(n, phi, iota_g, iota_w, theta);
        prop_assume!(p.is_some());
        let mut s = SystemState::from_seed(p.unwrap(), seed);
        let mut prev = vec![0u64; n];
        for step in 1..=t {
            s.step();
            let d = s.novelty_counts().to_vec();
            prop_assert!(d.iter().zip(&prev).all(|(a, b)| a >= b && a - b <= 1));
            prop_assert!(d.iter().all(|&x| x <= step));
            prev = d;
        }
        for h in 0..n {
            let total: u64 = (0..s.num_colors()).map(|c| s.counts(c).unwrap()[h]).sum();
            prop_assert_eq!(total, t);
        }
        prop_assert_eq!(prev.iter().sum::<u64>() as usize, s.num_colors());
        for h in 0..n {
            let old: f64 = (0..s.num_colors()).map(|c| s.old_color_probability(h, c).unwrap()).sum();
            prop_assert!((s.birth_probability(h) + old - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ingest_totals_match_tokens(
        streams in prop::collection::vec(prop::collection::vec(0u8..12, 1..80), 1..4),
        top_m in 1usize..6,
    ) {
        let tokens: Vec<Vec<String>> = streams.iter().map(|s| s.iter().map(|x| format!("w{x}")).collect()).collect();
        let names = (0..tokens.len()).map(|i| i.to_string()).collect();
        let ts = TokenStreams::new(names, tokens).unwrap();
        let len = ts.len();
        let distinct: HashSet<&String> = ts.streams.iter().flatten().collect();
        let b = observables(&ts, &Schedule::Explicit { steps: vec![len as u64] }, top_m);
        prop_assert_eq!(b.stats.distinct_items, distinct.len());
        prop_assert_eq!(b.trajectory.d_star[0].iter().sum::<u64>() as usize, distinct.len());
        for (h, stream) in ts.streams.iter().enumerate() {
            let own: HashSet<&String> = stream.iter().collect();
            prop_assert!(b.trajectory.d_star[0][h] as usize <= own.len());
            let tracked: u64 = b.trajectory.k_series[0].iter().map(|k| k[h]).sum();
            prop_assert!(tracked as usize <= len);
        }
        if distinct.len() <= top_m {
            for h in 0..ts.streams.len() {
                let tracked: u64 = b.trajectory.k_series[0].iter().map(|k| k[h]).sum();
                prop_assert_eq!(tracked as usize, len);
            }
        }
        prop_assert_eq!(observables(&ts, &Schedule::Explicit { steps: vec![len as u64] }, top_m), b);
    }
}
