use std::path::PathBuf;

use proptest::prelude::*;

use smoe::cli::manifest::{Manifest, ManifestRecord};
use smoe::signal::{fbank, frame_count, to_narrowband, Waveform};
use smoe::smoe::{gate_decoder, gate_encoder, Bandwidth, Task};
use smoe::train::{derangement, nb_twin_indices, BenchmarkConfig, SyntheticTaskSpec};

fn bandwidth() -> impl Strategy<Value = Bandwidth> {
    prop_oneof![Just(Bandwidth::Wb), Just(Bandwidth::Nb)]
}

fn task() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Asr), Just(Task::St)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_are_one_hot(bw in bandwidth(), t in task()) {
        for g in [gate_encoder(bw), gate_decoder(t)] {
            prop_assert_eq!(g.weights().iter().sum::<f64>(), 1.0);
            prop_assert_eq!(g.weights().iter().filter(|w| **w == 0.0).count(), g.len() - 1);
        }
    }

    #[test]
    fn manifest_text_round_trips(
        rows in proptest::collection::vec(("[a-z0-9_/]{1,12}\\.wav", bandwidth(), task(), "[ -~]{1,20}"), 0..8)
    ) {
        let m = Manifest {
            records: rows
                .into_iter()
                .map(|(audio, bandwidth, task, text)| ManifestRecord { audio: PathBuf::from(audio), bandwidth, task, text })
                .collect(),
        };
        prop_assert_eq!(Manifest::from_text(&m.to_text().unwrap()).unwrap(), m);
    }

    #[test]
    fn benchmark_config_text_round_trips(
        steps in 1usize..2000,
        lr in 1e-4f64..1e-1,
        d_ff in 1usize..64,
        dec_d_ff in 1usize..64,
        seeds in proptest::collection::vec(0u64..1000, 1..4),
        alphabet in 2usize..=26,
    ) {
        let mut cfg = BenchmarkConfig::default();
        for (k, v) in [
            ("steps", steps.to_string()),
            ("lr", lr.to_string()),
            ("d_ff", d_ff.to_string()),
            ("dec_d_ff", dec_d_ff.to_string()),
            ("alphabet", alphabet.to_string()),
        ] {
            prop_assert!(cfg.set(k, &v).unwrap());
        }
        cfg.seeds = seeds;
        let back = BenchmarkConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
        prop_assert_eq!(back.train.lr, lr);
        prop_assert_eq!(back.spec, cfg.spec);
    }

    #[test]
    fn derangements_have_no_fixed_points(n in 2usize..=26, seed in any::<u64>()) {
        let d = derangement(n, seed);
        let mut sorted = d.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(d.iter().enumerate().all(|(i, &v)| i != v));
        let spec = SyntheticTaskSpec { alphabet: n, derangement: d, ..Default::default() };
        prop_assert!(spec.validate().is_ok());
    }

    #[test]
    fn twin_selection_size_and_order(n in 0usize..300, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let idx = nb_twin_indices(n, frac, seed);
        prop_assert_eq!(idx.len(), (frac * n as f64).round() as usize);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn fbank_geometry_follows_frame_count(n in 400usize..4000, seed in any::<u64>()) {
        let mut x = seed;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2
            })
            .collect();
        let w = Waveform::new(samples, 16_000).unwrap();
        let f = fbank(&w).unwrap();
        prop_assert_eq!(f.frames.shape(), &[frame_count(n).unwrap(), 80][..]);
        prop_assert!(f.frames.all_finite());
        let nb = to_narrowband(&w).unwrap();
        prop_assert_eq!(nb.sample_rate(), 8000);
        prop_assert_eq!(fbank(&nb).unwrap().bandwidth, Bandwidth::Nb);
    }
}
