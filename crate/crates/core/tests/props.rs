//! Property-based invariants: serialization round-trips, ordering laws of the
//! event walk, physical bounds of the circuit membrane, and encoding algebra.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttfs_snn::circuit::fire_time_circuit;
use ttfs_snn::dataset::{encode, jitter, shrink};
use ttfs_snn::forward::{fire_time_linear, forward};
use ttfs_snn::io::{load_model, load_realization, save_model, save_realization};
use ttfs_snn::network::{CircuitParams, Layer, Matrix, Network, NeuronModel, SpikeVector};
use ttfs_snn::oracle::{sort_events, ArrivalEvent};
use ttfs_snn::variation::VariationRealization;

fn build_network(
    seed: u64,
    sizes: &[usize],
    model: NeuronModel,
    rails: CircuitParams,
    with_delays: bool,
) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            Layer {
                weights: Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-1.0..2.0)),
                thresholds: (0..fan_out).map(|_| rng.gen_range(0.1..2.0)).collect(),
                delays: with_delays
                    .then(|| Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(0.0..2.0))),
            }
        })
        .collect();
    Network {
        input_size: sizes[0],
        layers,
        model,
        circuit: rails,
    }
}

fn build_events(seed: u64, n: usize) -> Vec<ArrivalEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<ArrivalEvent> = (0..n)
        .map(|j| ArrivalEvent::new(j, rng.gen_range(0.0..5.0), rng.gen_range(-1.0..2.0)))
        .collect();
    sort_events(&mut events);
    events
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_files_round_trip_exactly(
        seed in any::<u64>(),
        sizes in proptest::collection::vec(1usize..=5, 2..=4),
        circuit in any::<bool>(),
        with_delays in any::<bool>(),
        rail in 1.0f64..300.0,
    ) {
        let model = if circuit { NeuronModel::Circuit } else { NeuronModel::Linear };
        let net = build_network(seed, &sizes, model, CircuitParams::symmetric(rail), with_delays);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.snn");
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        prop_assert_eq!(net, back);
    }

    #[test]
    fn realization_files_round_trip_exactly(
        seed in any::<u64>(),
        sizes in proptest::collection::vec(1usize..=5, 2..=4),
        with_thresholds in any::<bool>(),
        with_delays in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let thresholds = with_thresholds.then(|| {
            sizes[1..]
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(0.0..2.0)).collect())
                .collect::<Vec<Vec<f64>>>()
        });
        let delays = with_delays.then(|| {
            sizes
                .windows(2)
                .map(|w| Matrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.0..2.0)))
                .collect::<Vec<Matrix>>()
        });
        let real = VariationRealization { thresholds, delays };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.snnr");
        save_realization(&real, &sizes, &path).unwrap();
        let (sizes_back, back) = load_realization(&path).unwrap();
        prop_assert_eq!(sizes, sizes_back);
        prop_assert_eq!(real, back);
    }

    #[test]
    fn event_sort_is_canonical_under_permutation(
        seed in any::<u64>(),
        n in 1usize..12,
        shuffle_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse time grid to force plenty of exact ties.
        let base: Vec<ArrivalEvent> = (0..n)
            .map(|j| ArrivalEvent::new(j, rng.gen_range(0..4) as f64, rng.gen_range(-1.0..1.0)))
            .collect();
        let mut a = base.clone();
        let mut b = base;
        use rand::seq::SliceRandom;
        b.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        sort_events(&mut a);
        sort_events(&mut b);
        let key = |e: &ArrivalEvent| (e.source, e.time.to_bits(), e.weight.to_bits());
        prop_assert_eq!(a.iter().map(key).collect::<Vec<_>>(),
                        b.iter().map(key).collect::<Vec<_>>());
    }

    #[test]
    fn raising_threshold_never_fires_earlier(
        seed in any::<u64>(),
        n in 1usize..8,
        v_lo in 0.05f64..1.5,
        extra in 0.01f64..1.5,
    ) {
        let events = build_events(seed, n);
        let v_hi = v_lo + extra;
        for model_is_circuit in [false, true] {
            let (lo, hi) = if model_is_circuit {
                let rails = CircuitParams::symmetric(8.0);
                (
                    fire_time_circuit(&events, v_lo, rails).map(|(t, _)| t),
                    fire_time_circuit(&events, v_hi, rails).map(|(t, _)| t),
                )
            } else {
                (
                    fire_time_linear(&events, v_lo).map(|(t, _)| t),
                    fire_time_linear(&events, v_hi).map(|(t, _)| t),
                )
            };
            match (lo, hi) {
                (Some(a), Some(b)) => prop_assert!(b >= a - 1e-12, "{a} then {b}"),
                (None, Some(b)) => prop_assert!(false, "fired {b} only at the higher threshold"),
                _ => {}
            }
        }
    }

    #[test]
    fn circuit_membrane_stays_within_rails(
        seed in any::<u64>(),
        n in 1usize..10,
        pos in 1.5f64..40.0,
        neg in -40.0f64..-1.5,
    ) {
        let events = build_events(seed, n);
        let rails = CircuitParams { v_pulse_pos: pos, v_pulse_neg: neg };
        if let Some((_, segs)) = fire_time_circuit(&events, 1.0, rails) {
            for &v in &segs.terminals {
                prop_assert!(v <= pos + 1e-9 && v >= neg - 1e-9, "terminal {v} outside rails");
            }
        }
    }

    #[test]
    fn linear_forward_commutes_with_time_shift(
        seed in any::<u64>(),
        shift in -4.0f64..6.0,
    ) {
        let net = build_network(
            seed,
            &[3, 4, 2],
            NeuronModel::Linear,
            CircuitParams::default(),
            false,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let input = SpikeVector::new(
            (0..3)
                .map(|_| (rng.gen::<f64>() < 0.8).then(|| rng.gen_range(0.0..4.0)))
                .collect(),
        );
        let base = forward(&net, &input, None).unwrap();
        let moved_input =
            SpikeVector::new(input.times.iter().map(|t| t.map(|t| t + shift)).collect());
        let moved = forward(&net, &moved_input, None).unwrap();
        for (la, lb) in base.layers.iter().zip(&moved.layers) {
            for (na, nb) in la.neurons.iter().zip(&lb.neurons) {
                match (na.spike, nb.spike) {
                    (Some(a), Some(b)) => prop_assert!((a + shift - b).abs() < 1e-9),
                    (None, None) => {}
                    other => prop_assert!(false, "pattern changed: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn encode_is_invertible_on_positive_pixels(
        xs in proptest::collection::vec(0.001f64..=1.0, 1..50),
        tau in 0.5f64..20.0,
    ) {
        let spikes = encode(&xs, tau);
        for (x, t) in xs.iter().zip(&spikes.times) {
            let t = t.unwrap();
            prop_assert!(t >= 0.0 && t <= tau);
            prop_assert!((1.0 - t / tau - x).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shrink_preserves_range_and_mass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<f64> = (0..28 * 28).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let out = shrink(&img, 28, 28);
        prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));

        // Sixteen times the output mass equals the coverage-weighted input
        // mass, checked against a brute-force window count per pixel.
        let mut covered = 0.0;
        for (p, &x) in img.iter().enumerate() {
            let (r, c) = (p / 28, p % 28);
            let windows_r = (0..13).filter(|&i| r >= 2 * i && r < 2 * i + 4).count();
            let windows_c = (0..13).filter(|&j| c >= 2 * j && c < 2 * j + 4).count();
            covered += (windows_r * windows_c) as f64 * x;
        }
        let mass = 16.0 * out.iter().sum::<f64>();
        prop_assert!((mass - covered).abs() < 1e-9 * (1.0 + covered));
    }
}

// Monte-Carlo check of the jitter distribution: the empirical spread of
// jittered-minus-original times over 1e5 unclamped draws sits within 2% of
// sigma.
#[test]
fn jitter_spread_matches_sigma() {
    let sigma = 0.8;
    let n = 100_000;
    let spikes = SpikeVector::all_fired(&vec![10.0; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let moved = jitter(&spikes, sigma, false, &mut rng);
    let diffs: Vec<f64> = moved
        .times
        .iter()
        .map(|t| t.unwrap() - 10.0)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    assert!(
        (std - sigma).abs() / sigma < 0.02,
        "empirical std {std} vs sigma {sigma}"
    );
    assert!(mean.abs() < 0.02 * sigma, "empirical mean {mean}");
}
