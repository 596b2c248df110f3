use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stpp_core::dataset::{Dataset, DatasetMeta};
use stpp_core::evaluation::{mre, EvalGrid};
use stpp_core::likelihood::{build_tables, log_likelihood};
use stpp_core::simulator::{thinning_sample, Homogeneous, TrueKernel, TrueModel};
use stpp_core::trainer::{epoch_batches, train_test_split, TrainConfig};
use stpp_core::{Event, EventSequence, GridSpec, KernelModel, ModelSpec, TemporalParam};

fn sequence(times: Vec<f64>, locs: Vec<(f64, f64)>, horizon: f64, spatial_dim: usize) -> EventSequence {
    let mut times: Vec<f64> = times.into_iter().map(|t| t * horizon).collect();
    times.sort_by(f64::total_cmp);
    let events = times
        .iter()
        .zip(locs.iter().cycle())
        .map(|(&t, &(x, y))| match spatial_dim {
            0 => Event::temporal(t),
            1 => Event::at(t, [x, 0.0]),
            _ => Event::at(t, [x, y]),
        })
        .collect();
    EventSequence::new(events, horizon, vec![[0.0, 1.0]; spatial_dim]).unwrap()
}

fn small_grids() -> GridSpec {
    GridSpec { time_points: 30, space_points: 200, barrier_time_points: 10, barrier_space_per_axis: 4 }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn dataset_files_roundtrip(
        times in prop::collection::vec(0.0f64..1.0, 0..30),
        locs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..5),
        horizon in 0.5f64..50.0,
        spatial_dim in 0usize..3,
    ) {
        let seq = sequence(times, locs, horizon, spatial_dim);
        let meta = DatasetMeta::new(spatial_dim, horizon, vec![[0.0, 1.0]; spatial_dim]);
        let ds = Dataset::new(meta, vec![seq.clone(), seq]).unwrap();
        let back = Dataset::from_jsonl(&ds.to_jsonl().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn zero_kernel_gives_the_poisson_likelihood(
        times in prop::collection::vec(0.0f64..1.0, 0..25),
        locs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..5),
        mu in 0.05f64..5.0,
        spatial_dim in 0usize..3,
    ) {
        let horizon = 7.0;
        let seq = sequence(times, locs, horizon, spatial_dim);
        let spec = ModelSpec { spatial_dim, hidden: vec![4], time_extent: horizon, mu_init: mu, ..Default::default() };
        let mut model = KernelModel::new(spec, 3).unwrap();
        model.alpha.iter_mut().for_each(|a| *a = 0.0);
        let tables = build_tables(&model, &small_grids()).unwrap();
        let ll = log_likelihood(&model, &seq, &tables).unwrap();
        let expected = seq.len() as f64 * mu.ln() - mu * horizon;
        prop_assert!((ll - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn intensity_ignores_the_future_and_distant_past(
        times in prop::collection::vec(0.0f64..1.0, 1..20),
        at in 0.0f64..1.0,
        history_time in any::<bool>(),
    ) {
        let horizon = 10.0;
        let seq = sequence(times, vec![(0.0, 0.0)], horizon, 0);
        let spec = ModelSpec {
            hidden: vec![5],
            tau_max: 2.0,
            time_extent: horizon,
            parameterization: if history_time { TemporalParam::HistoryTime } else { TemporalParam::Displacement },
            ..Default::default()
        };
        let model = KernelModel::new(spec, 5).unwrap();
        let t = at * horizon;
        let z = [0.0; 2];
        let relevant: Vec<Event> = seq.events.iter().copied().filter(|e| e.t < t && t - e.t <= 2.0).collect();
        let full = model.intensity(&seq.events, t, &z, None).unwrap();
        let trimmed = model.intensity(&relevant, t, &z, None).unwrap();
        prop_assert!((full - trimmed).abs() <= 1e-12 * full.abs().max(1.0));
    }

    #[test]
    fn split_is_a_disjoint_cover(n in 0usize..200, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = train_test_split(&items, fraction, seed).unwrap();
        prop_assert_eq!(train.len(), (fraction * n as f64).round() as usize);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn epoch_batches_partition_the_indices(n in 0usize..300, size in 1usize..80, seed in any::<u64>(), epoch in 0usize..50) {
        let batches = epoch_batches(n, size, seed, epoch);
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= size));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn barrier_weight_is_geometric(w0 in 0.01f64..10.0, a in 1.0001f64..3.0, k in 0u64..200) {
        let c = TrainConfig { w0, a, ..Default::default() };
        prop_assert_eq!(c.weight_after(k), w0 * a.powi(k as i32));
        prop_assert!(c.weight_after(k + 1) > c.weight_after(k));
    }

    #[test]
    fn thinning_stays_in_the_window(rate in 0.1f64..5.0, slack in 1.0f64..3.0, horizon in 0.1f64..40.0, seed in any::<u64>(), spatial_dim in 0usize..3) {
        let bounds: Vec<[f64; 2]> = vec![[-1.0, 0.5]; spatial_dim];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let th = thinning_sample(&Homogeneous(rate), horizon, &bounds, rate * slack, &mut rng).unwrap();
        let ev = &th.sequence.events;
        prop_assert!(ev.windows(2).all(|w| w[0].t <= w[1].t));
        prop_assert!(ev.iter().all(|e| e.t >= 0.0 && e.t < horizon));
        prop_assert!(ev.iter().all(|e| bounds.iter().enumerate().all(|(k, b)| e.s[k] >= b[0] && e.s[k] < b[1])));
        prop_assert!(ev.len() <= th.candidates);
    }

    #[test]
    fn true_kernels_are_negligible_beyond_their_support(tp in 0.0f64..40.0, extra in 0.0f64..20.0, which in 0usize..6) {
        let k = TrueKernel::ALL[which];
        let t = tp + k.time_support() + extra;
        prop_assert!(k.eval(tp, t, &[0.1, -0.2], &[0.1, -0.2]).abs() <= 1e-14);
    }

    #[test]
    fn model_against_itself_has_zero_mre(times in prop::collection::vec(0.0f64..1.0, 0..30), which in 0usize..3) {
        let k = [TrueKernel::Exp1d, TrueKernel::NonStat1d, TrueKernel::InfRank1d][which];
        let (mu, horizon, _) = k.defaults();
        let seq = sequence(times, vec![(0.0, 0.0)], horizon, 0);
        let truth = TrueModel::new(k, mu);
        let r = mre(&truth, &truth, &seq, &EvalGrid { time_points: 200, space_per_axis: 4 });
        prop_assert_eq!(r.value, 0.0);
    }
}
