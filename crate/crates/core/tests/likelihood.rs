use stpp_core::grid::GridSpec;
use stpp_core::likelihood::{build_tables, log_likelihood, BatchWork};
use stpp_core::{Event, EventSequence, KernelModel, ModelSpec, TemporalParam};

fn small_grids() -> GridSpec {
    GridSpec { time_points: 30, space_points: 200, barrier_time_points: 12, barrier_space_per_axis: 4 }
}

fn objective_at(model: &KernelModel, seqs: &[&EventSequence], w: f64, b: f64) -> f64 {
    BatchWork::new(model, seqs, &small_grids(), false)
        .unwrap()
        .objective(w, b)
        .unwrap()
        .objective
}

fn check_gradient(model: &KernelModel, seqs: &[EventSequence]) {
    let refs: Vec<&EventSequence> = seqs.iter().collect();
    let work = BatchWork::new(model, &refs, &small_grids(), true).unwrap();
    let b = work.min_barrier_arg().unwrap() - 0.05;
    let w = 3.0;
    let grad = work.gradient(w, b).unwrap();
    let base = model.params_flat();
    assert_eq!(grad.len(), base.len());
    let stride = (base.len() / 60).max(1);
    let mut checked = 0;
    for k in (0..base.len()).step_by(stride).chain([0, 1]) {
        let h = 1e-6 * base[k].abs().max(1.0);
        let mut mp = model.clone();
        let mut p = base.clone();
        p[k] += h;
        mp.set_params_flat(&p).unwrap();
        let up = objective_at(&mp, &refs, w, b);
        p[k] -= 2.0 * h;
        mp.set_params_flat(&p).unwrap();
        let down = objective_at(&mp, &refs, w, b);
        let fd = (up - down) / (2.0 * h);
        let tol = 1e-5 * fd.abs().max(1.0);
        assert!((fd - grad[k]).abs() <= tol, "param {k}: fd {fd} vs analytic {}", grad[k]);
        checked += 1;
    }
    assert!(checked > 10);
}

fn temporal_seqs() -> Vec<EventSequence> {
    vec![
        EventSequence::temporal(&[0.3, 0.9, 1.1, 2.4, 2.5, 4.0, 6.2], 8.0).unwrap(),
        EventSequence::temporal(&[1.0, 5.5, 5.6], 8.0).unwrap(),
    ]
}

#[test]
fn gradient_temporal_displacement() {
    let spec = ModelSpec {
        temporal_rank: 2,
        hidden: vec![6, 5],
        tau_max: 2.0,
        time_extent: 8.0,
        mu_init: 0.8,
        alpha_init: 0.3,
        ..Default::default()
    };
    check_gradient(&KernelModel::new(spec, 11).unwrap(), &temporal_seqs());
}

#[test]
fn gradient_temporal_history_time() {
    let spec = ModelSpec {
        hidden: vec![6, 5],
        tau_max: 2.0,
        time_extent: 8.0,
        mu_init: 0.8,
        alpha_init: 0.3,
        parameterization: TemporalParam::HistoryTime,
        ..Default::default()
    };
    check_gradient(&KernelModel::new(spec, 12).unwrap(), &temporal_seqs());
}

#[test]
fn gradient_spatial_two_dims() {
    let spec = ModelSpec {
        spatial_dim: 2,
        spatial_rank: 2,
        hidden: vec![5, 4],
        tau_max: 2.0,
        a_max: 0.7,
        time_extent: 6.0,
        mu_init: 1.0,
        alpha_init: 0.3,
        ..Default::default()
    };
    let bounds = vec![[-1.0, 1.0], [-1.0, 1.0]];
    let seq = EventSequence::new(
        vec![
            Event::at(0.4, [0.1, 0.2]),
            Event::at(0.8, [0.3, -0.1]),
            Event::at(1.5, [-0.6, 0.5]),
            Event::at(2.1, [0.2, 0.1]),
            Event::at(4.0, [0.9, -0.9]),
        ],
        6.0,
        bounds,
    )
    .unwrap();
    check_gradient(&KernelModel::new(spec, 13).unwrap(), &[seq]);
}

#[test]
fn gradient_spatial_one_dim() {
    let spec = ModelSpec {
        spatial_dim: 1,
        hidden: vec![5, 4],
        tau_max: 2.0,
        a_max: 0.5,
        time_extent: 6.0,
        mu_init: 1.0,
        alpha_init: 0.3,
        ..Default::default()
    };
    let seq = EventSequence::new(
        vec![Event::at(0.4, [0.1, 0.0]), Event::at(0.8, [0.3, 0.0]), Event::at(1.5, [0.6, 0.0]), Event::at(2.1, [0.5, 0.0])],
        6.0,
        vec![[0.0, 1.0]],
    )
    .unwrap();
    check_gradient(&KernelModel::new(spec, 14).unwrap(), &[seq]);
}

#[test]
fn gradient_marked() {
    let spec = ModelSpec {
        temporal_rank: 2,
        mark_rank: 2,
        num_marks: 3,
        hidden: vec![5, 4],
        tau_max: 2.0,
        time_extent: 8.0,
        mu_init: 3.0,
        alpha_init: 0.3,
        ..Default::default()
    };
    let seq = EventSequence::new(
        [(0.3, 0), (0.9, 2), (1.1, 1), (2.4, 0), (2.5, 2), (4.0, 1)]
            .iter()
            .map(|&(t, m)| Event::temporal(t).with_mark(m))
            .collect(),
        8.0,
        vec![],
    )
    .unwrap();
    check_gradient(&KernelModel::new(spec, 15).unwrap(), &[seq]);
}

#[test]
fn table_loglik_tracks_exact_loglik() {
    let spec = ModelSpec { hidden: vec![8, 8], tau_max: 3.0, time_extent: 10.0, mu_init: 0.5, alpha_init: 0.4, ..Default::default() };
    let m = KernelModel::new(spec, 4).unwrap();
    let seq = EventSequence::temporal(&[0.5, 1.2, 1.3, 3.3, 4.8, 5.0, 7.7, 9.1], 10.0).unwrap();
    let fine = GridSpec { time_points: 4000, ..GridSpec::default() };
    let exact = log_likelihood(&m, &seq, &build_tables(&m, &fine).unwrap()).unwrap();
    let coarse = log_likelihood(&m, &seq, &build_tables(&m, &GridSpec::default()).unwrap()).unwrap();
    assert!((exact - coarse).abs() < 1e-3 * exact.abs().max(1.0), "{exact} vs {coarse}");
}
