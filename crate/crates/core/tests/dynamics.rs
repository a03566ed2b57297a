use kinlab_core::dynamics::{mean_free_time_estimate, reverse_velocities, run};
use kinlab_core::phase::{Configuration, ModelParams, Vector};
use kinlab_core::rng::RngStream;
use kinlab_core::sampler::{sample_configuration, InitialDataSpec};

fn gas(eps: f64, sigma: f64, seed: u64) -> (Configuration, ModelParams) {
    let params = ModelParams::new(2, eps, 1.0).unwrap();
    let spec = InitialDataSpec::gaussian_x_maxwellian_v(Vector::new2(0.0, 0.0), sigma, 3.0 * sigma, 1.0).unwrap();
    let mut rng = RngStream::new(seed, 0).rng();
    (sample_configuration(&params, &spec, &mut rng, 1000).unwrap(), params)
}

/// Mean free time measured on a pilot run of length `t`.
fn pilot_mft(config: &Configuration, params: &ModelParams, t: f64) -> f64 {
    let log = run(config, t, params).unwrap();
    mean_free_time_estimate(&log).unwrap()
}

#[test]
fn conservation_and_replay() {
    let (c, params) = gas(2e-3, 0.2, 11);
    let mft = pilot_mft(&c, &params, 0.2);
    let log = run(&c, 2.0 * mft, &params).unwrap();
    assert!(!log.events.is_empty());
    assert_eq!(log.replay_defect(), 0.0);
    let fin = log.final_configuration();
    let p0 = c.total_momentum();
    let e0 = c.total_energy();
    let scale = (2.0 * e0 * c.len() as f64).sqrt();
    assert!((fin.total_momentum() - p0).max_abs() <= 1e-10 * scale);
    assert!((fin.total_energy() - e0).abs() <= 1e-10 * e0);
    for w in log.events.windows(2) {
        assert!(w[0].t <= w[1].t);
    }
    for e in &log.events {
        assert!(e.i < e.j);
        assert!((e.omega.norm() - 1.0).abs() < 1e-12);
        assert!((e.v_pre[0] - e.v_pre[1]).dot(&e.omega) < 0.0);
    }
}

#[test]
fn sampled_states_keep_exclusion() {
    let (c, params) = gas(5e-3, 0.2, 12);
    let log = run(&c, 0.5, &params).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    for s in log.evolve_to_many(&times).unwrap() {
        s.check_exclusion_with(params.eps(), 1e-9).unwrap();
    }
    assert_eq!(log.evolve_to(0.5).unwrap(), log.final_configuration());
}

#[test]
fn runs_are_deterministic() {
    let (c, params) = gas(5e-3, 0.2, 13);
    let a = run(&c, 0.3, &params).unwrap();
    let b = run(&c, 0.3, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_reverse_forward_returns_initial_state() {
    let (c, params) = gas(1e-2, 0.2, 14);
    assert!(c.len() <= 200);
    let mft = pilot_mft(&c, &params, 1.0);
    let fwd = run(&c, mft, &params).unwrap();
    let mid = reverse_velocities(&fwd.final_configuration());
    let mid = Configuration::new(0.0, 2, mid.into_particles()).unwrap();
    let back = run(&mid, mft, &params).unwrap();
    let end = reverse_velocities(&back.final_configuration());
    assert_eq!(back.events.len(), fwd.events.len());
    let x_scale = c.particles().iter().map(|p| p.x.norm()).fold(0.0, f64::max);
    let v_scale = c.particles().iter().map(|p| p.v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (a, b) in c.particles().iter().zip(end.particles()) {
        worst = worst.max((a.x - b.x).norm() / x_scale).max((a.v - b.v).norm() / v_scale);
    }
    assert!(worst <= 1e-6, "reversibility error {worst:e}");
}
