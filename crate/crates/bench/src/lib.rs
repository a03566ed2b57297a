//! Fixtures shared by the benchmarks.

use kinlab_core::{sample_configuration, Configuration, InitialDataSpec, ModelParams, RngStream, Vector};

/// A two-dimensional Gaussian cloud of about `1 / eps` particles.
pub fn cloud(eps: f64, seed: u64) -> (ModelParams, Configuration) {
    let params = ModelParams::new(2, eps, 1.0).expect("valid parameters");
    let spec = InitialDataSpec::gaussian_x_maxwellian_v(Vector::zeros(2), 0.14, 0.42, 1.0).expect("valid profile");
    let mut rng = RngStream::new(seed, 0).rng();
    let config = sample_configuration(&params, &spec, &mut rng, 1_000_000).expect("exclusion is satisfiable");
    (params, config)
}
