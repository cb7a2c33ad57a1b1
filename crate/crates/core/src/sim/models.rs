//! Single-object motion, radar measurement, clutter and birth models.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{Measurement, SimError, SingleState, TaskConfig, CLUTTER_LABEL};

/// Transition of the nearly-constant-velocity model: `F x`.
pub fn transition_mean(x: &SingleState, delta_t: f64) -> SingleState {
    let [px, py, vx, vy] = x.0;
    SingleState([px + delta_t * vx, py + delta_t * vy, vx, vy])
}

/// Per-axis `(position, velocity)` block of the process covariance,
/// `[[dt^3/3, dt^2/2], [dt^2/2, dt]]`, scaled by `sigma_q2`.
pub fn process_block(sigma_q2: f64, delta_t: f64) -> [[f64; 2]; 2] {
    let a = delta_t.powi(3) / 3.0;
    let b = delta_t.powi(2) / 2.0;
    [
        [sigma_q2 * a, sigma_q2 * b],
        [sigma_q2 * b, sigma_q2 * delta_t],
    ]
}

/// Draws `x_{t+1} ~ N(F x_t, sigma_q2 Q)`.
pub fn motion_step(x: &SingleState, cfg: &TaskConfig, rng: &mut impl Rng) -> SingleState {
    let mean = transition_mean(x, cfg.delta_t);
    let q = process_block(cfg.sigma_q2, cfg.delta_t);
    let l11 = q[0][0].sqrt();
    let l21 = if l11 > 0.0 { q[1][0] / l11 } else { 0.0 };
    let l22 = (q[1][1] - l21 * l21).max(0.0).sqrt();
    let mut out = mean.0;
    for axis in 0..2 {
        let w1: f64 = rng.sample(StandardNormal);
        let w2: f64 = rng.sample(StandardNormal);
        out[axis] += l11 * w1;
        out[axis + 2] += l21 * w1 + l22 * w2;
    }
    SingleState(out)
}

/// Range, radial rate (Doppler) and bearing of a state.
pub fn radar_project(x: &SingleState) -> Result<[f64; 3], SimError> {
    let [px, py, vx, vy] = x.0;
    let r = px.hypot(py);
    if !(r > 0.0) {
        return Err(SimError::DegeneratePosition);
    }
    Ok([r, (px * vx + py * vy) / r, py.atan2(px)])
}

/// Diagonal of the state-dependent measurement covariance: quadratic in
/// range and bearing, growing from the floor near the sensor to the ceiling
/// at the FOV edge; constant in Doppler.
pub fn noise_covariance(z_clean: [f64; 3], cfg: &TaskConfig) -> [f64; 3] {
    let [r, _, theta] = z_clean;
    let range = cfg.fov.range;
    let bearing_edge = cfg.fov.bearing.lo.abs().max(cfg.fov.bearing.hi.abs());
    let f1 = (cfg.sigma_r_max2 - cfg.sigma_r_min2) / range.width().powi(2) * (r - range.lo).powi(2)
        + cfg.sigma_r_min2;
    let f3 = (cfg.sigma_theta_max2 - cfg.sigma_theta_min2) / bearing_edge.powi(2) * theta.powi(2)
        + cfg.sigma_theta_min2;
    [f1, cfg.sigma_rdot2, f3]
}

/// Draws from `Poisson(mean)`, allowing `mean == 0`.
pub fn poisson_count(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("finite positive mean");
    let k: f64 = p.sample(rng);
    k as usize
}

/// Clutter returns at step `t`, uniform over the FOV box.
pub fn sample_clutter(cfg: &TaskConfig, t: usize, rng: &mut impl Rng) -> Vec<Measurement> {
    let count = poisson_count(cfg.clutter_mean_per_step(), rng);
    let fov = &cfg.fov;
    (0..count)
        .map(|_| Measurement {
            z: [
                rng.random_range(fov.range.lo..fov.range.hi),
                rng.random_range(fov.doppler.lo..fov.doppler.hi),
                rng.random_range(fov.bearing.lo..fov.bearing.hi),
            ],
            t,
            label: CLUTTER_LABEL,
        })
        .collect()
}

/// Lower-triangular Cholesky factor of a 4x4 covariance.
pub(crate) fn cholesky4(cov: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4], SimError> {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = cov[i][i] - s;
                if d < 0.0 {
                    return Err(SimError::InvalidConfig(
                        "birth covariance not positive semidefinite".into(),
                    ));
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = if l[j][j] > 0.0 {
                    (cov[i][j] - s) / l[j][j]
                } else {
                    0.0
                };
            }
        }
    }
    Ok(l)
}

/// Birth states at step `t` drawn from `N(mu_b, Sigma_b)`; the count is
/// Poisson with the schedule's rate for that step.
pub fn sample_births(
    cfg: &TaskConfig,
    t: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SingleState>, SimError> {
    let count = poisson_count(cfg.birth_rate_at(t), rng);
    let l = cholesky4(&cfg.birth_cov)?;
    Ok((0..count)
        .map(|_| {
            let w: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            SingleState(std::array::from_fn(|i| {
                cfg.birth_mean[i] + (0..=i).map(|k| l[i][k] * w[k]).sum::<f64>()
            }))
        })
        .collect())
}
