//! Per-hop doubly-selective channel synthesis.
//!
//! Each tap is a zero-mean circular complex Gaussian process whose
//! autocovariance is `power * J0(2 pi f_d tau T_s)`. Trajectories are drawn by
//! coloring white noise with a square root of the Toeplitz covariance, so the
//! target autocorrelation is exact at every lag (up to eigenvalue clipping).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::random::complex_gaussian;
use crate::special::bessel_j0;
use crate::C64;

/// Sampling numerology used to convert normalized Doppler (`N f_d T_s`) into Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleClock {
    pub n_subcarriers: usize,
    pub sample_interval: f64,
}

impl SampleClock {
    pub fn doppler_hz(&self, normalized: f64) -> f64 {
        normalized / (self.n_subcarriers as f64 * self.sample_interval)
    }
}

/// Statistical description of one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct HopChannelSpec {
    /// Channel span `L_max`: taps live at delays `0..max_delay`.
    pub max_delay: usize,
    pub n_taps: usize,
    pub tap_position_pool: Vec<usize>,
    /// Largest normalized Doppler shift, `N f T_s`.
    pub max_norm_doppler: f64,
}

impl HopChannelSpec {
    /// `n_taps` consecutive taps starting at delay 0.
    pub fn consecutive(n_taps: usize, max_norm_doppler: f64) -> Self {
        HopChannelSpec {
            max_delay: n_taps,
            n_taps,
            tap_position_pool: (0..n_taps).collect(),
            max_norm_doppler,
        }
    }

    /// `n_taps` positions drawn from `0..pool_size`.
    pub fn from_pool(pool_size: usize, n_taps: usize, max_norm_doppler: f64) -> Self {
        HopChannelSpec {
            max_delay: pool_size,
            n_taps,
            tap_position_pool: (0..pool_size).collect(),
            max_norm_doppler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tap_position_pool.is_empty() {
            return Err(Error::Config("tap position pool is empty".into()));
        }
        if self.n_taps == 0 || self.n_taps > self.tap_position_pool.len() {
            return Err(Error::Config(format!(
                "cannot draw {} taps from a pool of {}",
                self.n_taps,
                self.tap_position_pool.len()
            )));
        }
        if self.tap_position_pool.iter().any(|&p| p >= self.max_delay) {
            return Err(Error::Config("tap position beyond max_delay".into()));
        }
        if !(self.max_norm_doppler >= 0.0) {
            return Err(Error::Config("max_norm_doppler must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapTrajectory {
    pub delay: usize,
    pub doppler_hz: f64,
    pub power: f64,
    /// Samples at times `time_offset, time_offset + 1, ...`.
    pub samples: Vec<C64>,
}

/// One realization of a hop: the drawn taps over a time span starting at
/// `time_offset` (negative offsets reach into the cyclic prefix).
#[derive(Debug, Clone, PartialEq)]
pub struct HopChannelRealization {
    pub max_delay: usize,
    pub taps: Vec<TapTrajectory>,
    pub time_offset: isize,
    pub n_time: usize,
}

impl HopChannelRealization {
    /// Channel coefficient `h(t, l)`; zero at delays without a tap.
    pub fn coeff(&self, t: isize, l: usize) -> Result<C64> {
        let idx = t - self.time_offset;
        if idx < 0 || idx as usize >= self.n_time {
            return Err(Error::TrajectorySpan {
                time: t,
                start: self.time_offset,
                len: self.n_time,
            });
        }
        Ok(self
            .taps
            .iter()
            .find(|tap| tap.delay == l)
            .map_or(C64::new(0.0, 0.0), |tap| tap.samples[idx as usize]))
    }

    pub fn covers(&self, t: isize) -> bool {
        t >= self.time_offset && t < self.time_offset + self.n_time as isize
    }

    /// A deterministic single-path hop: `h(t, delay) = gain` for every t.
    pub fn static_taps(profile: &[(usize, C64)], max_delay: usize, time_offset: isize, n_time: usize) -> Self {
        HopChannelRealization {
            max_delay,
            taps: profile
                .iter()
                .map(|&(delay, gain)| TapTrajectory {
                    delay,
                    doppler_hz: 0.0,
                    power: gain.norm_sqr(),
                    samples: vec![gain; n_time],
                })
                .collect(),
            time_offset,
            n_time,
        }
    }
}

/// Draws tap positions, Doppler shifts, powers and trajectories for one hop.
///
/// One uniformly chosen tap gets the maximum Doppler, the others are uniform on
/// `(0, max]`. Powers follow `exp(-i)` over the delay-ordered taps, normalized to
/// unit sum.
pub fn draw_hop<R: Rng + ?Sized>(
    spec: &HopChannelSpec,
    clock: &SampleClock,
    n_time: usize,
    time_offset: isize,
    rng: &mut R,
) -> Result<HopChannelRealization> {
    spec.validate()?;
    if n_time == 0 {
        return Err(Error::Config("trajectory length must be positive".into()));
    }
    let mut delays: Vec<usize> = sample(rng, spec.tap_position_pool.len(), spec.n_taps)
        .into_iter()
        .map(|i| spec.tap_position_pool[i])
        .collect();
    delays.sort_unstable();

    let fastest = rng.random_range(0..spec.n_taps);
    let norm_dopplers: Vec<f64> = (0..spec.n_taps)
        .map(|i| {
            if i == fastest {
                spec.max_norm_doppler
            } else {
                // (0, max]
                spec.max_norm_doppler * (1.0 - rng.random::<f64>())
            }
        })
        .collect();

    let raw: Vec<f64> = (0..spec.n_taps).map(|i| (-(i as f64)).exp()).collect();
    let total: f64 = raw.iter().sum();

    let mut taps = Vec::with_capacity(spec.n_taps);
    for (i, &delay) in delays.iter().enumerate() {
        let power = raw[i] / total;
        let doppler_hz = clock.doppler_hz(norm_dopplers[i]);
        let samples = sample_trajectory(doppler_hz, power, n_time, clock.sample_interval, rng)?;
        taps.push(TapTrajectory {
            delay,
            doppler_hz,
            power,
            samples,
        });
    }
    Ok(HopChannelRealization {
        max_delay: spec.max_delay,
        taps,
        time_offset,
        n_time,
    })
}

/// Zero-mean complex Gaussian sequence with autocovariance `power * J0(2 pi f_d tau T_s)`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    doppler_hz: f64,
    power: f64,
    n: usize,
    sample_interval: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    if !(doppler_hz >= 0.0) || !(power > 0.0) {
        return Err(Error::Config(format!(
            "invalid trajectory parameters: f_d = {doppler_hz}, power = {power}"
        )));
    }
    if doppler_hz == 0.0 || n == 1 {
        let g = complex_gaussian(rng, power);
        return Ok(vec![g; n]);
    }
    let w = 2.0 * std::f64::consts::PI * doppler_hz * sample_interval;
    let acf: Vec<f64> = (0..n).map(|k| power * bessel_j0(w * k as f64)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| acf[i.abs_diff(j)]);
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance eigendecomposition failed".into()));
    }
    let white: Vec<C64> = (0..n).map(|_| complex_gaussian(rng, 1.0)).collect();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for k in 0..n {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda == 0.0 {
            continue;
        }
        let coef = white[k] * lambda.sqrt();
        let col = eig.eigenvectors.column(k);
        for (o, &u) in out.iter_mut().zip(col.iter()) {
            *o += coef * u;
        }
    }
    Ok(out)
}
