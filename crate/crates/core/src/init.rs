//! Starting point for the variational iterations: pilot-only CE-BEM least
//! squares, LS equalization, hard decisions and a noise-power seed.

use nalgebra::{DMatrix, DVector};

use crate::bem::BemBasis;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, norm_sqr};
use crate::vi::{Observation, ViHyperParams, ViState};
use crate::C64;

/// Condition number above which the LS normal equations get a ridge.
pub const LS_CONDITION_LIMIT: f64 = 1e10;
/// Relative ridge used in that case.
pub const LS_RIDGE: f64 = 1e-8;

/// Everything the iterations need from the initializer.
#[derive(Debug, Clone)]
pub struct InitBundle {
    /// CE-BEM basis the LS estimate lives in.
    pub basis_v1: BemBasis,
    /// LS coefficients in the CE-BEM layout.
    pub mu0: Vec<C64>,
    /// Unquantized LS data estimate.
    pub x_hat: Vec<C64>,
    /// Hard decisions (zeros at forced-zero positions).
    pub x_d0: Vec<C64>,
    pub noise_power0: f64,
    /// `a~/b~`, equal for every coefficient.
    pub alpha_ratio: f64,
    /// `c~/d~`.
    pub beta_ratio: f64,
    /// Whether either LS solve needed the ridge.
    pub regularized: bool,
}

/// Pilot-row LS estimate `mu^ = (G_p^H G_p)^{-1} G_p^H y_p` with data set to zero.
pub fn ls_channel(obs: &Observation, basis_v1: &BemBasis) -> Result<(Vec<C64>, bool)> {
    let frame = obs.frame;
    let zeros = vec![C64::new(0.0, 0.0); frame.n_data()];
    let xp = frame.assemble(&zeros, obs.pilots)?;
    let g = basis_v1.operator_g(&xp.values, frame.dft())?;
    let rows = frame.pilot_indices();
    if rows.len() < basis_v1.n_active() {
        log::warn!(
            "{} pilot rows for {} CE-BEM unknowns; relying on regularization",
            rows.len(),
            basis_v1.n_active()
        );
    }
    let gp = g.select_rows(rows);
    let yp = DVector::from_iterator(rows.len(), rows.iter().map(|&r| obs.y[r]));
    let (mu, reg) = least_squares(&gp, &yp, LS_CONDITION_LIMIT, LS_RIDGE)?;
    if reg {
        log::debug!("pilot LS regularized");
    }
    Ok((mu.iter().cloned().collect(), reg))
}

/// LS equalization over the free data subcarriers given channel coefficients `mu`.
/// Returns the data-vector estimate (zero at forced-zero positions).
pub fn ls_equalize(obs: &Observation, basis: &BemBasis, mu: &[C64]) -> Result<(Vec<C64>, bool)> {
    let frame = obs.frame;
    let d = basis.operator_d(mu)?;
    let zeros = vec![C64::new(0.0, 0.0); frame.n_data()];
    let xp = frame.assemble(&zeros, obs.pilots)?;
    let known = &d * DVector::from_column_slice(&xp.values);
    let rhs = DVector::from_iterator(obs.y.len(), obs.y.iter().zip(known.iter()).map(|(y, k)| y - k));
    let free: Vec<usize> = frame.free_data_positions().collect();
    let cols: Vec<usize> = free.iter().map(|&k| frame.data_indices()[k]).collect();
    let dd: DMatrix<C64> = d.select_columns(&cols);
    let (xd, reg) = least_squares(&dd, &rhs, LS_CONDITION_LIMIT, LS_RIDGE)?;
    let mut out = vec![C64::new(0.0, 0.0); frame.n_data()];
    for (i, &k) in free.iter().enumerate() {
        out[k] = xd[i];
    }
    Ok((out, reg))
}

/// Nearest constellation point per free data entry; forced-zero positions stay zero.
pub fn quantize(obs: &Observation, x_hat: &[C64]) -> Vec<C64> {
    let c = obs.frame.constellation();
    x_hat
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if obs.frame.is_forced_zero(k) {
                C64::new(0.0, 0.0)
            } else {
                c.points()[c.nearest(v)]
            }
        })
        .collect()
}

/// Mean squared residual `||y - G[x~] mu^||^2 / N` (not floored).
pub fn estimate_noise_power(obs: &Observation, x_d: &[C64], mu: &[C64], basis: &BemBasis) -> Result<f64> {
    let x = obs.frame.assemble(x_d, obs.pilots)?;
    let g = basis.operator_g(&x.values, obs.frame.dft())?;
    let fit = g * DVector::from_column_slice(mu);
    let r: f64 = obs.y.iter().zip(fit.iter()).map(|(y, f)| (y - f).norm_sqr()).sum();
    Ok(r / obs.y.len() as f64)
}

/// Full initialization.
pub fn initialize(obs: &Observation, basis_v1: &BemBasis, m_main: usize) -> Result<InitBundle> {
    if m_main == 0 {
        return Err(Error::Config("empty coefficient set".into()));
    }
    let (mu0, reg_a) = ls_channel(obs, basis_v1)?;
    let (x_hat, reg_b) = ls_equalize(obs, basis_v1, &mu0)?;
    let x_d0 = quantize(obs, &x_hat);
    let raw = estimate_noise_power(obs, &x_d0, &mu0, basis_v1)?;
    let floor = (1e-12 * norm_sqr(obs.y) / obs.y.len() as f64).max(1e-300);
    let noise_power0 = raw.max(floor);
    Ok(InitBundle {
        basis_v1: basis_v1.clone(),
        mu0,
        x_hat,
        x_d0,
        noise_power0,
        alpha_ratio: 1.0 / m_main as f64,
        beta_ratio: 1.0 / noise_power0,
        regularized: reg_a || reg_b,
    })
}

impl InitBundle {
    /// CE-BEM tap trajectories of the LS estimate.
    pub fn taps(&self) -> Result<DMatrix<C64>> {
        self.basis_v1.coeffs_to_taps(&self.mu0)
    }

    /// Variational state seeded from this bundle: the LS trajectories projected onto
    /// `basis`, `Sigma = I / M`, and Gamma parameters with the prescribed ratios.
    pub fn to_state(&self, basis: &BemBasis, hyper: &ViHyperParams, n: usize) -> Result<ViState> {
        let m = basis.n_active();
        let m_mu = basis.fit_taps(&self.taps()?)?;
        let a_t = hyper.a + 1.0;
        let c_t = hyper.c + n as f64;
        ViState::new(
            basis.clone(),
            m_mu,
            DMatrix::identity(m, m) * C64::new(1.0 / m as f64, 0.0),
            vec![a_t; m],
            vec![a_t / self.alpha_ratio; m],
            c_t,
            c_t / self.beta_ratio,
            self.x_d0.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bem::make_basis;
    use crate::ofdm::{Constellation, OfdmFrameSpec};
    use crate::random::{complex_gaussian, complex_gaussian_vec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_frame() -> OfdmFrameSpec {
        OfdmFrameSpec::clustered(128, 8, 14, 3, Constellation::qpsk()).unwrap()
    }

    #[test]
    fn pilot_only_channel_is_recovered() {
        let frame = default_frame();
        let basis = make_basis(128, 1, 0.3, 8).unwrap();
        assert_eq!((basis.n_active(), frame.n_pilots()), (24, 42));
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let mu = complex_gaussian_vec(&mut rng, 24, 1.0 / 24.0);
        let zeros = vec![C64::new(0.0, 0.0); frame.n_data()];
        let x = frame.assemble(&zeros, &pilots).unwrap();
        let y: Vec<C64> = (basis.operator_g(&x.values, frame.dft()).unwrap() * DVector::from_vec(mu.clone()))
            .iter()
            .cloned()
            .collect();
        let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
        let (est, _) = ls_channel(&obs, &basis).unwrap();
        for (a, b) in est.iter().zip(&mu) {
            assert!((a - b).norm() < 1e-8);
        }

        let zero_y = vec![C64::new(0.0, 0.0); 128];
        let obs = Observation { y: &zero_y, frame: &frame, pilots: &pilots };
        assert!(ls_channel(&obs, &basis).unwrap().0.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn equalizer_inverts_true_channel() {
        let frame = default_frame();
        let basis = make_basis(128, 1, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let mu = complex_gaussian_vec(&mut rng, 24, 1.0 / 8.0);
        let (_, data) = frame.draw_data(&mut rng);
        let x = frame.assemble(&data, &pilots).unwrap();
        let y: Vec<C64> = (basis.operator_d(&mu).unwrap() * DVector::from_vec(x.values)).iter().cloned().collect();
        let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
        let (xh, _) = ls_equalize(&obs, &basis, &mu).unwrap();
        for (a, b) in xh.iter().zip(&data) {
            assert!((a - b).norm() < 1e-8);
        }
        assert_eq!(quantize(&obs, &xh), data);
        assert!(estimate_noise_power(&obs, &data, &mu, &basis).unwrap() < 1e-20);

        // pilots-only observation gives zero data estimate
        let zeros = vec![C64::new(0.0, 0.0); frame.n_data()];
        let xp = frame.assemble(&zeros, &pilots).unwrap();
        let yp: Vec<C64> = (basis.operator_d(&mu).unwrap() * DVector::from_vec(xp.values)).iter().cloned().collect();
        let obs = Observation { y: &yp, frame: &frame, pilots: &pilots };
        assert!(ls_equalize(&obs, &basis, &mu).unwrap().0.iter().all(|v| v.norm() < 1e-8));
    }

    #[test]
    fn flat_channel_equalizer_divides() {
        let frame = default_frame();
        let basis = make_basis(128, 1, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let gain = C64::new(0.6, -0.8);
        let mut mu = vec![C64::new(0.0, 0.0); 24];
        mu[basis.index(0, 0)] = gain;
        let y = complex_gaussian_vec(&mut rng, 128, 1.0);
        let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
        let (xh, _) = ls_equalize(&obs, &basis, &mu).unwrap();
        for k in frame.free_data_positions() {
            let n = frame.data_indices()[k];
            assert!((xh[k] - y[n] / gain).norm() < 1e-10);
        }
    }

    #[test]
    fn quantize_ties_and_identity() {
        let frame = default_frame();
        let y = vec![C64::new(0.0, 0.0); 128];
        let obs = Observation { y: &y, frame: &frame, pilots: &[] };
        let pts = Constellation::qpsk().points().to_vec();
        let x: Vec<C64> = (0..frame.n_data()).map(|k| pts[k % 4]).collect();
        let q = quantize(&obs, &x);
        for k in 0..frame.n_data() {
            let want = if frame.is_forced_zero(k) { C64::new(0.0, 0.0) } else { x[k] };
            assert_eq!(q[k], want);
        }
        let origin = vec![C64::new(0.0, 0.0); frame.n_data()];
        assert_eq!(quantize(&obs, &origin)[0], pts[0]);
    }

    #[test]
    fn noise_power_of_zero_channel_is_mean_energy() {
        let frame = default_frame();
        let basis = make_basis(128, 1, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let (_, data) = frame.draw_data(&mut rng);
        let y = complex_gaussian_vec(&mut rng, 128, 2.0);
        let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
        let p = estimate_noise_power(&obs, &data, &vec![C64::new(0.0, 0.0); 24], &basis).unwrap();
        assert!((p - norm_sqr(&y) / 128.0).abs() < 1e-12);
    }

    #[test]
    fn noise_power_estimate_with_true_channel() {
        let frame = default_frame();
        let basis = make_basis(128, 1, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let noise = 0.01;
        let mut within = 0;
        for _ in 0..100 {
            let pilots = frame.draw_pilots(3.0, &mut rng);
            let mu = complex_gaussian_vec(&mut rng, 24, 1.0 / 8.0);
            let (_, data) = frame.draw_data(&mut rng);
            let x = frame.assemble(&data, &pilots).unwrap();
            let y: Vec<C64> = (basis.operator_d(&mu).unwrap() * DVector::from_vec(x.values))
                .iter()
                .map(|v| v + complex_gaussian(&mut rng, noise))
                .collect();
            let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
            let p = estimate_noise_power(&obs, &data, &mu, &basis).unwrap();
            if (p - noise).abs() < 0.3 * noise {
                within += 1;
            }
        }
        assert_eq!(within, 100);
    }

    #[test]
    fn initial_ratios_and_state() {
        let frame = default_frame();
        let b1 = make_basis(128, 1, 0.3, 8).unwrap();
        let b20 = make_basis(128, 20, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let y = complex_gaussian_vec(&mut rng, 128, 1.0);
        let obs = Observation { y: &y, frame: &frame, pilots: &pilots };
        let init = initialize(&obs, &b1, b20.n_active()).unwrap();
        assert!(init.noise_power0 > 0.0);
        assert_eq!(init.alpha_ratio, 1.0 / 104.0);
        let h = ViHyperParams::default();
        let st = init.to_state(&b20, &h, 128).unwrap();
        for j in 0..st.n_active() {
            assert!((st.a_t[j] / st.b_t[j] - 1.0 / 104.0).abs() < 1e-15);
        }
        assert!((st.noise_precision() - 1.0 / init.noise_power0).abs() < 1e-9 / init.noise_power0);
        // the CE-BEM frequencies +-1/N lie outside the V=20 grid but are reproduced
        // closely by it over one symbol
        let est = init.taps().unwrap();
        assert!((st.taps().unwrap() - &est).norm() < 1e-4 * est.norm());
    }
}
