//! Mean-field variational inference over BEM coefficients, their precisions,
//! the noise precision and the data symbols.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bem::BemBasis;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_inverse, norm_sqr};
use crate::ofdm::OfdmFrameSpec;
use crate::special::{digamma, ln_gamma};
use crate::viterbi::{detect_sequence, frame_alphabets, BandedSet, DEFAULT_STATE_BUDGET};
use crate::C64;

/// Gamma prior parameters shared by every coefficient precision and the noise precision.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViHyperParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for ViHyperParams {
    fn default() -> Self {
        ViHyperParams {
            a: 1e-6,
            b: 1e-6,
            c: 1e-6,
            d: 1e-6,
        }
    }
}

impl ViHyperParams {
    pub fn validate(&self) -> Result<()> {
        if [self.a, self.b, self.c, self.d].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("prior parameters must be positive".into()))
        }
    }
}

/// One coordinate update of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStep {
    Channel,
    Alpha,
    Data,
    Noise,
    Prune,
}

/// Default ordering: channel, precisions, data, noise, pruning.
pub const DEFAULT_ORDER: [UpdateStep; 5] = [
    UpdateStep::Channel,
    UpdateStep::Alpha,
    UpdateStep::Data,
    UpdateStep::Noise,
    UpdateStep::Prune,
];

#[derive(Debug, Clone, PartialEq)]
pub struct ViConfig {
    pub hyper: ViHyperParams,
    pub prune_threshold: f64,
    pub kappa: usize,
    pub order: Vec<UpdateStep>,
    /// Reject a detector output that raises the exact (unbanded) free energy.
    pub guard_data_step: bool,
    pub state_budget: usize,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            hyper: ViHyperParams::default(),
            prune_threshold: 1e-10,
            kappa: 3,
            order: DEFAULT_ORDER.to_vec(),
            guard_data_step: true,
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

/// What the receiver observes and knows about the frame.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: &'a [C64],
    pub frame: &'a OfdmFrameSpec,
    pub pilots: &'a [C64],
}

/// Variational posterior.
#[derive(Debug, Clone)]
pub struct ViState {
    pub basis: BemBasis,
    pub m_mu: Vec<C64>,
    pub sigma_mu: DMatrix<C64>,
    pub a_t: Vec<f64>,
    pub b_t: Vec<f64>,
    pub c_t: f64,
    pub d_t: f64,
    /// Data vector (forced-zero positions hold zero).
    pub x_d: Vec<C64>,
    /// Eigenvalues of `sigma_mu`, floored at zero.
    pub eig_values: Vec<f64>,
    /// Matching eigenvectors, one per column.
    pub eig_vectors: DMatrix<C64>,
    g: Option<DMatrix<C64>>,
}

impl ViState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: BemBasis,
        m_mu: Vec<C64>,
        sigma_mu: DMatrix<C64>,
        a_t: Vec<f64>,
        b_t: Vec<f64>,
        c_t: f64,
        d_t: f64,
        x_d: Vec<C64>,
    ) -> Result<Self> {
        let m = basis.n_active();
        if m_mu.len() != m || sigma_mu.shape() != (m, m) || a_t.len() != m || b_t.len() != m {
            return Err(Error::Length {
                what: "variational state",
                expected: m,
                got: m_mu.len(),
            });
        }
        if a_t.iter().chain(&b_t).chain([&c_t, &d_t]).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("Gamma posterior parameters must be positive".into()));
        }
        let mut s = ViState {
            basis,
            m_mu,
            sigma_mu,
            a_t,
            b_t,
            c_t,
            d_t,
            x_d,
            eig_values: vec![],
            eig_vectors: DMatrix::zeros(0, 0),
            g: None,
        };
        s.refresh_eigen();
        Ok(s)
    }

    pub fn n_active(&self) -> usize {
        self.basis.n_active()
    }

    /// `E[beta] = c~ / d~`.
    pub fn noise_precision(&self) -> f64 {
        self.c_t / self.d_t
    }

    /// `E[alpha_j] = a~_j / b~_j`.
    pub fn alpha_mean(&self) -> Vec<f64> {
        self.a_t.iter().zip(&self.b_t).map(|(a, b)| a / b).collect()
    }

    /// Posterior-mean tap trajectories.
    pub fn taps(&self) -> Result<DMatrix<C64>> {
        self.basis.coeffs_to_taps(&self.m_mu)
    }

    /// `x~ = E_p x_p + E_d x~_d`.
    pub fn full_symbol(&self, obs: &Observation) -> Result<Vec<C64>> {
        Ok(obs.frame.assemble(&self.x_d, obs.pilots)?.values)
    }

    fn refresh_eigen(&mut self) {
        let n = self.sigma_mu.nrows();
        if n == 0 {
            self.eig_values.clear();
            self.eig_vectors = DMatrix::zeros(0, 0);
            return;
        }
        let eig = SymmetricEigen::new(hermitian_part(&self.sigma_mu));
        self.eig_values = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        self.eig_vectors = eig.eigenvectors;
    }

    /// `G[x~]` for the current data and active set, cached until either changes.
    pub fn operator_g(&mut self, obs: &Observation) -> Result<&DMatrix<C64>> {
        if self.g.is_none() {
            let x = self.full_symbol(obs)?;
            self.g = Some(self.basis.operator_g(&x, obs.frame.dft())?);
        }
        Ok(self.g.as_ref().unwrap())
    }

    fn invalidate(&mut self) {
        self.g = None;
    }
}

fn hermitian_part(a: &DMatrix<C64>) -> DMatrix<C64> {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// `Sigma = (diag(a~/b~) + beta G^H G)^{-1}`, `m = beta Sigma G^H y`.
pub fn update_channel_posterior(state: &mut ViState, obs: &Observation) -> Result<()> {
    let beta = state.noise_precision();
    let alpha = state.alpha_mean();
    let g = state.operator_g(obs)?.clone();
    let mut a = g.adjoint() * &g * C64::new(beta, 0.0);
    for (j, al) in alpha.iter().enumerate() {
        a[(j, j)] += al;
    }
    let inv = hermitian_inverse(&a)?;
    if inv.jitter > 0.0 {
        log::warn!("channel posterior needed diagonal jitter {:.3e}", inv.jitter);
    }
    let rhs = g.adjoint() * DVector::from_column_slice(obs.y) * C64::new(beta, 0.0);
    let m = &inv.inverse * rhs;
    state.m_mu = m.iter().cloned().collect();
    state.sigma_mu = inv.inverse;
    state.eig_values = inv.values.iter().map(|v| v.max(0.0)).collect();
    state.eig_vectors = inv.vectors;
    Ok(())
}

/// `a~_j = a + 1`, `b~_j = b + |m_j|^2 + Sigma_jj`.
pub fn update_alpha(state: &mut ViState, hyper: &ViHyperParams) {
    for j in 0..state.n_active() {
        state.a_t[j] = hyper.a + 1.0;
        state.b_t[j] = hyper.b + state.m_mu[j].norm_sqr() + state.sigma_mu[(j, j)].re;
    }
}

/// `E ||y - G[x~] mu||^2 = ||y - G m||^2 + Tr(G Sigma G^H)`.
pub fn expected_residual(state: &mut ViState, obs: &Observation) -> Result<f64> {
    let m = DVector::from_column_slice(&state.m_mu);
    let sigma = state.sigma_mu.clone();
    let g = state.operator_g(obs)?;
    let gm = g * &m;
    let resid: f64 = obs.y.iter().zip(gm.iter()).map(|(y, v)| (y - v).norm_sqr()).sum();
    let trace = (g * &sigma).component_mul(&g.conjugate()).iter().map(|z| z.re).sum::<f64>();
    Ok(resid + trace)
}

/// `c~ = c + N`, `d~ = d + E ||y - G mu||^2`.
pub fn update_noise(state: &mut ViState, obs: &Observation, hyper: &ViHyperParams) -> Result<()> {
    let r = expected_residual(state, obs)?;
    state.c_t = hyper.c + obs.y.len() as f64;
    let d = hyper.d + r;
    if !(d > 1e-300) {
        log::warn!("noise posterior rate {d:e} clamped");
    }
    state.d_t = d.max(1e-300);
    Ok(())
}

/// Detects data with the banded Viterbi search. With `guard` the new symbols are
/// kept only if they do not raise the exact free energy. Returns whether `x~_d` changed.
pub fn update_data(state: &mut ViState, obs: &Observation, cfg: &ViConfig) -> Result<bool> {
    let set = BandedSet::from_posterior(
        &state.basis,
        &state.m_mu,
        &state.eig_values,
        &state.eig_vectors,
        cfg.kappa,
    )?;
    let alph = frame_alphabets(obs.frame, obs.pilots)?;
    let (x, _) = detect_sequence(obs.y, &set, &alph, cfg.state_budget)?;
    let new_data = obs.frame.extract_data(&x);
    if new_data == state.x_d {
        return Ok(false);
    }
    if cfg.guard_data_step {
        let before = data_objective(state, obs)?;
        let old = std::mem::replace(&mut state.x_d, new_data);
        state.invalidate();
        let after = data_objective(state, obs)?;
        if after > before {
            log::debug!("banded detection raised the exact objective ({before:.6e} -> {after:.6e}); kept previous symbols");
            state.x_d = old;
            state.invalidate();
            return Ok(false);
        }
    } else {
        state.x_d = new_data;
        state.invalidate();
    }
    Ok(true)
}

/// Data-dependent part of the free energy (divided by `E[beta]`):
/// `||G m||^2 + Tr(G Sigma G^H) - 2 Re{y^H G m}`.
pub fn data_objective(state: &mut ViState, obs: &Observation) -> Result<f64> {
    Ok(expected_residual(state, obs)? - norm_sqr(obs.y))
}

/// Drops coefficients with `|m_j|^2 + Sigma_jj < threshold`. Returns how many were removed.
pub fn prune(state: &mut ViState, threshold: f64) -> Result<usize> {
    let keep: Vec<bool> = (0..state.n_active())
        .map(|j| state.m_mu[j].norm_sqr() + state.sigma_mu[(j, j)].re >= threshold)
        .collect();
    let idx: Vec<usize> = keep.iter().enumerate().filter(|(_, k)| **k).map(|(j, _)| j).collect();
    let removed = keep.len() - idx.len();
    if removed == 0 {
        return Ok(0);
    }
    state.basis.retain(&keep)?;
    state.m_mu = idx.iter().map(|&j| state.m_mu[j]).collect();
    state.a_t = idx.iter().map(|&j| state.a_t[j]).collect();
    state.b_t = idx.iter().map(|&j| state.b_t[j]).collect();
    state.sigma_mu = state.sigma_mu.select_rows(&idx).select_columns(&idx);
    state.invalidate();
    state.refresh_eigen();
    Ok(removed)
}

fn gamma_entropy_terms(shape: f64, rate: f64) -> f64 {
    // E_q[log q] for Gamma(shape, rate)
    shape * rate.ln() + (shape - 1.0) * (digamma(shape) - rate.ln()) - shape - ln_gamma(shape)
}

fn gamma_prior_terms(a: f64, b: f64, shape: f64, rate: f64) -> f64 {
    // E_q[log p] for prior Gamma(a, b) under q = Gamma(shape, rate)
    a * b.ln() + (a - 1.0) * (digamma(shape) - rate.ln()) - b * shape / rate - ln_gamma(a)
}

/// Variational free energy (up to additive constants).
///
/// Fails if `x~_d` is off the constellation, where the data term is infinite.
pub fn free_energy(state: &mut ViState, obs: &Observation, hyper: &ViHyperParams) -> Result<f64> {
    let constellation = obs.frame.constellation();
    for (k, &v) in state.x_d.iter().enumerate() {
        let on = if obs.frame.is_forced_zero(k) {
            v == C64::new(0.0, 0.0)
        } else {
            constellation.index_of(v).is_some()
        };
        if !on {
            return Err(Error::Numerical(format!("data symbol {k} is off the constellation")));
        }
    }
    let m = state.n_active();
    let logdet: f64 = state.eig_values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum();
    let mut f = -logdet;
    for j in 0..m {
        let (a_t, b_t) = (state.a_t[j], state.b_t[j]);
        let second = state.m_mu[j].norm_sqr() + state.sigma_mu[(j, j)].re;
        let e_log_alpha = digamma(a_t) - b_t.ln();
        f += a_t / b_t * second - e_log_alpha;
        f += gamma_entropy_terms(a_t, b_t) - gamma_prior_terms(hyper.a, hyper.b, a_t, b_t);
    }
    let n = obs.y.len() as f64;
    let (c_t, d_t) = (state.c_t, state.d_t);
    f += gamma_entropy_terms(c_t, d_t) - gamma_prior_terms(hyper.c, hyper.d, c_t, d_t);
    f -= n * (digamma(c_t) - d_t.ln());
    f += c_t / d_t * expected_residual(state, obs)?;
    if !f.is_finite() {
        return Err(Error::Numerical("free energy is not finite".into()));
    }
    Ok(f)
}

/// Applies one update step.
pub fn apply_step(step: UpdateStep, state: &mut ViState, obs: &Observation, cfg: &ViConfig) -> Result<()> {
    match step {
        UpdateStep::Channel => update_channel_posterior(state, obs),
        UpdateStep::Alpha => {
            update_alpha(state, &cfg.hyper);
            Ok(())
        }
        UpdateStep::Data => update_data(state, obs, cfg).map(|_| ()),
        UpdateStep::Noise => update_noise(state, obs, &cfg.hyper),
        UpdateStep::Prune => prune(state, cfg.prune_threshold).map(|_| ()),
    }
}

/// Runs `n_iters` sweeps of `cfg.order`, calling `on_iter(i, state)` after sweep `i` (1-based).
pub fn run<F>(
    obs: &Observation,
    mut state: ViState,
    cfg: &ViConfig,
    n_iters: usize,
    mut on_iter: F,
) -> Result<ViState>
where
    F: FnMut(usize, &mut ViState) -> Result<()>,
{
    cfg.hyper.validate()?;
    for it in 1..=n_iters {
        for &step in &cfg.order {
            apply_step(step, &mut state, obs, cfg)?;
        }
        log::trace!("iteration {it}: {} active, beta {:.4e}", state.n_active(), state.noise_precision());
        on_iter(it, &mut state)?;
    }
    Ok(state)
}
