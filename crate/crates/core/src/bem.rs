//! Generalized complex-exponential basis expansion of the composite channel.
//!
//! Coefficient `j` maps to Doppler index `q` and delay `l` by
//! `j = (q + Q) * L_cp + l` (q-major blocks).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ofdm::Dft;
use crate::relay::CompositeChannel;
use crate::C64;

/// Basis functions and the currently active coefficient set.
#[derive(Debug, Clone)]
pub struct BemBasis {
    n: usize,
    v: usize,
    q_max: usize,
    l_span: usize,
    /// `phi[q + Q][n] = exp(j 2 pi q n / (V N))`.
    phi: Arc<Vec<Vec<C64>>>,
    /// `kernel[q + Q][d] = (1/N) sum_n exp(j 2 pi n (d + q/V) / N)`, `d` taken mod N.
    kernel: Arc<Vec<Vec<C64>>>,
    /// `exp(-j 2 pi k / N)`.
    twiddle: Arc<Vec<C64>>,
    active: Vec<usize>,
}

impl PartialEq for BemBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.v == other.v
            && self.q_max == other.q_max
            && self.l_span == other.l_span
            && self.active == other.active
    }
}

/// Basis with all `(2Q+1) L_cp` columns active, `Q = ceil(V f_upper_norm)`.
pub fn make_basis(n: usize, v: usize, f_upper_norm: f64, l_cp: usize) -> Result<BemBasis> {
    if n == 0 || l_cp == 0 || l_cp > n {
        return Err(Error::Config(format!("invalid basis size N={n}, L_cp={l_cp}")));
    }
    if v == 0 {
        return Err(Error::Config("oversampling factor must be at least 1".into()));
    }
    if !(f_upper_norm >= 0.0) || !f_upper_norm.is_finite() {
        return Err(Error::Config(format!("invalid Doppler bound {f_upper_norm}")));
    }
    // the small offset keeps products like 20 * 0.3 from rounding up a whole step
    let q_max = ((v as f64 * f_upper_norm) - 1e-9).ceil().max(0.0) as usize;
    if 2 * q_max + 1 > v * n {
        return Err(Error::Config(format!(
            "Doppler bound {f_upper_norm} needs more than V*N basis functions"
        )));
    }
    let n_q = 2 * q_max + 1;
    let vn = (v * n) as f64;
    let phi: Vec<Vec<C64>> = (0..n_q)
        .map(|qi| {
            let q = qi as f64 - q_max as f64;
            (0..n)
                .map(|t| C64::from_polar(1.0, 2.0 * PI * q * t as f64 / vn))
                .collect()
        })
        .collect();
    let kernel: Vec<Vec<C64>> = (0..n_q)
        .map(|qi| {
            let frac = (qi as f64 - q_max as f64) / v as f64;
            (0..n).map(|d| dirichlet(n, d as f64 + frac)).collect()
        })
        .collect();
    Ok(BemBasis {
        n,
        v,
        q_max,
        l_span: l_cp,
        phi: Arc::new(phi),
        kernel: Arc::new(kernel),
        twiddle: Arc::new(
            (0..n)
                .map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                .collect(),
        ),
        active: (0..n_q * l_cp).collect(),
    })
}

/// `(1/N) sum_{n<N} exp(j 2 pi n theta / N)` in closed form.
fn dirichlet(n: usize, theta: f64) -> C64 {
    let nearest = theta.round();
    if (theta - nearest).abs() < 1e-12 {
        return if (nearest as i64).rem_euclid(n as i64) == 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        };
    }
    let num = C64::new(1.0, 0.0) - C64::from_polar(1.0, 2.0 * PI * theta);
    let den = C64::new(1.0, 0.0) - C64::from_polar(1.0, 2.0 * PI * theta / n as f64);
    num / (den * n as f64)
}

impl BemBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn l_span(&self) -> usize {
        self.l_span
    }

    /// Full coefficient count `M = (2Q+1) L_cp`.
    pub fn m_total(&self) -> usize {
        (2 * self.q_max + 1) * self.l_span
    }

    pub fn active_columns(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn phi(&self, q: isize) -> &[C64] {
        &self.phi[(q + self.q_max as isize) as usize]
    }

    /// `(q, l)` of full-layout index `j`.
    pub fn q_l(&self, j: usize) -> (isize, usize) {
        ((j / self.l_span) as isize - self.q_max as isize, j % self.l_span)
    }

    /// Full-layout index of `(q, l)`.
    pub fn index(&self, q: isize, l: usize) -> usize {
        (q + self.q_max as isize) as usize * self.l_span + l
    }

    /// Keeps the active columns whose flag is `true`; `keep` runs over the current active set.
    pub fn retain(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.active.len() {
            return Err(Error::Length {
                what: "retain mask",
                expected: self.active.len(),
                got: keep.len(),
            });
        }
        let mut k = keep.iter();
        self.active.retain(|_| *k.next().unwrap());
        Ok(())
    }

    /// Restricts the active set to `columns` (full-layout indices, sorted on output).
    pub fn set_active(&mut self, mut columns: Vec<usize>) -> Result<()> {
        columns.sort_unstable();
        columns.dedup();
        if columns.last().is_some_and(|&j| j >= self.m_total()) {
            return Err(Error::Config("active column out of range".into()));
        }
        self.active = columns;
        Ok(())
    }

    fn check_coeffs(&self, mu: &[C64]) -> Result<()> {
        if mu.len() != self.active.len() {
            return Err(Error::Length {
                what: "BEM coefficients",
                expected: self.active.len(),
                got: mu.len(),
            });
        }
        Ok(())
    }

    /// Tap trajectories `mu(n, l)` as an `N x L_cp` matrix.
    pub fn coeffs_to_taps(&self, mu: &[C64]) -> Result<DMatrix<C64>> {
        self.check_coeffs(mu)?;
        let mut taps = DMatrix::zeros(self.n, self.l_span);
        for (&j, &c) in self.active.iter().zip(mu) {
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            let (q, l) = self.q_l(j);
            let phi = self.phi(q);
            for t in 0..self.n {
                taps[(t, l)] += c * phi[t];
            }
        }
        Ok(taps)
    }

    /// Least-squares coefficients over the active set for the given tap trajectories.
    pub fn fit_taps(&self, taps: &DMatrix<C64>) -> Result<Vec<C64>> {
        if taps.nrows() != self.n || taps.ncols() > self.l_span {
            return Err(Error::Length {
                what: "tap matrix rows",
                expected: self.n,
                got: taps.nrows(),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.active.len()];
        for l in 0..self.l_span {
            let cols: Vec<usize> = (0..self.active.len())
                .filter(|&k| self.q_l(self.active[k]).1 == l)
                .collect();
            if cols.is_empty() {
                continue;
            }
            let a = DMatrix::from_fn(self.n, cols.len(), |t, c| {
                self.phi(self.q_l(self.active[cols[c]]).0)[t]
            });
            let b = if l < taps.ncols() {
                DVector::from_iterator(self.n, taps.column(l).iter().cloned())
            } else {
                DVector::zeros(self.n)
            };
            let x = a
                .svd(true, true)
                .solve(&b, 1e-14)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            for (c, &k) in cols.iter().enumerate() {
                out[k] = x[c];
            }
        }
        Ok(out)
    }

    /// `G[x]`: column `(q, l)` is `F diag(phi_q) P(l) F^H x`.
    pub fn operator_g(&self, x: &[C64], dft: &Dft) -> Result<DMatrix<C64>> {
        if x.len() != self.n || dft.len() != self.n {
            return Err(Error::Length {
                what: "frequency symbol",
                expected: self.n,
                got: x.len(),
            });
        }
        let s = dft.inverse(x);
        let n = self.n;
        let mut g = DMatrix::zeros(n, self.active.len());
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for (c, &j) in self.active.iter().enumerate() {
            let (q, l) = self.q_l(j);
            let phi = self.phi(q);
            for t in 0..n {
                buf[t] = phi[t] * s[(t + n - l) % n];
            }
            dft.forward_in_place(&mut buf);
            g.column_mut(c).copy_from_slice(&buf);
        }
        Ok(g)
    }

    /// `W[q][m] = sum_l mu_q(l) exp(-j 2 pi l m / N)` for each Doppler index.
    fn delay_spectra(&self, mu: &[C64]) -> Vec<Option<Vec<C64>>> {
        let n = self.n;
        let mut w: Vec<Option<Vec<C64>>> = vec![None; 2 * self.q_max + 1];
        for (&j, &c) in self.active.iter().zip(mu) {
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            let (q, l) = self.q_l(j);
            let row = w[(q + self.q_max as isize) as usize].get_or_insert_with(|| vec![C64::new(0.0, 0.0); n]);
            for (m, r) in row.iter_mut().enumerate() {
                *r += c * self.twiddle[(l * m) % n];
            }
        }
        w
    }

    fn d_entry(&self, w: &[Option<Vec<C64>>], k: usize, m: usize) -> C64 {
        let d = (m + self.n - k) % self.n;
        w.iter()
            .zip(self.kernel.iter())
            .filter_map(|(wq, kq)| wq.as_ref().map(|wq| kq[d] * wq[m]))
            .sum()
    }

    /// Frequency-domain channel matrix `D[mu] = F H F^H`.
    pub fn operator_d(&self, mu: &[C64]) -> Result<DMatrix<C64>> {
        self.check_coeffs(mu)?;
        let w = self.delay_spectra(mu);
        Ok(DMatrix::from_fn(self.n, self.n, |k, m| self.d_entry(&w, k, m)))
    }

    /// Band of `D[mu]` without wrap-around: `out[r][c - r + kappa]` holds
    /// `D[r, c]` for `|c - r| <= kappa`, `0 <= c < N` (zero elsewhere).
    pub fn operator_d_banded(&self, mu: &[C64], kappa: usize) -> Result<Vec<Vec<C64>>> {
        self.check_coeffs(mu)?;
        let w = self.delay_spectra(mu);
        let n = self.n as isize;
        let k = kappa as isize;
        Ok((0..n)
            .map(|r| {
                (-k..=k)
                    .map(|off| {
                        let c = r + off;
                        if c < 0 || c >= n {
                            C64::new(0.0, 0.0)
                        } else {
                            self.d_entry(&w, r as usize, c as usize)
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// `||H_est - H||_F^2 / ||H||_F^2` over tap matrices (columns are delays).
pub fn channel_mse(estimate: &DMatrix<C64>, truth: &CompositeChannel) -> f64 {
    taps_mse(estimate, &truth.taps)
}

/// Relative squared error between two tap matrices of possibly different widths.
pub fn taps_mse(estimate: &DMatrix<C64>, truth: &DMatrix<C64>) -> f64 {
    let n = truth.nrows().max(estimate.nrows());
    let l = truth.ncols().max(estimate.ncols());
    let get = |m: &DMatrix<C64>, r: usize, c: usize| {
        if r < m.nrows() && c < m.ncols() {
            m[(r, c)]
        } else {
            C64::new(0.0, 0.0)
        }
    };
    let mut err = 0.0;
    let mut energy = 0.0;
    for r in 0..n {
        for c in 0..l {
            err += (get(estimate, r, c) - get(truth, r, c)).norm_sqr();
            energy += get(truth, r, c).norm_sqr();
        }
    }
    err / energy
}
