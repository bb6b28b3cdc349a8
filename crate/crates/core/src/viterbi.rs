//! Banded-ICI Viterbi detection that accounts for channel uncertainty.
//!
//! The detector minimizes
//! `J(x) = ||D x||^2 + sum_j lambda_j ||D_j x||^2 - 2 Re{y^H D x}`
//! over constellation sequences, where `D` and the `D_j` are banded
//! (half-width `kappa`, no wrap-around) frequency-domain channel matrices.
//! Trellis step `n` appends symbol `n` and closes row `r = n - kappa`.

use nalgebra::DMatrix;

use crate::bem::BemBasis;
use crate::error::{Error, Result};
use crate::ofdm::{OfdmFrameSpec, Slot};
use crate::C64;

/// Largest number of trellis states accepted per step by default.
pub const DEFAULT_STATE_BUDGET: usize = 1 << 22;
/// Eigenvalues of the posterior covariance below this are ignored.
pub const EIGEN_FLOOR: f64 = 1e-14;
/// Eigenpairs with `lambda < SPREAD_RELATIVE_DROP * lambda_max` are dropped.
pub const SPREAD_RELATIVE_DROP: f64 = 1e-12;

/// A band of a square matrix: `rows[r][c - r + kappa] = D[r, c]`, zero outside `0..N`.
pub type Band = Vec<Vec<C64>>;

/// Keeps `|c - r| <= kappa` without cyclic wrap.
pub fn banded_projection(d: &DMatrix<C64>, kappa: usize) -> Band {
    let n = d.nrows() as isize;
    let k = kappa as isize;
    (0..n)
        .map(|r| {
            (-k..=k)
                .map(|off| {
                    let c = r + off;
                    if c < 0 || c >= n {
                        C64::new(0.0, 0.0)
                    } else {
                        d[(r as usize, c as usize)]
                    }
                })
                .collect()
        })
        .collect()
}

/// Expands a band back to a dense matrix.
pub fn band_to_dense(band: &Band, kappa: usize) -> DMatrix<C64> {
    let n = band.len();
    let mut d = DMatrix::zeros(n, n);
    for (r, row) in band.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let c = r as isize + i as isize - kappa as isize;
            if c >= 0 && (c as usize) < n {
                d[(r, c as usize)] = v;
            }
        }
    }
    d
}

/// Mean channel band plus the uncertainty bands weighted by posterior eigenvalues.
#[derive(Debug, Clone)]
pub struct BandedSet {
    kappa: usize,
    center: Band,
    spread: Vec<(f64, Band)>,
}

impl BandedSet {
    pub fn new(kappa: usize, center: Band, spread: Vec<(f64, Band)>) -> Result<Self> {
        let n = center.len();
        let width = 2 * kappa + 1;
        if n == 0 || width > n {
            return Err(Error::Config(format!("kappa {kappa} too large for N = {n}")));
        }
        let ok = |b: &Band| b.len() == n && b.iter().all(|r| r.len() == width);
        if !ok(&center) || !spread.iter().all(|(l, b)| ok(b) && *l >= 0.0) {
            return Err(Error::Config("inconsistent band shapes".into()));
        }
        Ok(BandedSet {
            kappa,
            center,
            spread,
        })
    }

    /// Perfect-knowledge set: one matrix, no spread.
    pub fn from_dense(d: &DMatrix<C64>, kappa: usize) -> Result<Self> {
        Self::new(kappa, banded_projection(d, kappa), vec![])
    }

    /// Bands of `D[m]` and `D[xi_j]` for the posterior mean and covariance eigenpairs
    /// (`vectors` holds one eigenvector per column).
    pub fn from_posterior(
        basis: &BemBasis,
        mean: &[C64],
        values: &[f64],
        vectors: &DMatrix<C64>,
        kappa: usize,
    ) -> Result<Self> {
        let center = basis.operator_d_banded(mean, kappa)?;
        let lmax = values.iter().cloned().fold(0.0, f64::max);
        let mut spread = Vec::new();
        for (j, &lam) in values.iter().enumerate() {
            if lam < EIGEN_FLOOR || lam < SPREAD_RELATIVE_DROP * lmax {
                continue;
            }
            let xi: Vec<C64> = vectors.column(j).iter().cloned().collect();
            spread.push((lam, basis.operator_d_banded(&xi, kappa)?));
        }
        Self::new(kappa, center, spread)
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &Band {
        &self.center
    }

    pub fn spread(&self) -> &[(f64, Band)] {
        &self.spread
    }

    /// `C_r = a_r^H a_r + sum_j lambda_j b_jr^H b_jr`, row-major `(2k+1)^2`.
    fn row_gram(&self, r: usize) -> Vec<C64> {
        let w = 2 * self.kappa + 1;
        let mut c = vec![C64::new(0.0, 0.0); w * w];
        let mut add = |row: &[C64], scale: f64| {
            for i in 0..w {
                let ai = row[i].conj() * scale;
                for k in 0..w {
                    c[i * w + k] += ai * row[k];
                }
            }
        };
        add(&self.center[r], 1.0);
        for (lam, band) in &self.spread {
            add(&band[r], *lam);
        }
        c
    }

    /// Dense evaluation of the banded objective for a full symbol vector.
    pub fn objective(&self, x: &[C64], y: &[C64]) -> f64 {
        let n = self.n();
        let dense = |b: &Band| band_to_dense(b, self.kappa);
        let xv = nalgebra::DVector::from_column_slice(x);
        let yv = nalgebra::DVector::from_column_slice(y);
        let dx = dense(&self.center) * &xv;
        let mut j = dx.norm_squared() - 2.0 * yv.dotc(&dx).re;
        for (lam, b) in &self.spread {
            j += lam * (dense(b) * &xv).norm_squared();
        }
        debug_assert_eq!(x.len(), n);
        j
    }
}

/// Metric contributed by row `r` for the window `x[r-kappa ..= r+kappa]`
/// (entries outside the frame must be zero).
pub fn branch_metric(window: &[C64], r: usize, banded: &BandedSet, y: &[C64]) -> f64 {
    let w = 2 * banded.kappa + 1;
    let c = banded.row_gram(r);
    let mut quad = C64::new(0.0, 0.0);
    for i in 0..w {
        for k in 0..w {
            quad += window[i].conj() * c[i * w + k] * window[k];
        }
    }
    let lin: C64 = banded.center[r].iter().zip(window).map(|(a, x)| a * x).sum();
    quad.re - 2.0 * (y[r].conj() * lin).re
}

/// Candidate values for every subcarrier: the pilot value or a known zero as a
/// single-entry alphabet, the constellation for free data.
pub fn frame_alphabets(frame: &OfdmFrameSpec, pilots: &[C64]) -> Result<Vec<Vec<C64>>> {
    if pilots.len() != frame.n_pilots() {
        return Err(Error::Length {
            what: "pilot vector",
            expected: frame.n_pilots(),
            got: pilots.len(),
        });
    }
    Ok((0..frame.n_subcarriers())
        .map(|n| match frame.slot(n) {
            Slot::Pilot(k) => vec![pilots[k]],
            Slot::Data(k) if frame.is_forced_zero(k) => vec![C64::new(0.0, 0.0)],
            Slot::Data(_) => frame.constellation().points().to_vec(),
        })
        .collect())
}

/// Detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Full frequency-domain vector with pilots and zeros in place.
    pub x: Vec<C64>,
    /// Data vector (forced-zero positions hold zero).
    pub data: Vec<C64>,
    /// Banded objective of `x`.
    pub metric: f64,
}

/// Viterbi detection on a frame.
pub fn detect(y: &[C64], banded: &BandedSet, frame: &OfdmFrameSpec, pilots: &[C64]) -> Result<Detection> {
    let alph = frame_alphabets(frame, pilots)?;
    let (x, metric) = detect_sequence(y, banded, &alph, DEFAULT_STATE_BUDGET)?;
    Ok(Detection {
        data: frame.extract_data(&x),
        x,
        metric,
    })
}

/// Global minimizer of the banded objective over per-position alphabets.
pub fn detect_sequence(
    y: &[C64],
    banded: &BandedSet,
    alphabets: &[Vec<C64>],
    state_budget: usize,
) -> Result<(Vec<C64>, f64)> {
    let n = banded.n();
    let kappa = banded.kappa;
    if y.len() != n || alphabets.len() != n {
        return Err(Error::Length {
            what: "detector input",
            expected: n,
            got: y.len().min(alphabets.len()),
        });
    }
    if alphabets.iter().any(|a| a.is_empty() || a.len() > 256) {
        return Err(Error::Config("alphabets must have 1..=256 entries".into()));
    }
    if kappa == 0 {
        return Ok(detect_diagonal(y, banded, alphabets));
    }

    let zero = [C64::new(0.0, 0.0)];
    let alpha = |p: isize| -> &[C64] {
        if p < 0 || p >= n as isize {
            &zero
        } else {
            &alphabets[p as usize]
        }
    };
    let radix = |p: isize| alpha(p).len();
    let span = 2 * kappa; // positions per state
    let width = span + 1;

    // state after step n covers positions n-span+1 ..= n
    let states_after = |step: isize| -> usize { (step - span as isize + 1..=step).map(radix).product() };
    let max_states = (-1..(n + kappa) as isize).map(states_after).max().unwrap_or(1);
    if max_states > state_budget {
        return Err(Error::TrellisBudget {
            states: max_states,
            budget: state_budget,
        });
    }

    let mut cost = vec![0.0f64; 1];
    let mut back: Vec<Vec<u8>> = Vec::with_capacity(n + kappa);
    let mut digits = vec![0usize; span];
    let mut window = vec![C64::new(0.0, 0.0); width];

    for step in 0..(n + kappa) as isize {
        let old_first = step - span as isize; // oldest position of the previous state
        let r_oldest = radix(old_first);
        let r_new = radix(step);
        let old_states = cost.len();
        let r_rest = old_states / r_oldest;
        let new_states = r_rest * r_new;
        let new_alpha = alpha(step);
        let row = step - kappa as isize;

        let mut next = vec![f64::INFINITY; new_states];
        let mut ptr = vec![0u8; new_states];

        if row < 0 {
            // no observation closes yet: states extend without a metric
            for ns in 0..new_states {
                let rest = ns / r_new;
                let (mut best, mut arg) = (f64::INFINITY, 0u8);
                for d_old in 0..r_oldest {
                    let c = cost[d_old * r_rest + rest];
                    if c < best {
                        best = c;
                        arg = d_old as u8;
                    }
                }
                next[ns] = best;
                ptr[ns] = arg;
            }
        } else {
            let r = row as usize;
            let c = banded.row_gram(r);
            let a = &banded.center[r];
            let yr = y[r].conj();
            let c_nn = c[span * width + span].re;
            let lin_new = yr * a[span];
            // per old state: quadratic+linear part over the old window and the coupling to the new symbol
            let mut part = vec![0.0f64; old_states];
            let mut couple = vec![C64::new(0.0, 0.0); old_states];
            for s in 0..old_states {
                if !cost[s].is_finite() {
                    continue;
                }
                decode(s, old_first, span, &radix, &mut digits);
                for (i, &d) in digits.iter().enumerate() {
                    window[i] = alpha(old_first + i as isize)[d];
                }
                let mut quad = C64::new(0.0, 0.0);
                let mut lin = C64::new(0.0, 0.0);
                let mut u = C64::new(0.0, 0.0);
                for i in 0..span {
                    let wi = window[i];
                    if wi == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..span {
                        acc += c[i * width + k] * window[k];
                    }
                    quad += wi.conj() * acc;
                    lin += a[i] * wi;
                    u += c[span * width + i] * wi;
                }
                part[s] = quad.re - 2.0 * (yr * lin).re;
                couple[s] = u;
            }
            for ns in 0..new_states {
                let rest = ns / r_new;
                let x = new_alpha[ns % r_new];
                let own = x.norm_sqr() * c_nn - 2.0 * (lin_new * x).re;
                let xc = x.conj();
                let (mut best, mut arg) = (f64::INFINITY, 0u8);
                for d_old in 0..r_oldest {
                    let s = d_old * r_rest + rest;
                    let m = cost[s] + part[s] + 2.0 * (xc * couple[s]).re + own;
                    if m < best {
                        best = m;
                        arg = d_old as u8;
                    }
                }
                next[ns] = best;
                ptr[ns] = arg;
            }
        }
        cost = next;
        back.push(ptr);
    }

    // best terminal state, first minimum on ties
    let (mut state, mut metric) = (0usize, f64::INFINITY);
    for (s, &c) in cost.iter().enumerate() {
        if c < metric {
            metric = c;
            state = s;
        }
    }
    if !metric.is_finite() {
        return Err(Error::Numerical("trellis produced no finite path".into()));
    }

    let mut x = vec![C64::new(0.0, 0.0); n];
    for step in (0..(n + kappa) as isize).rev() {
        let r_new = radix(step);
        let d_new = state % r_new;
        if step < n as isize {
            x[step as usize] = alphabets[step as usize][d_new];
        }
        let old_first = step - span as isize;
        let r_oldest = radix(old_first);
        let r_rest: usize = (old_first + 1..step).map(radix).product();
        let d_old = back[step as usize][state] as usize;
        debug_assert!(d_old < r_oldest);
        state = d_old * r_rest + state / r_new;
    }
    Ok((x, metric))
}

/// Mixed-radix digits of a state, oldest position most significant.
fn decode(mut s: usize, first: isize, span: usize, radix: &impl Fn(isize) -> usize, out: &mut [usize]) {
    for i in (0..span).rev() {
        let r = radix(first + i as isize);
        out[i] = s % r;
        s /= r;
    }
}

fn detect_diagonal(y: &[C64], banded: &BandedSet, alphabets: &[Vec<C64>]) -> (Vec<C64>, f64) {
    let mut total = 0.0;
    let x = (0..banded.n())
        .map(|r| {
            let (mut best, mut arg) = (f64::INFINITY, C64::new(0.0, 0.0));
            for &cand in &alphabets[r] {
                let m = branch_metric(&[cand], r, banded, y);
                if m < best {
                    best = m;
                    arg = cand;
                }
            }
            total += best;
            arg
        })
        .collect();
    (x, total)
}
