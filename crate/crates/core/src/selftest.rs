//! Quick oracle checks runnable from the command line.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bem::make_basis;
use crate::error::Result;
use crate::harness::{ExperimentConfig, Preset};
use crate::ofdm::{Constellation, Dft, OfdmFrameSpec};
use crate::random::{complex_gaussian, complex_gaussian_vec};
use crate::relay::{composite_channel, hop_matrix, RelaySystem};
use crate::special::{bessel_j0, digamma};
use crate::vi::{apply_step, free_energy, Observation, UpdateStep, ViConfig, ViState};
use crate::viterbi::{detect_sequence, frame_alphabets, BandedSet};
use crate::C64;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("special functions", special_functions()),
        check("dft unitarity", dft_unitarity()),
        check("operator identity D[mu]x = G[x]mu", operator_identity()),
        check("composite channel vs chained hop matrices", composite_chain()),
        check("viterbi vs exhaustive search", viterbi_exhaustive()),
        check("free energy monotone", free_energy_monotone()),
    ]
}

fn special_functions() -> Result<(bool, String)> {
    let e1 = (bessel_j0(1.0) - 0.765_197_686_557_966_6).abs();
    let e2 = (digamma(1.0) + 0.577_215_664_901_532_9).abs();
    Ok((e1 < 1e-12 && e2 < 1e-12, format!("J0 err {e1:.1e}, digamma err {e2:.1e}")))
}

fn dft_unitarity() -> Result<(bool, String)> {
    let dft = Dft::new(128);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = complex_gaussian_vec(&mut rng, 128, 1.0);
    let back = dft.inverse(&dft.forward(&x));
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok((err < 1e-12, format!("round-trip error {err:.1e}")))
}

fn operator_identity() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dft = Dft::new(64);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let basis = make_basis(64, rng.random_range(1..21), rng.random_range(0.0..0.5), 8)?;
        let mu = complex_gaussian_vec(&mut rng, basis.n_active(), 1.0);
        let x = complex_gaussian_vec(&mut rng, 64, 1.0);
        let dx = basis.operator_d(&mu)? * DVector::from_vec(x.clone());
        let gm = basis.operator_g(&x, &dft)? * DVector::from_vec(mu);
        worst = worst.max((dx - gm).norm());
    }
    Ok((worst < 1e-10, format!("max deviation {worst:.1e}")))
}

/// Brute-force circulant-form channel: chained hop matrices, then CP folding.
pub fn chained_circulant(system: &RelaySystem) -> Result<DMatrix<C64>> {
    let n = system.n_subcarriers;
    let mut h = DMatrix::zeros(n, n);
    for link in &system.links {
        let lens: Vec<usize> = link.hops.iter().map(|hop| hop.max_delay).collect();
        let total: usize = lens.iter().map(|l| l - 1).sum();
        let mut t: Option<DMatrix<C64>> = None;
        let mut start = -(total as isize);
        for (rho, hop) in link.hops.iter().enumerate() {
            start += lens[rho] as isize - 1;
            let rows = (n as isize - start) as usize;
            let m = hop_matrix(hop, rows, start)?;
            t = Some(match t {
                None => m,
                Some(prev) => m * prev * C64::new(link.gains[rho - 1], 0.0),
            });
        }
        let t = t.expect("link has hops");
        // column c of t is input time c - total
        for r in 0..n {
            for c in 0..t.ncols() {
                let time = c as isize - total as isize;
                h[(r, time.rem_euclid(n as isize) as usize)] += t[(r, c)];
            }
        }
    }
    Ok(h)
}

fn composite_chain() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for preset in [Preset::Dualhop, Preset::Threehop] {
        let cfg = ExperimentConfig::preset(preset);
        let frame = cfg.frame()?;
        for _ in 0..3 {
            let hops = cfg.template().draw(&cfg.clock(), &mut rng)?;
            let sys = RelaySystem::with_equal_noise(&frame, hops, 0.1)?;
            let fast = composite_channel(&sys)?.circulant_form;
            worst = worst.max((fast - chained_circulant(&sys)?).norm());
        }
    }
    Ok((worst < 1e-10, format!("max deviation {worst:.1e}")))
}

fn viterbi_exhaustive() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = OfdmFrameSpec::new(10, 2, vec![3, 6], 1, Constellation::qpsk())?;
    let mut agree = 0;
    let trials = 10;
    for _ in 0..trials {
        let pilots = complex_gaussian_vec(&mut rng, 2, 3.0);
        let d = DMatrix::from_fn(10, 10, |_, _| complex_gaussian(&mut rng, 1.0));
        let set = BandedSet::from_dense(&d, 1)?;
        let y = complex_gaussian_vec(&mut rng, 10, 1.0);
        let alph = frame_alphabets(&frame, &pilots)?;
        let (x, _) = detect_sequence(&y, &set, &alph, 1 << 20)?;
        let free: Vec<usize> = (0..10).filter(|&p| alph[p].len() > 1).collect();
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..4usize.pow(free.len() as u32) {
            let mut cand: Vec<C64> = alph.iter().map(|a| a[0]).collect();
            let mut c = code;
            for &p in &free {
                cand[p] = alph[p][c % 4];
                c /= 4;
            }
            let j = set.objective(&cand, &y);
            if j < best.0 {
                best = (j, cand);
            }
        }
        if best.1 == x {
            agree += 1;
        }
    }
    Ok((agree == trials, format!("{agree}/{trials} instances agree")))
}

fn free_energy_monotone() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 32;
    let frame = OfdmFrameSpec::clustered(n, 4, 4, 2, Constellation::qpsk())?;
    let basis = make_basis(n, 2, 0.6, 4)?;
    let cfg = ViConfig {
        kappa: 2,
        ..ViConfig::default()
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..5 {
        let pilots = frame.draw_pilots(3.0, &mut rng);
        let (_, data) = frame.draw_data(&mut rng);
        let m = basis.n_active();
        let mu = complex_gaussian_vec(&mut rng, m, 0.05);
        let x = frame.assemble(&data, &pilots)?;
        let y: Vec<C64> = (basis.operator_d(&mu)? * DVector::from_vec(x.values))
            .iter()
            .map(|v| v + complex_gaussian(&mut rng, 0.01))
            .collect();
        let obs = Observation {
            y: &y,
            frame: &frame,
            pilots: &pilots,
        };
        let mut st = ViState::new(
            basis.clone(),
            vec![C64::new(0.0, 0.0); m],
            DMatrix::identity(m, m) * C64::new(1.0 / m as f64, 0.0),
            vec![1.0; m],
            vec![m as f64; m],
            33.0,
            1.0,
            data,
        )?;
        for _ in 0..3 {
            for step in [UpdateStep::Channel, UpdateStep::Alpha, UpdateStep::Data, UpdateStep::Noise] {
                let before = free_energy(&mut st, &obs, &cfg.hyper)?;
                apply_step(step, &mut st, &obs, &cfg)?;
                let after = free_energy(&mut st, &obs, &cfg.hyper)?;
                worst = worst.max((after - before) / before.abs().max(1.0));
            }
        }
    }
    Ok((worst <= 1e-8, format!("largest relative increase {worst:.1e}")))
}
