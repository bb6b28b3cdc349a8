//! Monte Carlo experiments: configuration, presets, per-run simulation,
//! aggregation and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bem::{make_basis, taps_mse, BemBasis};
use crate::error::{Error, Result};
use crate::fading::{HopChannelSpec, SampleClock};
use crate::init::initialize;
use crate::ofdm::{Constellation, OfdmFrameSpec};
use crate::random::stream_rng;
use crate::relay::{propagate, RelaySystem, RelayTemplate};
use crate::vi::{self, Observation, UpdateStep, ViConfig, ViHyperParams, DEFAULT_ORDER};
use crate::viterbi::{detect, BandedSet, DEFAULT_STATE_BUDGET};
use crate::C64;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// CSV header of the iteration metrics.
pub const CSV_HEADER: &str = "snr_db,iteration,mse_mean,ber_mean,active_bases_mean,runs";
/// CSV header of the perfect-CSI reference.
pub const PERFECT_CSV_HEADER: &str = "snr_db,ber_mean,runs";

/// One hop of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopConfig {
    /// Candidate tap positions are `0..pool`.
    pub pool: usize,
    pub taps: usize,
    pub max_norm_doppler: f64,
}

impl HopConfig {
    fn to_spec(&self) -> HopChannelSpec {
        HopChannelSpec::from_pool(self.pool, self.taps, self.max_norm_doppler)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Dualhop,
    Threehop,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dualhop" => Ok(Preset::Dualhop),
            "threehop" => Ok(Preset::Threehop),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

/// Full experiment description. Every field has a default, so a JSON file only
/// needs the keys it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `links[k][rho]`: hop `rho` of link `k`.
    pub links: Vec<Vec<HopConfig>>,
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub carrier_freq_hz: f64,
    pub sample_interval_s: f64,
    pub oversampling: usize,
    /// Normalized Doppler bound of the composite channel; `None` uses
    /// `(hops) * max per-hop normalized Doppler`.
    pub f_upper_norm: Option<f64>,
    pub n_clusters: usize,
    pub pilot_power_ratio: f64,
    pub kappa: usize,
    pub snr_db: Vec<f64>,
    pub n_runs: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub output: Option<String>,
    pub hyper: ViHyperParams,
    pub prune_threshold: f64,
    pub guard_data_step: bool,
    pub order: Vec<UpdateStep>,
    pub state_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Dualhop)
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let hop = |pool, taps, d| HopConfig {
            pool,
            taps,
            max_norm_doppler: d,
        };
        let (links, kappa) = match p {
            Preset::Dualhop => (
                vec![
                    vec![hop(5, 2, 0.05), hop(4, 2, 0.15)],
                    vec![hop(3, 2, 0.05), hop(3, 2, 0.15)],
                ],
                3,
            ),
            Preset::Threehop => (
                vec![
                    vec![hop(2, 2, 0.05), hop(3, 3, 0.15), hop(2, 2, 0.05)],
                    vec![hop(3, 3, 0.05), hop(2, 2, 0.15), hop(2, 2, 0.05)],
                ],
                4,
            ),
        };
        ExperimentConfig {
            links,
            n_subcarriers: 128,
            cp_len: 8,
            carrier_freq_hz: 2e9,
            sample_interval_s: 2e-6,
            oversampling: 20,
            f_upper_norm: None,
            n_clusters: 14,
            pilot_power_ratio: 3.0,
            kappa,
            snr_db: vec![10.0, 20.0, 30.0],
            n_runs: 100,
            n_iters: 10,
            seed: 2024,
            output: None,
            hyper: ViHyperParams::default(),
            prune_threshold: 1e-10,
            guard_data_step: true,
            order: DEFAULT_ORDER.to_vec(),
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn template(&self) -> RelayTemplate {
        RelayTemplate {
            links: self
                .links
                .iter()
                .map(|l| l.iter().map(HopConfig::to_spec).collect())
                .collect(),
        }
    }

    pub fn clock(&self) -> SampleClock {
        SampleClock {
            n_subcarriers: self.n_subcarriers,
            sample_interval: self.sample_interval_s,
        }
    }

    /// Relay count per link.
    pub fn n_relays(&self) -> usize {
        self.links.first().map_or(0, |l| l.len().saturating_sub(1))
    }

    /// Terminal speed implied by the largest per-hop normalized Doppler.
    pub fn max_speed_mps(&self) -> f64 {
        let fd = self.clock().doppler_hz(self.template().max_hop_doppler());
        fd * SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    pub fn effective_f_upper_norm(&self) -> f64 {
        self.f_upper_norm
            .unwrap_or_else(|| (self.n_relays() + 1) as f64 * self.template().max_hop_doppler())
    }

    pub fn frame(&self) -> Result<OfdmFrameSpec> {
        OfdmFrameSpec::clustered(
            self.n_subcarriers,
            self.cp_len,
            self.n_clusters,
            self.kappa,
            Constellation::qpsk(),
        )
    }

    pub fn vi_config(&self) -> ViConfig {
        ViConfig {
            hyper: self.hyper,
            prune_threshold: self.prune_threshold,
            kappa: self.kappa,
            order: self.order.clone(),
            guard_data_step: self.guard_data_step,
            state_budget: self.state_budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.template().validate(self.cp_len)?;
        self.hyper.validate()?;
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be positive".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("at least one finite SNR is required".into()));
        }
        if !(self.pilot_power_ratio > 0.0) || !(self.sample_interval_s > 0.0) || !(self.carrier_freq_hz > 0.0) {
            return Err(Error::Config("pilot ratio, sample interval and carrier must be positive".into()));
        }
        if 2 * self.kappa + 1 > self.n_subcarriers {
            return Err(Error::Config(format!("kappa {} too large", self.kappa)));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::Config("prune threshold must be non-negative".into()));
        }
        let frame = self.frame()?;
        let v1 = make_basis(self.n_subcarriers, 1, self.effective_f_upper_norm(), self.cp_len)?;
        if frame.n_pilots() < v1.n_active() {
            log::warn!(
                "{} pilots for {} initial unknowns; LS initialization will be regularized",
                frame.n_pilots(),
                v1.n_active()
            );
        }
        make_basis(self.n_subcarriers, self.oversampling, self.effective_f_upper_norm(), self.cp_len)?;
        Ok(())
    }
}

/// Aggregated metrics of one (SNR, iteration) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub snr_db: f64,
    pub iteration: usize,
    pub mse_mean: f64,
    pub ber_mean: f64,
    pub active_bases_mean: f64,
    pub runs: usize,
}

/// Perfect-CSI detection reference for one SNR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfectCsiRecord {
    pub snr_db: f64,
    pub ber_mean: f64,
    pub runs: usize,
}

/// Per-run metrics, index 0 being the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub mse: Vec<f64>,
    pub ber: Vec<f64>,
    pub active: Vec<usize>,
    pub perfect_ber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub perfect: Vec<PerfectCsiRecord>,
    /// `outcomes[snr][run]`.
    pub outcomes: Vec<Vec<RunOutcome>>,
}

/// Bases and frame shared by every run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: OfdmFrameSpec,
    pub basis: BemBasis,
    pub basis_v1: BemBasis,
    pub template: RelayTemplate,
    pub vi: ViConfig,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let fu = cfg.effective_f_upper_norm();
        Ok(Prepared {
            frame: cfg.frame()?,
            basis: make_basis(cfg.n_subcarriers, cfg.oversampling, fu, cfg.cp_len)?,
            basis_v1: make_basis(cfg.n_subcarriers, 1, fu, cfg.cp_len)?,
            template: cfg.template(),
            vi: cfg.vi_config(),
        })
    }
}

/// Noise power for a given SNR with unit-power data symbols.
pub fn noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Bit error rate over the free data positions.
pub fn bit_error_rate(frame: &OfdmFrameSpec, truth_idx: &[usize], detected: &[C64]) -> f64 {
    let c = frame.constellation();
    let mut errors = 0u64;
    let mut bits = 0u64;
    for k in frame.free_data_positions() {
        let got = c.index_of(detected[k]).unwrap_or_else(|| c.nearest(detected[k]));
        errors += c.bit_errors(truth_idx[k], got) as u64;
        bits += c.bits_per_symbol() as u64;
    }
    if bits == 0 {
        0.0
    } else {
        errors as f64 / bits as f64
    }
}

/// Viterbi detection with the true composite channel and no uncertainty term.
pub fn perfect_csi_detect(
    y: &[C64],
    truth: &crate::relay::CompositeChannel,
    frame: &OfdmFrameSpec,
    pilots: &[C64],
    kappa: usize,
) -> Result<Vec<C64>> {
    let d = truth.freq_matrix(frame.dft());
    let set = BandedSet::from_dense(&d, kappa)?;
    Ok(detect(y, &set, frame, pilots)?.data)
}

/// One Monte Carlo run at one SNR. The run's random stream depends only on
/// `(seed, run)`, so every SNR sees the same channels, data and pilots.
pub fn simulate_run(cfg: &ExperimentConfig, prep: &Prepared, snr_db: f64, run: usize) -> Result<RunOutcome> {
    let mut rng = stream_rng(cfg.seed, run as u64);
    let frame = &prep.frame;
    let pilots = frame.draw_pilots(cfg.pilot_power_ratio, &mut rng);
    let (truth_idx, data) = frame.draw_data(&mut rng);
    let hops = prep.template.draw(&cfg.clock(), &mut rng)?;
    let system = RelaySystem::with_equal_noise(frame, hops, noise_power(snr_db))?;
    let x = frame.assemble(&data, &pilots)?;
    let prop = propagate(frame, &x, &system, &mut rng)?;
    let obs = Observation {
        y: &prop.y_freq,
        frame,
        pilots: &pilots,
    };

    let init = initialize(&obs, &prep.basis_v1, prep.basis.n_active())?;
    let mut mse = vec![taps_mse(&init.taps()?, &prop.truth.taps)];
    let mut ber = vec![bit_error_rate(frame, &truth_idx, &init.x_d0)];
    let mut active = vec![prep.basis.n_active()];

    let state = init.to_state(&prep.basis, &cfg.hyper, cfg.n_subcarriers)?;
    vi::run(&obs, state, &prep.vi, cfg.n_iters, |_, st| {
        mse.push(taps_mse(&st.taps()?, &prop.truth.taps));
        ber.push(bit_error_rate(frame, &truth_idx, &st.x_d));
        active.push(st.n_active());
        Ok(())
    })?;

    let perfect = perfect_csi_detect(&prop.y_freq, &prop.truth, frame, &pilots, cfg.kappa)?;
    Ok(RunOutcome {
        mse,
        ber,
        active,
        perfect_ber: bit_error_rate(frame, &truth_idx, &perfect),
    })
}

/// Runs every (SNR, run) pair on the rayon pool and aggregates in a fixed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prep = Prepared::new(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.snr_db.len())
        .flat_map(|s| (0..cfg.n_runs).map(move |r| (s, r)))
        .collect();
    let results: Vec<Result<RunOutcome>> = jobs
        .par_iter()
        .map(|&(s, r)| simulate_run(cfg, &prep, cfg.snr_db[s], r))
        .collect();
    let mut outcomes: Vec<Vec<RunOutcome>> = vec![Vec::with_capacity(cfg.n_runs); cfg.snr_db.len()];
    for ((s, _), res) in jobs.iter().zip(results) {
        outcomes[*s].push(res?);
    }

    let runs = cfg.n_runs as f64;
    let mut records = Vec::new();
    let mut perfect = Vec::new();
    for (s, &snr) in cfg.snr_db.iter().enumerate() {
        let set = &outcomes[s];
        for it in 0..=cfg.n_iters {
            let (mut m, mut b, mut a) = (0.0, 0.0, 0.0);
            for o in set {
                m += o.mse[it];
                b += o.ber[it];
                a += o.active[it] as f64;
            }
            records.push(MetricsRecord {
                snr_db: snr,
                iteration: it,
                mse_mean: m / runs,
                ber_mean: b / runs,
                active_bases_mean: a / runs,
                runs: cfg.n_runs,
            });
        }
        let pb: f64 = set.iter().map(|o| o.perfect_ber).sum();
        perfect.push(PerfectCsiRecord {
            snr_db: snr,
            ber_mean: pb / runs,
            runs: cfg.n_runs,
        });
    }
    Ok(ExperimentResult {
        records,
        perfect,
        outcomes,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_float(r.snr_db),
            r.iteration,
            fmt_float(r.mse_mean),
            fmt_float(r.ber_mean),
            fmt_float(r.active_bases_mean),
            r.runs
        );
    }
    out
}

pub fn perfect_csv(records: &[PerfectCsiRecord]) -> String {
    let mut out = String::from(PERFECT_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{}", fmt_float(r.snr_db), fmt_float(r.ber_mean), r.runs);
    }
    out
}

/// Sibling path for the perfect-CSI table: `results.csv` -> `results.perfect_csi.csv`.
pub fn perfect_csi_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.perfect_csi.csv"))
}

/// Writes the metrics CSV to `path` and the perfect-CSI CSV next to it.
pub fn write_outputs(result: &ExperimentResult, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(&result.records))?;
    std::fs::write(perfect_csi_path(path), perfect_csv(&result.perfect))?;
    Ok(())
}
