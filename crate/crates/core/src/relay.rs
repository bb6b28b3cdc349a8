//! Multihop amplify-and-forward propagation and the composite channel.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fading::{draw_hop, HopChannelRealization, HopChannelSpec, SampleClock};
use crate::ofdm::{Dft, FreqSymbol, OfdmFrameSpec};
use crate::random::complex_gaussian_vec;
use crate::C64;

/// Hop statistics for every link; all links have the same number of hops.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayTemplate {
    pub links: Vec<Vec<HopChannelSpec>>,
}

impl RelayTemplate {
    pub fn n_hops(&self) -> usize {
        self.links.first().map_or(0, |l| l.len())
    }

    /// Equivalent end-to-end channel length `max_k (sum_rho L - Upsilon)`.
    pub fn composite_length(&self) -> usize {
        self.links
            .iter()
            .map(|hops| composite_span(hops.iter().map(|h| h.max_delay)))
            .max()
            .unwrap_or(0)
    }

    /// Largest per-hop normalized Doppler, the quantity the receiver bounds by `v_max f_c / c`.
    pub fn max_hop_doppler(&self) -> f64 {
        self.links
            .iter()
            .flatten()
            .map(|h| h.max_norm_doppler)
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, cp_len: usize) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Config("relay template has no links".into()));
        }
        let hops = self.n_hops();
        if hops < 2 {
            return Err(Error::Config("each link needs at least two hops (one relay)".into()));
        }
        if self.links.iter().any(|l| l.len() != hops) {
            return Err(Error::Config("all links must have the same number of hops".into()));
        }
        for h in self.links.iter().flatten() {
            h.validate()?;
        }
        let length = self.composite_length();
        if length > cp_len {
            return Err(Error::ChannelTooLong { length, cp_len });
        }
        Ok(())
    }

    /// Draws every hop over the time span its matrix rows require.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        clock: &SampleClock,
        rng: &mut R,
    ) -> Result<Vec<Vec<HopChannelRealization>>> {
        let n = clock.n_subcarriers;
        self.links
            .iter()
            .map(|hops| {
                let starts = hop_start_times(hops.iter().map(|h| h.max_delay));
                hops.iter()
                    .zip(&starts)
                    .map(|(spec, &start)| {
                        draw_hop(spec, clock, (n as isize - start) as usize, start, rng)
                    })
                    .collect()
            })
            .collect()
    }
}

fn composite_span(lengths: impl Iterator<Item = usize>) -> usize {
    let (sum, count) = lengths.fold((0, 0), |(s, c), l| (s + l, c + 1));
    if count == 0 {
        0
    } else {
        sum + 1 - count
    }
}

/// First output time each hop must produce so that the destination sees times `0..N`.
/// The last hop starts at 0; hop `rho` starts `sum_{rho' > rho} (L_rho' - 1)` earlier.
fn hop_start_times(lengths: impl DoubleEndedIterator<Item = usize> + ExactSizeIterator) -> Vec<isize> {
    let mut starts = vec![0isize; lengths.len()];
    let mut acc = 0isize;
    for (i, l) in lengths.enumerate().rev() {
        starts[i] = -acc;
        acc += l as isize - 1;
    }
    starts
}

/// One relaying path: `Upsilon + 1` hops and `Upsilon` amplifying relays.
#[derive(Debug, Clone)]
pub struct RelayLink {
    pub hops: Vec<HopChannelRealization>,
    /// Amplification `varsigma` of each relay, in hop order.
    pub gains: Vec<f64>,
    /// Noise power at each relay input.
    pub relay_noise: Vec<f64>,
}

impl RelayLink {
    fn lengths(&self) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator + '_ {
        self.hops.iter().map(|h| h.max_delay)
    }

    pub fn composite_length(&self) -> usize {
        composite_span(self.lengths())
    }

    pub fn total_gain(&self) -> f64 {
        self.gains.iter().product()
    }
}

/// A realized relay network.
#[derive(Debug, Clone)]
pub struct RelaySystem {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub links: Vec<RelayLink>,
    pub dest_noise: f64,
}

/// Fixed-gain AF normalization: unit average relay transmit power for a unit-power
/// input through a unit-power channel plus noise of power `relay_noise`.
pub fn unit_power_gain(relay_noise: f64) -> f64 {
    1.0 / (1.0 + relay_noise).sqrt()
}

impl RelaySystem {
    /// Equal noise power at every receiver and unit-power fixed gains.
    pub fn with_equal_noise(
        frame: &OfdmFrameSpec,
        hops: Vec<Vec<HopChannelRealization>>,
        noise_power: f64,
    ) -> Result<Self> {
        let links = hops
            .into_iter()
            .map(|h| {
                let relays = h.len().saturating_sub(1);
                RelayLink {
                    hops: h,
                    gains: vec![unit_power_gain(noise_power); relays],
                    relay_noise: vec![noise_power; relays],
                }
            })
            .collect();
        let sys = RelaySystem {
            n_subcarriers: frame.n_subcarriers(),
            cp_len: frame.cp_len(),
            links,
            dest_noise: noise_power,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn composite_length(&self) -> usize {
        self.links.iter().map(|l| l.composite_length()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Config("relay system has no links".into()));
        }
        for link in &self.links {
            if link.hops.len() < 2 {
                return Err(Error::Config("each link needs at least one relay".into()));
            }
            if link.gains.len() != link.hops.len() - 1 || link.relay_noise.len() != link.gains.len() {
                return Err(Error::Config("one gain and noise power per relay required".into()));
            }
            if link.gains.iter().any(|&g| !(g > 0.0)) {
                return Err(Error::Config("relay gains must be positive".into()));
            }
        }
        let length = self.composite_length();
        if length > self.cp_len {
            return Err(Error::ChannelTooLong {
                length,
                cp_len: self.cp_len,
            });
        }
        Ok(())
    }
}

/// Linear-convolution matrix of one hop.
///
/// Row `r` is output time `row_time_offset + r`; column `c` is input time
/// `row_time_offset - (L - 1) + c`. Entry `[r, r + L - 1 - l]` holds `h(t_r, l)`.
pub fn hop_matrix(
    hop: &HopChannelRealization,
    n_rows: usize,
    row_time_offset: isize,
) -> Result<DMatrix<C64>> {
    let l_max = hop.max_delay;
    let mut m = DMatrix::zeros(n_rows, n_rows + l_max - 1);
    for r in 0..n_rows {
        let t = row_time_offset + r as isize;
        for l in 0..l_max {
            m[(r, r + l_max - 1 - l)] = hop.coeff(t, l)?;
        }
    }
    Ok(m)
}

/// End-to-end channel after CP removal.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannel {
    /// `N x L` matrix of `mu(n, l)`.
    pub taps: DMatrix<C64>,
    /// `N x N` time-domain matrix `H = sum_l diag(mu_l) P(l)`.
    pub circulant_form: DMatrix<C64>,
}

impl CompositeChannel {
    pub fn from_taps(taps: DMatrix<C64>) -> Self {
        let n = taps.nrows();
        let mut h = DMatrix::zeros(n, n);
        for r in 0..n {
            for l in 0..taps.ncols() {
                h[(r, (r + n * taps.ncols() - l) % n)] += taps[(r, l)];
            }
        }
        CompositeChannel {
            taps,
            circulant_form: h,
        }
    }

    pub fn n(&self) -> usize {
        self.taps.nrows()
    }

    /// `F H F^H`, computed column by column.
    pub fn freq_matrix(&self, dft: &Dft) -> DMatrix<C64> {
        freq_matrix_from_taps(&self.taps, dft)
    }

    /// `H s` evaluated from the taps.
    pub fn apply_time(&self, s: &[C64]) -> Vec<C64> {
        apply_taps(&self.taps, s)
    }
}

/// `y[n] = sum_l mu(n, l) s[(n - l) mod N]`.
pub fn apply_taps(taps: &DMatrix<C64>, s: &[C64]) -> Vec<C64> {
    let n = taps.nrows();
    (0..n)
        .map(|r| {
            (0..taps.ncols())
                .map(|l| taps[(r, l)] * s[(r + n * taps.ncols() - l) % n])
                .sum()
        })
        .collect()
}

/// Frequency-domain channel matrix `F H F^H` of a tap matrix.
pub fn freq_matrix_from_taps(taps: &DMatrix<C64>, dft: &Dft) -> DMatrix<C64> {
    let n = taps.nrows();
    let mut d = DMatrix::zeros(n, n);
    let mut col = vec![C64::new(0.0, 0.0); n];
    for m in 0..n {
        col.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        col[m] = C64::new(1.0, 0.0);
        dft.inverse_in_place(&mut col);
        let mut hc = apply_taps(taps, &col);
        dft.forward_in_place(&mut hc);
        d.column_mut(m).copy_from_slice(&hc);
    }
    d
}

/// Composite taps by recursive time-varying convolution of the per-hop taps.
pub fn composite_channel(system: &RelaySystem) -> Result<CompositeChannel> {
    system.validate()?;
    let n = system.n_subcarriers;
    let l_cp = system.cp_len;
    let mut taps = DMatrix::zeros(n, l_cp);
    for link in &system.links {
        let starts = hop_start_times(link.lengths());
        // acc[t - start][l]: response at time t to an impulse at time t - l
        let first = &link.hops[0];
        let mut start = starts[0];
        let mut width = first.max_delay;
        let mut acc: Vec<Vec<C64>> = (start..n as isize)
            .map(|t| (0..width).map(|l| first.coeff(t, l)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        for (rho, hop) in link.hops.iter().enumerate().skip(1) {
            let gain = link.gains[rho - 1];
            let new_start = starts[rho];
            let new_width = width + hop.max_delay - 1;
            let mut next = Vec::with_capacity((n as isize - new_start) as usize);
            for t in new_start..n as isize {
                let mut row = vec![C64::new(0.0, 0.0); new_width];
                for l2 in 0..hop.max_delay {
                    let h = hop.coeff(t, l2)?;
                    if h == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let prev = &acc[(t - l2 as isize - start) as usize];
                    for (l1, &p) in prev.iter().enumerate() {
                        row[l1 + l2] += gain * h * p;
                    }
                }
                next.push(row);
            }
            acc = next;
            start = new_start;
            width = new_width;
        }
        debug_assert_eq!(start, 0);
        for (t, row) in acc.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                taps[(t, l)] += v;
            }
        }
    }
    Ok(CompositeChannel::from_taps(taps))
}

/// Result of sending one OFDM symbol through the network.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Received frequency-domain symbol `y = F y_time`.
    pub y_freq: Vec<C64>,
    /// CP-stripped received samples.
    pub y_time: Vec<C64>,
    pub truth: CompositeChannel,
    /// Realized composite noise after the DFT.
    pub v_freq: Vec<C64>,
}

struct Stream {
    start: isize,
    samples: Vec<C64>,
}

impl Stream {
    fn at(&self, t: isize) -> C64 {
        self.samples[(t - self.start) as usize]
    }
}

/// Runs one link in the time domain. `input` is indexed from time `input.start`;
/// `noise[rho]` is the noise added at the input of relay `rho` (and the final hop
/// output is returned without destination noise).
fn run_link(link: &RelayLink, input: &Stream, noise: &[Vec<C64>], n: usize) -> Result<Vec<C64>> {
    let starts = hop_start_times(link.lengths());
    let mut u = Stream {
        start: input.start,
        samples: input.samples.clone(),
    };
    for (rho, hop) in link.hops.iter().enumerate() {
        let start = starts[rho];
        let mut out = Vec::with_capacity((n as isize - start) as usize);
        for t in start..n as isize {
            let mut acc = C64::new(0.0, 0.0);
            for tap in &hop.taps {
                let h = hop.coeff(t, tap.delay)?;
                acc += h * u.at(t - tap.delay as isize);
            }
            out.push(acc);
        }
        if rho + 1 < link.hops.len() {
            let g = link.gains[rho];
            for (o, w) in out.iter_mut().zip(&noise[rho]) {
                *o = g * (*o + w);
            }
        }
        u = Stream { start, samples: out };
    }
    Ok(u.samples)
}

/// Hop-by-hop AF propagation with independent AWGN at every relay and the destination.
pub fn propagate<R: Rng + ?Sized>(
    frame: &OfdmFrameSpec,
    x: &FreqSymbol,
    system: &RelaySystem,
    rng: &mut R,
) -> Result<Propagation> {
    system.validate()?;
    let n = frame.n_subcarriers();
    if system.n_subcarriers != n || system.cp_len != frame.cp_len() {
        return Err(Error::Config("relay system and frame disagree on N or CP".into()));
    }
    let tx = frame.modulate(x)?;
    let input = Stream {
        start: -(frame.cp_len() as isize),
        samples: tx,
    };
    let silent = Stream {
        start: input.start,
        samples: vec![C64::new(0.0, 0.0); input.samples.len()],
    };

    let mut y_time = vec![C64::new(0.0, 0.0); n];
    let mut v_time = vec![C64::new(0.0, 0.0); n];
    for link in &system.links {
        let starts = hop_start_times(link.lengths());
        let noise: Vec<Vec<C64>> = (0..link.gains.len())
            .map(|rho| {
                let len = (n as isize - starts[rho]) as usize;
                complex_gaussian_vec(rng, len, link.relay_noise[rho])
            })
            .collect();
        let rx = run_link(link, &input, &noise, n)?;
        let rv = run_link(link, &silent, &noise, n)?;
        for i in 0..n {
            y_time[i] += rx[i];
            v_time[i] += rv[i];
        }
    }
    let wd = complex_gaussian_vec(rng, n, system.dest_noise);
    for i in 0..n {
        y_time[i] += wd[i];
        v_time[i] += wd[i];
    }
    let truth = composite_channel(system)?;
    let y_freq = frame.dft().forward(&y_time);
    let v_freq = frame.dft().forward(&v_time);
    Ok(Propagation {
        y_freq,
        y_time,
        truth,
        v_freq,
    })
}
