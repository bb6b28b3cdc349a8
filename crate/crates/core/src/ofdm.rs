//! OFDM symbol layout, pilot/data multiplexing and the unitary DFT.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::random::complex_gaussian;
use crate::C64;

/// Unitary DFT of a fixed length, `[F]_{m,n} = N^{-1/2} e^{-j 2 pi m n / N}`.
#[derive(Clone)]
pub struct Dft {
    n: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft").field("n", &self.n).finish()
    }
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Dft {
            n,
            scale: 1.0 / (n as f64).sqrt(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `F v`, in place.
    pub fn forward_in_place(&self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    /// `F^H v`, in place.
    pub fn inverse_in_place(&self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    pub fn forward(&self, v: &[C64]) -> Vec<C64> {
        let mut out = v.to_vec();
        self.forward_in_place(&mut out);
        out
    }

    pub fn inverse(&self, v: &[C64]) -> Vec<C64> {
        let mut out = v.to_vec();
        self.inverse_in_place(&mut out);
        out
    }
}

/// A finite unit-power symbol alphabet with a bit label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    labels: Vec<u32>,
    bits_per_symbol: u32,
}

impl Constellation {
    pub fn new(points: Vec<C64>, labels: Vec<u32>, bits_per_symbol: u32) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::Config(
                "constellation needs one label per point and at least one point".into(),
            ));
        }
        let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        if (power - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "constellation average power is {power}, expected 1"
            )));
        }
        Ok(Constellation {
            points,
            labels,
            bits_per_symbol,
        })
    }

    /// Gray-mapped QPSK: bit 0 is the sign of the real part, bit 1 the sign of the imaginary part.
    pub fn qpsk() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Constellation {
            points: vec![
                C64::new(a, a),
                C64::new(-a, a),
                C64::new(-a, -a),
                C64::new(a, -a),
            ],
            labels: vec![0b00, 0b01, 0b11, 0b10],
            bits_per_symbol: 2,
        }
    }

    pub fn bpsk() -> Self {
        Constellation {
            points: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            labels: vec![0, 1],
            bits_per_symbol: 1,
        }
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    /// Nearest point by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Index of a point that lies exactly on the constellation.
    pub fn index_of(&self, z: C64) -> Option<usize> {
        self.points.iter().position(|p| (*p - z).norm_sqr() < 1e-20)
    }

    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }
}

/// Role of a single subcarrier in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Position `k` in the pilot vector.
    Pilot(usize),
    /// Position `k` in the data vector.
    Data(usize),
}

/// Static description of one OFDM symbol.
#[derive(Debug, Clone)]
pub struct OfdmFrameSpec {
    n_subcarriers: usize,
    cp_len: usize,
    pilot_indices: Vec<usize>,
    data_indices: Vec<usize>,
    zero_edge_count: usize,
    constellation: Constellation,
    slots: Vec<Slot>,
    forced_zero: Vec<bool>,
    dft: Dft,
}

impl OfdmFrameSpec {
    /// Builds a frame from an explicit pilot set. Every other subcarrier carries data,
    /// except data subcarriers within `zero_edge_count` of either band edge, which are
    /// transmitted as known zeros.
    pub fn new(
        n_subcarriers: usize,
        cp_len: usize,
        mut pilot_indices: Vec<usize>,
        zero_edge_count: usize,
        constellation: Constellation,
    ) -> Result<Self> {
        if n_subcarriers == 0 || cp_len == 0 {
            return Err(Error::Config("subcarrier count and CP length must be positive".into()));
        }
        pilot_indices.sort_unstable();
        pilot_indices.dedup();
        if pilot_indices.iter().any(|&p| p >= n_subcarriers) {
            return Err(Error::Config("pilot index out of range".into()));
        }
        let mut slots = vec![Slot::Data(0); n_subcarriers];
        for (k, &p) in pilot_indices.iter().enumerate() {
            slots[p] = Slot::Pilot(k);
        }
        let mut data_indices = Vec::with_capacity(n_subcarriers - pilot_indices.len());
        for (n, slot) in slots.iter_mut().enumerate() {
            if let Slot::Data(_) = slot {
                *slot = Slot::Data(data_indices.len());
                data_indices.push(n);
            }
        }
        let forced_zero = data_indices
            .iter()
            .map(|&n| n < zero_edge_count || n + zero_edge_count >= n_subcarriers)
            .collect();
        Ok(OfdmFrameSpec {
            n_subcarriers,
            cp_len,
            pilot_indices,
            data_indices,
            zero_edge_count,
            constellation,
            slots,
            forced_zero,
            dft: Dft::new(n_subcarriers),
        })
    }

    /// Clustered pilot layout: `n_clusters` groups of three adjacent subcarriers
    /// (zero guard, pilot, zero guard), cluster `c` starting at `floor(c N / n_clusters)`.
    pub fn clustered(
        n_subcarriers: usize,
        cp_len: usize,
        n_clusters: usize,
        zero_edge_count: usize,
        constellation: Constellation,
    ) -> Result<Self> {
        if n_clusters == 0 || 3 * n_clusters > n_subcarriers {
            return Err(Error::Config(format!(
                "{n_clusters} pilot clusters of width 3 do not fit in {n_subcarriers} subcarriers"
            )));
        }
        let pilots = (0..n_clusters)
            .flat_map(|c| {
                let start = c * n_subcarriers / n_clusters;
                start..start + 3
            })
            .collect();
        Self::new(n_subcarriers, cp_len, pilots, zero_edge_count, constellation)
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn pilot_indices(&self) -> &[usize] {
        &self.pilot_indices
    }

    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    pub fn n_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    pub fn n_data(&self) -> usize {
        self.data_indices.len()
    }

    pub fn zero_edge_count(&self) -> usize {
        self.zero_edge_count
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn slot(&self, subcarrier: usize) -> Slot {
        self.slots[subcarrier]
    }

    /// True for data positions (index into the data vector) that are pinned to zero.
    pub fn is_forced_zero(&self, data_pos: usize) -> bool {
        self.forced_zero[data_pos]
    }

    /// Data positions that carry information (not forced to zero).
    pub fn free_data_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.data_indices.len()).filter(|&k| !self.forced_zero[k])
    }

    pub fn n_free_data(&self) -> usize {
        self.forced_zero.iter().filter(|z| !**z).count()
    }

    pub fn dft(&self) -> &Dft {
        &self.dft
    }

    /// Pilot positions that carry a nonzero pilot: the centre of each three-wide cluster
    /// when the layout is clustered, otherwise every pilot.
    fn active_pilot_mask(&self) -> Vec<bool> {
        let p = &self.pilot_indices;
        let clustered = p.len() % 3 == 0
            && p.chunks(3).all(|c| c[1] == c[0] + 1 && c[2] == c[1] + 1);
        if clustered {
            (0..p.len()).map(|k| k % 3 == 1).collect()
        } else {
            vec![true; p.len()]
        }
    }

    /// Draws pilot values: zero-mean complex Gaussian with variance `power_ratio` at the
    /// cluster centres, zeros at the guards.
    pub fn draw_pilots<R: Rng + ?Sized>(&self, power_ratio: f64, rng: &mut R) -> Vec<C64> {
        self.active_pilot_mask()
            .into_iter()
            .map(|active| {
                if active {
                    complex_gaussian(rng, power_ratio)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect()
    }

    /// Draws uniformly distributed constellation indices for the data vector.
    /// Forced-zero positions get index 0 but are transmitted as zero.
    pub fn draw_data<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, Vec<C64>) {
        let order = self.constellation.order();
        let pts = self.constellation.points();
        let mut idx = Vec::with_capacity(self.n_data());
        let mut values = Vec::with_capacity(self.n_data());
        for k in 0..self.n_data() {
            let i = rng.random_range(0..order);
            idx.push(i);
            values.push(if self.forced_zero[k] { C64::new(0.0, 0.0) } else { pts[i] });
        }
        (idx, values)
    }

    /// `x = E_d x_d + E_p x_p`.
    pub fn assemble(&self, data: &[C64], pilots: &[C64]) -> Result<FreqSymbol> {
        if data.len() != self.n_data() {
            return Err(Error::Length {
                what: "data vector",
                expected: self.n_data(),
                got: data.len(),
            });
        }
        if pilots.len() != self.n_pilots() {
            return Err(Error::Length {
                what: "pilot vector",
                expected: self.n_pilots(),
                got: pilots.len(),
            });
        }
        let mut values = vec![C64::new(0.0, 0.0); self.n_subcarriers];
        let mut known_mask = vec![false; self.n_subcarriers];
        for (k, &n) in self.pilot_indices.iter().enumerate() {
            values[n] = pilots[k];
            known_mask[n] = true;
        }
        for (k, &n) in self.data_indices.iter().enumerate() {
            if self.forced_zero[k] {
                known_mask[n] = true;
            } else {
                values[n] = data[k];
            }
        }
        Ok(FreqSymbol { values, known_mask })
    }

    /// Gathers the data positions of a full frequency-domain vector.
    pub fn extract_data(&self, x: &[C64]) -> Vec<C64> {
        self.data_indices.iter().map(|&n| x[n]).collect()
    }

    /// OFDM modulation: `s = F^H x` with the last `cp_len` samples prepended.
    pub fn modulate(&self, x: &FreqSymbol) -> Result<Vec<C64>> {
        if x.values.len() != self.n_subcarriers {
            return Err(Error::Length {
                what: "frequency symbol",
                expected: self.n_subcarriers,
                got: x.values.len(),
            });
        }
        let s = self.dft.inverse(&x.values);
        let n = self.n_subcarriers;
        let mut out = Vec::with_capacity(n + self.cp_len);
        out.extend((0..self.cp_len).map(|i| s[(i as isize - self.cp_len as isize).rem_euclid(n as isize) as usize]));
        out.extend_from_slice(&s);
        Ok(out)
    }

    /// `y = F y_time` for a CP-stripped block.
    pub fn demodulate(&self, y_time: &[C64]) -> Result<Vec<C64>> {
        if y_time.len() != self.n_subcarriers {
            return Err(Error::Length {
                what: "time-domain block",
                expected: self.n_subcarriers,
                got: y_time.len(),
            });
        }
        Ok(self.dft.forward(y_time))
    }
}

/// A frequency-domain OFDM symbol together with the mask of positions whose values
/// the receiver knows (pilots, guards and forced zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct FreqSymbol {
    pub values: Vec<C64>,
    pub known_mask: Vec<bool>,
}

/// Parameters for [`build_pilot_pattern`].
#[derive(Debug, Clone)]
pub struct FrameParams {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub n_clusters: usize,
    pub pilot_power_ratio: f64,
    pub zero_edge_count: usize,
    pub constellation: Constellation,
}

/// Clustered frame layout plus one seeded draw of pilot values.
pub fn build_pilot_pattern(params: &FrameParams, rng_seed: u64) -> Result<(OfdmFrameSpec, Vec<C64>)> {
    let spec = OfdmFrameSpec::clustered(
        params.n_subcarriers,
        params.cp_len,
        params.n_clusters,
        params.zero_edge_count,
        params.constellation.clone(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pilots = spec.draw_pilots(params.pilot_power_ratio, &mut rng);
    Ok((spec, pilots))
}
