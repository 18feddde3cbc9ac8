//! Acoustic transfer function generation: free-field point sources and
//! image-source shoebox rooms, plus reverberation-time plumbing.

use crate::error::{PszError, Result};
use crate::geometry::{RenderingArea, SamplingGrid};
use crate::par;
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Speed of sound used throughout unless a config overrides it.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Loudspeaker positions in system coordinates (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerArray {
    pub positions: Vec<[f64; 3]>,
    /// Height at which the rendering-plane receivers sit.
    pub height: f64,
}

impl SpeakerArray {
    pub fn new(positions: Vec<[f64; 3]>, height: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(PszError::Config("speaker array must not be empty".into()));
        }
        for (i, a) in positions.iter().enumerate() {
            for b in positions.iter().skip(i + 1) {
                if a == b {
                    return Err(PszError::Config("duplicate speaker positions".into()));
                }
            }
        }
        Ok(Self { positions, height })
    }

    /// Eight speakers on the line y = 0, x in {-0.7, -0.5, ..., 0.7} m,
    /// at 1.2 m height; receivers share the height.
    pub fn default_linear() -> Self {
        let positions = (0..8)
            .map(|i| [-0.7 + 0.2 * i as f64, 0.0, 1.2])
            .collect();
        Self { positions, height: 1.2 }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Discrete frequency bins of an n_fft-point DFT at `sample_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub bin_lo: usize,
    pub bin_hi: usize,
}

impl FrequencyGrid {
    pub fn new(sample_rate: u32, n_fft: usize, bin_lo: usize, bin_hi: usize) -> Result<Self> {
        if bin_lo < 1 || bin_hi < bin_lo || bin_hi >= n_fft / 2 {
            return Err(PszError::Config(format!(
                "invalid bin range {bin_lo}..{bin_hi} for n_fft {n_fft}"
            )));
        }
        Ok(Self { sample_rate, n_fft, bin_lo, bin_hi })
    }

    /// 48 kHz / 8192-point grid, bins 18..=256: 239 bins over 105.47-1500 Hz.
    pub fn paper_grid() -> Self {
        Self { sample_rate: 48_000, n_fft: 8192, bin_lo: 18, bin_hi: 256 }
    }

    /// Reduced grid for fast tests and desk-scale training:
    /// 1024-point DFT, bins 3..=26 (140.6-1218.8 Hz), 24 bins.
    pub fn desk_grid() -> Self {
        Self { sample_rate: 48_000, n_fft: 1024, bin_lo: 3, bin_hi: 26 }
    }

    pub fn n_bins(&self) -> usize {
        self.bin_hi - self.bin_lo + 1
    }

    pub fn bin_freq(&self, bin: usize) -> f64 {
        self.sample_rate as f64 * bin as f64 / self.n_fft as f64
    }

    /// Frequencies of the in-band bins in ascending order.
    pub fn bin_freqs(&self) -> Vec<f64> {
        (self.bin_lo..=self.bin_hi).map(|b| self.bin_freq(b)).collect()
    }
}

/// Shoebox room with uniform wall absorption derived from a target RT60.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub rt60: f64,
    /// Offset added to system coordinates to place the PSZ rig in the room.
    pub array_origin: [f64; 3],
    pub seed: u64,
}

/// Provenance of an ATF tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Anechoic,
    Room(RoomConfig),
    PseudoMeasured,
}

impl Condition {
    pub fn tag(&self) -> u8 {
        match self {
            Condition::Anechoic => 0,
            Condition::Room(_) => 1,
            Condition::PseudoMeasured => 2,
        }
    }
}

/// Complex transfer functions indexed (grid point, loudspeaker, bin),
/// point-major. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AtfTensor {
    pub values: Vec<Complex64>,
    pub n_points: usize,
    pub n_speakers: usize,
    pub freq: FrequencyGrid,
    pub receiver_positions: Vec<[f64; 3]>,
    pub speaker_positions: Vec<[f64; 3]>,
    pub condition: Condition,
}

impl AtfTensor {
    pub fn n_bins(&self) -> usize {
        self.freq.n_bins()
    }

    #[inline]
    pub fn value(&self, point: usize, speaker: usize, bin: usize) -> Complex64 {
        self.values[(point * self.n_speakers + speaker) * self.n_bins() + bin]
    }

    /// ATF sub-matrix [M x L] for one bin over the given control points.
    pub fn bin_matrix(&self, point_ids: &[usize], bin: usize) -> crate::linalg::CMat {
        let mut m = crate::linalg::CMat::zeros(point_ids.len(), self.n_speakers);
        for (r, &p) in point_ids.iter().enumerate() {
            for l in 0..self.n_speakers {
                m[(r, l)] = self.value(p, l, bin);
            }
        }
        m
    }
}

/// Free-field point-source Green's function e^{-jkr}/(4 pi r).
pub fn freefield_atf(source: [f64; 3], receiver: [f64; 3], f: f64, c: f64) -> Result<Complex64> {
    let r = dist(source, receiver);
    if r <= 0.0 {
        return Err(PszError::Geometry("coincident source and receiver".into()));
    }
    let k = 2.0 * PI * f / c;
    Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), -k * r))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn lift_grid(grid: &SamplingGrid, height: f64) -> Vec<[f64; 3]> {
    grid.points.iter().map(|&(x, y)| [x, y, height]).collect()
}

fn anechoic_point(
    rcv: [f64; 3],
    speakers: &SpeakerArray,
    freqs: &FrequencyGrid,
    c: f64,
) -> Result<Vec<Complex64>> {
    let bins = freqs.bin_freqs();
    let mut out = Vec::with_capacity(speakers.len() * bins.len());
    for src in &speakers.positions {
        for &f in &bins {
            out.push(freefield_atf(*src, rcv, f, c)?);
        }
    }
    Ok(out)
}

/// Free-field ATF tensor over the whole grid.
pub fn simulate_anechoic(
    grid: &SamplingGrid,
    speakers: &SpeakerArray,
    freqs: &FrequencyGrid,
    c: f64,
) -> Result<AtfTensor> {
    let receivers = lift_grid(grid, speakers.height);
    let per_point = par::map_collect(&receivers, |rcv| anechoic_point(*rcv, speakers, freqs, c));
    collect_tensor(per_point, grid, speakers, freqs, Condition::Anechoic, receivers)
}

/// Sequential variant, kept for the benchmark comparison.
pub fn simulate_anechoic_seq(
    grid: &SamplingGrid,
    speakers: &SpeakerArray,
    freqs: &FrequencyGrid,
    c: f64,
) -> Result<AtfTensor> {
    let receivers = lift_grid(grid, speakers.height);
    let per_point = par::map_collect_seq(&receivers, |rcv| anechoic_point(*rcv, speakers, freqs, c));
    collect_tensor(per_point, grid, speakers, freqs, Condition::Anechoic, receivers)
}

fn collect_tensor(
    per_point: Vec<Result<Vec<Complex64>>>,
    grid: &SamplingGrid,
    speakers: &SpeakerArray,
    freqs: &FrequencyGrid,
    condition: Condition,
    receivers: Vec<[f64; 3]>,
) -> Result<AtfTensor> {
    let mut values = Vec::with_capacity(grid.len() * speakers.len() * freqs.n_bins());
    for chunk in per_point {
        values.extend(chunk?);
    }
    Ok(AtfTensor {
        values,
        n_points: grid.len(),
        n_speakers: speakers.len(),
        freq: *freqs,
        receiver_positions: receivers,
        speaker_positions: speakers.positions.clone(),
        condition,
    })
}

/// Uniform Sabine absorption matching the room's RT60.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// Set when the Sabine inversion exceeded 1 and was clamped.
    pub clamped: bool,
}

impl Absorption {
    pub fn reflection_coeff(&self) -> f64 {
        (1.0 - self.alpha).sqrt()
    }
}

/// Sabine inversion alpha = 0.161 V / (S RT60), clamped to 1.
pub fn rt60_to_absorption(room: &RoomConfig) -> Result<Absorption> {
    if room.rt60 <= 0.0 {
        return Err(PszError::Config(format!("rt60 must be positive, got {}", room.rt60)));
    }
    let v = room.lx * room.ly * room.lz;
    let s = 2.0 * (room.lx * room.ly + room.lx * room.lz + room.ly * room.lz);
    let alpha = 0.161 * v / (s * room.rt60);
    if alpha > 1.0 {
        Ok(Absorption { alpha: 1.0, clamped: true })
    } else {
        Ok(Absorption { alpha, clamped: false })
    }
}

const SINC_HALF_TAPS: i64 = 40; // 81-tap windowed-sinc fractional delay

fn add_windowed_sinc(ir: &mut [f64], t0: f64, amp: f64) {
    let center = t0.round() as i64;
    for j in (center - SINC_HALF_TAPS)..=(center + SINC_HALF_TAPS) {
        if j < 0 || j as usize >= ir.len() {
            continue;
        }
        let x = j as f64 - t0;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        // Hann taper over the 81-tap support
        let w = 0.5 * (1.0 + (PI * x / (SINC_HALF_TAPS as f64 + 0.5)).cos());
        ir[j as usize] += amp * sinc * w;
    }
}

fn inside_room(p: [f64; 3], room: &RoomConfig) -> bool {
    p[0] > 0.0 && p[0] < room.lx && p[1] > 0.0 && p[1] < room.ly && p[2] > 0.0 && p[2] < room.lz
}

/// Image-source impulse response between one source and one receiver, both in
/// room coordinates. `max_order` bounds the image index per axis.
pub fn simulate_room_ir(
    room: &RoomConfig,
    source: [f64; 3],
    receiver: [f64; 3],
    ir_len: usize,
    max_order: i64,
    sample_rate: f64,
    c: f64,
) -> Result<Vec<f64>> {
    if !inside_room(source, room) || !inside_room(receiver, room) {
        return Err(PszError::Geometry(format!(
            "source {source:?} or receiver {receiver:?} outside room \
             {}x{}x{}",
            room.lx, room.ly, room.lz
        )));
    }
    let beta = rt60_to_absorption(room)?.reflection_coeff();
    let mut ir = vec![0.0; ir_len];
    let dims = [room.lx, room.ly, room.lz];
    for qx in 0..2i64 {
        for qy in 0..2i64 {
            for qz in 0..2i64 {
                let q = [qx, qy, qz];
                for nx in -max_order..=max_order {
                    for ny in -max_order..=max_order {
                        for nz in -max_order..=max_order {
                            let n = [nx, ny, nz];
                            let mut img = [0.0f64; 3];
                            let mut refl = 0i64;
                            let mut skip = false;
                            for ax in 0..3 {
                                let s = if q[ax] == 0 { source[ax] } else { -source[ax] };
                                img[ax] = s + 2.0 * n[ax] as f64 * dims[ax];
                                let refl_ax = (n[ax] - q[ax]).abs() + n[ax].abs();
                                // per-axis reflection count bounds the order
                                if refl_ax > max_order {
                                    skip = true;
                                    break;
                                }
                                refl += refl_ax;
                            }
                            if skip {
                                continue;
                            }
                            let r = dist(img, receiver);
                            if r <= 0.0 {
                                return Err(PszError::Geometry(
                                    "image source coincides with receiver".into(),
                                ));
                            }
                            let t0 = r / c * sample_rate;
                            if t0 > (ir_len as i64 + SINC_HALF_TAPS) as f64 {
                                continue;
                            }
                            let amp = beta.powi(refl as i32) / (4.0 * PI * r);
                            add_windowed_sinc(&mut ir, t0, amp);
                        }
                    }
                }
            }
        }
    }
    Ok(ir)
}

/// Default image order: smallest order whose minimum image path exceeds
/// c * rt60, capped at 20.
pub fn default_max_order(room: &RoomConfig, c: f64) -> i64 {
    let min_dim = room.lx.min(room.ly).min(room.lz);
    let order = (c * room.rt60 / min_dim).ceil() as i64;
    order.clamp(1, 20)
}

/// Evaluates the IR's DFT at the band bins of `freqs`. Requires the IR length
/// to be a multiple of the frequency grid's n_fft so bins line up exactly.
pub fn ir_to_atf(ir: &[f64], freqs: &FrequencyGrid) -> Result<Vec<Complex64>> {
    if ir.len() % freqs.n_fft != 0 {
        return Err(PszError::Config(format!(
            "IR length {} is not a multiple of n_fft {}",
            ir.len(),
            freqs.n_fft
        )));
    }
    let stride = ir.len() / freqs.n_fft;
    let mut buf: Vec<Complex64> = ir.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(ir.len()).process(&mut buf);
    Ok((freqs.bin_lo..=freqs.bin_hi).map(|b| buf[b * stride]).collect())
}

/// Reverberant ATF tensor over the grid via the image source method.
pub fn simulate_room(
    room: &RoomConfig,
    grid: &SamplingGrid,
    speakers: &SpeakerArray,
    freqs: &FrequencyGrid,
    max_order: i64,
    ir_len: usize,
    c: f64,
) -> Result<AtfTensor> {
    let receivers = lift_grid(grid, speakers.height);
    let o = room.array_origin;
    let shift = |p: [f64; 3]| [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
    let sample_rate = freqs.sample_rate as f64;
    let per_point = par::map_collect(&receivers, |rcv| -> Result<Vec<Complex64>> {
        let rcv_room = shift(*rcv);
        let mut out = Vec::with_capacity(speakers.len() * freqs.n_bins());
        for src in &speakers.positions {
            let ir =
                simulate_room_ir(room, shift(*src), rcv_room, ir_len, max_order, sample_rate, c)?;
            out.extend(ir_to_atf(&ir, freqs)?);
        }
        Ok(out)
    });
    collect_tensor(
        per_point,
        grid,
        speakers,
        freqs,
        Condition::Room(room.clone()),
        receivers,
    )
}

fn system_bbox(speakers: &SpeakerArray, area: &RenderingArea) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut absorb = |p: [f64; 3]| {
        for ax in 0..3 {
            lo[ax] = lo[ax].min(p[ax]);
            hi[ax] = hi[ax].max(p[ax]);
        }
    };
    for p in &speakers.positions {
        absorb(*p);
    }
    absorb([area.x_min, area.y_min, speakers.height]);
    absorb([area.x_max, area.y_max, speakers.height]);
    (lo, hi)
}

/// Margin kept between the PSZ system and every wall when placing it.
pub const ROOM_PLACEMENT_MARGIN: f64 = 0.1;

/// Draws a randomized room: Lx, Ly ~ U(4,7), Lz ~ U(2,4), array placed
/// uniformly so the system stays at least 0.1 m from every wall.
pub fn sample_room_config(
    rng: &mut impl Rng,
    rt60: f64,
    speakers: &SpeakerArray,
    area: &RenderingArea,
) -> RoomConfig {
    let lx = rng.gen_range(4.0..7.0);
    let ly = rng.gen_range(4.0..7.0);
    let lz = rng.gen_range(2.0..4.0);
    let (lo, hi) = system_bbox(speakers, area);
    let dims = [lx, ly, lz];
    let mut origin = [0.0f64; 3];
    for ax in 0..3 {
        let min_o = ROOM_PLACEMENT_MARGIN - lo[ax];
        let max_o = dims[ax] - ROOM_PLACEMENT_MARGIN - hi[ax];
        origin[ax] = rng.gen_range(min_o..max_o);
    }
    RoomConfig { lx, ly, lz, rt60, array_origin: origin, seed: rng.gen() }
}

/// Schroeder backward-integration RT60: line fit on the -5 to -25 dB decay,
/// extrapolated to 60 dB.
pub fn measure_rt60(ir: &[f64], sample_rate: f64) -> Result<f64> {
    let total: f64 = ir.iter().map(|x| x * x).sum();
    if total <= 0.0 {
        return Err(PszError::InsufficientDecay("silent impulse response".into()));
    }
    // backward integrated energy decay curve in dB
    let mut edc = Vec::with_capacity(ir.len());
    let mut acc = 0.0;
    for &x in ir.iter().rev() {
        acc += x * x;
        edc.push(acc);
    }
    edc.reverse();
    let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let i5 = db.iter().position(|&d| d <= -5.0);
    let i25 = db.iter().position(|&d| d <= -25.0);
    let (i5, i25) = match (i5, i25) {
        (Some(a), Some(b)) if b > a + 1 => (a, b),
        _ => {
            return Err(PszError::InsufficientDecay(
                "decay does not span the -5 to -25 dB range".into(),
            ))
        }
    };
    // least squares line over [i5, i25]
    let n = (i25 - i5 + 1) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in i5..=i25 {
        let t = i as f64 / sample_rate;
        sx += t;
        sy += db[i];
        sxx += t * t;
        sxy += t * db[i];
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(PszError::InsufficientDecay("non-decaying Schroeder curve".into()));
    }
    Ok(-60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, RenderingArea};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn freefield_magnitude_at_1m() {
        let h = freefield_atf([0.0; 3], [1.0, 0.0, 0.0], 500.0, SPEED_OF_SOUND).unwrap();
        assert_abs_diff_eq!(h.norm(), 1.0 / (4.0 * PI), epsilon = 1e-12);
    }

    #[test]
    fn freefield_dc_is_real_positive() {
        let h = freefield_atf([0.0; 3], [0.0, 2.0, 0.0], 0.0, SPEED_OF_SOUND).unwrap();
        assert_abs_diff_eq!(h.re, 1.0 / (8.0 * PI), epsilon = 1e-12);
        assert_abs_diff_eq!(h.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn freefield_spherical_spreading() {
        let h1 = freefield_atf([0.0; 3], [1.0, 0.0, 0.0], 700.0, SPEED_OF_SOUND).unwrap();
        let h2 = freefield_atf([0.0; 3], [2.0, 0.0, 0.0], 700.0, SPEED_OF_SOUND).unwrap();
        assert_abs_diff_eq!(h2.norm() / h1.norm(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn freefield_reciprocity() {
        let a = [0.3, 1.1, 0.9];
        let b = [-0.4, 0.2, 1.5];
        let h1 = freefield_atf(a, b, 321.0, SPEED_OF_SOUND).unwrap();
        let h2 = freefield_atf(b, a, 321.0, SPEED_OF_SOUND).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn freefield_singularity() {
        assert!(freefield_atf([1.0; 3], [1.0; 3], 100.0, SPEED_OF_SOUND).is_err());
    }

    #[test]
    fn anechoic_shape_and_single_pair() {
        let area = RenderingArea::new(0.0, 0.2, 0.0, 0.2).unwrap();
        let grid = make_grid(area, 0.2).unwrap();
        let speakers = SpeakerArray::default_linear();
        let freqs = FrequencyGrid::desk_grid();
        let atf = simulate_anechoic(&grid, &speakers, &freqs, SPEED_OF_SOUND).unwrap();
        assert_eq!(atf.values.len(), 4 * 8 * 24);
        // first point, first speaker, first bin matches the scalar path
        let expected = freefield_atf(
            speakers.positions[0],
            [0.0, 0.0, 1.2],
            freqs.bin_freq(freqs.bin_lo),
            SPEED_OF_SOUND,
        )
        .unwrap();
        assert_eq!(atf.value(0, 0, 0), expected);
    }

    #[test]
    fn anechoic_doubling_c_halves_phase() {
        let area = RenderingArea::new(0.0, 0.2, 0.0, 0.2).unwrap();
        let grid = make_grid(area, 0.2).unwrap();
        let speakers = SpeakerArray::default_linear();
        let freqs = FrequencyGrid::desk_grid();
        let a1 = simulate_anechoic(&grid, &speakers, &freqs, SPEED_OF_SOUND).unwrap();
        let a2 = simulate_anechoic(&grid, &speakers, &freqs, 2.0 * SPEED_OF_SOUND).unwrap();
        for (v1, v2) in a1.values.iter().zip(&a2.values) {
            assert_abs_diff_eq!(v1.norm(), v2.norm(), epsilon = 1e-12);
            // phase of the c-doubled run is half the original (mod 2pi)
            let diff = (v1.arg() - 2.0 * v2.arg()).rem_euclid(2.0 * PI);
            assert!(diff < 1e-9 || (2.0 * PI - diff) < 1e-9, "phase diff {diff}");
        }
    }

    fn test_room() -> RoomConfig {
        RoomConfig {
            lx: 5.0,
            ly: 5.0,
            lz: 3.0,
            rt60: 0.24,
            array_origin: [2.0, 1.5, 0.0],
            seed: 0,
        }
    }

    #[test]
    fn order0_ir_matches_freefield() {
        let room = test_room();
        let src = [1.0, 1.0, 1.2];
        let rcv = [2.5, 3.0, 1.2];
        let fs = 48_000.0;
        let ir = simulate_room_ir(&room, src, rcv, 4096, 0, fs, SPEED_OF_SOUND).unwrap();
        let freqs = FrequencyGrid::desk_grid();
        let atf = ir_to_atf(&ir, &freqs).unwrap();
        for (i, b) in (freqs.bin_lo..=freqs.bin_hi).enumerate() {
            let expected = freefield_atf(src, rcv, freqs.bin_freq(b), SPEED_OF_SOUND).unwrap();
            let rel = (atf[i] - expected).norm() / expected.norm();
            assert!(rel < 1e-3, "bin {b}: rel err {rel}");
        }
    }

    #[test]
    fn tiny_rt60_keeps_direct_path_only() {
        // alpha clamps to 1 -> beta = 0 -> reflections vanish
        let mut room = test_room();
        room.rt60 = 1e-4;
        assert!(rt60_to_absorption(&room).unwrap().clamped);
        let src = [1.0, 1.0, 1.2];
        let rcv = [2.5, 3.0, 1.2];
        let fs = 48_000.0;
        let with_images =
            simulate_room_ir(&room, src, rcv, 4096, 3, fs, SPEED_OF_SOUND).unwrap();
        let direct = simulate_room_ir(&room, src, rcv, 4096, 0, fs, SPEED_OF_SOUND).unwrap();
        for (a, b) in with_images.iter().zip(&direct) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn ir_rejects_outside_geometry() {
        let room = test_room();
        assert!(simulate_room_ir(
            &room,
            [-1.0, 1.0, 1.0],
            [2.0, 2.0, 1.0],
            1024,
            0,
            48_000.0,
            SPEED_OF_SOUND
        )
        .is_err());
    }

    #[test]
    fn sabine_known_value() {
        // V = 100 m^3, S = 130 m^2 via a 5 x 5 x 4 room: V=100, S=2(25+20+20)=130
        let room = RoomConfig {
            lx: 5.0,
            ly: 5.0,
            lz: 4.0,
            rt60: 0.24,
            array_origin: [0.0; 3],
            seed: 0,
        };
        let a = rt60_to_absorption(&room).unwrap();
        assert!(!a.clamped);
        assert_abs_diff_eq!(a.alpha, 0.161 * 100.0 / (130.0 * 0.24), epsilon = 1e-12);
        assert_abs_diff_eq!(a.alpha, 0.516, epsilon = 1e-3);
    }

    #[test]
    fn sabine_limit_alpha_to_zero() {
        let mut room = test_room();
        room.rt60 = 1e6;
        assert!(rt60_to_absorption(&room).unwrap().alpha < 1e-5);
    }

    #[test]
    fn room_config_sampling_support_and_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let speakers = SpeakerArray::default_linear();
        let area = RenderingArea::default_area();
        let mut min_lx = f64::INFINITY;
        let mut max_lx = f64::NEG_INFINITY;
        for _ in 0..2000 {
            let room = sample_room_config(&mut rng, 0.24, &speakers, &area);
            min_lx = min_lx.min(room.lx);
            max_lx = max_lx.max(room.lx);
            // system bbox stays inside with margin
            let (lo, hi) = system_bbox(&speakers, &area);
            let dims = [room.lx, room.ly, room.lz];
            for ax in 0..3 {
                assert!(lo[ax] + room.array_origin[ax] >= ROOM_PLACEMENT_MARGIN - 1e-12);
                assert!(hi[ax] + room.array_origin[ax] <= dims[ax] - ROOM_PLACEMENT_MARGIN + 1e-12);
            }
        }
        assert!(min_lx >= 4.0 && max_lx <= 7.0);
    }

    #[test]
    fn room_config_deterministic_under_seed() {
        let speakers = SpeakerArray::default_linear();
        let area = RenderingArea::default_area();
        let a = sample_room_config(&mut ChaCha8Rng::seed_from_u64(9), 0.24, &speakers, &area);
        let b = sample_room_config(&mut ChaCha8Rng::seed_from_u64(9), 0.24, &speakers, &area);
        assert_eq!(a, b);
    }

    #[test]
    fn rt60_recovers_synthetic_decay() {
        let fs = 48_000.0;
        let t60 = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = (0.5 * fs) as usize;
        let ir: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (-6.91 * t / t60).exp() * rng.gen_range(-1.0..1.0f64)
            })
            .collect();
        let est = measure_rt60(&ir, fs).unwrap();
        assert!((est - t60).abs() / t60 < 0.1, "estimate {est}");
        // scale invariance
        let scaled: Vec<f64> = ir.iter().map(|x| 10.0 * x).collect();
        let est2 = measure_rt60(&scaled, fs).unwrap();
        assert_abs_diff_eq!(est, est2, epsilon = 1e-9);
    }

    #[test]
    fn rt60_rejects_pure_impulse() {
        let mut ir = vec![0.0; 1024];
        ir[0] = 1.0;
        assert!(matches!(
            measure_rt60(&ir, 48_000.0),
            Err(PszError::InsufficientDecay(_))
        ));
    }
}
