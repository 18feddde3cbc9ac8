//! The four-term training loss computed on autodiff tensors: bright-zone
//! amplitude matching, dark-zone energy, gain limiting, and time-domain
//! filter compactness.

use crate::acoustics::FrequencyGrid;
use crate::autodiff::{Graph, TensorId};
use crate::error::{PszError, Result};
use crate::linalg::CMat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Keeps the modulus derivative finite at zero.
pub const MODULUS_EPS: f64 = 1e-24;

/// Weights of the four loss terms plus the measured-region emphasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub g_max: f64,
    pub measured_dz_factor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            g_max: 1.0 / 8.0,
            measured_dz_factor: 2.0,
        }
    }
}

/// Bandpass response and inverted-window weighting for the compactness term.
#[derive(Debug, Clone)]
pub struct CompactnessKernel {
    /// Bandpass response at bins 0..=n_fft/2.
    pub bandpass_half: Vec<Complex64>,
    /// Full-length Hermitian extension, split into parts for the graph.
    pub bandpass_full_re: Vec<f64>,
    pub bandpass_full_im: Vec<f64>,
    /// Nonnegative weighting, low near n = 0, peaking at n_fft/2.
    pub window: Vec<f64>,
}

/// Digital 4th-order Butterworth bandpass response at frequency `f` via the
/// analog prototype and bilinear transform with prewarped cutoffs.
pub fn butterworth_bandpass_response(f: f64, f_lo: f64, f_hi: f64, sample_rate: f64) -> Complex64 {
    let nyquist = sample_rate / 2.0;
    if f <= 0.0 || f >= nyquist {
        return Complex64::new(0.0, 0.0);
    }
    let warp = |freq: f64| 2.0 * sample_rate * (PI * freq / sample_rate).tan();
    let w = warp(f);
    let w_lo = warp(f_lo);
    let w_hi = warp(f_hi);
    let w0_sq = w_lo * w_hi;
    let bw = w_hi - w_lo;
    // lowpass-prototype argument for s = jw
    let x = Complex64::new(0.0, (w * w - w0_sq) / (bw * w));
    // order-4 Butterworth poles on the unit circle, left half plane
    let order = 4;
    let mut h = Complex64::new(1.0, 0.0);
    for k in 1..=order {
        let angle = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
        let pole = Complex64::new(angle.cos(), angle.sin());
        h /= x - pole;
    }
    h
}

/// Builds the bandpass response over the DFT bins and the circularly shifted
/// inverted Hamming window.
pub fn make_compactness_kernel(
    n_fft: usize,
    f_lo: f64,
    f_hi: f64,
    sample_rate: f64,
) -> Result<CompactnessKernel> {
    if !(0.0 < f_lo && f_lo < f_hi && f_hi < sample_rate / 2.0) {
        return Err(PszError::Config(format!(
            "invalid bandpass cutoffs {f_lo}..{f_hi} at fs {sample_rate}"
        )));
    }
    let half = n_fft / 2;
    let bandpass_half: Vec<Complex64> = (0..=half)
        .map(|k| {
            butterworth_bandpass_response(
                k as f64 * sample_rate / n_fft as f64,
                f_lo,
                f_hi,
                sample_rate,
            )
        })
        .collect();
    let mut bandpass_full_re = vec![0.0; n_fft];
    let mut bandpass_full_im = vec![0.0; n_fft];
    for k in 0..=half {
        bandpass_full_re[k] = bandpass_half[k].re;
        bandpass_full_im[k] = bandpass_half[k].im;
    }
    for k in 1..half {
        bandpass_full_re[n_fft - k] = bandpass_half[k].re;
        bandpass_full_im[n_fft - k] = -bandpass_half[k].im;
    }
    // inverted Hamming (max and min swapped), shifted so the low-weight part
    // sits at n = 0 where the non-causal response concentrates
    let nm1 = (n_fft - 1) as f64;
    let window: Vec<f64> = (0..n_fft)
        .map(|n| {
            let m = (n + half) % n_fft;
            0.54 + 0.46 * (2.0 * PI * m as f64 / nm1).cos()
        })
        .collect();
    Ok(CompactnessKernel { bandpass_half, bandpass_full_re, bandpass_full_im, window })
}

/// Per-bin and per-speaker views of a model's flat output tensor.
///
/// Output layout: index ((speaker*2 + part) * n_bins + bin), part 0 = real.
#[derive(Debug)]
pub struct FilterView {
    /// Per bin: ([L] real, [L] imag) gains across speakers.
    pub bins: Vec<(TensorId, TensorId)>,
    /// Per speaker: ([n_bins] real, [n_bins] imag) band coefficients.
    pub speakers: Vec<(TensorId, TensorId)>,
    pub n_speakers: usize,
    pub n_bins: usize,
}

pub fn split_filters(
    g: &mut Graph,
    output: TensorId,
    n_speakers: usize,
    n_bins: usize,
) -> Result<FilterView> {
    let mut bins = Vec::with_capacity(n_bins);
    for bin in 0..n_bins {
        let re_idx: Vec<usize> = (0..n_speakers).map(|l| (l * 2) * n_bins + bin).collect();
        let im_idx: Vec<usize> = (0..n_speakers).map(|l| (l * 2 + 1) * n_bins + bin).collect();
        let re = g.gather(output, &re_idx)?;
        let im = g.gather(output, &im_idx)?;
        bins.push((re, im));
    }
    let mut speakers = Vec::with_capacity(n_speakers);
    for l in 0..n_speakers {
        let re_idx: Vec<usize> = (0..n_bins).map(|b| (l * 2) * n_bins + b).collect();
        let im_idx: Vec<usize> = (0..n_bins).map(|b| (l * 2 + 1) * n_bins + b).collect();
        let re = g.gather(output, &re_idx)?;
        let im = g.gather(output, &im_idx)?;
        speakers.push((re, im));
    }
    Ok(FilterView { bins, speakers, n_speakers, n_bins })
}

fn load_matrix(g: &mut Graph, m: &CMat) -> Result<(TensorId, TensorId)> {
    let re: Vec<f64> = m.data.iter().map(|z| z.re).collect();
    let im: Vec<f64> = m.data.iter().map(|z| z.im).collect();
    let shape = [m.rows, m.cols];
    Ok((g.constant(re, &shape)?, g.constant(im, &shape)?))
}

/// sqrt(re^2 + im^2 + eps), elementwise.
fn modulus(g: &mut Graph, re: TensorId, im: TensorId) -> Result<TensorId> {
    let r2 = g.square(re);
    let i2 = g.square(im);
    let s = g.add(r2, i2)?;
    let n = g.value(s).len();
    let eps = g.constant(vec![MODULUS_EPS; n], &[n])?;
    let se = g.add(s, eps)?;
    Ok(g.sqrt(se))
}

/// (H_re + j H_im)(x_re + j x_im) with a constant matrix.
fn complex_matvec(
    g: &mut Graph,
    h: (TensorId, TensorId),
    x: (TensorId, TensorId),
) -> Result<(TensorId, TensorId)> {
    let rr = g.matmul(h.0, x.0)?;
    let ii = g.matmul(h.1, x.1)?;
    let ri = g.matmul(h.0, x.1)?;
    let ir = g.matmul(h.1, x.0)?;
    Ok((g.sub(rr, ii)?, g.add(ri, ir)?))
}

/// Bright-zone amplitude error (per-bin target magnitudes, point-major).
pub fn loss_l1(
    g: &mut Graph,
    view: &FilterView,
    h_b_bins: &[CMat],
    targets: &[Vec<f64>],
) -> Result<TensorId> {
    if h_b_bins.len() != view.n_bins || targets.len() != view.n_bins {
        return Err(PszError::Structure("per-bin input count mismatch".into()));
    }
    let m_b = h_b_bins[0].rows;
    let mut terms = Vec::with_capacity(view.n_bins);
    for (bin, (h_bin, target)) in h_b_bins.iter().zip(targets).enumerate() {
        let h = load_matrix(g, h_bin)?;
        let p = complex_matvec(g, h, view.bins[bin])?;
        let mag = modulus(g, p.0, p.1)?;
        let t = g.constant(target.clone(), &[m_b])?;
        let diff = g.sub(t, mag)?;
        let sq = g.square(diff);
        terms.push(g.sum(sq));
    }
    let all = g.concat(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / (view.n_bins * m_b) as f64))
}

/// Dark-zone energy.
pub fn loss_l2(g: &mut Graph, view: &FilterView, h_d_bins: &[CMat]) -> Result<TensorId> {
    if h_d_bins.len() != view.n_bins {
        return Err(PszError::Structure("per-bin input count mismatch".into()));
    }
    let m_d = h_d_bins[0].rows;
    let mut terms = Vec::with_capacity(view.n_bins);
    for (bin, h_bin) in h_d_bins.iter().enumerate() {
        let h = load_matrix(g, h_bin)?;
        let p = complex_matvec(g, h, view.bins[bin])?;
        let r2 = g.square(p.0);
        let i2 = g.square(p.1);
        let e = g.add(r2, i2)?;
        terms.push(g.sum(e));
    }
    let all = g.concat(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / (view.n_bins * m_d) as f64))
}

/// Gain amplitudes exceeding g_max, squared.
pub fn loss_l3(g: &mut Graph, view: &FilterView, g_max: f64) -> Result<TensorId> {
    if g_max <= 0.0 {
        return Err(PszError::Config(format!("g_max must be positive, got {g_max}")));
    }
    let l = view.n_speakers;
    let mut terms = Vec::with_capacity(view.n_bins);
    for &(re, im) in &view.bins {
        let mag = modulus(g, re, im)?;
        let cap = g.constant(vec![g_max; l], &[l])?;
        let excess = g.sub(mag, cap)?;
        let clipped = g.max_const(excess, 0.0);
        let sq = g.square(clipped);
        terms.push(g.sum(sq));
    }
    let all = g.concat(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / (view.n_bins * l) as f64))
}

/// Differentiable full-spectrum assembly for one speaker: band coefficients
/// plus edge-normalized bandpass tails, conjugate-mirrored.
fn assemble_speaker_spectrum(
    g: &mut Graph,
    band: (TensorId, TensorId),
    kernel: &CompactnessKernel,
    freq: &FrequencyGrid,
) -> Result<(TensorId, TensorId)> {
    let n_fft = freq.n_fft;
    let half = n_fft / 2;
    let n_bins = freq.n_bins();
    let f_lo_mag = kernel.bandpass_half[freq.bin_lo].norm();
    let f_hi_mag = kernel.bandpass_half[freq.bin_hi].norm();
    if f_lo_mag == 0.0 || f_hi_mag == 0.0 {
        return Err(PszError::Numerical(
            "bandpass response vanishes at a cutoff bin".into(),
        ));
    }

    let edge_scale = |g: &mut Graph, band: (TensorId, TensorId), idx: usize, mag: f64| -> Result<TensorId> {
        let re = g.gather(band.0, &[idx])?;
        let im = g.gather(band.1, &[idx])?;
        let m = modulus(g, re, im)?;
        Ok(g.scale(m, 1.0 / mag))
    };
    let s_lo = edge_scale(g, band, 0, f_lo_mag)?;
    let s_hi = edge_scale(g, band, n_bins - 1, f_hi_mag)?;

    // positive half 0..=half, then conjugate mirror
    let mut parts_re: Vec<TensorId> = Vec::new();
    let mut parts_im: Vec<TensorId> = Vec::new();
    let push_scaled = |g: &mut Graph, range: std::ops::Range<usize>, s: TensorId,
                           parts_re: &mut Vec<TensorId>, parts_im: &mut Vec<TensorId>|
     -> Result<()> {
        if range.is_empty() {
            return Ok(());
        }
        let re: Vec<f64> = range.clone().map(|k| kernel.bandpass_half[k].re).collect();
        let im: Vec<f64> = range.clone().map(|k| kernel.bandpass_half[k].im).collect();
        let len = re.len();
        let cre = g.constant(re, &[len])?;
        let cim = g.constant(im, &[len])?;
        parts_re.push(g.broadcast_mul(cre, s)?);
        parts_im.push(g.broadcast_mul(cim, s)?);
        Ok(())
    };

    // DC: real part only
    let dc_re_const = g.constant(vec![kernel.bandpass_half[0].re], &[1])?;
    parts_re.push(g.broadcast_mul(dc_re_const, s_lo)?);
    parts_im.push(g.constant(vec![0.0], &[1])?);
    push_scaled(g, 1..freq.bin_lo, s_lo, &mut parts_re, &mut parts_im)?;
    parts_re.push(band.0);
    parts_im.push(band.1);
    push_scaled(g, (freq.bin_hi + 1)..half, s_hi, &mut parts_re, &mut parts_im)?;
    // Nyquist: real part only
    let nyq_re_const = g.constant(vec![kernel.bandpass_half[half].re], &[1])?;
    parts_re.push(g.broadcast_mul(nyq_re_const, s_hi)?);
    parts_im.push(g.constant(vec![0.0], &[1])?);

    let pos_re = g.concat(&parts_re)?;
    let pos_im = g.concat(&parts_im)?;
    debug_assert_eq!(g.value(pos_re).len(), half + 1);

    let mirror_idx: Vec<usize> = (1..half).rev().collect();
    let mir_re = g.gather(pos_re, &mirror_idx)?;
    let mir_im_raw = g.gather(pos_im, &mirror_idx)?;
    let mir_im = g.scale(mir_im_raw, -1.0);
    let full_re = g.concat(&[pos_re, mir_re])?;
    let full_im = g.concat(&[pos_im, mir_im])?;
    Ok((full_re, full_im))
}

/// Time-domain compactness: assemble, bandpass in the frequency domain,
/// transform back, weight by the inverted window, take the energy.
pub fn loss_l4(
    g: &mut Graph,
    view: &FilterView,
    kernel: &CompactnessKernel,
    freq: &FrequencyGrid,
) -> Result<TensorId> {
    let n_fft = freq.n_fft;
    let f_re = g.constant(kernel.bandpass_full_re.clone(), &[n_fft])?;
    let f_im = g.constant(kernel.bandpass_full_im.clone(), &[n_fft])?;
    let w = g.constant(kernel.window.clone(), &[n_fft])?;
    let mut terms = Vec::with_capacity(view.n_speakers);
    for &band in &view.speakers {
        let (sre, sim) = assemble_speaker_spectrum(g, band, kernel, freq)?;
        // complex multiply by the bandpass response
        let rr = g.mul(sre, f_re)?;
        let ii = g.mul(sim, f_im)?;
        let ri = g.mul(sre, f_im)?;
        let ir = g.mul(sim, f_re)?;
        let out_re = g.sub(rr, ii)?;
        let out_im = g.add(ri, ir)?;
        let ir_time = g.linear_idft(out_re, out_im)?;
        let weighted = g.mul(ir_time, w)?;
        let sq = g.square(weighted);
        terms.push(g.sum(sq));
    }
    let all = g.concat(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / (n_fft * view.n_speakers) as f64))
}

/// Everything the weighted total loss needs besides the filter view.
#[derive(Debug)]
pub struct LossInputs<'a> {
    pub h_b_bins: &'a [CMat],
    pub h_d_bins: &'a [CMat],
    pub targets: &'a [Vec<f64>],
    pub weights: LossWeights,
    /// Required when gamma > 0.
    pub kernel: Option<&'a CompactnessKernel>,
    pub freq: &'a FrequencyGrid,
    pub overlap: bool,
    pub dz_is_measured: bool,
}

/// alpha L1 + (1-alpha) L2 (dropped on overlap, emphasized for measured DZ)
/// + beta L3 + gamma L4.
pub fn total_loss(g: &mut Graph, view: &FilterView, inputs: &LossInputs) -> Result<TensorId> {
    let w = &inputs.weights;
    let l1 = loss_l1(g, view, inputs.h_b_bins, inputs.targets)?;
    let mut acc = g.scale(l1, w.alpha);
    let dz_factor = if inputs.overlap {
        0.0
    } else if inputs.dz_is_measured {
        (1.0 - w.alpha) * w.measured_dz_factor
    } else {
        1.0 - w.alpha
    };
    let l2 = loss_l2(g, view, inputs.h_d_bins)?;
    let l2s = g.scale(l2, dz_factor);
    acc = g.add(acc, l2s)?;
    if w.beta != 0.0 {
        let l3 = loss_l3(g, view, w.g_max)?;
        let l3s = g.scale(l3, w.beta);
        acc = g.add(acc, l3s)?;
    }
    if w.gamma != 0.0 {
        let kernel = inputs.kernel.ok_or_else(|| {
            PszError::Config("gamma > 0 requires a compactness kernel".into())
        })?;
        let l4 = loss_l4(g, view, kernel, inputs.freq)?;
        let l4s = g.scale(l4, w.gamma);
        acc = g.add(acc, l4s)?;
    }
    Ok(acc)
}
