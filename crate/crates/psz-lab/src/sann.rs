//! Spatially adaptive neural network: positional encoding, MLP forward pass,
//! full-spectrum assembly, impulse-response extraction, checkpoints.

use crate::acoustics::FrequencyGrid;
use crate::autodiff::{Graph, TensorId};
use crate::classic::FilterSet;
use crate::error::{PszError, Result};
use crate::geometry::{normalize_coords, RenderingArea, ZonePair, DEFAULT_DELTA};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

/// Model hyperparameters and the geometry they are bound to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SannConfig {
    /// Highest Fourier encoding order K; encoded width is 8(K+1).
    pub encoding_order: usize,
    pub hidden: Vec<usize>,
    pub area: RenderingArea,
    pub delta: f64,
    pub freq: FrequencyGrid,
    pub speaker_positions: Vec<[f64; 3]>,
}

impl SannConfig {
    /// Full-scale config: K=3, three 512-wide layers, 8 speakers, 239 bins.
    pub fn paper_config() -> Self {
        Self {
            encoding_order: 3,
            hidden: vec![512, 512, 512],
            area: RenderingArea::default_area(),
            delta: DEFAULT_DELTA,
            freq: FrequencyGrid::paper_grid(),
            speaker_positions: crate::acoustics::SpeakerArray::default_linear().positions,
        }
    }

    /// Small config for fast experiments and tests.
    pub fn desk_config() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            freq: FrequencyGrid::desk_grid(),
            ..Self::paper_config()
        }
    }

    pub fn n_speakers(&self) -> usize {
        self.speaker_positions.len()
    }

    pub fn encoded_width(&self) -> usize {
        8 * (self.encoding_order + 1)
    }

    pub fn output_width(&self) -> usize {
        self.n_speakers() * 2 * self.freq.n_bins()
    }

    /// (in, out) dimensions of every linear layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.encoded_width();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_width()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// MLP weights. Parameters are stored as alternating weight/bias vectors per
/// layer; weights are row-major [out x in].
#[derive(Debug, Clone, PartialEq)]
pub struct SannModel {
    pub config: SannConfig,
    pub params: Vec<Vec<f64>>,
}

impl SannModel {
    /// Uniform init in +-1/sqrt(fan_in) per layer.
    pub fn init(config: SannConfig, rng: &mut impl Rng) -> Self {
        let mut params = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect());
            params.push((0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect());
        }
        Self { config, params }
    }

    pub fn zeros(config: SannConfig) -> Self {
        let params = config
            .layer_dims()
            .iter()
            .flat_map(|&(i, o)| [vec![0.0; i * o], vec![0.0; o]])
            .collect();
        Self { config, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.len()).collect()
    }

    /// Plain (non-differentiable) forward pass: zone pair to filter set.
    pub fn forward(&self, pair: &ZonePair) -> Result<FilterSet> {
        let coords = normalize_coords(pair, &self.config.area, self.config.delta)?;
        let encoded = positional_encode(&coords, self.config.encoding_order);
        let out = self.forward_encoded(&encoded);
        Ok(self.reshape_output(&out))
    }

    fn forward_encoded(&self, encoded: &[f64]) -> Vec<f64> {
        let dims = self.config.layer_dims();
        let n_layers = dims.len();
        let mut x = encoded.to_vec();
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[2 * layer];
            let b = &self.params[2 * layer + 1];
            let mut y = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let dot: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
                y[o] = dot + b[o];
            }
            if layer + 1 < n_layers {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        x
    }

    /// Output layout: index ((l*2 + part)*n_bins + bin), part 0 real, 1 imag.
    pub fn reshape_output(&self, out: &[f64]) -> FilterSet {
        let n_bins = self.config.freq.n_bins();
        let l = self.config.n_speakers();
        let mut filters = FilterSet::zeros(l, n_bins);
        for speaker in 0..l {
            for bin in 0..n_bins {
                let re = out[(speaker * 2) * n_bins + bin];
                let im = out[(speaker * 2 + 1) * n_bins + bin];
                filters.set_gain(speaker, bin, Complex64::new(re, im));
            }
        }
        filters
    }

    /// Differentiable forward pass on a graph. Returns the output tensor and
    /// the parameter leaves (same order as `self.params`).
    pub fn forward_graph(&self, graph: &mut Graph, coords: &[f64; 4]) -> Result<GraphForward> {
        let encoded = positional_encode(coords, self.config.encoding_order);
        let dims = self.config.layer_dims();
        let n_layers = dims.len();
        let mut param_ids = Vec::with_capacity(self.params.len());
        let mut x = graph.constant(encoded.clone(), &[encoded.len()])?;
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = graph.leaf(self.params[2 * layer].clone(), &[fan_out, fan_in], true)?;
            let b = graph.leaf(self.params[2 * layer + 1].clone(), &[fan_out], true)?;
            param_ids.push(w);
            param_ids.push(b);
            let wx = graph.matmul(w, x)?;
            let lin = graph.add(wx, b)?;
            x = if layer + 1 < n_layers { graph.relu(lin) } else { lin };
        }
        Ok(GraphForward { output: x, params: param_ids })
    }
}

/// Handles produced by [`SannModel::forward_graph`].
#[derive(Debug)]
pub struct GraphForward {
    pub output: TensorId,
    pub params: Vec<TensorId>,
}

/// Fourier positional encoding: for k = 0..K, sin(2^k pi x) over the four
/// inputs, then cos(2^k pi x); k-major ordering.
pub fn positional_encode(x: &[f64; 4], order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(8 * (order + 1));
    for k in 0..=order {
        let scale = (1u64 << k) as f64 * PI;
        for &xi in x {
            out.push((scale * xi).sin());
        }
        for &xi in x {
            out.push((scale * xi).cos());
        }
    }
    out
}

/// Extends band-limited filter coefficients to a full Hermitian spectrum.
///
/// Out-of-band bins take the bandpass response `f_half` (length n_fft/2+1)
/// scaled per side so the magnitude is continuous at the band edges; DC and
/// Nyquist are forced real; negative frequencies are conjugate mirrors.
pub fn assemble_full_spectrum(
    g_band: &[Complex64],
    f_half: &[Complex64],
    freq: &FrequencyGrid,
) -> Result<Vec<Complex64>> {
    let n_fft = freq.n_fft;
    let half = n_fft / 2;
    if f_half.len() != half + 1 {
        return Err(PszError::Structure(format!(
            "bandpass response length {} != n_fft/2+1 = {}",
            f_half.len(),
            half + 1
        )));
    }
    if g_band.len() != freq.n_bins() {
        return Err(PszError::Structure("band coefficient count mismatch".into()));
    }
    let f_lo_mag = f_half[freq.bin_lo].norm();
    let f_hi_mag = f_half[freq.bin_hi].norm();
    if f_lo_mag == 0.0 || f_hi_mag == 0.0 {
        return Err(PszError::Numerical(
            "bandpass response vanishes at a cutoff bin".into(),
        ));
    }
    let s_lo = g_band[0].norm() / f_lo_mag;
    let s_hi = g_band[g_band.len() - 1].norm() / f_hi_mag;

    let mut spec = vec![Complex64::new(0.0, 0.0); n_fft];
    spec[0] = Complex64::new((s_lo * f_half[0]).re, 0.0);
    for k in 1..freq.bin_lo {
        spec[k] = s_lo * f_half[k];
    }
    for (i, k) in (freq.bin_lo..=freq.bin_hi).enumerate() {
        spec[k] = g_band[i];
    }
    for k in (freq.bin_hi + 1)..half {
        spec[k] = s_hi * f_half[k];
    }
    spec[half] = Complex64::new((s_hi * f_half[half]).re, 0.0);
    for k in 1..half {
        spec[n_fft - k] = spec[k].conj();
    }
    Ok(spec)
}

/// Real inverse DFT of a Hermitian spectrum with an optional circular shift
/// (used to center the non-causal response for display and export).
pub fn to_impulse_response(spectrum: &[Complex64], shift: usize) -> Vec<f64> {
    let n = spectrum.len();
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    (0..n).map(|i| buf[(i + n - shift % n) % n].re * scale).collect()
}

const CHECKPOINT_MAGIC: &[u8; 6] = b"PSZNN1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: SannConfig,
}

/// Writes magic, JSON header, then raw little-endian f64 blobs in layer order.
pub fn checkpoint_save(model: &SannModel, path: &Path) -> Result<()> {
    let header = CheckpointHeader { version: 1, config: model.config.clone() };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| PszError::Format(format!("checkpoint header encode: {e}")))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for p in &model.params {
        for &v in p {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<SannModel> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(PszError::Format("bad checkpoint magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| PszError::Format(format!("checkpoint header decode: {e}")))?;
    if header.version != 1 {
        return Err(PszError::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut params = Vec::new();
    for (fan_in, fan_out) in header.config.layer_dims() {
        for size in [fan_in * fan_out, fan_out] {
            let mut blob = vec![0.0f64; size];
            let mut bytes = vec![0u8; size * 8];
            file.read_exact(&mut bytes).map_err(|_| {
                PszError::Format("checkpoint truncated: blob size mismatch".into())
            })?;
            for (v, chunk) in blob.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            params.push(blob);
        }
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(PszError::Format("checkpoint has trailing bytes".into()));
    }
    Ok(SannModel { config: header.config, params })
}
