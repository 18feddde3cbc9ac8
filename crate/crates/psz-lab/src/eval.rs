//! Isolation and error metrics, frequency-axis post-processing, spatial-map
//! sweeps over moving zone centers, and the filter-generation timing
//! benchmark.

use crate::acoustics::AtfTensor;
use crate::classic::FilterSet;
use crate::error::{PszError, Result};
use crate::geometry::{select_control_points, zones_overlap, SamplingGrid, Zone, ZonePair};
use crate::linalg::CMat;
use crate::par;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Izi,
    Ipi,
    Nmse,
}

/// Per-bin metric values; `flagged` marks zero-denominator or zero-target
/// bins (kept as +inf / skipped rather than clipped).
#[derive(Debug, Clone, PartialEq)]
pub struct PerBin {
    pub values: Vec<f64>,
    pub flagged: bool,
}

fn bin_energy(h: &CMat, g: &[num_complex::Complex64]) -> f64 {
    h.matvec(g).iter().map(|p| p.norm_sqr()).sum()
}

/// Inter-zone isolation per bin, in dB: energy in zone 1 over energy leaked
/// into zone 2, both driven by zone 1's filters.
pub fn izi(h1_bins: &[CMat], h2_bins: &[CMat], g: &FilterSet) -> Result<PerBin> {
    if h1_bins.len() != g.n_bins || h2_bins.len() != g.n_bins {
        return Err(PszError::Structure("per-bin matrix count mismatch".into()));
    }
    let mut flagged = false;
    let values = (0..g.n_bins)
        .map(|bin| {
            let gains = g.bin_gains(bin);
            let num = bin_energy(&h1_bins[bin], &gains);
            let den = bin_energy(&h2_bins[bin], &gains);
            if den == 0.0 {
                flagged = true;
                f64::INFINITY
            } else {
                10.0 * (num / den).log10()
            }
        })
        .collect();
    Ok(PerBin { values, flagged })
}

/// Inter-program isolation per bin, in dB: own-program energy in the zone
/// over the other program's energy in the same zone.
pub fn ipi(h1_bins: &[CMat], g_own: &FilterSet, g_other: &FilterSet) -> Result<PerBin> {
    if h1_bins.len() != g_own.n_bins || g_own.n_bins != g_other.n_bins {
        return Err(PszError::Structure("per-bin matrix count mismatch".into()));
    }
    let mut flagged = false;
    let values = (0..g_own.n_bins)
        .map(|bin| {
            let num = bin_energy(&h1_bins[bin], &g_own.bin_gains(bin));
            let den = bin_energy(&h1_bins[bin], &g_other.bin_gains(bin));
            if den == 0.0 {
                flagged = true;
                f64::INFINITY
            } else {
                10.0 * (num / den).log10()
            }
        })
        .collect();
    Ok(PerBin { values, flagged })
}

/// Per-bin normalized amplitude error over the bright zone, linear scale,
/// already carrying the 1/M_B normalization so the scalar form is the plain
/// mean over bins. Zero-target bins are NaN and flagged.
pub fn nmse_per_bin(g: &FilterSet, h_b_bins: &[CMat], targets: &[Vec<f64>]) -> Result<PerBin> {
    if h_b_bins.len() != g.n_bins || targets.len() != g.n_bins {
        return Err(PszError::Structure("per-bin input count mismatch".into()));
    }
    let m_b = h_b_bins[0].rows;
    let mut flagged = false;
    let values = (0..g.n_bins)
        .map(|bin| {
            let target = &targets[bin];
            let t_norm_sq: f64 = target.iter().map(|t| t * t).sum();
            if t_norm_sq == 0.0 {
                flagged = true;
                return f64::NAN;
            }
            let p = h_b_bins[bin].matvec(&g.bin_gains(bin));
            let err: f64 = p
                .iter()
                .zip(target)
                .map(|(z, t)| (t - z.norm()).powi(2))
                .sum();
            err / (t_norm_sq * m_b as f64)
        })
        .collect();
    Ok(PerBin { values, flagged })
}

/// Scalar normalized amplitude error: mean of the per-bin values, skipping
/// flagged bins. Zero filters give exactly 1/M_B.
pub fn nmse(g: &FilterSet, h_b_bins: &[CMat], targets: &[Vec<f64>]) -> Result<f64> {
    let per_bin = nmse_per_bin(g, h_b_bins, targets)?;
    let kept: Vec<f64> = per_bin.values.iter().copied().filter(|v| v.is_finite()).collect();
    if kept.is_empty() {
        return Err(PszError::Numerical("all target bins are zero".into()));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Log-weighted frequency average: sum of x/f over sum of 1/f.
pub fn log_mean(values: &[f64], freqs: &[f64]) -> Result<f64> {
    if values.len() != freqs.len() || values.is_empty() {
        return Err(PszError::Structure("length mismatch in log_mean".into()));
    }
    if freqs.iter().any(|&f| f <= 0.0) {
        return Err(PszError::OutOfRange("log_mean needs positive frequencies".into()));
    }
    let num: f64 = values.iter().zip(freqs).map(|(x, f)| x / f).sum();
    let den: f64 = freqs.iter().map(|f| 1.0 / f).sum();
    Ok(num / den)
}

/// Fractional-octave smoothing with a rectangular kernel on log-frequency:
/// per bin, the mean over bins within [f * 2^(-fraction/2), f * 2^(fraction/2)].
pub fn octave_smooth(values: &[f64], freqs: &[f64], fraction: f64) -> Result<Vec<f64>> {
    if values.len() != freqs.len() {
        return Err(PszError::Structure("length mismatch in octave_smooth".into()));
    }
    if fraction <= 0.0 {
        return Err(PszError::Config("smoothing fraction must be positive".into()));
    }
    let half = 2f64.powf(fraction / 2.0);
    Ok(freqs
        .iter()
        .map(|&f| {
            let (lo, hi) = (f / half, f * half);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (x, &fi) in values.iter().zip(freqs) {
                if fi >= lo && fi <= hi {
                    sum += x;
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect())
}

/// Spatial sweep of a frequency-reduced metric over moving zone centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricMap {
    pub metric: MetricKind,
    pub fixed_zone: Zone,
    pub centers: Vec<(f64, f64)>,
    /// dB per center (linear for NMSE); NaN where invalid.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub frequency_reduced: bool,
}

/// Produces filters for a zone pair; wraps the network or a classic design.
pub type DesignFn<'a> = dyn Fn(&ZonePair) -> Result<FilterSet> + Sync + 'a;
/// Per-bin bright-zone target magnitudes for a pair (needed by NMSE).
pub type TargetFn<'a> = dyn Fn(&ZonePair, &[usize]) -> Result<Vec<Vec<f64>>> + Sync + 'a;

pub struct MapRequest<'a> {
    pub metric: MetricKind,
    pub fixed_zone: Zone,
    pub moving_centers: Vec<(f64, f64)>,
    pub moving_radius: f64,
    pub grid: &'a SamplingGrid,
    pub eval_atf: &'a AtfTensor,
    pub design: &'a DesignFn<'a>,
    /// Required for NMSE.
    pub target: Option<&'a TargetFn<'a>>,
}

pub fn spatial_map(req: &MapRequest) -> Result<MetricMap> {
    if req.metric == MetricKind::Nmse && req.target.is_none() {
        return Err(PszError::Config("NMSE map needs a target function".into()));
    }
    let freqs = req.eval_atf.freq.bin_freqs();
    let cells = par::map_indexed(req.moving_centers.len(), |i| -> Result<Option<f64>> {
        let center = req.moving_centers[i];
        let pair = ZonePair {
            bz: req.fixed_zone,
            dz: Zone::new(center, req.moving_radius),
        };
        if zones_overlap(&pair) {
            return Ok(None);
        }
        let bz_pts = match select_control_points(req.grid, &pair.bz) {
            Ok(p) if !p.is_empty() => p,
            _ => return Ok(None),
        };
        let dz_pts = match select_control_points(req.grid, &pair.dz) {
            Ok(p) if !p.is_empty() => p,
            _ => return Ok(None),
        };
        let n_bins = req.eval_atf.n_bins();
        let h_b: Vec<CMat> =
            (0..n_bins).map(|b| req.eval_atf.bin_matrix(&bz_pts, b)).collect();
        let h_d: Vec<CMat> =
            (0..n_bins).map(|b| req.eval_atf.bin_matrix(&dz_pts, b)).collect();
        let g = (req.design)(&pair)?;
        let per_bin = match req.metric {
            MetricKind::Izi => izi(&h_b, &h_d, &g)?,
            MetricKind::Ipi => {
                let swapped = ZonePair { bz: pair.dz, dz: pair.bz };
                let g_other = (req.design)(&swapped)?;
                ipi(&h_b, &g, &g_other)?
            }
            MetricKind::Nmse => {
                let targets = (req.target.unwrap())(&pair, &bz_pts)?;
                nmse_per_bin(&g, &h_b, &targets)?
            }
        };
        if per_bin.values.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(log_mean(&per_bin.values, &freqs)?))
    });
    let mut values = Vec::with_capacity(req.moving_centers.len());
    let mut valid = Vec::with_capacity(req.moving_centers.len());
    for cell in cells {
        match cell? {
            Some(v) => {
                values.push(v);
                valid.push(true);
            }
            None => {
                values.push(f64::NAN);
                valid.push(false);
            }
        }
    }
    Ok(MetricMap {
        metric: req.metric,
        fixed_zone: req.fixed_zone,
        centers: req.moving_centers.clone(),
        values,
        valid,
        frequency_reduced: true,
    })
}

/// Median wall times per single filter generation, network versus the
/// reference design, on identical queries. Single-threaded by design so the
/// ratio reflects per-query work.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub nn_ms: f64,
    pub reference_ms: f64,
    pub ratio: f64,
    pub param_count: usize,
    pub model_bytes: usize,
}

pub fn bench_timing(
    nn: &dyn Fn(&ZonePair) -> Result<FilterSet>,
    reference: &dyn Fn(&ZonePair) -> Result<FilterSet>,
    pairs: &[ZonePair],
    repetitions: usize,
    warmup: usize,
    param_count: usize,
) -> Result<BenchReport> {
    if pairs.is_empty() || repetitions == 0 {
        return Err(PszError::Config("benchmark needs pairs and repetitions".into()));
    }
    let time_one = |f: &dyn Fn(&ZonePair) -> Result<FilterSet>| -> Result<f64> {
        for pair in pairs.iter().cycle().take(warmup) {
            std::hint::black_box(f(pair)?);
        }
        let mut samples = Vec::with_capacity(repetitions);
        for pair in pairs.iter().cycle().take(repetitions) {
            let t0 = Instant::now();
            std::hint::black_box(f(pair)?);
            samples.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        Ok(samples[samples.len() / 2])
    };
    let nn_ms = time_one(nn)?;
    let reference_ms = time_one(reference)?;
    Ok(BenchReport {
        nn_ms,
        reference_ms,
        ratio: reference_ms / nn_ms,
        param_count,
        model_bytes: param_count * std::mem::size_of::<f64>(),
    })
}
