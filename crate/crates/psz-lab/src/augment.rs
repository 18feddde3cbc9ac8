//! Pseudo-measured transfer functions: simulated ATFs perturbed by per-path
//! gain and distance offsets plus additive complex Gaussian noise.

use crate::acoustics::{AtfTensor, Condition, SPEED_OF_SOUND};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Perturbation ranges. Amplitude factor and distance offset are drawn once
/// per (point, speaker) path and shared across frequency; noise is drawn per
/// entry at the given signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub amp_lo: f64,
    pub amp_hi: f64,
    /// Distance offset bound in meters, drawn from U(-dist_max, dist_max).
    pub dist_max: f64,
    pub snr_db: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self { amp_lo: 0.79, amp_hi: 1.26, dist_max: 0.03, snr_db: 40.0 }
    }
}

/// Applies the perturbation model and marks the result pseudo-measured.
///
/// H'(m, l, w) = eps_A(m, l) * H(m, l, w) * exp(-j w d(m, l) / c) + n(m, l, w)
/// where the noise power is the mean |H|^2 over the tensor scaled down by
/// snr_db.
pub fn perturb_atf(atf: &AtfTensor, params: &PerturbParams, rng: &mut impl Rng) -> AtfTensor {
    let n_bins = atf.n_bins();
    let mean_power = if atf.values.is_empty() {
        0.0
    } else {
        atf.values.iter().map(|z| z.norm_sqr()).sum::<f64>() / atf.values.len() as f64
    };
    let noise_sigma = (mean_power * 10f64.powf(-params.snr_db / 10.0) / 2.0).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(atf.values.len());
    for m in 0..atf.n_points {
        for l in 0..atf.n_speakers {
            let amp = rng.gen_range(params.amp_lo..params.amp_hi);
            let d = rng.gen_range(-params.dist_max..params.dist_max);
            for bin in 0..n_bins {
                let f = atf.freq.bin_freq(atf.freq.bin_lo + bin);
                let phase = -2.0 * PI * f * d / SPEED_OF_SOUND;
                let noise = Complex64::new(
                    noise_sigma * normal.sample(rng),
                    noise_sigma * normal.sample(rng),
                );
                values.push(
                    atf.value(m, l, bin) * amp * Complex64::from_polar(1.0, phase) + noise,
                );
            }
        }
    }
    AtfTensor {
        values,
        n_points: atf.n_points,
        n_speakers: atf.n_speakers,
        freq: atf.freq.clone(),
        receiver_positions: atf.receiver_positions.clone(),
        speaker_positions: atf.speaker_positions.clone(),
        condition: Condition::PseudoMeasured,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::FrequencyGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_atf(n_points: usize, n_speakers: usize) -> AtfTensor {
        let freq = FrequencyGrid::new(48_000, 1024, 3, 26).unwrap();
        let n = n_points * n_speakers * freq.n_bins();
        AtfTensor {
            values: vec![Complex64::new(1.0, 0.0); n],
            n_points,
            n_speakers,
            freq,
            receiver_positions: vec![[0.0, 1.0, 1.2]; n_points],
            speaker_positions: vec![[0.0, 0.0, 1.2]; n_speakers],
            condition: Condition::Anechoic,
        }
    }

    #[test]
    fn marks_result_pseudo_measured() {
        let atf = flat_atf(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = perturb_atf(&atf, &PerturbParams::default(), &mut rng);
        assert_eq!(out.condition, Condition::PseudoMeasured);
        assert_eq!(out.values.len(), atf.values.len());
    }

    #[test]
    fn distance_only_preserves_magnitude() {
        let atf = flat_atf(3, 2);
        let params = PerturbParams {
            amp_lo: 1.0 - 1e-12,
            amp_hi: 1.0,
            dist_max: 0.03,
            snr_db: 400.0, // noise negligibly small
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = perturb_atf(&atf, &params, &mut rng);
        for (a, b) in atf.values.iter().zip(&out.values) {
            assert!((a.norm() - b.norm()).abs() < 1e-9);
        }
        // but phases moved
        assert!(out.values.iter().any(|z| z.arg().abs() > 1e-3));
    }

    #[test]
    fn phase_offset_shared_within_path_and_linear_in_frequency() {
        let atf = flat_atf(1, 1);
        let params = PerturbParams { amp_lo: 1.0 - 1e-12, amp_hi: 1.0, dist_max: 0.03, snr_db: 400.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = perturb_atf(&atf, &params, &mut rng);
        // phase(bin)/f constant across the path -> single distance offset
        let slopes: Vec<f64> = (0..atf.n_bins())
            .map(|b| out.values[b].arg() / atf.freq.bin_freq(atf.freq.bin_lo + b))
            .collect();
        for s in &slopes {
            assert!((s - slopes[0]).abs() < 1e-9);
        }
        let d = -slopes[0] * SPEED_OF_SOUND / (2.0 * PI);
        assert!(d.abs() <= params.dist_max);
    }

    #[test]
    fn realized_snr_close_to_nominal() {
        // large tensor so the Monte-Carlo estimate is tight
        let atf = flat_atf(40, 8);
        let params = PerturbParams { amp_lo: 1.0 - 1e-12, amp_hi: 1.0, dist_max: 1e-15, snr_db: 40.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = perturb_atf(&atf, &params, &mut rng);
        let signal_power: f64 =
            atf.values.iter().map(|z| z.norm_sqr()).sum::<f64>() / atf.values.len() as f64;
        let noise_power: f64 = atf
            .values
            .iter()
            .zip(&out.values)
            .map(|(a, b)| (b - a).norm_sqr())
            .sum::<f64>()
            / atf.values.len() as f64;
        let snr = 10.0 * (signal_power / noise_power).log10();
        assert!((snr - 40.0).abs() < 0.5, "realized SNR {snr} dB");
    }

    #[test]
    fn amplitude_factor_within_support() {
        let atf = flat_atf(30, 8);
        let params = PerturbParams { dist_max: 1e-15, snr_db: 400.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = perturb_atf(&atf, &params, &mut rng);
        // |H| = 1, so each path magnitude is the drawn amplitude factor
        for path in out.values.chunks(atf.n_bins()) {
            for z in path {
                assert!(z.norm() > 0.79 - 1e-6 && z.norm() < 1.26 + 1e-6);
            }
            // shared across frequency within the path
            let first = path[0].norm();
            for z in path {
                assert!((z.norm() - first).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let atf = flat_atf(2, 3);
        let params = PerturbParams::default();
        let a = perturb_atf(&atf, &params, &mut ChaCha8Rng::seed_from_u64(7));
        let b = perturb_atf(&atf, &params, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.values, b.values);
    }
}
