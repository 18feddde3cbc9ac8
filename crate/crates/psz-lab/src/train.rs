//! Dataset assembly, the target-pressure rule, and the training loop with
//! validation and best-checkpoint retention.

use crate::acoustics::{
    default_max_order, sample_room_config, simulate_anechoic, simulate_room, AtfTensor,
    FrequencyGrid, SpeakerArray, SPEED_OF_SOUND,
};
use crate::augment::{perturb_atf, PerturbParams};
use crate::autodiff::{adam_step, AdamState, Graph};
use crate::error::{PszError, Result};
use crate::geometry::{
    make_grid, normalize_coords, select_control_points, zones_overlap, RenderingArea,
    SamplingGrid, Zone, ZonePair,
};
use crate::io::HistoryRow;
use crate::linalg::CMat;
use crate::nnloss::{
    loss_l1, loss_l2, loss_l3, loss_l4, make_compactness_kernel, split_filters,
    CompactnessKernel, LossWeights,
};
use crate::par;
use crate::sann::SannModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bandpass edges for the compactness kernel.
pub const BAND_LO_HZ: f64 = 100.0;
pub const BAND_HI_HZ: f64 = 1500.0;

/// Pseudo-measurement region in the rendering plane.
pub const MEASURE_X: (f64, f64) = (-0.84, 0.84);
pub const MEASURE_Y: (f64, f64) = (0.9, 1.3);
/// Radius of each measured circle.
pub const MEASURE_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionSpec {
    Anechoic,
    Rooms { count: usize, rt60: f64 },
    /// Simulated rooms with ground-truth ATFs substituted on a lattice of
    /// measured circles spaced `delta` meters apart.
    Mixed { count: usize, rt60: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub augmentation: Option<PerturbParams>,
    pub condition: ConditionSpec,
    pub zone_radius: f64,
    pub grid_resolution: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 {
            return Err(PszError::Config("need nonzero train and val sample counts".into()));
        }
        if self.batch_size == 0 {
            return Err(PszError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(PszError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(PszError::Config("learning rate must be positive".into()));
        }
        if !(self.zone_radius > 0.0) {
            return Err(PszError::Config("zone radius must be positive".into()));
        }
        if let ConditionSpec::Mixed { delta, .. } = self.condition {
            if !(delta > 0.0) {
                return Err(PszError::Config("measured-circle spacing must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One zone-pair query with its dark-zone measurement flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub pair: ZonePair,
    pub dz_is_measured: bool,
}

/// ATF tensors the loop draws from: one per training room (a single entry
/// for anechoic) plus a held-out validation tensor.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub grid: SamplingGrid,
    pub train_atfs: Vec<AtfTensor>,
    pub val_atf: AtfTensor,
    /// Per grid point, true where ground-truth data replaced the simulation.
    pub measured_mask: Option<Vec<bool>>,
}

/// Bright-zone target magnitudes, per bin over the control points: the mean
/// of one edge and one center loudspeaker magnitude response, picked from
/// the side the zone sits on (x >= 0 uses the mirrored pair).
pub fn target_pressure(
    bz: &Zone,
    points: &[usize],
    atf: &AtfTensor,
) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(PszError::DegenerateZone("empty bright-zone control set".into()));
    }
    let l = atf.n_speakers;
    if l < 2 {
        return Err(PszError::Structure("target rule needs at least two speakers".into()));
    }
    let (edge, center) = if bz.center.0 < 0.0 { (0, l / 2 - 1) } else { (l - 1, l / 2) };
    Ok((0..atf.n_bins())
        .map(|bin| {
            points
                .iter()
                .map(|&m| {
                    (atf.value(m, edge, bin).norm() + atf.value(m, center, bin).norm()) / 2.0
                })
                .collect()
        })
        .collect())
}

/// Flattens per-bin targets to the point-major layout the classic designs
/// take (index m * n_bins + bin).
pub fn flatten_target(per_bin: &[Vec<f64>]) -> Vec<f64> {
    let n_bins = per_bin.len();
    let m = per_bin[0].len();
    let mut out = vec![0.0; m * n_bins];
    for (bin, col) in per_bin.iter().enumerate() {
        for (point, &v) in col.iter().enumerate() {
            out[point * n_bins + bin] = v;
        }
    }
    out
}

/// Both centers i.i.d. uniform over the area; overlap is allowed.
pub fn sample_zone_pair(rng: &mut impl Rng, area: &RenderingArea, radius: f64) -> ZonePair {
    let draw = |rng: &mut dyn RngCore| {
        (
            rng.gen_range(area.x_min..area.x_max),
            rng.gen_range(area.y_min..area.y_max),
        )
    };
    let bz = Zone::new(draw(rng), radius);
    let dz = Zone::new(draw(rng), radius);
    ZonePair { bz, dz }
}

/// Resamples until both zones capture at least one grid point.
fn sample_valid_pair(
    rng: &mut impl Rng,
    area: &RenderingArea,
    radius: f64,
    grid: &SamplingGrid,
) -> Result<ZonePair> {
    for _ in 0..1000 {
        let pair = sample_zone_pair(rng, area, radius);
        let bz_ok = select_control_points(grid, &pair.bz).map(|p| !p.is_empty())?;
        let dz_ok = select_control_points(grid, &pair.dz).map(|p| !p.is_empty())?;
        if bz_ok && dz_ok {
            return Ok(pair);
        }
    }
    Err(PszError::Geometry("could not sample a zone pair covering grid points".into()))
}

/// Flags grid points lying inside any measured circle: circle centers sit on
/// a `delta`-spaced lattice covering the measurement region.
pub fn measured_mask(grid: &SamplingGrid, delta: f64) -> Result<Vec<bool>> {
    if !(delta > 0.0) {
        return Err(PszError::Config("measured-circle spacing must be positive".into()));
    }
    let mut centers = Vec::new();
    let mut x = MEASURE_X.0;
    while x <= MEASURE_X.1 + 1e-9 {
        let mut y = MEASURE_Y.0;
        while y <= MEASURE_Y.1 + 1e-9 {
            centers.push((x, y));
            y += delta;
        }
        x += delta;
    }
    let r = MEASURE_RADIUS * (1.0 + 1e-12) + 1e-12;
    Ok(grid
        .points
        .iter()
        .map(|&(px, py)| {
            centers
                .iter()
                .any(|&(cx, cy)| ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() <= r)
        })
        .collect())
}

/// Splices ground-truth rows over the measured points of a simulated tensor.
pub fn compose_mixed_atf(
    sim: &AtfTensor,
    truth: &AtfTensor,
    mask: &[bool],
) -> Result<AtfTensor> {
    if sim.n_points != truth.n_points
        || sim.n_speakers != truth.n_speakers
        || sim.freq != truth.freq
        || mask.len() != sim.n_points
    {
        return Err(PszError::Structure("mixed tensors must share dimensions".into()));
    }
    let stride = sim.n_speakers * sim.n_bins();
    let mut values = sim.values.clone();
    for (point, &measured) in mask.iter().enumerate() {
        if measured {
            let span = point * stride..(point + 1) * stride;
            values[span.clone()].copy_from_slice(&truth.values[span]);
        }
    }
    Ok(AtfTensor { values, condition: sim.condition.clone(), ..sim.clone() })
}

/// Simulates the tensors a run needs. Rooms get one extra held-out room for
/// validation; the mixed condition additionally simulates a ground-truth
/// room (distinct seed, higher reflection order) as the measurement stand-in.
pub fn build_datasets(
    config: &TrainConfig,
    area: &RenderingArea,
    speakers: &SpeakerArray,
    freq: &FrequencyGrid,
) -> Result<Datasets> {
    config.validate()?;
    let grid = make_grid(*area, config.grid_resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e3779b97f4a7c15);
    let simulate_one = |room_rng: &mut ChaCha8Rng, rt60: f64, extra_order: i64| -> Result<AtfTensor> {
        let room = sample_room_config(room_rng, rt60, speakers, area);
        let order = default_max_order(&room, SPEED_OF_SOUND) + extra_order;
        simulate_room(&room, &grid, speakers, freq, order, freq.n_fft, SPEED_OF_SOUND)
    };
    match config.condition {
        ConditionSpec::Anechoic => {
            let atf = simulate_anechoic(&grid, speakers, freq, SPEED_OF_SOUND)?;
            Ok(Datasets { grid, val_atf: atf.clone(), train_atfs: vec![atf], measured_mask: None })
        }
        ConditionSpec::Rooms { count, rt60 } => {
            if count == 0 {
                return Err(PszError::Config("need at least one training room".into()));
            }
            let train_atfs: Vec<AtfTensor> = (0..count)
                .map(|_| simulate_one(&mut rng, rt60, 0))
                .collect::<Result<_>>()?;
            let val_atf = simulate_one(&mut rng, rt60, 0)?;
            Ok(Datasets { grid, train_atfs, val_atf, measured_mask: None })
        }
        ConditionSpec::Mixed { count, rt60, delta } => {
            if count == 0 {
                return Err(PszError::Config("need at least one training room".into()));
            }
            let mask = measured_mask(&grid, delta)?;
            let truth = simulate_one(&mut rng, rt60, 4)?;
            let train_atfs: Vec<AtfTensor> = (0..count)
                .map(|_| {
                    let sim = simulate_one(&mut rng, rt60, 0)?;
                    compose_mixed_atf(&sim, &truth, &mask)
                })
                .collect::<Result<_>>()?;
            let val_atf = {
                let sim = simulate_one(&mut rng, rt60, 0)?;
                compose_mixed_atf(&sim, &truth, &mask)?
            };
            Ok(Datasets { grid, train_atfs, val_atf, measured_mask: Some(mask) })
        }
    }
}

/// Restricts a tensor to the given grid points (keeps their order).
fn slice_points(atf: &AtfTensor, point_ids: &[usize]) -> AtfTensor {
    let stride = atf.n_speakers * atf.n_bins();
    let mut values = Vec::with_capacity(point_ids.len() * stride);
    let mut receiver_positions = Vec::with_capacity(point_ids.len());
    for &p in point_ids {
        values.extend_from_slice(&atf.values[p * stride..(p + 1) * stride]);
        receiver_positions.push(atf.receiver_positions[p]);
    }
    AtfTensor {
        values,
        n_points: point_ids.len(),
        receiver_positions,
        ..atf.clone()
    }
}

struct SampleEval {
    loss: f64,
    terms: [f64; 4],
    grads: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn eval_sample(
    model: &SannModel,
    sample: &TrainingSample,
    atf: &AtfTensor,
    grid: &SamplingGrid,
    weights: &LossWeights,
    kernel: Option<&CompactnessKernel>,
    augmentation: Option<(&PerturbParams, u64)>,
    with_grad: bool,
) -> Result<SampleEval> {
    let pair = &sample.pair;
    let bz_pts = select_control_points(grid, &pair.bz)?;
    let dz_pts = select_control_points(grid, &pair.dz)?;
    if bz_pts.is_empty() || dz_pts.is_empty() {
        return Err(PszError::DegenerateZone("zone covers no grid points".into()));
    }
    let mut bz_atf = slice_points(atf, &bz_pts);
    let mut dz_atf = slice_points(atf, &dz_pts);
    if let Some((params, seed)) = augmentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        bz_atf = perturb_atf(&bz_atf, params, &mut rng);
        dz_atf = perturb_atf(&dz_atf, params, &mut rng);
    }
    let n_bins = atf.n_bins();
    let all_b: Vec<usize> = (0..bz_atf.n_points).collect();
    let all_d: Vec<usize> = (0..dz_atf.n_points).collect();
    let h_b: Vec<CMat> = (0..n_bins).map(|b| bz_atf.bin_matrix(&all_b, b)).collect();
    let h_d: Vec<CMat> = (0..n_bins).map(|b| dz_atf.bin_matrix(&all_d, b)).collect();
    let targets = target_pressure(&pair.bz, &all_b, &bz_atf)?;

    let mut g = Graph::new();
    let coords = normalize_coords(pair, &model.config.area, model.config.delta)?;
    let fwd = model.forward_graph(&mut g, &coords)?;
    let view = split_filters(&mut g, fwd.output, model.config.n_speakers(), n_bins)?;

    let overlap = zones_overlap(pair);
    let dz_factor = if overlap {
        0.0
    } else if sample.dz_is_measured {
        (1.0 - weights.alpha) * weights.measured_dz_factor
    } else {
        1.0 - weights.alpha
    };
    let l1 = loss_l1(&mut g, &view, &h_b, &targets)?;
    let l2 = loss_l2(&mut g, &view, &h_d)?;
    let l1s = g.scale(l1, weights.alpha);
    let l2s = g.scale(l2, dz_factor);
    let mut total = g.add(l1s, l2s)?;
    let mut term3 = 0.0;
    let mut term4 = 0.0;
    if weights.beta != 0.0 {
        let l3 = loss_l3(&mut g, &view, weights.g_max)?;
        term3 = g.value(l3)[0];
        let l3s = g.scale(l3, weights.beta);
        total = g.add(total, l3s)?;
    }
    if weights.gamma != 0.0 {
        let kernel = kernel
            .ok_or_else(|| PszError::Config("gamma > 0 requires a compactness kernel".into()))?;
        let l4 = loss_l4(&mut g, &view, kernel, &atf.freq)?;
        term4 = g.value(l4)[0];
        let l4s = g.scale(l4, weights.gamma);
        total = g.add(total, l4s)?;
    }
    let loss = g.value(total)[0];
    if !loss.is_finite() {
        return Err(PszError::Numerical(format!(
            "non-finite loss at pair bz=({:.3},{:.3}) dz=({:.3},{:.3})",
            pair.bz.center.0, pair.bz.center.1, pair.dz.center.0, pair.dz.center.1
        )));
    }
    let terms = [g.value(l1)[0], g.value(l2)[0], term3, term4];
    let grads = if with_grad {
        g.backward(total)?;
        fwd.params.iter().map(|&id| g.grad(id).to_vec()).collect()
    } else {
        Vec::new()
    };
    Ok(SampleEval { loss, terms, grads })
}

/// Trains in place; returns the per-epoch history. The parameters left in
/// the model are the best-validation ones.
pub fn train(
    model: &mut SannModel,
    config: &TrainConfig,
    datasets: &Datasets,
) -> Result<Vec<HistoryRow>> {
    config.validate()?;
    if datasets.train_atfs.is_empty() {
        return Err(PszError::Config("no training ATF tensors".into()));
    }
    let area = model.config.area;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.n_train + config.n_val;
    let mask = datasets.measured_mask.as_deref();
    let samples: Vec<TrainingSample> = (0..total)
        .map(|_| -> Result<TrainingSample> {
            let pair = sample_valid_pair(&mut rng, &area, config.zone_radius, &datasets.grid)?;
            let dz_is_measured = match mask {
                Some(m) => {
                    let pts = select_control_points(&datasets.grid, &pair.dz)?;
                    !pts.is_empty() && pts.iter().all(|&p| m[p])
                }
                None => false,
            };
            Ok(TrainingSample { pair, dz_is_measured })
        })
        .collect::<Result<_>>()?;
    let (train_samples, val_samples) = samples.split_at(config.n_train);

    let kernel = if config.weights.gamma != 0.0 {
        Some(make_compactness_kernel(
            model.config.freq.n_fft,
            BAND_LO_HZ,
            BAND_HI_HZ,
            model.config.freq.sample_rate as f64,
        )?)
    } else {
        None
    };

    let mut adam = AdamState::new(&model.param_sizes(), config.lr);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..config.n_train).collect();
        order.shuffle(&mut rng);
        // per-sample draws made sequentially so parallel execution cannot
        // perturb the stream
        let room_of: Vec<usize> = (0..config.n_train)
            .map(|_| rng.gen_range(0..datasets.train_atfs.len()))
            .collect();
        let aug_seed: Vec<u64> = (0..config.n_train).map(|_| rng.gen()).collect();

        let mut epoch_loss = 0.0;
        let mut epoch_terms = [0.0; 4];
        let mut n_batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let evals = par::map_collect(batch, |&i| {
                eval_sample(
                    model,
                    &train_samples[i],
                    &datasets.train_atfs[room_of[i]],
                    &datasets.grid,
                    &config.weights,
                    kernel.as_ref(),
                    config.augmentation.as_ref().map(|p| (p, aug_seed[i])),
                    true,
                )
            });
            let mut mean_loss = 0.0;
            let mut mean_terms = [0.0; 4];
            let mut mean_grads: Option<Vec<Vec<f64>>> = None;
            let count = batch.len() as f64;
            for eval in evals {
                let eval = eval?;
                mean_loss += eval.loss / count;
                for (acc, t) in mean_terms.iter_mut().zip(eval.terms) {
                    *acc += t / count;
                }
                match &mut mean_grads {
                    None => {
                        let mut grads = eval.grads;
                        for g in &mut grads {
                            for v in g.iter_mut() {
                                *v /= count;
                            }
                        }
                        mean_grads = Some(grads);
                    }
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&eval.grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y / count;
                            }
                        }
                    }
                }
            }
            let grads = mean_grads.expect("non-empty batch");
            adam_step(&mut model.params, &grads, &mut adam)?;
            epoch_loss += mean_loss;
            for (acc, t) in epoch_terms.iter_mut().zip(mean_terms) {
                *acc += t;
            }
            n_batches += 1;
        }
        epoch_loss /= n_batches as f64;
        for t in &mut epoch_terms {
            *t /= n_batches as f64;
        }

        let val_evals = par::map_collect(val_samples, |s| {
            eval_sample(
                model,
                s,
                &datasets.val_atf,
                &datasets.grid,
                &config.weights,
                kernel.as_ref(),
                None,
                false,
            )
        });
        let mut val_loss = 0.0;
        for eval in val_evals {
            val_loss += eval?.loss / val_samples.len() as f64;
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params.clone();
        }
        history.push(HistoryRow {
            epoch,
            train_loss: epoch_loss,
            val_loss,
            l1: epoch_terms[0],
            l2: epoch_terms[1],
            l3: epoch_terms[2],
            l4: epoch_terms[3],
        });
    }
    model.params = best_params;
    Ok(history)
}

/// Validation loss of the current parameters (used by external checks).
pub fn validation_loss(
    model: &SannModel,
    config: &TrainConfig,
    datasets: &Datasets,
    samples: &[TrainingSample],
) -> Result<f64> {
    let kernel = if config.weights.gamma != 0.0 {
        Some(make_compactness_kernel(
            model.config.freq.n_fft,
            BAND_LO_HZ,
            BAND_HI_HZ,
            model.config.freq.sample_rate as f64,
        )?)
    } else {
        None
    };
    let mut total = 0.0;
    for s in samples {
        let eval = eval_sample(
            model,
            s,
            &datasets.val_atf,
            &datasets.grid,
            &config.weights,
            kernel.as_ref(),
            None,
            false,
        )?;
        total += eval.loss / samples.len() as f64;
    }
    Ok(total)
}
