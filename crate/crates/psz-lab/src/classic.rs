//! Baseline filter design: closed-form pressure matching and the iterative
//! amplitude matching variant, solved independently per frequency bin.

use crate::acoustics::AtfTensor;
use crate::error::{PszError, Result};
use crate::geometry::ZonePair;
use crate::linalg::{cholesky_solve, sigma_max, CMat};
use crate::par;
use num_complex::Complex64;

/// Complex loudspeaker gains per speaker per frequency bin (speaker-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet {
    pub gains: Vec<Complex64>,
    pub n_speakers: usize,
    pub n_bins: usize,
}

impl FilterSet {
    pub fn zeros(n_speakers: usize, n_bins: usize) -> Self {
        Self { gains: vec![Complex64::new(0.0, 0.0); n_speakers * n_bins], n_speakers, n_bins }
    }

    #[inline]
    pub fn gain(&self, speaker: usize, bin: usize) -> Complex64 {
        self.gains[speaker * self.n_bins + bin]
    }

    pub fn set_gain(&mut self, speaker: usize, bin: usize, g: Complex64) {
        self.gains[speaker * self.n_bins + bin] = g;
    }

    /// Gains of one bin across speakers.
    pub fn bin_gains(&self, bin: usize) -> Vec<Complex64> {
        (0..self.n_speakers).map(|l| self.gain(l, bin)).collect()
    }
}

/// Single-bin design problem: bright/dark ATF blocks, bright-zone target,
/// and the Tikhonov weight.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub h_b: CMat,
    pub h_d: CMat,
    /// Complex target pressure in the bright zone (PM) or its magnitude
    /// with zero phase (AM seeds from this too).
    pub target_b: Vec<Complex64>,
    pub lambda: f64,
}

impl DesignProblem {
    pub fn new(h_b: CMat, h_d: CMat, target_b: Vec<Complex64>, lambda: f64) -> Result<Self> {
        if h_b.cols != h_d.cols {
            return Err(PszError::Structure(format!(
                "column mismatch: H_B has {} speakers, H_D has {}",
                h_b.cols, h_d.cols
            )));
        }
        if target_b.len() != h_b.rows {
            return Err(PszError::Structure("target length does not match H_B rows".into()));
        }
        if lambda < 0.0 {
            return Err(PszError::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { h_b, h_d, target_b, lambda })
    }

    fn stacked(&self) -> (CMat, Vec<Complex64>) {
        let h = self.h_b.vstack(&self.h_d);
        let mut target = self.target_b.clone();
        target.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(self.h_d.rows));
        (h, target)
    }
}

/// Closed-form Tikhonov solution g = (H^H H + lambda I)^-1 H^H p_T with the
/// dark-zone target fixed to zero.
pub fn pm_solve(problem: &DesignProblem) -> Result<Vec<Complex64>> {
    let (h, target) = problem.stacked();
    pm_solve_raw(&h, &target, problem.lambda)
}

fn pm_solve_raw(h: &CMat, target: &[Complex64], lambda: f64) -> Result<Vec<Complex64>> {
    let mut a = h.gram();
    for i in 0..a.rows {
        a[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let rhs = h.herm_matvec(target);
    cholesky_solve(&a, &rhs)
}

fn am_cost(h: &CMat, target_mag: &[f64], g: &[Complex64], lambda: f64) -> f64 {
    let p = h.matvec(g);
    let fit: f64 = p
        .iter()
        .zip(target_mag)
        .map(|(pi, &t)| (t - pi.norm()).powi(2))
        .sum();
    let reg: f64 = g.iter().map(|z| z.norm_sqr()).sum();
    fit + lambda * reg
}

/// Result of the majorization-minimization amplitude matching loop.
#[derive(Debug, Clone)]
pub struct AmSolution {
    pub gains: Vec<Complex64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Amplitude matching by fixed-point phase updates: the target phase is set
/// to the phase of the current prediction and the PM closed form is re-solved.
/// The cost is non-increasing across iterations.
pub fn am_solve(
    problem: &DesignProblem,
    max_iters: usize,
    tol: f64,
) -> Result<AmSolution> {
    if max_iters < 1 {
        return Err(PszError::Config("max_iters must be >= 1".into()));
    }
    let (h, stacked_target) = problem.stacked();
    let target_mag: Vec<f64> = stacked_target.iter().map(|z| z.norm()).collect();

    // initialize from the PM solution: every later iterate then has an
    // amplitude cost no worse than PM's
    let mut g = pm_solve_raw(&h, &stacked_target, problem.lambda)?;
    let mut cost = am_cost(&h, &target_mag, &g, problem.lambda);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        let p = h.matvec(&g);
        let target: Vec<Complex64> = p
            .iter()
            .zip(&target_mag)
            .map(|(pi, &m)| {
                // phase(0) := 0 by convention
                if pi.norm() == 0.0 {
                    Complex64::new(m, 0.0)
                } else {
                    Complex64::from_polar(m, pi.arg())
                }
            })
            .collect();
        let g_next = pm_solve_raw(&h, &target, problem.lambda)?;
        let next_cost = am_cost(&h, &target_mag, &g_next, problem.lambda);
        let rel_change = (cost - next_cost).abs() / cost.max(f64::MIN_POSITIVE);
        if next_cost <= cost {
            g = g_next;
            cost = next_cost;
        }
        if rel_change < tol {
            converged = true;
            break;
        }
    }
    Ok(AmSolution { gains: g, cost, iterations, converged })
}

/// Frequency-dependent regularization: factor times the largest singular
/// value of H, via power iteration.
pub fn reg_lambda(h: &CMat, factor: f64) -> f64 {
    factor * sigma_max(h, 1e-8, 100_000)
}

/// Default regularization factor (lambda = 0.05 sigma_max).
pub const DEFAULT_REG_FACTOR: f64 = 0.05;

/// Filter design method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pm,
    Am,
}

/// Per-bin AM loop defaults.
pub const AM_MAX_ITERS: usize = 200;
pub const AM_TOL: f64 = 1e-8;

/// Designs one bin's problem from an ATF tensor and zone control points.
pub fn assemble_problem(
    atf: &AtfTensor,
    bz_points: &[usize],
    dz_points: &[usize],
    target_mag: &[f64],
    bin: usize,
    reg_factor: f64,
) -> Result<DesignProblem> {
    let h_b = atf.bin_matrix(bz_points, bin);
    let h_d = atf.bin_matrix(dz_points, bin);
    let h = h_b.vstack(&h_d);
    let lambda = reg_lambda(&h, reg_factor);
    let target: Vec<Complex64> = target_mag.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    DesignProblem::new(h_b, h_d, target, lambda)
}

/// Full-band classic design: PM or AM per bin over the zone pair.
///
/// `target` holds bright-zone magnitude targets, point-major per bin
/// (target[m][n] flattened as m * n_bins + n).
pub fn design_classic(
    method: Method,
    atf: &AtfTensor,
    pair: &ZonePair,
    bz_points: &[usize],
    dz_points: &[usize],
    target: &[f64],
    reg_factor: f64,
) -> Result<FilterSet> {
    let _ = pair;
    if bz_points.is_empty() || dz_points.is_empty() {
        return Err(PszError::DegenerateZone("empty control point set".into()));
    }
    let n_bins = atf.n_bins();
    let per_bin = par::map_indexed(n_bins, |bin| -> Result<Vec<Complex64>> {
        let target_mag: Vec<f64> = (0..bz_points.len())
            .map(|m| target[m * n_bins + bin])
            .collect();
        let problem = assemble_problem(atf, bz_points, dz_points, &target_mag, bin, reg_factor)?;
        match method {
            Method::Pm => pm_solve(&problem),
            Method::Am => Ok(am_solve(&problem, AM_MAX_ITERS, AM_TOL)?.gains),
        }
    });
    let mut filters = FilterSet::zeros(atf.n_speakers, n_bins);
    for (bin, g) in per_bin.into_iter().enumerate() {
        for (l, z) in g?.into_iter().enumerate() {
            filters.set_gain(l, bin, z);
        }
    }
    Ok(filters)
}

/// Sequential variant of [`design_classic`], kept for benchmarks.
pub fn design_classic_seq(
    method: Method,
    atf: &AtfTensor,
    pair: &ZonePair,
    bz_points: &[usize],
    dz_points: &[usize],
    target: &[f64],
    reg_factor: f64,
) -> Result<FilterSet> {
    let _ = pair;
    if bz_points.is_empty() || dz_points.is_empty() {
        return Err(PszError::DegenerateZone("empty control point set".into()));
    }
    let n_bins = atf.n_bins();
    let per_bin = par::map_indexed_seq(n_bins, |bin| -> Result<Vec<Complex64>> {
        let target_mag: Vec<f64> = (0..bz_points.len())
            .map(|m| target[m * n_bins + bin])
            .collect();
        let problem = assemble_problem(atf, bz_points, dz_points, &target_mag, bin, reg_factor)?;
        match method {
            Method::Pm => pm_solve(&problem),
            Method::Am => Ok(am_solve(&problem, AM_MAX_ITERS, AM_TOL)?.gains),
        }
    });
    let mut filters = FilterSet::zeros(atf.n_speakers, n_bins);
    for (bin, g) in per_bin.into_iter().enumerate() {
        for (l, z) in g?.into_iter().enumerate() {
            filters.set_gain(l, bin, z);
        }
    }
    Ok(filters)
}
