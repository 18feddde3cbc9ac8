//! Command-line interface: dataset simulation, training, inference, metric
//! maps, method comparison, timing benchmark, and a gradient self-check.
//!
//! Exit codes: 0 ok, 2 configuration or IO error, 3 domain error (geometry,
//! out-of-range queries), 4 numerical failure.

use crate::acoustics::{
    default_max_order, sample_room_config, simulate_anechoic, simulate_room, AtfTensor,
    FrequencyGrid, SpeakerArray, SPEED_OF_SOUND,
};
use crate::autodiff::Graph;
use crate::classic::{design_classic, design_classic_seq, Method, DEFAULT_REG_FACTOR};
use crate::error::{PszError, Result};
use crate::eval::{
    bench_timing, ipi, izi, nmse_per_bin, spatial_map, MapRequest, MetricKind,
};
use crate::geometry::{
    make_grid, select_control_points, RenderingArea, SamplingGrid, Zone, ZonePair,
};
use crate::io::{load_atf, save_atf, save_filters, save_history, save_metric_map};
use crate::linalg::CMat;
use crate::nnloss::{make_compactness_kernel, split_filters, LossInputs, LossWeights};
use crate::par;
use crate::sann::{
    assemble_full_spectrum, checkpoint_load, checkpoint_save, to_impulse_response, SannConfig,
    SannModel,
};
use crate::train::{
    build_datasets, flatten_target, target_pressure, train, ConditionSpec, TrainConfig,
    BAND_HI_HZ, BAND_LO_HZ,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "psz-lab", version, about = "Personal sound zone filter design lab")]
pub struct Cli {
    /// Cap the worker thread count (falls back to PSZ_LAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ATF datasets over the rendering grid.
    Simulate(SimulateArgs),
    /// Train the coordinate-to-filter network.
    Train(TrainArgs),
    /// Generate filters from a checkpoint for one zone pair.
    Infer(InferArgs),
    /// Sweep a metric over moving zone centers.
    EvalMap(EvalMapArgs),
    /// Per-frequency metric comparison: network vs the classic designs.
    Compare(CompareArgs),
    /// Median per-query timing: network inference vs closed-form design.
    Bench(BenchArgs),
    /// Finite-difference check of the training gradients (reduced size).
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum Preset {
    /// 8192-point grid, band bins 18..=256 (239 bins).
    Paper,
    /// 1024-point grid, band bins 3..=26 (24 bins).
    Desk,
}

impl Preset {
    fn freq(self) -> FrequencyGrid {
        match self {
            Preset::Paper => FrequencyGrid::paper_grid(),
            Preset::Desk => FrequencyGrid::desk_grid(),
        }
    }
}

fn parse_xy(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y but got {s:?}"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((x, y))
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Grid spacing in meters.
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    grid_res: f64,
    /// Number of reverberant rooms (0 = anechoic only).
    #[arg(long, default_value_t = 0)]
    rooms: usize,
    /// Target reverberation time for the rooms, seconds.
    #[arg(long, default_value_t = 0.24)]
    rt60: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Bright zone center as "x,y" in meters.
    #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
    bz: (f64, f64),
    /// Dark zone center as "x,y" in meters.
    #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
    dz: (f64, f64),
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Filter output file.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV export of the centered impulse responses.
    #[arg(long)]
    ir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum MetricArg {
    Izi,
    Ipi,
    Nmse,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Izi => MetricKind::Izi,
            MetricArg::Ipi => MetricKind::Ipi,
            MetricArg::Nmse => MetricKind::Nmse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum MethodArg {
    Pm,
    Am,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pm => Method::Pm,
            MethodArg::Am => Method::Am,
        }
    }
}

#[derive(Args, Serialize)]
struct EvalMapArgs {
    /// Evaluation ATF dataset.
    #[arg(long)]
    atf: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Fixed zone center as "x,y".
    #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
    fixed: (f64, f64),
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Moving-center spacing in meters.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Network checkpoint (omit to use a classic design).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Classic design to sweep when no checkpoint is given.
    #[arg(long, value_enum, default_value_t = MethodArg::Pm)]
    method: MethodArg,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    atf: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
    bz: (f64, f64),
    #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
    dz: (f64, f64),
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    atf: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    /// Parameter coordinates probed by finite differences.
    #[arg(long, default_value_t = 40)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("PSZ_LAB_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        par::limit_threads(n.max(1));
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::EvalMap(a) => cmd_eval_map(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_snapshot<S: Serialize>(dir: &Path, name: &str, config: &S) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.grid_res <= 0.0 {
        return Err(PszError::Config("grid resolution must be positive".into()));
    }
    if args.rooms > 0 && args.rt60 <= 0.0 {
        return Err(PszError::Config("rt60 must be positive".into()));
    }
    let area = RenderingArea::default_area();
    let speakers = SpeakerArray::default_linear();
    let freq = args.preset.freq();
    let grid = make_grid(area, args.grid_res)?;
    std::fs::create_dir_all(&args.out)?;
    write_snapshot(&args.out, "simulate.config.json", args)?;
    let anechoic = simulate_anechoic(&grid, &speakers, &freq, SPEED_OF_SOUND)?;
    save_atf(&anechoic, &args.out.join("anechoic.pszatf"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.rooms {
        let room = sample_room_config(&mut rng, args.rt60, &speakers, &area);
        let order = default_max_order(&room, SPEED_OF_SOUND);
        let atf =
            simulate_room(&room, &grid, &speakers, &freq, order, freq.n_fft, SPEED_OF_SOUND)?;
        save_atf(&atf, &args.out.join(format!("room_{i:03}.pszatf")))?;
    }
    Ok(())
}

/// Everything a training run needs; JSON fields default per `Default`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub preset: Preset2,
    pub hidden: Vec<usize>,
    pub encoding_order: usize,
    pub train: TrainConfig,
}

/// Serde mirror of the CLI preset (kept separate so run configs stay plain
/// lowercase JSON).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset2 {
    Paper,
    Desk,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            preset: Preset2::Desk,
            hidden: vec![64, 64, 64],
            encoding_order: 3,
            train: TrainConfig {
                n_train: 400,
                n_val: 100,
                batch_size: 32,
                epochs: 40,
                lr: 1e-3,
                weights: LossWeights::default(),
                augmentation: None,
                condition: ConditionSpec::Anechoic,
                zone_radius: 0.1,
                grid_resolution: 0.1,
                seed: 0,
            },
        }
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run: TrainRunConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| PszError::Config(format!("bad run config: {e}")))?
        }
        None => TrainRunConfig::default(),
    };
    run.train.validate()?;
    let area = RenderingArea::default_area();
    let speakers = SpeakerArray::default_linear();
    let freq = match run.preset {
        Preset2::Paper => FrequencyGrid::paper_grid(),
        Preset2::Desk => FrequencyGrid::desk_grid(),
    };
    std::fs::create_dir_all(&args.out)?;
    write_snapshot(&args.out, "train.config.json", &run)?;
    let datasets = build_datasets(&run.train, &area, &speakers, &freq)?;
    let sann_config = SannConfig {
        encoding_order: run.encoding_order,
        hidden: run.hidden.clone(),
        area,
        delta: 0.05,
        freq,
        speaker_positions: speakers.positions.clone(),
    };
    let mut model =
        SannModel::init(sann_config, &mut ChaCha8Rng::seed_from_u64(run.train.seed));
    let history = train(&mut model, &run.train, &datasets)?;
    checkpoint_save(&model, &args.out.join("model.pszn"))?;
    save_history(&history, &args.out.join("history.csv"))?;
    println!(
        "trained {} epochs; best validation loss {:.6}",
        history.len(),
        history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let model = checkpoint_load(&args.checkpoint)?;
    let pair = ZonePair {
        bz: Zone::new(args.bz, args.radius),
        dz: Zone::new(args.dz, args.radius),
    };
    let filters = model.forward(&pair)?;
    save_filters(
        &filters,
        &model.config.freq,
        &model.config.speaker_positions,
        &args.out,
    )?;
    if let Some(ir_path) = &args.ir {
        let freq = &model.config.freq;
        let kernel = make_compactness_kernel(
            freq.n_fft,
            BAND_LO_HZ,
            BAND_HI_HZ,
            freq.sample_rate as f64,
        )?;
        let mut irs = Vec::with_capacity(filters.n_speakers);
        for l in 0..filters.n_speakers {
            let band: Vec<num_complex::Complex64> =
                (0..filters.n_bins).map(|b| filters.gain(l, b)).collect();
            let spectrum = assemble_full_spectrum(&band, &kernel.bandpass_half, freq)?;
            irs.push(to_impulse_response(&spectrum, freq.n_fft / 2));
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(ir_path)?);
        let header: Vec<String> =
            (0..filters.n_speakers).map(|l| format!("speaker_{l}")).collect();
        writeln!(w, "sample,{}", header.join(","))?;
        for n in 0..freq.n_fft {
            let row: Vec<String> = irs.iter().map(|ir| format!("{}", ir[n])).collect();
            writeln!(w, "{n},{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Rebuilds the sampling grid an ATF tensor was simulated on.
fn grid_from_atf(atf: &AtfTensor) -> Result<SamplingGrid> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let tol = 1e-9;
    for p in &atf.receiver_positions {
        if !xs.iter().any(|&x| (x - p[0]).abs() < tol) {
            xs.push(p[0]);
        }
        if !ys.iter().any(|&y| (y - p[1]).abs() < tol) {
            ys.push(p[1]);
        }
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    ys.sort_by(|a, b| a.total_cmp(b));
    if xs.len() < 2 || ys.len() < 2 {
        return Err(PszError::Format("ATF tensor does not cover a 2-D grid".into()));
    }
    let res = xs[1] - xs[0];
    let area = RenderingArea::new(xs[0], *xs.last().unwrap(), ys[0], *ys.last().unwrap())?;
    let grid = make_grid(area, res)?;
    if grid.len() != atf.n_points {
        return Err(PszError::Format("ATF receiver layout is not a regular grid".into()));
    }
    for (g, r) in grid.points.iter().zip(&atf.receiver_positions) {
        if (g.0 - r[0]).abs() > 1e-6 || (g.1 - r[1]).abs() > 1e-6 {
            return Err(PszError::Format("ATF receiver layout is not row-major".into()));
        }
    }
    Ok(grid)
}

fn classic_design_fn<'a>(
    method: Method,
    atf: &'a AtfTensor,
    grid: &'a SamplingGrid,
) -> impl Fn(&ZonePair) -> Result<crate::classic::FilterSet> + Sync + 'a {
    move |pair: &ZonePair| {
        let bz_pts = select_control_points(grid, &pair.bz)?;
        let dz_pts = select_control_points(grid, &pair.dz)?;
        let targets = target_pressure(&pair.bz, &bz_pts, atf)?;
        let flat = flatten_target(&targets);
        design_classic(method, atf, pair, &bz_pts, &dz_pts, &flat, DEFAULT_REG_FACTOR)
    }
}

fn cmd_eval_map(args: &EvalMapArgs) -> Result<()> {
    let atf = load_atf(&args.atf)?;
    let grid = grid_from_atf(&atf)?;
    let centers: Vec<(f64, f64)> =
        make_grid(grid.area, args.step)?.points.clone();
    let model = match &args.checkpoint {
        Some(path) => Some(checkpoint_load(path)?),
        None => None,
    };
    let nn_design = model.as_ref().map(|m| move |pair: &ZonePair| m.forward(pair));
    let classic = classic_design_fn(args.method.into(), &atf, &grid);
    let design: &crate::eval::DesignFn = match &nn_design {
        Some(f) => f,
        None => &classic,
    };
    let target_fn = |pair: &ZonePair, pts: &[usize]| target_pressure(&pair.bz, pts, &atf);
    let req = MapRequest {
        metric: args.metric.into(),
        fixed_zone: Zone::new(args.fixed, args.radius),
        moving_centers: centers,
        moving_radius: args.radius,
        grid: &grid,
        eval_atf: &atf,
        design,
        target: Some(&target_fn),
    };
    let map = spatial_map(&req)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let desc = serde_json::to_string(args).unwrap();
    save_metric_map(&map, &desc, &args.out)?;
    Ok(())
}

fn per_bin_matrices(atf: &AtfTensor, pts: &[usize]) -> Vec<CMat> {
    (0..atf.n_bins()).map(|b| atf.bin_matrix(pts, b)).collect()
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let atf = load_atf(&args.atf)?;
    let grid = grid_from_atf(&atf)?;
    let model = checkpoint_load(&args.checkpoint)?;
    let pair = ZonePair {
        bz: Zone::new(args.bz, args.radius),
        dz: Zone::new(args.dz, args.radius),
    };
    let swapped = ZonePair { bz: pair.dz, dz: pair.bz };
    let bz_pts = select_control_points(&grid, &pair.bz)?;
    let dz_pts = select_control_points(&grid, &pair.dz)?;
    if bz_pts.is_empty() || dz_pts.is_empty() {
        return Err(PszError::DegenerateZone("zone covers no grid points".into()));
    }
    let h_b = per_bin_matrices(&atf, &bz_pts);
    let h_d = per_bin_matrices(&atf, &dz_pts);
    let targets = target_pressure(&pair.bz, &bz_pts, &atf)?;

    let nn = |p: &ZonePair| model.forward(p);
    let pm = classic_design_fn(Method::Pm, &atf, &grid);
    let am = classic_design_fn(Method::Am, &atf, &grid);
    let methods: Vec<(&str, Box<dyn Fn(&ZonePair) -> Result<crate::classic::FilterSet>>)> = vec![
        ("sann", Box::new(nn)),
        ("pm", Box::new(&pm)),
        ("am", Box::new(&am)),
    ];
    let mut columns = Vec::new();
    for (name, design) in &methods {
        let g_own = design(&pair)?;
        let g_other = design(&swapped)?;
        let izi_v = izi(&h_b, &h_d, &g_own)?;
        let ipi_v = ipi(&h_b, &g_own, &g_other)?;
        let nmse_v = nmse_per_bin(&g_own, &h_b, &targets)?;
        columns.push((name.to_string(), izi_v.values, ipi_v.values, nmse_v.values));
    }
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    let names: Vec<String> = columns
        .iter()
        .flat_map(|(n, _, _, _)| {
            ["izi", "ipi", "nmse"].iter().map(move |m| format!("{m}_{n}"))
        })
        .collect();
    writeln!(w, "freq_hz,{}", names.join(","))?;
    let freqs = atf.freq.bin_freqs();
    for (bin, f) in freqs.iter().enumerate() {
        let mut row = vec![format!("{f}")];
        for (_, izi_v, ipi_v, nmse_v) in &columns {
            row.push(format!("{}", izi_v[bin]));
            row.push(format!("{}", ipi_v[bin]));
            row.push(format!("{}", nmse_v[bin]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let atf = load_atf(&args.atf)?;
    let grid = grid_from_atf(&atf)?;
    let model = checkpoint_load(&args.checkpoint)?;
    let offsets = [(-0.5, 1.0, 0.5, 1.0), (-0.3, 1.4, 0.4, 0.8), (0.2, 1.7, -0.6, 1.2)];
    let pairs: Vec<ZonePair> = offsets
        .iter()
        .map(|&(bx, by, dx, dy)| ZonePair {
            bz: Zone::new((bx, by), 0.1),
            dz: Zone::new((dx, dy), 0.1),
        })
        .collect();
    let nn = |p: &ZonePair| model.forward(p);
    let pm_grid = &grid;
    let pm_atf = &atf;
    let pm = move |pair: &ZonePair| {
        let bz_pts = select_control_points(pm_grid, &pair.bz)?;
        let dz_pts = select_control_points(pm_grid, &pair.dz)?;
        let targets = target_pressure(&pair.bz, &bz_pts, pm_atf)?;
        let flat = flatten_target(&targets);
        design_classic_seq(
            Method::Pm,
            pm_atf,
            pair,
            &bz_pts,
            &dz_pts,
            &flat,
            DEFAULT_REG_FACTOR,
        )
    };
    let warmup = (args.repetitions / 5).max(3);
    let report =
        bench_timing(&nn, &pm, &pairs, args.repetitions, warmup, model.param_count())?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).unwrap())?;
    println!(
        "network {:.3} ms, closed-form design {:.3} ms, speedup {:.1}x",
        report.nn_ms, report.reference_ms, report.ratio
    );
    Ok(())
}

/// Builds the reduced training pipeline and compares analytic gradients of a
/// random probe set against central finite differences.
fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let freq = FrequencyGrid::new(48_000, 256, 1, 8)?;
    let area = RenderingArea::default_area();
    let speakers = SpeakerArray::default_linear();
    let grid = make_grid(area, 0.25)?;
    let atf = simulate_anechoic(&grid, &speakers, &freq, SPEED_OF_SOUND)?;
    let config = SannConfig {
        encoding_order: 2,
        hidden: vec![16, 16, 16],
        area,
        delta: 0.05,
        freq: freq.clone(),
        speaker_positions: speakers.positions.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let model = SannModel::init(config, &mut rng);
    let pair = ZonePair {
        bz: Zone::new((-0.5, 1.0), 0.15),
        dz: Zone::new((0.5, 1.5), 0.15),
    };
    let bz_pts = select_control_points(&grid, &pair.bz)?;
    let dz_pts = select_control_points(&grid, &pair.dz)?;
    let h_b = per_bin_matrices(&atf, &bz_pts);
    let h_d = per_bin_matrices(&atf, &dz_pts);
    let targets = target_pressure(&pair.bz, &bz_pts, &atf)?;
    let kernel =
        make_compactness_kernel(freq.n_fft, BAND_LO_HZ, BAND_HI_HZ, freq.sample_rate as f64)?;
    let weights = LossWeights::default();

    let loss_of = |m: &SannModel| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let coords =
            crate::geometry::normalize_coords(&pair, &m.config.area, m.config.delta)?;
        let fwd = m.forward_graph(&mut g, &coords)?;
        let view = split_filters(&mut g, fwd.output, m.config.n_speakers(), freq.n_bins())?;
        let inputs = LossInputs {
            h_b_bins: &h_b,
            h_d_bins: &h_d,
            targets: &targets,
            weights,
            kernel: Some(&kernel),
            freq: &freq,
            overlap: false,
            dz_is_measured: false,
        };
        let total = crate::nnloss::total_loss(&mut g, &view, &inputs)?;
        let value = g.value(total)[0];
        g.backward(total)?;
        let grads = fwd.params.iter().map(|&id| g.grad(id).to_vec()).collect();
        Ok((value, grads))
    };

    let (_, grads) = loss_of(&model)?;
    let value_at = |m: &SannModel| -> Result<f64> {
        let (v, _) = loss_of(m)?;
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..args.probes {
        let layer = rng.gen_range(0..model.params.len());
        let idx = rng.gen_range(0..model.params[layer].len());
        let mut plus = model.clone();
        plus.params[layer][idx] += h;
        let mut minus = model.clone();
        minus.params[layer][idx] -= h;
        let numeric = (value_at(&plus)? - value_at(&minus)?) / (2.0 * h);
        let analytic = grads[layer][idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        if rel >= 1e-4 {
            return Err(PszError::Numerical(format!(
                "gradient mismatch at layer {layer} index {idx}: \
                 analytic {analytic:.6e}, numeric {numeric:.6e}, rel err {rel:.3e}"
            )));
        }
    }
    println!("gradcheck passed: {} probes, worst rel err {worst:.3e}", args.probes);
    Ok(())
}
