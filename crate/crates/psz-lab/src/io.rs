//! Binary file formats for ATF tensors and filter sets, plus CSV/JSON export
//! of metric maps and loss histories. All binary fields are little-endian.

use crate::acoustics::{AtfTensor, Condition, FrequencyGrid, RoomConfig};
use crate::classic::FilterSet;
use crate::error::{PszError, Result};
use crate::eval::{MetricKind, MetricMap};
use num_complex::Complex64;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const ATF_MAGIC: &[u8; 7] = b"PSZATF1";
const FLT_MAGIC: &[u8; 7] = b"PSZFLT1";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_triples(r: &mut impl Read, n: usize) -> Result<Vec<[f64; 3]>> {
    (0..n)
        .map(|_| Ok([read_f64(r)?, read_f64(r)?, read_f64(r)?]))
        .collect()
}

/// Writes an ATF tensor: magic, scalar header, receiver then speaker
/// coordinates, then interleaved (re, im) values point-major.
pub fn save_atf(atf: &AtfTensor, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ATF_MAGIC)?;
    write_u32(&mut w, atf.freq.sample_rate)?;
    write_u32(&mut w, atf.freq.n_fft as u32)?;
    write_u32(&mut w, atf.freq.bin_lo as u32)?;
    write_u32(&mut w, atf.freq.bin_hi as u32)?;
    write_u32(&mut w, atf.n_points as u32)?;
    write_u32(&mut w, atf.n_speakers as u32)?;
    w.write_all(&[atf.condition.tag()])?;
    for p in atf.receiver_positions.iter().chain(&atf.speaker_positions) {
        for &c in p {
            write_f64(&mut w, c)?;
        }
    }
    for z in &atf.values {
        write_f64(&mut w, z.re)?;
        write_f64(&mut w, z.im)?;
    }
    Ok(())
}

/// Reads a tensor written by [`save_atf`]. Room parameters are not part of
/// the format, so a room tag loads with zeroed room metadata.
pub fn load_atf(path: &Path) -> Result<AtfTensor> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != ATF_MAGIC {
        return Err(PszError::Format("bad ATF magic".into()));
    }
    let sample_rate = read_u32(&mut r)?;
    let n_fft = read_u32(&mut r)? as usize;
    let bin_lo = read_u32(&mut r)? as usize;
    let bin_hi = read_u32(&mut r)? as usize;
    let n_points = read_u32(&mut r)? as usize;
    let n_speakers = read_u32(&mut r)? as usize;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let condition = match tag[0] {
        0 => Condition::Anechoic,
        1 => Condition::Room(RoomConfig {
            lx: 0.0,
            ly: 0.0,
            lz: 0.0,
            rt60: 0.0,
            array_origin: [0.0; 3],
            seed: 0,
        }),
        2 => Condition::PseudoMeasured,
        t => return Err(PszError::Format(format!("unknown condition tag {t}"))),
    };
    let freq = FrequencyGrid::new(sample_rate, n_fft, bin_lo, bin_hi)?;
    let receiver_positions = read_triples(&mut r, n_points)?;
    let speaker_positions = read_triples(&mut r, n_speakers)?;
    let n_values = n_points * n_speakers * freq.n_bins();
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        values.push(Complex64::new(re, im));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(PszError::Format("ATF file has trailing bytes".into()));
    }
    Ok(AtfTensor {
        values,
        n_points,
        n_speakers,
        freq,
        receiver_positions,
        speaker_positions,
        condition,
    })
}

/// Writes a filter set with its frequency grid and speaker coordinates:
/// magic, L, bin_lo, bin_hi, sample_rate, n_fft, speaker coords, then
/// interleaved (re, im) gains speaker-major.
pub fn save_filters(
    filters: &FilterSet,
    freq: &FrequencyGrid,
    speaker_positions: &[[f64; 3]],
    path: &Path,
) -> Result<()> {
    if filters.n_speakers != speaker_positions.len() || filters.n_bins != freq.n_bins() {
        return Err(PszError::Structure("filter metadata mismatch".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(FLT_MAGIC)?;
    write_u32(&mut w, filters.n_speakers as u32)?;
    write_u32(&mut w, freq.bin_lo as u32)?;
    write_u32(&mut w, freq.bin_hi as u32)?;
    write_u32(&mut w, freq.sample_rate)?;
    write_u32(&mut w, freq.n_fft as u32)?;
    for p in speaker_positions {
        for &c in p {
            write_f64(&mut w, c)?;
        }
    }
    for z in &filters.gains {
        write_f64(&mut w, z.re)?;
        write_f64(&mut w, z.im)?;
    }
    Ok(())
}

pub fn load_filters(path: &Path) -> Result<(FilterSet, FrequencyGrid, Vec<[f64; 3]>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != FLT_MAGIC {
        return Err(PszError::Format("bad filter magic".into()));
    }
    let n_speakers = read_u32(&mut r)? as usize;
    let bin_lo = read_u32(&mut r)? as usize;
    let bin_hi = read_u32(&mut r)? as usize;
    let sample_rate = read_u32(&mut r)?;
    let n_fft = read_u32(&mut r)? as usize;
    let freq = FrequencyGrid::new(sample_rate, n_fft, bin_lo, bin_hi)?;
    let speaker_positions = read_triples(&mut r, n_speakers)?;
    let n_bins = freq.n_bins();
    let mut gains = Vec::with_capacity(n_speakers * n_bins);
    for _ in 0..n_speakers * n_bins {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        gains.push(Complex64::new(re, im));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(PszError::Format("filter file has trailing bytes".into()));
    }
    Ok((FilterSet { gains, n_speakers, n_bins }, freq, speaker_positions))
}

fn metric_name(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::Izi => "izi",
        MetricKind::Ipi => "ipi",
        MetricKind::Nmse => "nmse",
    }
}

/// Exports a metric map as CSV (x_m, y_m, value_db, valid) plus a JSON
/// sidecar `<path>.meta.json` holding the fixed zone, metric, and an
/// optional config description.
pub fn save_metric_map(map: &MetricMap, config_desc: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x_m,y_m,value_db,valid")?;
    for ((&(x, y), &v), &ok) in map.centers.iter().zip(&map.values).zip(&map.valid) {
        writeln!(w, "{x},{y},{v},{}", if ok { 1 } else { 0 })?;
    }
    let meta = serde_json::json!({
        "metric": metric_name(map.metric),
        "fixed_zone": map.fixed_zone,
        "frequency_reduced": map.frequency_reduced,
        "config": config_desc,
    });
    let sidecar = path.with_extension("meta.json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

/// One row of the training history CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

pub fn save_history(rows: &[HistoryRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss,l1,l2,l3,l4")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.l1, r.l2, r.l3, r.l4
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Zone;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_atf(rng: &mut impl Rng) -> AtfTensor {
        let freq = FrequencyGrid::new(48_000, 1024, 3, 26).unwrap();
        let (n_points, n_speakers) = (4, 3);
        let n = n_points * n_speakers * freq.n_bins();
        AtfTensor {
            values: (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
            n_points,
            n_speakers,
            freq,
            receiver_positions: (0..n_points)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), 1.2])
                .collect(),
            speaker_positions: (0..n_speakers)
                .map(|_| [rng.gen_range(-0.7..0.7), 0.0, 1.2])
                .collect(),
            condition: Condition::Anechoic,
        }
    }

    #[test]
    fn atf_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let atf = random_atf(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pszatf");
        save_atf(&atf, &path).unwrap();
        let loaded = load_atf(&path).unwrap();
        assert_eq!(atf, loaded);
    }

    #[test]
    fn atf_rejects_bad_magic_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let atf = random_atf(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pszatf");
        save_atf(&atf, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        std::fs::write(&path, &bad).unwrap();
        assert!(load_atf(&path).is_err());
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_atf(&path).is_err());
    }

    #[test]
    fn filters_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let freq = FrequencyGrid::new(48_000, 1024, 3, 26).unwrap();
        let n_speakers = 5;
        let mut filters = FilterSet::zeros(n_speakers, freq.n_bins());
        for z in &mut filters.gains {
            *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let coords: Vec<[f64; 3]> =
            (0..n_speakers).map(|l| [l as f64 * 0.2 - 0.4, 0.0, 1.2]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pszflt");
        save_filters(&filters, &freq, &coords, &path).unwrap();
        let (loaded, lfreq, lcoords) = load_filters(&path).unwrap();
        assert_eq!(filters, loaded);
        assert_eq!(freq, lfreq);
        assert_eq!(coords, lcoords);
    }

    #[test]
    fn metric_map_csv_and_sidecar() {
        let map = MetricMap {
            metric: MetricKind::Izi,
            fixed_zone: Zone::new((-0.5, 1.0), 0.1),
            centers: vec![(0.0, 1.0), (0.5, 1.5)],
            values: vec![12.5, f64::NAN],
            valid: vec![true, false],
            frequency_reduced: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        save_metric_map(&map, "test", &path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x_m,y_m,value_db,valid");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",1"));
        assert!(lines[2].ends_with(",0"));
        let meta: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("map.meta.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(meta["metric"], "izi");
    }

    #[test]
    fn history_csv_layout() {
        let rows = vec![HistoryRow {
            epoch: 0,
            train_loss: 1.5,
            val_loss: 1.7,
            l1: 0.5,
            l2: 0.6,
            l3: 0.0,
            l4: 0.4,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        save_history(&rows, &path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "epoch,train_loss,val_loss,l1,l2,l3,l4");
        assert!(csv.lines().nth(1).unwrap().starts_with("0,1.5,1.7"));
    }
}
