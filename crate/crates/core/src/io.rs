//! On-disk formats: CSV tables, binary `s_x` snapshots and PPM heatmaps.
//!
//! Floats in CSV are printed with 9 significant digits, enough to recover
//! any `f32` exactly and `f64` values to 1e-9 relative.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, Rgb, RgbImage};
use serde::Deserialize;

use crate::drive::Label;
use crate::error::{Error, Result};
use crate::layout::ElectrodeSet;
use crate::llg::SnapshotFrame;
use crate::readout::{FeatureMatrix, ReadoutModel};

/// Magic bytes of a snapshot frame.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SPNX";

/// `v` with 9 significant digits, shortest form (`0`, `1.5e-3`, `-2e0`).
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let mantissa = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
    format!("{mantissa}e{exp}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn flush<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::io(path, e.into_error()))?.flush().map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::format(path, format!("`{s}` is not a number")))
}

// ---------------------------------------------------------------------------
// electrodes and weights

/// One `ix,iy` row per electrode.
pub fn write_electrodes(path: &Path, set: &ElectrodeSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["ix", "iy"])?;
    for &(x, y) in &set.positions {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    flush(path, w)
}

pub fn read_electrodes(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One readout weight with its cell.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct WeightRow {
    pub cell: usize,
    pub ix: usize,
    pub iy: usize,
    pub weight: f64,
}

/// `cell,ix,iy,weight` per electrode of `model`.
pub fn write_weights(path: &Path, model: &ReadoutModel, nx: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell", "ix", "iy", "weight"])?;
    for (&cell, &wt) in model.electrode_ids.iter().zip(&model.w_out) {
        w.write_record([cell.to_string(), (cell % nx).to_string(), (cell / nx).to_string(), fmt_g9(wt)])?;
    }
    flush(path, w)
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ---------------------------------------------------------------------------
// feature matrices

/// One row per feature column: `step,label,step_in_section,warmup` followed
/// by one column per electrode, headed `c<cell>`.
pub fn write_features(path: &Path, x: &FeatureMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["step".to_string(), "label".into(), "step_in_section".into(), "warmup".into()];
    header.extend(x.electrode_ids.iter().map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for n in 0..x.n_steps() {
        let mut row = vec![
            x.steps[n].to_string(),
            x.step_labels[n].to_string(),
            x.step_in_section[n].to_string(),
            (x.warmup_mask[n] as u8).to_string(),
        ];
        row.extend(x.column(n).iter().map(|&v| fmt_g9(v)));
        w.write_record(&row)?;
    }
    flush(path, w)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "step" {
        return Err(Error::format(path, "expected a `step,label,step_in_section,warmup,...` header"));
    }
    let ids = header
        .iter()
        .skip(4)
        .map(|h| h.strip_prefix('c').and_then(|c| c.parse().ok()).ok_or_else(|| Error::format(path, format!("bad column `{h}`"))))
        .collect::<Result<Vec<usize>>>()?;
    let mut x = FeatureMatrix::empty(ids);
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("`{s}` is not a count")));
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::format(path, "ragged row"));
        }
        x.steps.push(int(&rec[0])?);
        x.step_labels.push(rec[1].parse::<Label>()?);
        x.step_in_section.push(int(&rec[2])?);
        x.warmup_mask.push(int(&rec[3])? != 0);
        for v in rec.iter().skip(4) {
            x.values.push(parse_f64(path, v)?);
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// snapshots

/// Encodes one frame: `SPNX`, u32 nx, u32 ny, u32 frame index, then `nx·ny`
/// f32 values, all little-endian.
pub fn encode_snapshot(frame: &SnapshotFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * frame.sx.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(frame.nx as u32).to_le_bytes());
    out.extend_from_slice(&(frame.ny as u32).to_le_bytes());
    out.extend_from_slice(&frame.frame_index.to_le_bytes());
    for v in &frame.sx {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes every frame in `bytes`, which may hold several back to back.
pub fn decode_snapshots(bytes: &[u8]) -> std::result::Result<Vec<SnapshotFrame>, String> {
    let u32_at = |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let mut frames = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 16 || &rest[..4] != SNAPSHOT_MAGIC {
            return Err("missing SPNX header".into());
        }
        let nx = u32_at(rest, 4) as usize;
        let ny = u32_at(rest, 8) as usize;
        let frame_index = u32_at(rest, 12);
        let len = nx.checked_mul(ny).and_then(|n| n.checked_mul(4)).ok_or("frame size overflows")?;
        let body = rest.get(16..16 + len).ok_or_else(|| format!("truncated frame {frame_index}"))?;
        let sx = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        frames.push(SnapshotFrame { nx, ny, frame_index, sx });
        rest = &rest[16 + len..];
    }
    Ok(frames)
}

pub fn write_snapshot(path: &Path, frame: &SnapshotFrame) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&encode_snapshot(frame)).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_snapshots(path: &Path) -> Result<Vec<SnapshotFrame>> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode_snapshots(&bytes).map_err(|reason| Error::format(path, reason))
}

/// `s_x` of a frame as CSV, one grid row per line, `iy = 0` first.
pub fn write_frame_csv(path: &Path, frame: &SnapshotFrame) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for row in frame.sx.chunks(frame.nx.max(1)) {
        w.write_record(row.iter().map(|&v| fmt_g9(v as f64)))?;
    }
    flush(path, w)
}

// ---------------------------------------------------------------------------
// heatmaps

/// Row-major signed scalar field, `iy = 0` first.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Places `weights` on the bounding box of their cells; other cells are 0.
    pub fn from_weights(rows: &[WeightRow]) -> Result<Self> {
        let (Some(x0), Some(y0)) = (rows.iter().map(|r| r.ix).min(), rows.iter().map(|r| r.iy).min()) else {
            return Err(Error::Domain("no weights to render".into()));
        };
        let x1 = rows.iter().map(|r| r.ix).max().unwrap_or(x0);
        let y1 = rows.iter().map(|r| r.iy).max().unwrap_or(y0);
        let (width, height) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut values = vec![0.0; width * height];
        for r in rows {
            values[(r.iy - y0) * width + (r.ix - x0)] = r.weight;
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn from_frame(frame: &SnapshotFrame) -> Self {
        Heatmap { width: frame.nx, height: frame.ny, values: frame.sx.iter().map(|&v| v as f64).collect() }
    }

    /// 99th-percentile absolute value (nearest rank).
    pub fn scale(&self) -> f64 {
        let mut a: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        if a.is_empty() {
            return 0.0;
        }
        a.sort_by(f64::total_cmp);
        let rank = ((0.99 * a.len() as f64).ceil() as usize).clamp(1, a.len());
        a[rank - 1]
    }

    /// Diverging colour map: red positive, blue negative, white zero,
    /// saturating at ±[`scale`](Self::scale). The top image row is the
    /// largest `iy`.
    pub fn to_image(&self) -> Result<RgbImage> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at pixel {i}")));
        }
        let scale = self.scale();
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for iy in 0..self.height {
            for ix in 0..self.width {
                let v = self.values[iy * self.width + ix];
                let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
                let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                let px = if t >= 0.0 { Rgb([255, fade, fade]) } else { Rgb([fade, fade, 255]) };
                img.put_pixel(ix as u32, (self.height - 1 - iy) as u32, px);
            }
        }
        Ok(img)
    }

    /// Writes a binary PPM (P6, 8 bits per channel).
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let img = self.to_image()?;
        let mut f = create(path)?;
        PnmEncoder::new(&mut f).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary)).write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::Rgb8,
        )?;
        f.flush().map_err(|e| Error::io(path, e))
    }
}

/// Width and height from a PPM header.
pub fn ppm_dimensions(path: &Path) -> Result<(usize, usize)> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]);
    let mut tokens = text.split_ascii_whitespace();
    if tokens.next() != Some("P6") {
        return Err(Error::format(path, "not a binary PPM"));
    }
    let mut dim = || tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::format(path, "bad PPM header"));
    Ok((dim()?, dim()?))
}

// ---------------------------------------------------------------------------
// experiment reports

/// One trained-and-tested readout.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RunRecord {
    /// Layout name (`grid`, `compartment3`, ...).
    pub arrangement: String,
    pub n_o: usize,
    /// Test drive frequency, GHz.
    pub frequency_ghz: f64,
    /// `sin`, `square`, or `all`.
    pub waveform: String,
    pub repeat: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    /// Layout seed for random layouts, empty otherwise.
    pub layout_seed: Option<u64>,
    pub rmse: f64,
    pub correct_rate: f64,
    /// Correct rate without the first transient steps of each section.
    pub correct_rate_steady: f64,
    pub train_rmse: f64,
    pub train_correct_rate: f64,
}

impl RunRecord {
    fn key(&self) -> AggregateKey {
        AggregateKey {
            arrangement: self.arrangement.clone(),
            n_o: self.n_o,
            frequency_ghz: fmt_g9(self.frequency_ghz),
            waveform: self.waveform.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct AggregateKey {
    arrangement: String,
    n_o: usize,
    frequency_ghz: String,
    waveform: String,
}

/// Mean and sample standard deviation over the repeats of one setting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Aggregate {
    pub arrangement: String,
    pub n_o: usize,
    pub frequency_ghz: f64,
    pub waveform: String,
    pub runs: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub rate_mean: f64,
    pub rate_std: f64,
    pub steady_mean: f64,
    pub steady_std: f64,
}

/// Mean and sample standard deviation (n − 1) of the finite values; NaN mean
/// when there are none, zero spread for a single value.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by (arrangement, n_o, frequency, waveform), in that sort
/// order.
pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<AggregateKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.key()).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let (rmse_mean, rmse_std) = mean_std(g.iter().map(|r| r.rmse));
            let (rate_mean, rate_std) = mean_std(g.iter().map(|r| r.correct_rate));
            let (steady_mean, steady_std) = mean_std(g.iter().map(|r| r.correct_rate_steady));
            Aggregate {
                arrangement: g[0].arrangement.clone(),
                n_o: g[0].n_o,
                frequency_ghz: g[0].frequency_ghz,
                waveform: g[0].waveform.clone(),
                runs: g.len(),
                rmse_mean,
                rmse_std,
                rate_mean,
                rate_std,
                steady_mean,
                steady_std,
            }
        })
        .collect()
}

const RECORD_HEADER: [&str; 13] = [
    "arrangement",
    "n_o",
    "frequency_ghz",
    "waveform",
    "repeat",
    "train_seed",
    "test_seed",
    "layout_seed",
    "rmse",
    "correct_rate",
    "correct_rate_steady",
    "train_rmse",
    "train_correct_rate",
];

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.arrangement.clone(),
            r.n_o.to_string(),
            fmt_g9(r.frequency_ghz),
            r.waveform.clone(),
            r.repeat.to_string(),
            r.train_seed.to_string(),
            r.test_seed.to_string(),
            r.layout_seed.map(|s| s.to_string()).unwrap_or_default(),
            fmt_g9(r.rmse),
            fmt_g9(r.correct_rate),
            fmt_g9(r.correct_rate_steady),
            fmt_g9(r.train_rmse),
            fmt_g9(r.train_correct_rate),
        ])?;
    }
    flush(path, w)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_aggregates(path: &Path, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "arrangement",
        "n_o",
        "frequency_ghz",
        "waveform",
        "runs",
        "rmse_mean",
        "rmse_std",
        "rate_mean",
        "rate_std",
        "steady_mean",
        "steady_std",
    ])?;
    for a in aggregates {
        w.write_record([
            a.arrangement.clone(),
            a.n_o.to_string(),
            fmt_g9(a.frequency_ghz),
            a.waveform.clone(),
            a.runs.to_string(),
            fmt_g9(a.rmse_mean),
            fmt_g9(a.rmse_std),
            fmt_g9(a.rate_mean),
            fmt_g9(a.rate_std),
            fmt_g9(a.steady_mean),
            fmt_g9(a.steady_std),
        ])?;
    }
    flush(path, w)
}

pub fn read_aggregates(path: &Path) -> Result<Vec<Aggregate>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Agreement up to the 9-digit rounding of the stored records; `scale` is the
/// magnitude of the values an aggregate was computed from.
fn close(a: f64, b: f64, scale: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-7 * a.abs().max(b.abs()).max(scale.abs()) + 1e-12
}

/// Reads `records.csv` and `aggregates.csv` from `dir` and checks that the
/// aggregates follow from the records.
pub fn load_report(dir: &Path) -> Result<(Vec<RunRecord>, Vec<Aggregate>)> {
    let records = read_records(&dir.join("records.csv"))?;
    let path = dir.join("aggregates.csv");
    let stored = read_aggregates(&path)?;
    let fresh = aggregate(&records);
    if fresh.len() != stored.len() {
        return Err(Error::format(&path, format!("{} groups, records give {}", stored.len(), fresh.len())));
    }
    for (s, f) in stored.iter().zip(&fresh) {
        let same = s.arrangement == f.arrangement
            && s.n_o == f.n_o
            && s.waveform == f.waveform
            && s.runs == f.runs
            && close(s.frequency_ghz, f.frequency_ghz, 0.0)
            && close(s.rmse_mean, f.rmse_mean, 0.0)
            && close(s.rmse_std, f.rmse_std, f.rmse_mean)
            && close(s.rate_mean, f.rate_mean, 0.0)
            && close(s.rate_std, f.rate_std, f.rate_mean)
            && close(s.steady_mean, f.steady_mean, 0.0)
            && close(s.steady_std, f.steady_std, f.steady_mean);
        if !same {
            return Err(Error::format(&path, format!("row {} {} does not match the records", s.arrangement, s.n_o)));
        }
    }
    Ok((records, stored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Arrangement;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn g9_format() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(1.0), "1e0");
        assert_eq!(fmt_g9(-0.00125), "-1.25e-3");
        assert_eq!(fmt_g9(123456789012.0), "1.23456789e11");
        assert_eq!(fmt_g9(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn g9_round_trips_f32(v in proptest::num::f32::NORMAL) {
            let back: f64 = fmt_g9(v as f64).parse().unwrap();
            prop_assert_eq!(back as f32, v);
        }

        #[test]
        fn g9_keeps_nine_digits(v in -1e12f64..1e12) {
            let back: f64 = fmt_g9(v).parse().unwrap();
            prop_assert!((back - v).abs() <= 5e-9 * v.abs());
        }

        #[test]
        fn snapshot_bytes_round_trip(nx in 1usize..9, ny in 1usize..9, idx in any::<u32>(), seed in any::<u64>()) {
            let mut x = seed;
            let sx: Vec<f32> = (0..nx * ny).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits((x >> 32) as u32)
            }).collect();
            let frame = SnapshotFrame { nx, ny, frame_index: idx, sx };
            let back = decode_snapshots(&encode_snapshot(&frame)).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(back[0].sx.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            frame.sx.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!((back[0].nx, back[0].ny, back[0].frame_index), (nx, ny, idx));
        }
    }

    #[test]
    fn snapshot_header_layout() {
        let frame = SnapshotFrame { nx: 3, ny: 2, frame_index: 7, sx: vec![0.5; 6] };
        let b = encode_snapshot(&frame);
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[..4], b"SPNX");
        assert_eq!(&b[4..16], &[3, 0, 0, 0, 2, 0, 0, 0, 7, 0, 0, 0]);
        assert_eq!(&b[16..20], &0.5f32.to_le_bytes());
        let dir = tmp();
        let p = dir.path().join("f.spnx");
        write_snapshot(&p, &frame).unwrap();
        assert_eq!(read_snapshots(&p).unwrap(), vec![frame]);
        assert!(decode_snapshots(&b[..30]).is_err());
        assert!(decode_snapshots(b"XXXX000000000000").is_err());
    }

    #[test]
    fn features_round_trip() {
        let mut x = FeatureMatrix::empty(vec![5, 9]);
        for n in 0..4 {
            x.steps.push(n);
            x.step_labels.push(if n < 2 { Label::Sin } else { Label::Square });
            x.step_in_section.push(n % 2);
            x.warmup_mask.push(n % 2 == 0);
            x.values.extend([0.1 * n as f64 + 1e-7, -(n as f64) / 3.0]);
        }
        let dir = tmp();
        let p = dir.path().join("x.csv");
        write_features(&p, &x).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.electrode_ids, x.electrode_ids);
        assert_eq!(back.steps, x.steps);
        assert_eq!(back.step_labels, x.step_labels);
        assert_eq!(back.step_in_section, x.step_in_section);
        assert_eq!(back.warmup_mask, x.warmup_mask);
        for (a, b) in back.values.iter().zip(&x.values) {
            assert!((a - b).abs() <= 5e-9 * b.abs());
        }
    }

    #[test]
    fn weights_and_electrodes_round_trip() {
        let model = ReadoutModel { w_out: vec![1.5, -2.25e-4, 0.0], electrode_ids: vec![3, 14, 25], clamp: (0.001, 0.999) };
        let dir = tmp();
        let p = dir.path().join("w.csv");
        write_weights(&p, &model, 11).unwrap();
        let rows = read_weights(&p).unwrap();
        assert_eq!(rows[1], WeightRow { cell: 14, ix: 3, iy: 1, weight: -2.25e-4 });
        let set = ElectrodeSet { positions: vec![(1, 2), (40, 3)], arrangement: Arrangement::Grid, seed: None, n_o: 2 };
        let q = dir.path().join("e.csv");
        write_electrodes(&q, &set).unwrap();
        assert_eq!(read_electrodes(&q).unwrap(), set.positions);
    }

    #[test]
    fn zero_field_renders_white() {
        let h = Heatmap { width: 4, height: 3, values: vec![0.0; 12] };
        let img = h.to_image().unwrap();
        assert!(img.pixels().all(|p| *p == Rgb([255, 255, 255])));
        let dir = tmp();
        let p = dir.path().join("z.ppm");
        h.write_ppm(&p).unwrap();
        assert_eq!(ppm_dimensions(&p).unwrap(), (4, 3));
    }

    #[test]
    fn diverging_colours_and_orientation() {
        // iy = 0 row: [+1, -1]; iy = 1 row: [0, 0.5]
        let h = Heatmap { width: 2, height: 2, values: vec![1.0, -1.0, 0.0, 0.5] };
        let img = h.to_image().unwrap();
        assert_eq!(*img.get_pixel(0, 1), Rgb([255, 0, 0]));
        assert_eq!(*img.get_pixel(1, 1), Rgb([0, 0, 255]));
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 255, 255]));
        assert_eq!(*img.get_pixel(1, 0), Rgb([255, 128, 128]));
    }

    #[test]
    fn scale_is_99th_percentile() {
        let mut values: Vec<f64> = (1..=200).map(|v| v as f64).collect();
        values[0] = -1e6;
        let h = Heatmap { width: 200, height: 1, values };
        assert_eq!(h.scale(), 199.0);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let h = Heatmap { width: 2, height: 1, values: vec![0.0, f64::NAN] };
        assert!(h.to_image().is_err());
    }

    #[test]
    fn weight_heatmap_covers_bounding_box() {
        let rows = [
            WeightRow { cell: 0, ix: 30, iy: 30, weight: 1.0 },
            WeightRow { cell: 0, ix: 189, iy: 189, weight: -1.0 },
        ];
        let h = Heatmap::from_weights(&rows).unwrap();
        assert_eq!((h.width, h.height), (160, 160));
        assert_eq!(h.values[159 * 160 + 159], -1.0);
    }

    fn record(arr: &str, n_o: usize, repeat: usize, rmse: f64, rate: f64) -> RunRecord {
        RunRecord {
            arrangement: arr.into(),
            n_o,
            frequency_ghz: 2.5,
            waveform: "all".into(),
            repeat,
            train_seed: 10 + repeat as u64,
            test_seed: 20 + repeat as u64,
            layout_seed: (arr == "random").then_some(7),
            rmse,
            correct_rate: rate,
            correct_rate_steady: if repeat == 0 { f64::NAN } else { rate },
            train_rmse: rmse / 2.0,
            train_correct_rate: 1.0,
        }
    }

    #[test]
    fn aggregates_use_sample_std() {
        let recs = vec![record("grid", 4, 0, 0.2, 0.8), record("grid", 4, 1, 0.4, 0.9), record("grid", 4, 2, 0.6, 1.0)];
        let a = aggregate(&recs);
        assert_eq!(a.len(), 1);
        assert!((a[0].rmse_mean - 0.4).abs() < 1e-15);
        assert!((a[0].rmse_std - 0.2).abs() < 1e-15);
        assert!((a[0].steady_mean - 0.95).abs() < 1e-15);
        assert_eq!(a[0].runs, 3);
        assert_eq!(mean_std([5.0]), (5.0, 0.0));
        assert!(mean_std([f64::NAN]).0.is_nan());
    }

    #[test]
    fn report_round_trip_and_load_check() {
        let recs = vec![
            record("random", 16, 0, 0.31, 0.7),
            record("grid", 4, 0, 0.2, 0.8),
            record("random", 16, 1, 0.29, 0.75),
            record("grid", 4, 1, 0.4, 0.9),
        ];
        let dir = tmp();
        write_records(&dir.path().join("records.csv"), &recs).unwrap();
        write_aggregates(&dir.path().join("aggregates.csv"), &aggregate(&recs)).unwrap();
        let (back, aggs) = load_report(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[1].layout_seed, None);
        assert_eq!(back[0].layout_seed, Some(7));
        assert!(back[1].correct_rate_steady.is_nan());
        assert_eq!(aggs[0].arrangement, "grid");
        assert_eq!(aggs[1].n_o, 16);

        let mut tampered = aggregate(&recs);
        tampered[0].rate_mean += 0.01;
        write_aggregates(&dir.path().join("aggregates.csv"), &tampered).unwrap();
        assert!(matches!(load_report(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn load_check_tolerates_record_rounding() {
        // tightly clustered values near 1: a small std recomputed from 9-digit
        // records can differ from the stored one past 1e-8 relative
        let recs: Vec<RunRecord> = (0..10)
            .map(|i| {
                let mut r = record("grid", 64, i, 0.2 + 1e-3 * i as f64 / 7.0, 0.99);
                r.correct_rate = 0.93 + 0.0213 * ((i * 37 % 11) as f64 / 11.0) + 1.3e-10 * i as f64;
                r.correct_rate_steady = 0.991 + 0.0061 * ((i * 5 % 7) as f64 / 7.0) + 3.7e-10 * i as f64;
                r
            })
            .collect();
        let dir = tmp();
        write_records(&dir.path().join("records.csv"), &recs).unwrap();
        write_aggregates(&dir.path().join("aggregates.csv"), &aggregate(&recs)).unwrap();
        load_report(dir.path()).unwrap();
    }
}
