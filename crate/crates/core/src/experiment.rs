//! End-to-end pipelines: relax the film, drive it with random section
//! schedules, train the readout and evaluate it, over electrode layouts,
//! compartments and drive frequencies.
//!
//! Every pipeline simulates once per schedule while recording the union of
//! all electrode cells it needs, then slices the features per layout. The
//! envelope of a cell depends on that cell's trace only, so slicing gives
//! the same features as a dedicated run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;

use crate::config::ExperimentConfig;
use crate::drive::{Label, Section, SectionSchedule};
use crate::error::{Error, Result};
use crate::geometry::{initial_state, MaterialMap, SpinField};
use crate::io::{self, aggregate, Aggregate, Heatmap, RunRecord};
use crate::layout::{make_layout, Arrangement, ElectrodeSet};
use crate::llg::{relax, run, SnapshotFrame};
use crate::readout::{evaluate, train_readout, EnvelopeOptions, EnvelopeRecorder, Evaluation, FeatureMatrix, ReadoutModel, TrainOptions};

/// Version string written next to every report.
pub const VERSION: &str = concat!("swrc ", env!("CARGO_PKG_VERSION"));

const LAYOUT_STREAM: u64 = 1_000_000;

/// SplitMix64 of `(master, stream)`: independent seeds from one master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Schedule seeds of repeat `r`: (train, test).
pub fn schedule_seeds(master: u64, repeat: usize) -> (u64, u64) {
    (derive_seed(master, 2 * repeat as u64), derive_seed(master, 2 * repeat as u64 + 1))
}

/// Seed of the random layout used in repeat `r`.
pub fn layout_seed(master: u64, repeat: usize) -> u64 {
    derive_seed(master, LAYOUT_STREAM + repeat as u64)
}

/// Pearson correlation coefficient; NaN if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// The film at rest, ready to be driven.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub map: MaterialMap,
    pub rest: SpinField,
    pub relax_steps: usize,
    pub relaxed: bool,
}

impl Reservoir {
    /// Builds the film and relaxes it from the uniform +z state.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let map = cfg.build_map()?;
        let r = &cfg.experiment.relax;
        let out = relax(&initial_state(&map), &map, &cfg.integrator, r.alpha_min, r.tolerance, r.max_steps)?;
        info!("relaxed in {} steps (max |ds/dt| {:.3e} 1/s)", out.steps, out.max_rate);
        Ok(Reservoir { map, rest: out.state, relax_steps: out.steps, relaxed: out.converged })
    }

    /// Rest-state `s_x` at `cells`: the dc offsets removed before the envelope.
    pub fn offsets(&self, cells: &[usize]) -> Vec<f64> {
        cells.iter().map(|&c| self.rest.s[c][0]).collect()
    }

    /// Drives the film from rest through `schedule` and returns envelope
    /// features at `cells`.
    pub fn features(
        &self,
        cfg: &ExperimentConfig,
        schedule: &SectionSchedule,
        cells: &[usize],
        window_steps: usize,
        stride: usize,
    ) -> Result<FeatureMatrix> {
        let opts = EnvelopeOptions { window_steps, method: cfg.readout.method, stride };
        let mut rec = EnvelopeRecorder::new(cells.to_vec(), self.offsets(cells), schedule, opts)?;
        let mut state = self.rest.clone();
        let drive = schedule.drive(self.map.params.ku_high, self.map.params.ku_low);
        run(&mut state, &self.map, schedule, &drive, cells, &cfg.integrator, &[], &mut rec, &mut |_| Ok(()))?;
        Ok(rec.finish())
    }
}

/// Random SIN/SQUARE schedule with the configured section length and drive.
pub fn random_schedule(cfg: &ExperimentConfig, n_sections: usize, seed: u64) -> Result<SectionSchedule> {
    let s = &cfg.schedule;
    SectionSchedule::random(n_sections, s.section_len_steps, cfg.integrator.macro_step, s.period(), seed)
}

fn union_cells(layouts: &[ElectrodeSet], nx: usize) -> Vec<usize> {
    layouts.iter().flat_map(|l| l.cells(nx)).collect::<BTreeSet<_>>().into_iter().collect()
}

fn stride_for(cfg: &ExperimentConfig, layouts: &[ElectrodeSet]) -> usize {
    if layouts.iter().any(|l| l.arrangement == Arrangement::Full) {
        cfg.readout.full_feature_stride
    } else {
        cfg.readout.feature_stride
    }
}

/// A trained readout and its scores.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: ReadoutModel,
    pub train: Evaluation,
    pub test: Evaluation,
    /// Readout output on every test column.
    pub y_test: Vec<f64>,
}

/// Trains on `train` and scores both sets.
pub fn fit_and_test(cfg: &ExperimentConfig, train: &FeatureMatrix, test: &FeatureMatrix) -> Result<Fitted> {
    let opts = TrainOptions { sv_threshold: cfg.readout.sv_threshold, ridge: cfg.readout.ridge, ..Default::default() };
    let model = train_readout(train, &opts)?;
    let score = |x: &FeatureMatrix| -> Result<(Evaluation, Vec<f64>)> {
        let y = model.predict(x)?;
        Ok((evaluate(&y, &x.step_labels, &x.warmup_mask, &x.step_in_section, cfg.readout.transient_steps)?, y))
    };
    let (train_eval, _) = score(train)?;
    let (test, y_test) = score(test)?;
    Ok(Fitted { model, train: train_eval, test, y_test })
}

/// Steps from each class switch in the test run until the output first
/// lands on the new class's side of 0.5; `None` if it never does within the
/// section.
pub fn switch_delays(y_hat: &[f64], x: &FeatureMatrix) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    let n = x.n_steps();
    let mut i = 1;
    while i < n {
        if x.step_in_section[i] < x.step_in_section[i - 1] && x.step_labels[i] != x.step_labels[i - 1] {
            let label = x.step_labels[i];
            let mut j = i;
            let mut hit = None;
            while j < n && (j == i || x.step_in_section[j] > x.step_in_section[j - 1]) {
                if crate::readout::is_correct(y_hat[j], label) {
                    hit = Some(x.steps[j] - x.steps[i]);
                    break;
                }
                j += 1;
            }
            out.push(hit);
        }
        i += 1;
    }
    out
}

/// Scores for one layout; `frequency_ghz` and `waveform` describe the test.
#[allow(clippy::too_many_arguments)]
fn record(
    layout: &ElectrodeSet,
    frequency_ghz: f64,
    waveform: &str,
    repeat: usize,
    seeds: (u64, u64),
    train: &Evaluation,
    test: &Evaluation,
) -> RunRecord {
    RunRecord {
        arrangement: layout.arrangement.to_string(),
        n_o: layout.positions.len(),
        frequency_ghz,
        waveform: waveform.into(),
        repeat,
        train_seed: seeds.0,
        test_seed: seeds.1,
        layout_seed: layout.seed,
        rmse: test.rmse,
        correct_rate: test.correct_rate,
        correct_rate_steady: test.correct_rate_steady,
        train_rmse: train.rmse,
        train_correct_rate: train.correct_rate,
    }
}

// ---------------------------------------------------------------------------
// reports

/// Records of one experiment with their summary and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub config_hash: String,
    pub version: String,
}

impl ExperimentReport {
    pub fn find(&self, arrangement: &str, n_o: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.arrangement == arrangement && a.n_o == n_o && a.waveform == "all")
    }
}

/// Collects records and, with an output directory, rewrites `records.csv`
/// after every run so that finished runs survive a later failure.
struct Recorder<'a> {
    dir: Option<&'a Path>,
    cfg: &'a ExperimentConfig,
    records: Vec<RunRecord>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a ExperimentConfig, dir: Option<&'a Path>) -> Result<Self> {
        if let Some(d) = dir {
            write_resolved(d, cfg)?;
        }
        Ok(Recorder { dir, cfg, records: Vec::new() })
    }

    fn push(&mut self, rec: RunRecord) -> Result<()> {
        info!(
            "{} n_o={} f={} GHz {} repeat {}: rmse {:.4} rate {:.4}",
            rec.arrangement, rec.n_o, rec.frequency_ghz, rec.waveform, rec.repeat, rec.rmse, rec.correct_rate
        );
        self.records.push(rec);
        if let Some(d) = self.dir {
            io::write_records(&d.join("records.csv"), &self.records)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<ExperimentReport> {
        let aggregates = aggregate(&self.records);
        if let Some(d) = self.dir {
            io::write_records(&d.join("records.csv"), &self.records)?;
            io::write_aggregates(&d.join("aggregates.csv"), &aggregates)?;
        }
        Ok(ExperimentReport {
            records: self.records,
            aggregates,
            config_hash: self.cfg.hash(),
            version: VERSION.into(),
        })
    }
}

/// Writes `config.resolved`: the full configuration preceded by its hash and
/// the program version as comments.
pub fn write_resolved(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = format!("# config hash: {}\n# version: {VERSION}\n\n{}", cfg.hash(), cfg.resolved());
    let path = dir.join("config.resolved");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// pipelines

/// One classification run: layout, trained model, features and scores.
#[derive(Debug, Clone)]
pub struct Classification {
    pub record: RunRecord,
    pub layout: ElectrodeSet,
    pub fitted: Fitted,
    pub train_features: FeatureMatrix,
    pub test_features: FeatureMatrix,
    pub schedules: (SectionSchedule, SectionSchedule),
}

/// Trains on a random training schedule and tests on a schedule with a
/// different seed, both driven from the rest state.
pub fn run_classification(
    cfg: &ExperimentConfig,
    reservoir: &Reservoir,
    layout: &ElectrodeSet,
    repeat: usize,
) -> Result<Classification> {
    let seeds = schedule_seeds(cfg.experiment.seed, repeat);
    let train_s = random_schedule(cfg, cfg.schedule.n_train_sections, seeds.0)?;
    let test_s = random_schedule(cfg, cfg.schedule.n_test_sections, seeds.1)?;
    let cells = layout.cells(reservoir.map.grid.nx);
    let window = cfg.window_steps(cfg.schedule.frequency);
    let stride = stride_for(cfg, std::slice::from_ref(layout));
    let train_x = reservoir.features(cfg, &train_s, &cells, window, stride)?;
    let test_x = reservoir.features(cfg, &test_s, &cells, window, stride)?;
    let fitted = fit_and_test(cfg, &train_x, &test_x)?;
    let record = record(layout, cfg.schedule.frequency / 1e9, "all", repeat, seeds, &fitted.train, &fitted.test);
    Ok(Classification {
        record,
        layout: layout.clone(),
        fitted,
        train_features: train_x,
        test_features: test_x,
        schedules: (train_s, test_s),
    })
}

/// The `classify` layout of the configuration.
pub fn classify_layout(cfg: &ExperimentConfig, map: &MaterialMap) -> Result<ElectrodeSet> {
    let e = &cfg.experiment;
    Ok(make_layout(map, e.classify_arrangement, e.classify_n_o, layout_seed(e.seed, 0))?)
}

/// Pearson correlation between `|W(r)|` and the time-mean training envelope.
pub fn weight_texture_correlation(c: &Classification) -> f64 {
    let w: Vec<f64> = c.fitted.model.w_out.iter().map(|v| v.abs()).collect();
    pearson(&w, &c.train_features.row_means())
}

/// Runs the configured classification and, with `out`, writes records,
/// weights (CSV and PPM), electrodes and both section lists.
pub fn classify(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(Classification, ExperimentReport)> {
    let reservoir = Reservoir::prepare(cfg)?;
    let layout = classify_layout(cfg, &reservoir.map)?;
    let mut rec = Recorder::new(cfg, out)?;
    let c = run_classification(cfg, &reservoir, &layout, 0)?;
    if let Some(d) = out {
        let nx = reservoir.map.grid.nx;
        io::write_electrodes(&d.join("electrodes.csv"), &layout)?;
        render_weight_map(&c.fitted.model, nx, &d.join("weights.csv"), &d.join("weights.ppm"))?;
        write_text(&d.join("train_sections.txt"), &c.schedules.0.to_section_list())?;
        write_text(&d.join("test_sections.txt"), &c.schedules.1.to_section_list())?;
    }
    rec.push(c.record.clone())?;
    Ok((c, rec.finish()?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains and tests every layout of `layouts_for(repeat)` on shared
/// simulations, repeat by repeat.
fn sweep_layouts(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    mut layouts_for: impl FnMut(&MaterialMap, usize) -> Result<Vec<ElectrodeSet>>,
) -> Result<ExperimentReport> {
    let reservoir = Reservoir::prepare(cfg)?;
    let nx = reservoir.map.grid.nx;
    let mut rec = Recorder::new(cfg, out)?;
    let window = cfg.window_steps(cfg.schedule.frequency);
    for repeat in 0..cfg.experiment.repeats {
        let layouts = layouts_for(&reservoir.map, repeat)?;
        if let Some(d) = out {
            for l in &layouts {
                let name = format!("electrodes/{}_{}_r{repeat}.csv", l.arrangement, l.positions.len());
                io::write_electrodes(&d.join(name), l)?;
            }
        }
        let cells = union_cells(&layouts, nx);
        let stride = stride_for(cfg, &layouts);
        let seeds = schedule_seeds(cfg.experiment.seed, repeat);
        let train_s = random_schedule(cfg, cfg.schedule.n_train_sections, seeds.0)?;
        let test_s = random_schedule(cfg, cfg.schedule.n_test_sections, seeds.1)?;
        info!("repeat {repeat}: simulating {} probe cells for {} layouts", cells.len(), layouts.len());
        let train_all = reservoir.features(cfg, &train_s, &cells, window, stride)?;
        let test_all = reservoir.features(cfg, &test_s, &cells, window, stride)?;
        for l in &layouts {
            let lc = l.cells(nx);
            let fitted = fit_and_test(cfg, &train_all.select(&lc)?, &test_all.select(&lc)?)?;
            rec.push(record(l, cfg.schedule.frequency / 1e9, "all", repeat, seeds, &fitted.train, &fitted.test))?;
        }
    }
    rec.finish()
}

/// Electrode-count sweep: every configured arrangement and `n_o`, repeated
/// with fresh schedules (and fresh random layouts).
pub fn sweep_electrode_count(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let e = &cfg.experiment;
    if e.n_o.is_empty() {
        return Err(crate::ConfigError::Invalid { key: "n_o".into(), reason: "empty electrode-count list".into() }.into());
    }
    sweep_layouts(cfg, out, |map, repeat| {
        let mut v = Vec::new();
        for &arr in &e.arrangements {
            for &n in &e.n_o {
                v.push(make_layout(map, arr, n, layout_seed(e.seed, repeat))?);
            }
        }
        Ok(v)
    })
}

/// Compartment sweep: a grid lattice inside each configured compartment for
/// each configured `n_o`.
pub fn sweep_compartments(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let e = &cfg.experiment;
    sweep_layouts(cfg, out, |map, _| {
        let mut v = Vec::new();
        for &k in &e.compartments {
            for &n in &e.compartment_n_o {
                v.push(make_layout(map, Arrangement::Compartment(k as u8), n, 0)?);
            }
        }
        Ok(v)
    })
}

/// `sections` consecutive sections of one waveform at `frequency`.
pub fn waveform_schedule(cfg: &ExperimentConfig, frequency: f64, label: Label, sections: usize) -> Result<SectionSchedule> {
    let len = cfg.schedule.section_len_steps;
    SectionSchedule::from_sections(vec![Section { label, length_steps: len }; sections], cfg.integrator.macro_step, 1.0 / frequency)
}

/// Features of one SIN run and one SQUARE run at `frequency`, each started
/// from the relaxed film.
fn frequency_features(
    cfg: &ExperimentConfig,
    reservoir: &Reservoir,
    cells: &[usize],
    frequency: f64,
    stride: usize,
) -> Result<FeatureMatrix> {
    let mut parts = Vec::with_capacity(2);
    for label in [Label::Sin, Label::Square] {
        let s = waveform_schedule(cfg, frequency, label, cfg.experiment.freq_sections)?;
        parts.push(reservoir.features(cfg, &s, cells, cfg.window_steps(frequency), stride)?);
    }
    FeatureMatrix::concat(&parts)
}

/// Frequency generalization: one readout trained on features from every
/// training frequency, then tested at each test frequency. Each frequency
/// and waveform is its own run from the relaxed film, so the data carry no
/// section-order cue. Records carry the RMSE per waveform (`sin`, `square`)
/// and over both (`all`).
pub fn frequency_generalization(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let e = &cfg.experiment;
    let reservoir = Reservoir::prepare(cfg)?;
    let layout = classify_layout(cfg, &reservoir.map)?;
    let cells = layout.cells(reservoir.map.grid.nx);
    let stride = stride_for(cfg, std::slice::from_ref(&layout));
    let mut rec = Recorder::new(cfg, out)?;
    if let Some(d) = out {
        io::write_electrodes(&d.join("electrodes.csv"), &layout)?;
    }
    let parts = e
        .train_freqs
        .iter()
        .map(|&f| frequency_features(cfg, &reservoir, &cells, f, stride))
        .collect::<Result<Vec<_>>>()?;
    let train = FeatureMatrix::concat(&parts)?;
    let opts = TrainOptions { sv_threshold: cfg.readout.sv_threshold, ridge: cfg.readout.ridge, ..Default::default() };
    let model = train_readout(&train, &opts)?;
    let train_eval = {
        let y = model.predict(&train)?;
        evaluate(&y, &train.step_labels, &train.warmup_mask, &train.step_in_section, cfg.readout.transient_steps)?
    };
    // runs are deterministic, so one pass serves every repeat
    let mut results = Vec::new();
    for &f in &e.test_freqs {
        let x = frequency_features(cfg, &reservoir, &cells, f, stride)?;
        let y = model.predict(&x)?;
        for waveform in ["all", "sin", "square"] {
            let mask: Vec<bool> = (0..x.n_steps())
                .map(|n| x.warmup_mask[n] || (waveform != "all" && x.step_labels[n].as_str() != waveform.to_uppercase()))
                .collect();
            results.push((f, waveform, evaluate(&y, &x.step_labels, &mask, &x.step_in_section, cfg.readout.transient_steps)?));
        }
    }
    for repeat in 0..e.repeats {
        let seeds = schedule_seeds(e.seed, repeat);
        for (f, waveform, ev) in &results {
            rec.push(record(&layout, f / 1e9, waveform, repeat, seeds, &train_eval, ev))?;
        }
    }
    rec.finish()
}

/// Snapshots of `s_x` over the configured steps of the first training
/// schedule, starting from rest.
pub fn simulate_snapshots(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<SnapshotFrame>> {
    let reservoir = Reservoir::prepare(cfg)?;
    let (train_seed, _) = schedule_seeds(cfg.experiment.seed, 0);
    let full = random_schedule(cfg, cfg.schedule.n_train_sections, train_seed)?;
    let last = cfg.experiment.snapshot_steps.iter().copied().max().unwrap_or(0);
    // only as much of the schedule as the last frame needs
    let mut sections = Vec::new();
    let mut left = last.max(1);
    for s in &full.sections {
        if left == 0 {
            break;
        }
        let take = s.length_steps.min(left);
        sections.push(Section { label: s.label, length_steps: take });
        left -= take;
    }
    if left > 0 {
        return Err(Error::Domain(format!("snapshot step {last} is past the end of the schedule")));
    }
    let schedule = SectionSchedule::from_sections(sections, full.t0, full.period)?;
    let mut state = reservoir.rest.clone();
    let drive = schedule.drive(reservoir.map.params.ku_high, reservoir.map.params.ku_low);
    let mut frames = Vec::new();
    let mut sink = crate::llg::SpinTrace::new(Vec::new(), cfg.integrator.macro_step);
    run(
        &mut state,
        &reservoir.map,
        &schedule,
        &drive,
        &[],
        &cfg.integrator,
        &cfg.experiment.snapshot_steps,
        &mut sink,
        &mut |f| {
            if let Some(d) = out {
                render_snapshot(&f, &snapshot_path(d, f.frame_index, "spnx"), &snapshot_path(d, f.frame_index, "ppm"))?;
            }
            frames.push(f);
            Ok(())
        },
    )?;
    if let Some(d) = out {
        write_resolved(d, cfg)?;
    }
    Ok(frames)
}

/// `dir/snapshots/frame_NNNNNN.ext`.
pub fn snapshot_path(dir: &Path, frame_index: u32, ext: &str) -> PathBuf {
    dir.join("snapshots").join(format!("frame_{frame_index:06}.{ext}"))
}

/// Weights as CSV plus a diverging heatmap over the electrodes' bounding box.
pub fn render_weight_map(model: &ReadoutModel, nx: usize, csv: &Path, ppm: &Path) -> Result<()> {
    io::write_weights(csv, model, nx)?;
    let rows = io::read_weights(csv)?;
    Heatmap::from_weights(&rows)?.write_ppm(ppm)
}

/// Frame as binary snapshot plus a diverging heatmap of the whole grid.
pub fn render_snapshot(frame: &SnapshotFrame, bin: &Path, ppm: &Path) -> Result<()> {
    io::write_snapshot(bin, frame)?;
    Heatmap::from_frame(frame).write_ppm(ppm)
}
