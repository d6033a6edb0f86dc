//! Experiment configuration: profiles, the TOML config file and its resolved
//! echo.
//!
//! Every physical key carries its unit in the name (`cell_size_nm`,
//! `ms_ka_per_m`, ...). A profile supplies all defaults; keys present in the
//! file override them.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, Error, Result};
use crate::geometry::{build_geometry, GeometryParams, GridSpec, MaterialMap, MaterialParams};
use crate::layout::Arrangement;
use crate::llg::IntegratorConfig;
use crate::readout::EnvelopeMethod;

/// Named parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// 220 × 220 cells of 10 nm, 25 substeps, 15 training / 8 test sections.
    #[default]
    Paper,
    /// 110 × 110 cells of 20 nm, 8 substeps, 8 training / 4 test sections.
    Fast,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "fast" => Ok(Profile::Fast),
            other => Err(ConfigError::Invalid { key: "profile".into(), reason: format!("`{other}` is not paper or fast") }),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Fast => "fast",
        })
    }
}

/// Section schedules used for training and testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub n_train_sections: usize,
    pub n_test_sections: usize,
    pub section_len_steps: usize,
    /// Drive fundamental, Hz.
    pub frequency: f64,
}

impl ScheduleConfig {
    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    /// Envelope window in macro steps; 0 picks one drive period.
    pub window_steps: usize,
    pub method: EnvelopeMethod,
    pub ridge: f64,
    pub sv_threshold: f64,
    /// Steps after each section switch left out of the steady-state rate.
    pub transient_steps: usize,
    /// Keep every k-th feature column.
    pub feature_stride: usize,
    /// Column stride used instead when every readout cell is an electrode.
    pub full_feature_stride: usize,
}

/// Damped pre-run that brings the film to rest before any drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxConfig {
    pub alpha_min: f64,
    /// Stop once every `|ds/dt|` is below this, 1/s.
    pub tolerance: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    /// Arrangements of the electrode-count sweep.
    pub arrangements: Vec<Arrangement>,
    /// Electrode counts of the sweep.
    pub n_o: Vec<usize>,
    pub repeats: usize,
    /// Master seed; schedule and layout seeds derive from it.
    pub seed: u64,
    /// Macro steps at which `simulate` writes snapshots.
    pub snapshot_steps: Vec<usize>,
    /// Layout used by `classify`.
    pub classify_arrangement: Arrangement,
    pub classify_n_o: usize,
    pub compartments: Vec<usize>,
    pub compartment_n_o: Vec<usize>,
    /// Hz.
    pub train_freqs: Vec<f64>,
    /// Hz.
    pub test_freqs: Vec<f64>,
    /// Sections in each single-waveform run of the frequency study.
    pub freq_sections: usize,
    pub relax: RelaxConfig,
}

/// Everything needed to run any experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub grid: GridSpec,
    pub geometry: GeometryParams,
    pub material: MaterialParams,
    pub integrator: IntegratorConfig,
    pub schedule: ScheduleConfig,
    pub readout: ReadoutConfig,
    pub experiment: ExperimentSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

fn ghz_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e3).round() * 1e6).collect()
}

impl ExperimentConfig {
    /// Defaults of a profile.
    pub fn profile(profile: Profile) -> Self {
        let paper = profile == Profile::Paper;
        ExperimentConfig {
            profile,
            grid: if paper { GridSpec::paper() } else { GridSpec::fast() },
            geometry: GeometryParams::default(),
            material: MaterialParams::default(),
            integrator: IntegratorConfig { substeps: if paper { 25 } else { 8 }, ..Default::default() },
            schedule: ScheduleConfig {
                n_train_sections: if paper { 15 } else { 8 },
                n_test_sections: if paper { 8 } else { 4 },
                section_len_steps: 1280,
                frequency: 2.5e9,
            },
            readout: ReadoutConfig {
                window_steps: 0,
                method: EnvelopeMethod::Rms,
                ridge: 0.0,
                sv_threshold: 1e-10,
                transient_steps: 300,
                feature_stride: 1,
                full_feature_stride: 16,
            },
            experiment: ExperimentSettings {
                arrangements: vec![Arrangement::Grid, Arrangement::Circle, Arrangement::Random],
                n_o: if paper { vec![4, 16, 25, 54, 81, 144, 196, 289] } else { vec![4, 16, 64, 144] },
                repeats: 10,
                seed: 1,
                snapshot_steps: (0..10).collect(),
                classify_arrangement: if paper { Arrangement::Full } else { Arrangement::Grid },
                classify_n_o: 64,
                compartments: (1..=9).collect(),
                compartment_n_o: vec![4, 16, 25, 81, 196],
                train_freqs: vec![2.4e9, 2.6e9],
                test_freqs: ghz_range(2.2, 2.8, 0.05),
                freq_sections: 1,
                relax: RelaxConfig { alpha_min: 0.3, tolerance: 1e5, max_steps: 5000 },
            },
        }
    }

    /// Parses config text. `profile` overrides the file's `experiment.profile`.
    pub fn parse(text: &str, profile: Option<Profile>) -> Result<Self, ConfigError> {
        let raw = parse_raw(text)?;
        let from_file = match &raw.experiment.profile {
            Some(p) => Some(p.parse()?),
            None => None,
        };
        let mut cfg = Self::profile(profile.or(from_file).unwrap_or_default());
        raw.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text, profile)?)
    }

    pub fn build_map(&self) -> Result<MaterialMap, ConfigError> {
        build_geometry(self.grid, &self.geometry, &self.material)
    }

    /// Envelope window for a drive at `frequency`: the configured value or
    /// one period, `round(T0/t0)`.
    pub fn window_steps(&self, frequency: f64) -> usize {
        if self.readout.window_steps > 0 {
            self.readout.window_steps
        } else {
            ((1.0 / frequency / self.integrator.macro_step).round() as usize).max(1)
        }
    }

    /// Checks ranges, geometry and the integrator stability bound.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: &str| Err(ConfigError::Invalid { key: key.into(), reason: reason.into() });
        let s = &self.schedule;
        if s.n_train_sections == 0 {
            return invalid("n_train_sections", "must be at least 1");
        }
        if s.n_test_sections == 0 {
            return invalid("n_test_sections", "must be at least 1");
        }
        if s.section_len_steps == 0 {
            return invalid("section_len_steps", "must be at least 1");
        }
        if !(s.frequency > 0.0 && s.frequency.is_finite()) {
            return invalid("frequency_ghz", "must be positive");
        }
        let r = &self.readout;
        if r.feature_stride == 0 {
            return invalid("feature_stride", "must be at least 1");
        }
        if r.full_feature_stride == 0 {
            return invalid("full_feature_stride", "must be at least 1");
        }
        if !(r.ridge >= 0.0 && r.ridge.is_finite()) {
            return invalid("ridge", "must be non-negative");
        }
        if !(r.sv_threshold >= 0.0 && r.sv_threshold < 1.0) {
            return invalid("sv_threshold", "must lie in [0, 1)");
        }
        let e = &self.experiment;
        if e.repeats == 0 {
            return invalid("repeats", "must be at least 1");
        }
        if e.n_o.is_empty() || e.n_o.contains(&0) {
            return invalid("n_o", "needs at least one positive electrode count");
        }
        if let Some(&k) = e.compartments.iter().find(|&&k| !(1..=9).contains(&k)) {
            return invalid("compartments", &format!("compartment {k} is not in 1..9"));
        }
        if e.train_freqs.is_empty() || e.test_freqs.is_empty() {
            return invalid("train_freqs_ghz", "frequency lists must not be empty");
        }
        if e.train_freqs.iter().chain(&e.test_freqs).any(|f| !(*f > 0.0 && f.is_finite())) {
            return invalid("test_freqs_ghz", "frequencies must be positive");
        }
        if e.freq_sections == 0 {
            return invalid("freq_sections", "must be at least 1");
        }
        if !(e.relax.alpha_min >= 0.0 && e.relax.tolerance > 0.0) {
            return invalid("relax_alpha", "relaxation needs alpha ≥ 0 and a positive tolerance");
        }
        let window = self.window_steps(s.frequency);
        if window >= s.section_len_steps {
            return invalid("window_steps", "the envelope window must be shorter than a section");
        }
        let map = self.build_map()?;
        self.integrator.validate(&map)
    }

    /// The full configuration as TOML, every key explicit. Parsing it back
    /// yields this configuration.
    pub fn resolved(&self) -> String {
        let mut o = String::new();
        let f = |v: f64| format!("{v:?}");
        let e = |v: f64, shift: i32| sci(v, shift);
        let list = |v: &[usize]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        let ghz = |v: &[f64]| format!("[{}]", v.iter().map(|&x| sci(x, -9)).collect::<Vec<_>>().join(", "));
        let g = &self.grid;
        let gp = &self.geometry;
        let m = &self.material;
        let i = &self.integrator;
        let s = &self.schedule;
        let r = &self.readout;
        let x = &self.experiment;
        let _ = writeln!(o, "[geometry]");
        let _ = writeln!(o, "nx = {}\nny = {}", g.nx, g.ny);
        let _ = writeln!(o, "cell_size_nm = {}\nthickness_nm = {}", e(g.cell_size, 9), e(g.thickness, 9));
        let _ = writeln!(o, "damper_width_nm = {}", e(gp.damper_width, 9));
        let _ = writeln!(o, "electrode_diameter_nm = {}", e(gp.electrode_diameter, 9));
        let _ = writeln!(o, "readout_side_nm = {}", e(gp.readout_side, 9));
        let _ = writeln!(o, "compartment_side_nm = {}", e(gp.compartment_side, 9));
        let _ = writeln!(o, "\n[material]");
        let _ = writeln!(o, "ms_ka_per_m = {}\na_ex_pj_per_m = {}", e(m.ms, -3), e(m.a_ex, 12));
        let _ = writeln!(o, "ku_high_kj_per_m3 = {}\nku_low_kj_per_m3 = {}", e(m.ku_high, -3), e(m.ku_low, -3));
        let _ = writeln!(o, "h_ext_a_per_m = {}\nh_bias_x_a_per_m = {}", f(m.h_ext), f(m.h_bias_x));
        let _ = writeln!(o, "alpha_interior = {}\nalpha_damper = {}", f(m.alpha_interior), f(m.alpha_damper));
        let _ = writeln!(o, "\n[integrator]");
        let _ = writeln!(o, "macro_step_ns = {}\nsubsteps = {}", e(i.macro_step, 9), i.substeps);
        let _ = writeln!(o, "gamma_rad_per_s_t = {}\nrenormalize = {}\nthreads = {}", f(i.gamma), i.renormalize, i.threads);
        let _ = writeln!(o, "\n[schedule]");
        let _ = writeln!(o, "n_train_sections = {}\nn_test_sections = {}", s.n_train_sections, s.n_test_sections);
        let _ = writeln!(o, "section_len_steps = {}\nfrequency_ghz = {}", s.section_len_steps, e(s.frequency, -9));
        let _ = writeln!(o, "\n[readout]");
        let _ = writeln!(o, "window_steps = {}\nenvelope = \"{}\"", r.window_steps, r.method);
        let _ = writeln!(o, "ridge = {}\nsv_threshold = {}", f(r.ridge), f(r.sv_threshold));
        let _ = writeln!(o, "transient_steps = {}\nfeature_stride = {}", r.transient_steps, r.feature_stride);
        let _ = writeln!(o, "full_feature_stride = {}", r.full_feature_stride);
        let _ = writeln!(o, "\n[experiment]");
        let _ = writeln!(o, "profile = \"{}\"", self.profile);
        let arr = x.arrangements.iter().map(|a| format!("\"{a}\"")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(o, "arrangements = [{arr}]\nn_o = {}", list(&x.n_o));
        let _ = writeln!(o, "repeats = {}\nseed = {}", x.repeats, x.seed);
        let _ = writeln!(o, "snapshot_steps = {}", list(&x.snapshot_steps));
        let _ = writeln!(o, "classify_arrangement = \"{}\"\nclassify_n_o = {}", x.classify_arrangement, x.classify_n_o);
        let _ = writeln!(o, "compartments = {}\ncompartment_n_o = {}", list(&x.compartments), list(&x.compartment_n_o));
        let _ = writeln!(o, "train_freqs_ghz = {}\ntest_freqs_ghz = {}", ghz(&x.train_freqs), ghz(&x.test_freqs));
        let _ = writeln!(o, "freq_sections = {}", x.freq_sections);
        let _ = writeln!(o, "relax_alpha = {}\nrelax_tolerance_per_s = {}", f(x.relax.alpha_min), f(x.relax.tolerance));
        let _ = writeln!(o, "relax_max_steps = {}", x.relax.max_steps);
        o
    }

    /// SHA-256 of [`resolved`](Self::resolved), hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// raw file layer

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    geometry: RawGeometry,
    #[serde(default)]
    material: RawMaterial,
    #[serde(default)]
    integrator: RawIntegrator,
    #[serde(default)]
    schedule: RawSchedule,
    #[serde(default)]
    readout: RawReadout,
    #[serde(default)]
    experiment: RawExperiment,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    nx: Option<i64>,
    ny: Option<i64>,
    cell_size_nm: Option<f64>,
    thickness_nm: Option<f64>,
    damper_width_nm: Option<f64>,
    electrode_diameter_nm: Option<f64>,
    readout_side_nm: Option<f64>,
    compartment_side_nm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    ms_ka_per_m: Option<f64>,
    a_ex_pj_per_m: Option<f64>,
    ku_high_kj_per_m3: Option<f64>,
    ku_low_kj_per_m3: Option<f64>,
    h_ext_a_per_m: Option<f64>,
    h_bias_x_a_per_m: Option<f64>,
    alpha_interior: Option<f64>,
    alpha_damper: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    macro_step_ns: Option<f64>,
    substeps: Option<i64>,
    gamma_rad_per_s_t: Option<f64>,
    renormalize: Option<bool>,
    threads: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    n_train_sections: Option<i64>,
    n_test_sections: Option<i64>,
    section_len_steps: Option<i64>,
    frequency_ghz: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReadout {
    window_steps: Option<i64>,
    envelope: Option<String>,
    ridge: Option<f64>,
    sv_threshold: Option<f64>,
    transient_steps: Option<i64>,
    feature_stride: Option<i64>,
    full_feature_stride: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    profile: Option<String>,
    arrangements: Option<Vec<String>>,
    n_o: Option<Vec<i64>>,
    repeats: Option<i64>,
    seed: Option<i64>,
    snapshot_steps: Option<Vec<i64>>,
    classify_arrangement: Option<String>,
    classify_n_o: Option<i64>,
    compartments: Option<Vec<i64>>,
    compartment_n_o: Option<Vec<i64>>,
    train_freqs_ghz: Option<Vec<f64>>,
    test_freqs_ghz: Option<Vec<f64>>,
    freq_sections: Option<i64>,
    relax_alpha: Option<f64>,
    relax_tolerance_per_s: Option<f64>,
    relax_max_steps: Option<i64>,
}

/// `v · 10^shift` written by moving the exponent of the shortest decimal
/// form of `v`, so that dividing the parsed value by `10^shift` gives `v`
/// back.
fn sci(v: f64, shift: i32) -> String {
    let s = format!("{v:e}");
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    format!("{mantissa}e{}", exp + shift)
}

/// `v · 10^shift`, rounded once from the shortest decimal form of `v`.
fn unit(v: f64, shift: i32) -> f64 {
    sci(v, shift).parse().unwrap_or(f64::NAN)
}

fn line_col(text: &str, span: Option<Range<usize>>) -> (usize, usize) {
    let Some(span) = span else { return (0, 0) };
    let before = &text[..span.start.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |p| before[p + 1..].chars().count()) + 1;
    (line, column)
}

fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    if let Err(e) = toml::from_str::<toml::Table>(text) {
        let (line, column) = line_col(text, e.span());
        return Err(ConfigError::Syntax { line, column, message: e.message().trim().to_string() });
    }
    toml::from_str::<RawConfig>(text).map_err(|e| {
        let (line, _) = line_col(text, e.span());
        let message = e.message().trim().to_string();
        match message.strip_prefix("unknown field `") {
            Some(rest) => ConfigError::UnknownKey { line, key: rest.split('`').next().unwrap_or_default().to_string() },
            None => ConfigError::Type { line, message },
        }
    })
}

fn count(key: &str, v: i64, min: i64) -> Result<usize, ConfigError> {
    if v < min {
        return Err(ConfigError::Invalid { key: key.into(), reason: format!("must be at least {min}, got {v}") });
    }
    Ok(v as usize)
}

fn counts(key: &str, v: &[i64], min: i64) -> Result<Vec<usize>, ConfigError> {
    v.iter().map(|&x| count(key, x, min)).collect()
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(ConfigError::Invalid { key: key.into(), reason: format!("must be a positive number, got {v}") });
    }
    Ok(v)
}

fn non_negative(key: &str, v: f64) -> Result<f64, ConfigError> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(ConfigError::Invalid { key: key.into(), reason: format!("must be non-negative, got {v}") });
    }
    Ok(v)
}

fn finite(key: &str, v: f64) -> Result<f64, ConfigError> {
    if !v.is_finite() {
        return Err(ConfigError::Invalid { key: key.into(), reason: "must be finite".into() });
    }
    Ok(v)
}

impl RawConfig {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if let Some(v) = g.nx {
            cfg.grid.nx = count("nx", v, 1)?;
        }
        if let Some(v) = g.ny {
            cfg.grid.ny = count("ny", v, 1)?;
        }
        if let Some(v) = g.cell_size_nm {
            cfg.grid.cell_size = unit(positive("cell_size_nm", v)?, -9);
        }
        if let Some(v) = g.thickness_nm {
            cfg.grid.thickness = unit(positive("thickness_nm", v)?, -9);
        }
        if let Some(v) = g.damper_width_nm {
            cfg.geometry.damper_width = unit(non_negative("damper_width_nm", v)?, -9);
        }
        if let Some(v) = g.electrode_diameter_nm {
            cfg.geometry.electrode_diameter = unit(positive("electrode_diameter_nm", v)?, -9);
        }
        if let Some(v) = g.readout_side_nm {
            cfg.geometry.readout_side = unit(positive("readout_side_nm", v)?, -9);
        }
        if let Some(v) = g.compartment_side_nm {
            cfg.geometry.compartment_side = unit(positive("compartment_side_nm", v)?, -9);
        }

        let m = &self.material;
        let mp = &mut cfg.material;
        if let Some(v) = m.ms_ka_per_m {
            mp.ms = unit(positive("ms_ka_per_m", v)?, 3);
        }
        if let Some(v) = m.a_ex_pj_per_m {
            mp.a_ex = unit(non_negative("a_ex_pj_per_m", v)?, -12);
        }
        if let Some(v) = m.ku_high_kj_per_m3 {
            mp.ku_high = unit(finite("ku_high_kj_per_m3", v)?, 3);
        }
        if let Some(v) = m.ku_low_kj_per_m3 {
            mp.ku_low = unit(finite("ku_low_kj_per_m3", v)?, 3);
        }
        if let Some(v) = m.h_ext_a_per_m {
            mp.h_ext = finite("h_ext_a_per_m", v)?;
        }
        if let Some(v) = m.h_bias_x_a_per_m {
            mp.h_bias_x = finite("h_bias_x_a_per_m", v)?;
        }
        if let Some(v) = m.alpha_interior {
            mp.alpha_interior = non_negative("alpha_interior", v)?;
        }
        if let Some(v) = m.alpha_damper {
            mp.alpha_damper = non_negative("alpha_damper", v)?;
        }

        let i = &self.integrator;
        if let Some(v) = i.macro_step_ns {
            cfg.integrator.macro_step = unit(positive("macro_step_ns", v)?, -9);
        }
        if let Some(v) = i.substeps {
            cfg.integrator.substeps = count("substeps", v, 1)?;
        }
        if let Some(v) = i.gamma_rad_per_s_t {
            cfg.integrator.gamma = positive("gamma_rad_per_s_t", v)?;
        }
        if let Some(v) = i.renormalize {
            cfg.integrator.renormalize = v;
        }
        if let Some(v) = i.threads {
            cfg.integrator.threads = count("threads", v, 0)?;
        }

        let s = &self.schedule;
        if let Some(v) = s.n_train_sections {
            cfg.schedule.n_train_sections = count("n_train_sections", v, 1)?;
        }
        if let Some(v) = s.n_test_sections {
            cfg.schedule.n_test_sections = count("n_test_sections", v, 1)?;
        }
        if let Some(v) = s.section_len_steps {
            cfg.schedule.section_len_steps = count("section_len_steps", v, 1)?;
        }
        if let Some(v) = s.frequency_ghz {
            cfg.schedule.frequency = unit(positive("frequency_ghz", v)?, 9);
        }

        let r = &self.readout;
        if let Some(v) = r.window_steps {
            cfg.readout.window_steps = count("window_steps", v, 0)?;
        }
        if let Some(v) = &r.envelope {
            cfg.readout.method = v
                .parse()
                .map_err(|_| ConfigError::Invalid { key: "envelope".into(), reason: format!("`{v}` is not rms or peak") })?;
        }
        if let Some(v) = r.ridge {
            cfg.readout.ridge = non_negative("ridge", v)?;
        }
        if let Some(v) = r.sv_threshold {
            cfg.readout.sv_threshold = non_negative("sv_threshold", v)?;
        }
        if let Some(v) = r.transient_steps {
            cfg.readout.transient_steps = count("transient_steps", v, 0)?;
        }
        if let Some(v) = r.feature_stride {
            cfg.readout.feature_stride = count("feature_stride", v, 1)?;
        }
        if let Some(v) = r.full_feature_stride {
            cfg.readout.full_feature_stride = count("full_feature_stride", v, 1)?;
        }

        let e = &self.experiment;
        let x = &mut cfg.experiment;
        if let Some(v) = &e.arrangements {
            x.arrangements = v.iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = &e.n_o {
            x.n_o = counts("n_o", v, 1)?;
        }
        if let Some(v) = e.repeats {
            x.repeats = count("repeats", v, 1)?;
        }
        if let Some(v) = e.seed {
            x.seed = count("seed", v, 0)? as u64;
        }
        if let Some(v) = &e.snapshot_steps {
            x.snapshot_steps = counts("snapshot_steps", v, 0)?;
        }
        if let Some(v) = &e.classify_arrangement {
            x.classify_arrangement = v.parse()?;
        }
        if let Some(v) = e.classify_n_o {
            x.classify_n_o = count("classify_n_o", v, 1)?;
        }
        if let Some(v) = &e.compartments {
            x.compartments = counts("compartments", v, 1)?;
        }
        if let Some(v) = &e.compartment_n_o {
            x.compartment_n_o = counts("compartment_n_o", v, 1)?;
        }
        if let Some(v) = &e.train_freqs_ghz {
            x.train_freqs = v.iter().map(|&f| positive("train_freqs_ghz", f).map(|f| unit(f, 9))).collect::<Result<_, _>>()?;
        }
        if let Some(v) = &e.test_freqs_ghz {
            x.test_freqs = v.iter().map(|&f| positive("test_freqs_ghz", f).map(|f| unit(f, 9))).collect::<Result<_, _>>()?;
        }
        if let Some(v) = e.freq_sections {
            x.freq_sections = count("freq_sections", v, 1)?;
        }
        if let Some(v) = e.relax_alpha {
            x.relax.alpha_min = non_negative("relax_alpha", v)?;
        }
        if let Some(v) = e.relax_tolerance_per_s {
            x.relax.tolerance = positive("relax_tolerance_per_s", v)?;
        }
        if let Some(v) = e.relax_max_steps {
            x.relax.max_steps = count("relax_max_steps", v, 0)?;
        }
        Ok(())
    }
}
