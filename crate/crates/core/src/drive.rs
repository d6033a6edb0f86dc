//! Input waveforms for the anisotropy drive and the random section schedules
//! that feed them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::llg::AnisotropyDrive;

/// Waveform class of a section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sin,
    Square,
}

impl Label {
    /// Teacher value: 0 for sinusoidal sections, 1 for square ones.
    pub fn target(self) -> f64 {
        match self {
            Label::Sin => 0.0,
            Label::Square => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sin => "SIN",
            Label::Square => "SQUARE",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SIN" => Ok(Label::Sin),
            "SQUARE" => Ok(Label::Square),
            other => Err(Error::Domain(format!("unknown section label `{other}`"))),
        }
    }
}

/// Sinusoidal anisotropy swinging between `ku_low` and `ku_high`, at its
/// maximum at `t = 0`.
pub fn ku_sin(t: f64, period: f64, ku_high: f64, ku_low: f64) -> f64 {
    let mid = 0.5 * (ku_high + ku_low);
    let amp = 0.5 * (ku_high - ku_low);
    mid + amp * (2.0 * PI * t / period).cos()
}

/// Square wave built from the first four odd cosine harmonics.
pub fn ku_square(t: f64, period: f64, ku_high: f64, ku_low: f64) -> f64 {
    let mid = 0.5 * (ku_high + ku_low);
    let amp = 0.5 * (ku_high - ku_low);
    let w = 2.0 * PI * t / period;
    let series = w.cos() - (3.0 * w).cos() / 3.0 + (5.0 * w).cos() / 5.0 - (7.0 * w).cos() / 7.0;
    mid + amp * series
}

/// One block of input steps carrying a single waveform class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section {
    pub label: Label,
    pub length_steps: usize,
}

/// Ordered waveform sections with the time base they are played on.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionSchedule {
    pub sections: Vec<Section>,
    /// Macro step, s.
    pub t0: f64,
    /// Drive period, s.
    pub period: f64,
    /// Seed the labels were drawn from, if random.
    pub seed: Option<u64>,
}

impl SectionSchedule {
    /// `n_sections` sections of `length_steps` each, labels drawn i.i.d.
    /// uniformly from {SIN, SQUARE}.
    pub fn random(n_sections: usize, length_steps: usize, t0: f64, period: f64, seed: u64) -> Result<Self> {
        if n_sections == 0 {
            return Err(Error::Domain("a schedule needs at least one section".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sections = (0..n_sections)
            .map(|_| Section {
                label: if rng.random_bool(0.5) { Label::Square } else { Label::Sin },
                length_steps,
            })
            .collect();
        Self::from_sections(sections, t0, period).map(|s| SectionSchedule { seed: Some(seed), ..s })
    }

    /// Schedule with explicit sections.
    pub fn from_sections(sections: Vec<Section>, t0: f64, period: f64) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::Domain("a schedule needs at least one section".into()));
        }
        if sections.iter().any(|s| s.length_steps == 0) {
            return Err(Error::Domain("sections must be at least one step long".into()));
        }
        if !(t0 > 0.0 && period > 0.0) {
            return Err(Error::Domain("macro step and period must be positive".into()));
        }
        Ok(SectionSchedule { sections, t0, period, seed: None })
    }

    pub fn total_steps(&self) -> usize {
        self.sections.iter().map(|s| s.length_steps).sum()
    }

    /// Duration of the whole schedule, s.
    pub fn duration(&self) -> f64 {
        self.total_steps() as f64 * self.t0
    }

    /// Drive period in macro steps, rounded.
    pub fn period_steps(&self) -> usize {
        ((self.period / self.t0).round() as usize).max(1)
    }

    /// First macro step of each section.
    pub fn section_starts(&self) -> Vec<usize> {
        self.sections
            .iter()
            .scan(0, |acc, s| {
                let start = *acc;
                *acc += s.length_steps;
                Some(start)
            })
            .collect()
    }

    /// Section index and label of every macro step.
    pub fn step_labels(&self) -> Vec<Label> {
        self.sections
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.label, s.length_steps))
            .collect()
    }

    /// Section containing time `t` (s) and the time elapsed since its start.
    /// `t` equal to the end of the schedule belongs to the last section.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let end = self.duration();
        if !(t >= 0.0) || t > end + 1e-9 * self.t0 {
            return Err(Error::OutOfSchedule { t, end });
        }
        let mut start = 0usize;
        for (i, s) in self.sections.iter().enumerate() {
            let stop = start + s.length_steps;
            if t < stop as f64 * self.t0 || i + 1 == self.sections.len() {
                return Ok((i, t - start as f64 * self.t0));
            }
            start = stop;
        }
        unreachable!("schedule has at least one section")
    }

    /// Drive value, label and section index at time `t`. The waveform phase
    /// restarts at every section boundary.
    pub fn drive_at(&self, t: f64, ku_high: f64, ku_low: f64) -> Result<(f64, Label, usize)> {
        let (i, local) = self.locate(t)?;
        let label = self.sections[i].label;
        let ku = match label {
            Label::Sin => ku_sin(local, self.period, ku_high, ku_low),
            Label::Square => ku_square(local, self.period, ku_high, ku_low),
        };
        Ok((ku, label, i))
    }

    /// The schedule as an anisotropy drive between `ku_low` and `ku_high`.
    pub fn drive(&self, ku_high: f64, ku_low: f64) -> ScheduledDrive<'_> {
        ScheduledDrive { schedule: self, ku_high, ku_low }
    }

    /// Plain-text section list: one `LABEL length_steps` pair per line.
    pub fn to_section_list(&self) -> String {
        self.sections.iter().map(|s| format!("{} {}\n", s.label, s.length_steps)).collect()
    }

    /// Parses the format written by [`to_section_list`](Self::to_section_list).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_section_list(text: &str, t0: f64, period: f64) -> Result<Self> {
        let mut sections = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(label), Some(len), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Domain(format!("line {}: expected `LABEL length_steps`", n + 1)));
            };
            let length_steps = len
                .parse()
                .map_err(|_| Error::Domain(format!("line {}: bad section length `{len}`", n + 1)))?;
            sections.push(Section { label: label.parse()?, length_steps });
        }
        Self::from_sections(sections, t0, period)
    }
}

/// [`SectionSchedule`] bound to drive extremes.
#[derive(Debug, Clone, Copy)]
pub struct ScheduledDrive<'a> {
    schedule: &'a SectionSchedule,
    ku_high: f64,
    ku_low: f64,
}

impl AnisotropyDrive for ScheduledDrive<'_> {
    fn electrode_ku(&self, t: f64) -> Result<Option<f64>> {
        self.schedule.drive_at(t, self.ku_high, self.ku_low).map(|(ku, _, _)| Some(ku))
    }
}
