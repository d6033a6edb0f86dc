use crate::drive::{Label, SectionSchedule};
use crate::error::{Error, Result};
use crate::llg::{ProbeSink, SpinTrace};

/// How the amplitude of `s_x - offset` is taken over the trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnvelopeMethod {
    /// `√2 × RMS`, exact for a sinusoid sampled over whole periods.
    #[default]
    Rms,
    /// Largest absolute deviation in the window.
    Peak,
}

impl std::str::FromStr for EnvelopeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rms" => Ok(EnvelopeMethod::Rms),
            "peak" => Ok(EnvelopeMethod::Peak),
            other => Err(Error::Domain(format!("unknown envelope method `{other}` (rms|peak)"))),
        }
    }
}

impl std::fmt::Display for EnvelopeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvelopeMethod::Rms => "rms",
            EnvelopeMethod::Peak => "peak",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptions {
    pub window_steps: usize,
    pub method: EnvelopeMethod,
    /// Keep every `stride`-th step (1 keeps all).
    pub stride: usize,
}

impl EnvelopeOptions {
    pub fn new(window_steps: usize) -> Self {
        EnvelopeOptions { window_steps, method: EnvelopeMethod::Rms, stride: 1 }
    }
}

/// Envelope features `x(r, n)`, one column per retained time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Column-major `N_o × N`: column `n` is `values[n*N_o .. (n+1)*N_o]`.
    pub values: Vec<f64>,
    /// Grid cell of each row.
    pub electrode_ids: Vec<usize>,
    /// Macro-step index of each column in its source run.
    pub steps: Vec<usize>,
    /// Step index within its section, per column.
    pub step_in_section: Vec<usize>,
    pub step_labels: Vec<Label>,
    /// Columns excluded from training.
    pub warmup_mask: Vec<bool>,
}

impl FeatureMatrix {
    pub fn empty(electrode_ids: Vec<usize>) -> Self {
        FeatureMatrix {
            values: Vec::new(),
            electrode_ids,
            steps: Vec::new(),
            step_in_section: Vec::new(),
            step_labels: Vec::new(),
            warmup_mask: Vec::new(),
        }
    }

    pub fn n_o(&self) -> usize {
        self.electrode_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn column(&self, n: usize) -> &[f64] {
        let k = self.n_o();
        &self.values[n * k..(n + 1) * k]
    }

    /// Feature of row `e` at column `n`.
    pub fn get(&self, e: usize, n: usize) -> f64 {
        self.values[n * self.n_o() + e]
    }

    /// Rows for `cells`, in that order.
    pub fn select(&self, cells: &[usize]) -> Result<FeatureMatrix> {
        let cols = crate::llg::probe_columns(&self.electrode_ids, cells)?;
        let mut values = Vec::with_capacity(cols.len() * self.n_steps());
        for n in 0..self.n_steps() {
            let col = self.column(n);
            values.extend(cols.iter().map(|&c| col[c]));
        }
        Ok(FeatureMatrix { values, electrode_ids: cells.to_vec(), ..self.clone_meta() })
    }

    fn clone_meta(&self) -> FeatureMatrix {
        FeatureMatrix {
            values: Vec::new(),
            electrode_ids: self.electrode_ids.clone(),
            steps: self.steps.clone(),
            step_in_section: self.step_in_section.clone(),
            step_labels: self.step_labels.clone(),
            warmup_mask: self.warmup_mask.clone(),
        }
    }

    /// Columns of all parts side by side. Rows must agree.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let Some(first) = parts.first() else {
            return Err(Error::Domain("nothing to concatenate".into()));
        };
        let mut out = FeatureMatrix::empty(first.electrode_ids.clone());
        for p in parts {
            if p.electrode_ids != first.electrode_ids {
                return Err(Error::Domain("feature matrices have different electrodes".into()));
            }
            out.values.extend_from_slice(&p.values);
            out.steps.extend_from_slice(&p.steps);
            out.step_in_section.extend_from_slice(&p.step_in_section);
            out.step_labels.extend_from_slice(&p.step_labels);
            out.warmup_mask.extend_from_slice(&p.warmup_mask);
        }
        Ok(out)
    }

    /// Time mean of each row.
    pub fn row_means(&self) -> Vec<f64> {
        let k = self.n_o();
        let mut sum = vec![0.0; k];
        for n in 0..self.n_steps() {
            for (s, v) in sum.iter_mut().zip(self.column(n)) {
                *s += v;
            }
        }
        let m = self.n_steps().max(1) as f64;
        sum.into_iter().map(|s| s / m).collect()
    }
}

/// Streaming envelope extractor: feed it probe samples step by step.
///
/// Each probe keeps a ring of its last `window_steps` deviations from its
/// offset. The window sum is recomputed oldest-to-newest every step so the
/// result depends only on the samples in the window, not on history.
#[derive(Debug, Clone)]
pub struct EnvelopeRecorder {
    opts: EnvelopeOptions,
    offsets: Vec<f64>,
    ring: Vec<f64>,
    filled: usize,
    head: usize,
    labels: Vec<Label>,
    section_offsets: Vec<usize>,
    features: FeatureMatrix,
}

impl EnvelopeRecorder {
    /// `offsets` holds `s_x(r, 0)` per probe; `schedule` supplies labels and
    /// section boundaries for the run being recorded.
    pub fn new(
        probes: Vec<usize>,
        offsets: Vec<f64>,
        schedule: &SectionSchedule,
        opts: EnvelopeOptions,
    ) -> Result<Self> {
        if opts.window_steps == 0 {
            return Err(Error::Domain("envelope window must be at least one step".into()));
        }
        if opts.stride == 0 {
            return Err(Error::Domain("feature stride must be at least one".into()));
        }
        if offsets.len() != probes.len() {
            return Err(Error::Dimension { expected: probes.len(), got: offsets.len() });
        }
        let mut section_offsets = Vec::with_capacity(schedule.total_steps());
        for s in &schedule.sections {
            section_offsets.extend(0..s.length_steps);
        }
        Ok(EnvelopeRecorder {
            ring: vec![0.0; opts.window_steps * probes.len()],
            filled: 0,
            head: 0,
            labels: schedule.step_labels(),
            section_offsets,
            features: FeatureMatrix::empty(probes),
            offsets,
            opts,
        })
    }

    pub fn finish(self) -> FeatureMatrix {
        self.features
    }

    fn push(&mut self, step: usize, values: &[f64]) {
        let p = self.offsets.len();
        let w = self.opts.window_steps;
        assert_eq!(values.len(), p, "one value per probe");
        for (i, (&v, &o)) in values.iter().zip(&self.offsets).enumerate() {
            self.ring[i * w + self.head] = v - o;
        }
        self.head = (self.head + 1) % w;
        self.filled = (self.filled + 1).min(w);
        if step % self.opts.stride != 0 {
            return;
        }
        let count = self.filled;
        // oldest retained slot
        let start = (self.head + w - count) % w;
        for i in 0..p {
            let ring = &self.ring[i * w..(i + 1) * w];
            let x = match self.opts.method {
                EnvelopeMethod::Rms => {
                    let mut sum = 0.0;
                    for j in 0..count {
                        let d = ring[(start + j) % w];
                        sum += d * d;
                    }
                    (2.0 * sum / count as f64).sqrt()
                }
                EnvelopeMethod::Peak => {
                    let mut peak = 0.0f64;
                    for j in 0..count {
                        peak = peak.max(ring[(start + j) % w].abs());
                    }
                    peak
                }
            };
            self.features.values.push(x);
        }
        let in_section = self.section_offsets.get(step).copied().unwrap_or(step);
        self.features.steps.push(step);
        self.features.step_in_section.push(in_section);
        self.features.step_labels.push(self.labels.get(step).copied().unwrap_or(Label::Sin));
        self.features.warmup_mask.push(in_section < w);
    }
}

impl ProbeSink for EnvelopeRecorder {
    fn record(&mut self, step: usize, values: &[f64]) {
        self.push(step, values);
    }
}

/// Envelope features of a recorded trace.
///
/// `x(r, n) = Amp(s_x(r, ·) − offset(r))` over the trailing window ending at
/// step `n`; the first `window_steps` columns of every section are marked as
/// warmup.
pub fn envelope(
    trace: &SpinTrace,
    offsets: &[f64],
    schedule: &SectionSchedule,
    opts: EnvelopeOptions,
) -> Result<FeatureMatrix> {
    if trace.steps() < opts.window_steps && !trace.probes.is_empty() {
        return Err(Error::Domain(format!(
            "trace of {} steps is shorter than the {}-step envelope window",
            trace.steps(),
            opts.window_steps
        )));
    }
    if trace.steps() > schedule.total_steps() {
        return Err(Error::Domain("trace is longer than its schedule".into()));
    }
    let mut rec = EnvelopeRecorder::new(trace.probes.clone(), offsets.to_vec(), schedule, opts)?;
    let p = trace.n_probes();
    for n in 0..trace.steps() {
        rec.push(n, &trace.samples[n * p..(n + 1) * p]);
    }
    Ok(rec.finish())
}
