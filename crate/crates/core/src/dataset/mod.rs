//! UE trajectories, slot-clock sampling and (history, future) windows.
//!
//! Each UE contributes several independent segments. A segment draws a fresh
//! path set around the UE's mean directions, a speed and a horizontal heading,
//! and a sampling period `T_0` (in slots); the channel is then sampled every
//! `T_0` slots for the antenna in use. Sliding windows of `T + F` tables with
//! stride 1 become samples.

mod store;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ChannelConfig;
use crate::error::{Error, Result};
use crate::geometry::{ChannelTable, MultipathChannel};
use crate::ports::{StackAxis, TableStack};
use crate::seed::rng_for;

pub use store::{dataset_hash, load_dataset, write_dataset, DatasetFiles};

/// Below this the history window is treated as constant.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Motion and sampling parameters of the simulated UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub ue_count: usize,
    /// Uniform speed range `[lo, hi]`, km/h.
    pub speed_kmh: [f64; 2],
    /// Slot duration, ms.
    pub slot_ms: f64,
    pub symbols_per_slot: usize,
    /// Candidate sampling periods `T_0`, in slots.
    pub sampling_periods_slots: Vec<usize>,
    /// Feedback delay in slots; recorded with every dataset and run.
    pub csi_delay_slots: usize,
    /// History length `T`.
    pub history: usize,
    /// Horizon `F`.
    pub horizon: usize,
    pub segments_per_ue: usize,
    /// Sample instants per segment; each yields `segment_samples - T - F + 1` windows.
    pub segment_samples: usize,
    pub train_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            ue_count: 10,
            speed_kmh: [90.0, 150.0],
            slot_ms: 0.001,
            symbols_per_slot: 14,
            sampling_periods_slots: vec![5, 6, 10],
            csi_delay_slots: 4,
            history: 8,
            horizon: 8,
            segments_per_ue: 200,
            segment_samples: 16,
            train_fraction: 0.75,
        }
    }
}

impl ScenarioConfig {
    /// 10 UEs x 15 segments x 362 windows = 54,300 samples on a 1 ms slot.
    pub fn full_scale() -> Self {
        ScenarioConfig {
            ue_count: 10,
            slot_ms: 1.0,
            segments_per_ue: 15,
            segment_samples: 377,
            ..Default::default()
        }
    }

    pub fn slot_seconds(&self) -> f64 {
        self.slot_ms * 1e-3
    }

    pub fn windows_per_segment(&self) -> usize {
        (self.segment_samples + 1).saturating_sub(self.history + self.horizon)
    }

    pub fn num_samples(&self) -> usize {
        self.ue_count * self.segments_per_ue * self.windows_per_segment()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: &str| Err(Error::config(format!("scenario.{f}"), r));
        if self.ue_count == 0 {
            return err("ue_count", "must be >= 1");
        }
        let [lo, hi] = self.speed_kmh;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return err("speed_kmh", "need 0 <= lo <= hi");
        }
        if !(self.slot_ms > 0.0 && self.slot_ms.is_finite()) {
            return err("slot_ms", "must be > 0");
        }
        if self.sampling_periods_slots.is_empty() || self.sampling_periods_slots.contains(&0) {
            return err("sampling_periods_slots", "need at least one period, all >= 1");
        }
        if self.history == 0 {
            return err("history", "T must be >= 1");
        }
        if self.horizon == 0 {
            return err("horizon", "F must be >= 1");
        }
        if self.segments_per_ue == 0 {
            return err("segments_per_ue", "must be >= 1");
        }
        if self.segment_samples < self.history + self.horizon {
            return err("segment_samples", "must be >= history + horizon");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return err("train_fraction", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// A drawn channel realization plus the motion that produced its Dopplers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub channel: MultipathChannel,
    pub speed_kmh: f64,
    /// Heading in the horizontal plane, radians from +x.
    pub heading: f64,
    pub velocity: [f64; 3],
    pub t0_slots: usize,
}

impl Trajectory {
    /// `count` instants spaced `T_0` slots apart starting at `t = 0`.
    pub fn sample_times(&self, count: usize, slot_seconds: f64) -> Vec<f64> {
        let dt = self.t0_slots as f64 * slot_seconds;
        (0..count).map(|k| k as f64 * dt).collect()
    }
}

/// Draw the realization for `(ue_index, segment)`. Deterministic per
/// `(seed, stream, ue_index, segment)`; `speed_kmh` overrides the sampled
/// speed without disturbing any other draw.
pub fn generate_trajectory(
    channel: &ChannelConfig,
    scenario: &ScenarioConfig,
    seed: u64,
    stream: &str,
    ue_index: usize,
    segment: usize,
    speed_kmh: Option<f64>,
) -> Result<Trajectory> {
    if ue_index >= scenario.ue_count {
        return Err(Error::InvalidInput(format!(
            "ue_index {ue_index} >= ue_count {}",
            scenario.ue_count
        )));
    }
    let mut rng = rng_for(seed, stream, &[ue_index as u64, segment as u64]);
    let [lo, hi] = scenario.speed_kmh;
    let drawn = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let speed = speed_kmh.unwrap_or(drawn);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let t0_slots = *scenario
        .sampling_periods_slots
        .choose(&mut rng)
        .expect("validated non-empty");

    let v = speed / 3.6;
    let velocity = [v * heading.cos(), v * heading.sin(), 0.0];
    let carrier = channel.carrier()?;
    let paths = channel
        .profile()
        .draw_paths(&channel.ue_angles(ue_index), velocity, &carrier, &mut rng)?;
    let mc = MultipathChannel::new(carrier, channel.bs(channel.bs_array)?, channel.grid()?, paths)?;
    Ok(Trajectory {
        channel: mc,
        speed_kmh: speed,
        heading,
        velocity,
        t0_slots,
    })
}

/// One table per instant of `t_grid` for BS antenna `antenna`.
pub fn sample_tables(ch: &MultipathChannel, t_grid: &[f64], antenna: usize) -> Result<TableStack> {
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
    }
    TableStack::new(ch.table_series(antenna, t_grid)?, StackAxis::Time)
}

/// Mean and scale of one history window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Complex64,
    pub sigma: f64,
}

impl NormStats {
    /// `mu` = complex mean, `sigma` = std of the real/imag concatenation.
    pub fn from_values<I>(values: I) -> Result<Self>
    where
        I: IntoIterator<Item = Complex64>,
        I::IntoIter: Clone,
    {
        let it = values.into_iter();
        let (mut sum, mut count) = (Complex64::new(0.0, 0.0), 0usize);
        for v in it.clone() {
            sum += v;
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidInput("cannot normalize an empty window".into()));
        }
        let mu = sum / count as f64;
        let ss: f64 = it.map(|v| (v - mu).norm_sqr()).sum();
        let sigma = (ss / (2 * count) as f64).sqrt();
        if !(sigma >= SIGMA_FLOOR) {
            return Err(Error::DegenerateSample(format!("sigma {sigma:e} below {SIGMA_FLOOR:e}")));
        }
        Ok(NormStats { mu, sigma })
    }

    pub fn normalize(&self, v: Complex64) -> Complex64 {
        (v - self.mu) / self.sigma
    }

    pub fn denormalize(&self, v: Complex64) -> Complex64 {
        v * self.sigma + self.mu
    }
}

/// Normalize `values` with statistics computed from `values` themselves.
pub fn normalize(values: &[Complex64]) -> Result<(Vec<Complex64>, NormStats)> {
    let stats = NormStats::from_values(values.iter().copied())?;
    Ok((values.iter().map(|&v| stats.normalize(v)).collect(), stats))
}

pub fn denormalize(values: &[Complex64], stats: &NormStats) -> Vec<Complex64> {
    values.iter().map(|&v| stats.denormalize(v)).collect()
}

/// Where a window came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub ue: usize,
    pub segment: usize,
    /// Index of the first history instant within the segment.
    pub start: usize,
    /// Time of the first history instant, seconds.
    pub t_start: f64,
    pub t0_slots: usize,
    pub speed_kmh: f64,
}

/// One training unit. Tables are stored time-major, then row-major over the
/// port grid, in single precision (the on-disk precision).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    dims: (usize, usize),
    history: Vec<Complex32>,
    future: Vec<Complex32>,
    stats: NormStats,
    pub meta: SampleMeta,
}

impl WindowSample {
    /// Build from flat time-major data; `history.len()` must be a multiple of `N M`.
    pub fn new(
        dims: (usize, usize),
        history: Vec<Complex32>,
        future: Vec<Complex32>,
        meta: SampleMeta,
    ) -> Result<Self> {
        let np = dims.0 * dims.1;
        if np == 0 || history.is_empty() || future.is_empty() || history.len() % np != 0 || future.len() % np != 0 {
            return Err(Error::InvalidInput(format!(
                "window of {} / {} values does not tile a {}x{} grid",
                history.len(),
                future.len(),
                dims.0,
                dims.1
            )));
        }
        let stats = NormStats::from_values(history.iter().map(|z| widen(*z)))?;
        Ok(WindowSample {
            dims,
            history,
            future,
            stats,
            meta,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn history_len(&self) -> usize {
        self.history.len() / self.ports()
    }

    pub fn horizon(&self) -> usize {
        self.future.len() / self.ports()
    }

    fn ports(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn history(&self) -> &[Complex32] {
        &self.history
    }

    pub fn future(&self) -> &[Complex32] {
        &self.future
    }

    pub fn stats(&self) -> NormStats {
        self.stats
    }

    /// `h_(1,1)` at the last history instant.
    pub fn reference(&self) -> Complex64 {
        widen(self.history[(self.history_len() - 1) * self.ports()])
    }

    fn table(&self, data: &[Complex32], k: usize) -> ChannelTable {
        let np = self.ports();
        let vals = data[k * np..(k + 1) * np].iter().map(|z| widen(*z)).collect();
        ChannelTable::from_vec(self.dims.0, self.dims.1, vals).expect("dims checked")
    }

    pub fn history_table(&self, k: usize) -> ChannelTable {
        self.table(&self.history, k)
    }

    pub fn future_table(&self, f: usize) -> ChannelTable {
        self.table(&self.future, f)
    }

    /// Reference tables: the reference channel broadcast over the grid, one per future step.
    pub fn reference_stack(&self) -> TableStack {
        let t = ChannelTable::filled(self.dims.0, self.dims.1, self.reference());
        TableStack::new(vec![t; self.horizon()], StackAxis::Time).expect("uniform dims")
    }

    /// Normalized history as separate real and imaginary planes, `T x NM` each.
    pub fn normalized_history(&self) -> (Vec<f64>, Vec<f64>) {
        self.history
            .iter()
            .map(|z| self.stats.normalize(widen(*z)))
            .map(|z| (z.re, z.im))
            .unzip()
    }
}

fn widen(z: Complex32) -> Complex64 {
    Complex64::new(z.re as f64, z.im as f64)
}

fn narrow(z: Complex64) -> Complex32 {
    Complex32::new(z.re as f32, z.im as f32)
}

/// Stride-1 windows of `T` history and `F` future tables. `base` supplies
/// the segment identity; `times` the instant of every stack entry.
pub fn make_windows(
    stack: &TableStack,
    times: &[f64],
    history: usize,
    horizon: usize,
    base: SampleMeta,
) -> Result<Vec<WindowSample>> {
    if stack.len() != times.len() {
        return Err(Error::InvalidInput(format!(
            "{} tables but {} sample times",
            stack.len(),
            times.len()
        )));
    }
    let Some(dims) = stack.dims() else {
        return Ok(Vec::new());
    };
    if history == 0 || horizon == 0 || stack.len() < history + horizon {
        return Ok(Vec::new());
    }
    let flat: Vec<Vec<Complex32>> = stack
        .tables()
        .iter()
        .map(|t| t.as_slice().iter().map(|z| narrow(*z)).collect())
        .collect();
    (0..=stack.len() - history - horizon)
        .map(|s| {
            let hist = flat[s..s + history].concat();
            let fut = flat[s + history..s + history + horizon].concat();
            let meta = SampleMeta {
                start: s,
                t_start: times[s],
                ..base
            };
            WindowSample::new(dims, hist, fut, meta)
        })
        .collect()
}

/// Disjoint train/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle split with `ceil(fraction * K)` training samples.
pub fn split_dataset(num_samples: usize, train_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..num_samples).collect();
    idx.shuffle(&mut rng_for(seed, "split", &[]));
    let n_train = ((train_fraction * num_samples as f64).ceil() as usize).min(num_samples);
    let test = idx.split_off(n_train);
    Split { train: idx, test }
}

/// Generated windows together with everything needed to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel: ChannelConfig,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub samples: Vec<WindowSample>,
    pub split: Split,
}

impl Dataset {
    pub fn dims(&self) -> (usize, usize) {
        let [n, m] = self.channel.ports;
        (n, m)
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &WindowSample> {
        self.split.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &WindowSample> {
        self.split.test.iter().map(|&i| &self.samples[i])
    }
}

/// Simulate every (UE, segment) pair on antenna 0 and window the result.
/// Parallel over segments; output order is fixed (UE-major, then segment).
pub fn generate_dataset(channel: &ChannelConfig, scenario: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    channel.validate()?;
    scenario.validate()?;
    let jobs: Vec<(usize, usize)> = (0..scenario.ue_count)
        .flat_map(|u| (0..scenario.segments_per_ue).map(move |s| (u, s)))
        .collect();
    let parts: Vec<Result<Vec<WindowSample>>> = jobs
        .par_iter()
        .map(|&(ue, segment)| {
            let tr = generate_trajectory(channel, scenario, seed, "dataset", ue, segment, None)?;
            let times = tr.sample_times(scenario.segment_samples, scenario.slot_seconds());
            let stack = sample_tables(&tr.channel, &times, 0)?;
            let base = SampleMeta {
                ue,
                segment,
                start: 0,
                t_start: 0.0,
                t0_slots: tr.t0_slots,
                speed_kmh: tr.speed_kmh,
            };
            make_windows(&stack, &times, scenario.history, scenario.horizon, base)
        })
        .collect();
    let mut samples = Vec::with_capacity(scenario.num_samples());
    for p in parts {
        samples.extend(p?);
    }
    if samples.is_empty() {
        return Err(Error::Data("scenario produced no windows".into()));
    }
    let split = split_dataset(samples.len(), scenario.train_fraction, seed);
    Ok(Dataset {
        channel: channel.clone(),
        scenario: scenario.clone(),
        seed,
        samples,
        split,
    })
}
