//! Test metrics and the baseline sweep.
//!
//! Every snapshot is a fresh trajectory at a fixed speed: `T` history tables
//! and `F` future tables per BS antenna. The reference channel is the true
//! channel at port (1,1) at the last history instant. Each baseline yields,
//! per future step, the channel the UE actually experiences (`h_true`) and the
//! channel the BS beamforms with (`h_used`):
//!
//! | baseline        | h_true                         | h_used        |
//! |-----------------|--------------------------------|---------------|
//! | `stationary`    | port (1,1) at the future step  | same as true  |
//! | `no_prediction` | port (1,1) at the future step  | reference     |
//! | `port_llm`      | predicted port at future step  | reference     |
//! | `oracle_ports`  | port chosen on true tables     | reference     |
//!
//! `nmse_v` scores `h_true` against `h_used`; `nmse_t` scores the tables the
//! baseline assumes (copy-last for `no_prediction`) against the truth.
//! Means run over snapshots and future steps.

use std::io::Write;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{generate_trajectory, NormStats};
use crate::error::{Error, Result};
use crate::geometry::ChannelTable;
use crate::nn::{NetInput, PortLlm};
use crate::ports::{choose_port_multi, PortIndex};

/// Reported in place of `10 log10(0)`.
pub const SENTINEL_DB: f64 = -300.0;

/// Ratios below this are reported as [`SENTINEL_DB`].
pub const SENTINEL_FLOOR: f64 = 1e-30;

pub fn to_db(ratio: f64) -> f64 {
    if ratio < SENTINEL_FLOOR {
        SENTINEL_DB
    } else {
        10.0 * ratio.log10()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn mean_ratio(est: &[Vec<Complex64>], truth: &[Vec<Complex64>]) -> Result<f64> {
    if est.is_empty() || est.len() != truth.len() {
        return Err(Error::InvalidInput(format!("{} estimates for {} targets", est.len(), truth.len())));
    }
    let mut acc = 0.0;
    for (e, t) in est.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::InvalidInput(format!("entry of {} values vs {}", e.len(), t.len())));
        }
        let den = energy(t);
        if !(den > 0.0) {
            return Err(Error::DegenerateTarget("target has zero energy".into()));
        }
        acc += e.iter().zip(t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / den;
    }
    Ok(acc / est.len() as f64)
}

/// Mean of `||S_hat - S||^2 / ||S||^2` (linear).
pub fn nmse_t_ratio(s_hat: &[Vec<Complex64>], s: &[Vec<Complex64>]) -> Result<f64> {
    mean_ratio(s_hat, s)
}

/// [`nmse_t_ratio`] in dB, with the sentinel for perfect predictions.
pub fn nmse_t(s_hat: &[Vec<Complex64>], s: &[Vec<Complex64>]) -> Result<f64> {
    nmse_t_ratio(s_hat, s).map(to_db)
}

/// Mean of `||h - h_ref||^2 / ||h_ref||^2` (linear). Each entry stacks all
/// BS antennas into one vector.
pub fn nmse_v_ratio(h: &[Vec<Complex64>], h_ref: &[Vec<Complex64>]) -> Result<f64> {
    mean_ratio(h, h_ref)
}

pub fn nmse_v(h: &[Vec<Complex64>], h_ref: &[Vec<Complex64>]) -> Result<f64> {
    nmse_v_ratio(h, h_ref).map(to_db)
}

/// Effective gain `|h_true^T w|^2` of the matched filter `w = conj(h_used) / ||h_used||`.
pub fn beamforming_gain(h_true: &[Complex64], h_used: &[Complex64]) -> Result<f64> {
    if h_true.len() != h_used.len() {
        return Err(Error::InvalidInput(format!("{} vs {} antennas", h_true.len(), h_used.len())));
    }
    let den = energy(h_used);
    if !(den > 0.0) {
        return Err(Error::DegenerateTarget("beamforming channel is zero".into()));
    }
    let ip: Complex64 = h_true.iter().zip(h_used).map(|(a, b)| a * b.conj()).sum();
    Ok(ip.norm_sqr() / den)
}

pub fn sinr(h_true: &[Complex64], h_used: &[Complex64], snr_linear: f64) -> Result<f64> {
    Ok(snr_linear * beamforming_gain(h_true, h_used)?)
}

/// Mean of `log2(1 + SINR)`.
pub fn spectral_efficiency(sinrs: &[f64]) -> f64 {
    if sinrs.is_empty() {
        return 0.0;
    }
    sinrs.iter().map(|s| (1.0 + s).log2()).sum::<f64>() / sinrs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Stationary,
    NoPrediction,
    PortLlm,
    OraclePorts,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Stationary => "stationary",
            Baseline::NoPrediction => "no_prediction",
            Baseline::PortLlm => "port_llm",
            Baseline::OraclePorts => "oracle_ports",
        }
    }
}

/// Evaluation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// BS arrays `[N_y, N_z]`.
    pub arrays: Vec<[usize; 2]>,
    pub speeds_kmh: Vec<f64>,
    pub snr_db: Vec<f64>,
    /// Snapshots per (speed, array) cell.
    pub snapshots: usize,
    pub n_ue: usize,
    pub baselines: Vec<Baseline>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            arrays: vec![[2, 8], [8, 8], [32, 8]],
            speeds_kmh: vec![90.0, 120.0, 150.0],
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            snapshots: 100,
            n_ue: 1,
            baselines: vec![Baseline::Stationary, Baseline::NoPrediction, Baseline::PortLlm],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: &str| Err(Error::config(format!("eval.{f}"), r));
        if self.arrays.is_empty() || self.arrays.iter().any(|a| a[0] == 0 || a[1] == 0) {
            return err("arrays", "need at least one array, all dims >= 1");
        }
        if self.speeds_kmh.is_empty() || self.speeds_kmh.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return err("speeds_kmh", "need at least one speed, all >= 0");
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return err("snr_db", "need at least one finite SNR point");
        }
        if self.snr_db.windows(2).any(|w| !(w[1] > w[0])) {
            return err("snr_db", "must be sorted ascending without repeats");
        }
        if self.snapshots == 0 {
            return err("snapshots", "must be >= 1");
        }
        if self.n_ue == 0 {
            return err("n_ue", "must be >= 1");
        }
        if self.baselines.is_empty() {
            return err("baselines", "need at least one baseline");
        }
        for (i, b) in self.baselines.iter().enumerate() {
            if self.baselines[..i].contains(b) {
                return err("baselines", "duplicate entry");
            }
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.baselines.len() * self.speeds_kmh.len() * self.arrays.len() * self.snr_db.len()
    }
}

/// True tables of one snapshot, `[antenna][time]`, history then future.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tables: Vec<Vec<ChannelTable>>,
    pub history: usize,
    pub horizon: usize,
}

impl Snapshot {
    pub fn antennas(&self) -> usize {
        self.tables.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tables[0][0].dims()
    }

    fn future(&self, a: usize, f: usize) -> &ChannelTable {
        &self.tables[a][self.history + f]
    }

    /// Reference vector over antennas: port (1,1) at the last history instant.
    pub fn reference(&self) -> Vec<Complex64> {
        self.tables.iter().map(|t| t[self.history - 1].get(PortIndex::new(0, 0))).collect()
    }

    fn at_port(&self, f: usize, port: PortIndex) -> Vec<Complex64> {
        (0..self.antennas()).map(|a| self.future(a, f).get(port)).collect()
    }

    /// Future tables of step `f` for every antenna, flattened.
    fn future_flat(&self, f: usize) -> Vec<Complex64> {
        (0..self.antennas()).flat_map(|a| self.future(a, f).as_slice().iter().copied()).collect()
    }

    /// History of one antenna, time-major, rounded to the on-disk precision.
    pub fn history_of(&self, a: usize) -> Vec<Complex64> {
        self.tables[a][..self.history]
            .iter()
            .flat_map(|t| t.as_slice().iter())
            .map(|z| {
                let r = Complex32::new(z.re as f32, z.im as f32);
                Complex64::new(r.re as f64, r.im as f64)
            })
            .collect()
    }
}

/// Draw snapshot `index` for the speed at `speed_index`. Path draws do not
/// depend on the array, so every array sees the same propagation.
pub fn draw_snapshot(
    run: &RunConfig,
    speed_index: usize,
    index: usize,
    array: [usize; 2],
) -> Result<Snapshot> {
    let sc = &run.scenario;
    let ue = index % sc.ue_count;
    let speed = run.eval.speeds_kmh[speed_index];
    let stream = format!("eval-speed{speed_index}");
    let traj = generate_trajectory(&run.channel, sc, run.seed, &stream, ue, index, Some(speed))?;
    let ch = traj.channel.with_bs(run.channel.bs(array)?);
    let times = traj.sample_times(sc.history + sc.horizon, sc.slot_seconds());
    let tables = ch.table_series_all(&times);
    Ok(Snapshot {
        tables,
        history: sc.history,
        horizon: sc.horizon,
    })
}

/// Predicted future tables per antenna, `[antenna][F x N x M]`.
pub fn predict_snapshot(model: &PortLlm<f32>, snap: &Snapshot) -> Result<Vec<Vec<Complex64>>> {
    let mut inputs = Vec::with_capacity(snap.antennas());
    let mut stats: Vec<NormStats> = Vec::with_capacity(snap.antennas());
    for a in 0..snap.antennas() {
        let (x, s) = NetInput::<f32>::from_history(&snap.history_of(a))?;
        inputs.push(x);
        stats.push(s);
    }
    let (y, _) = model.forward(&inputs)?;
    let per = y.len() / snap.antennas();
    Ok(y.chunks_exact(per).zip(&stats).map(|(ys, s)| model.project_output(ys, s)).collect())
}

/// Per-step outcome of one baseline on one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub port: PortIndex,
    /// `||S_hat - S||^2 / ||S||^2` over all antennas at this step.
    pub table_ratio: f64,
    /// `||h_true - h_used||^2 / ||h_used||^2`.
    pub channel_ratio: f64,
    /// Matched-filter gain; SINR is this times the linear SNR.
    pub gain: f64,
}

fn choose(predicted: &[&[Complex64]], snap: &Snapshot, reference: &[Complex64]) -> Result<PortIndex> {
    let (n, m) = snap.dims();
    let s = predicted
        .iter()
        .map(|p| ChannelTable::from_vec(n, m, p.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<ChannelTable> = reference.iter().map(|&r| ChannelTable::filled(n, m, r)).collect();
    Ok(choose_port_multi(&s, &h)?.port)
}

fn ratio(est: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    mean_ratio(&[est.to_vec()], &[truth.to_vec()])
}

/// Outcomes of `baseline` on one snapshot, one per future step. `predicted`
/// is required for `port_llm`.
pub fn run_baseline(
    baseline: Baseline,
    snap: &Snapshot,
    predicted: Option<&[Vec<Complex64>]>,
) -> Result<Vec<StepOutcome>> {
    let h_ref = snap.reference();
    let np = snap.dims().0 * snap.dims().1;
    let origin = PortIndex::new(0, 0);
    (0..snap.horizon)
        .map(|f| {
            let truth = snap.future_flat(f);
            let (port, table_ratio, h_used) = match baseline {
                Baseline::Stationary => (origin, 0.0, snap.at_port(f, origin)),
                Baseline::NoPrediction => {
                    let last: Vec<Complex64> = (0..snap.antennas())
                        .flat_map(|a| snap.tables[a][snap.history - 1].as_slice().iter().copied())
                        .collect();
                    (origin, ratio(&last, &truth)?, h_ref.clone())
                }
                Baseline::PortLlm => {
                    let pred = predicted.ok_or_else(|| Error::InvalidInput("port_llm needs predictions".into()))?;
                    let steps: Vec<&[Complex64]> = pred.iter().map(|p| &p[f * np..(f + 1) * np]).collect();
                    let flat: Vec<Complex64> = steps.iter().flat_map(|s| s.iter().copied()).collect();
                    (choose(&steps, snap, &h_ref)?, ratio(&flat, &truth)?, h_ref.clone())
                }
                Baseline::OraclePorts => {
                    let steps: Vec<&[Complex64]> = (0..snap.antennas()).map(|a| snap.future(a, f).as_slice()).collect();
                    (choose(&steps, snap, &h_ref)?, 0.0, h_ref.clone())
                }
            };
            let h_true = snap.at_port(f, port);
            Ok(StepOutcome {
                port,
                table_ratio,
                channel_ratio: ratio(&h_true, &h_used)?,
                gain: beamforming_gain(&h_true, &h_used)?,
            })
        })
        .collect()
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub baseline: Baseline,
    pub speed_kmh: f64,
    pub bs: [usize; 2],
    pub snr_db: f64,
    pub se_bps_hz: f64,
    pub nmse_t_db: f64,
    pub nmse_v_db: f64,
    pub n_snapshots: usize,
}

/// NMSE against prediction step (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub baseline: Baseline,
    pub speed_kmh: f64,
    pub bs: [usize; 2],
    pub step: usize,
    pub nmse_t_db: f64,
    pub nmse_v_db: f64,
}

/// Port chosen by a moving-port baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub baseline: Baseline,
    pub speed_kmh: f64,
    pub bs: [usize; 2],
    pub snapshot: usize,
    pub step: usize,
    pub port: PortIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ResultRow>,
    pub steps: Vec<StepRow>,
    pub traces: Vec<TraceRow>,
}

/// Run the configured sweep. `model` is needed iff `port_llm` is listed.
pub fn evaluate(run: &RunConfig, model: Option<&PortLlm<f32>>) -> Result<EvalReport> {
    run.validate()?;
    let ev = &run.eval;
    let needs_model = ev.baselines.contains(&Baseline::PortLlm);
    if needs_model {
        let m = model.ok_or_else(|| Error::config("eval.baselines", "port_llm requires a checkpoint"))?;
        let c = m.config();
        if c.grid != run.channel.ports || c.history != run.scenario.history || c.horizon != run.scenario.horizon {
            return Err(Error::Data(format!(
                "checkpoint expects grid {:?}, T={}, F={}; config has {:?}, T={}, F={}",
                c.grid, c.history, c.horizon, run.channel.ports, run.scenario.history, run.scenario.horizon
            )));
        }
    }
    let horizon = run.scenario.horizon;
    let draws = ev.snapshots * ev.n_ue;
    let mut report = EvalReport::default();
    // [baseline][speed][array] -> per (draw, step) outcomes
    let mut cells: Vec<Vec<Vec<Vec<Vec<StepOutcome>>>>> =
        vec![vec![vec![Vec::new(); ev.arrays.len()]; ev.speeds_kmh.len()]; ev.baselines.len()];
    for (si, _) in ev.speeds_kmh.iter().enumerate() {
        for (ai, &array) in ev.arrays.iter().enumerate() {
            let per_draw: Vec<Result<Vec<Vec<StepOutcome>>>> = (0..draws)
                .into_par_iter()
                .map(|d| {
                    let snap = draw_snapshot(run, si, d, array)?;
                    let pred = match model {
                        Some(m) if needs_model => Some(predict_snapshot(m, &snap)?),
                        _ => None,
                    };
                    ev.baselines
                        .iter()
                        .map(|&b| run_baseline(b, &snap, pred.as_deref()))
                        .collect()
                })
                .collect();
            for outcomes in per_draw {
                for (bi, o) in outcomes?.into_iter().enumerate() {
                    cells[bi][si][ai].push(o);
                }
            }
        }
    }

    for (bi, &baseline) in ev.baselines.iter().enumerate() {
        for (si, &speed) in ev.speeds_kmh.iter().enumerate() {
            for (ai, &bs) in ev.arrays.iter().enumerate() {
                let cell = &cells[bi][si][ai];
                let all = cell.iter().flatten();
                let count = (draws * horizon) as f64;
                let t = all.clone().map(|o| o.table_ratio).sum::<f64>() / count;
                let v = all.clone().map(|o| o.channel_ratio).sum::<f64>() / count;
                for &snr_db in &ev.snr_db {
                    let snr = db_to_linear(snr_db);
                    // mean over snapshots per UE, summed over UEs
                    let mut se = 0.0;
                    for u in 0..ev.n_ue {
                        let sinrs: Vec<f64> = cell
                            .iter()
                            .skip(u)
                            .step_by(ev.n_ue)
                            .flatten()
                            .map(|o| snr * o.gain)
                            .collect();
                        se += spectral_efficiency(&sinrs);
                    }
                    report.rows.push(ResultRow {
                        baseline,
                        speed_kmh: speed,
                        bs,
                        snr_db,
                        se_bps_hz: se,
                        nmse_t_db: to_db(t),
                        nmse_v_db: to_db(v),
                        n_snapshots: ev.snapshots,
                    });
                }
                for f in 0..horizon {
                    let at = cell.iter().map(|o| &o[f]);
                    let n = draws as f64;
                    report.steps.push(StepRow {
                        baseline,
                        speed_kmh: speed,
                        bs,
                        step: f + 1,
                        nmse_t_db: to_db(at.clone().map(|o| o.table_ratio).sum::<f64>() / n),
                        nmse_v_db: to_db(at.map(|o| o.channel_ratio).sum::<f64>() / n),
                    });
                }
                if matches!(baseline, Baseline::PortLlm | Baseline::OraclePorts) {
                    for (d, o) in cell.iter().enumerate() {
                        for (f, s) in o.iter().enumerate() {
                            report.traces.push(TraceRow {
                                baseline,
                                speed_kmh: speed,
                                bs,
                                snapshot: d,
                                step: f + 1,
                                port: s.port,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

fn write_comments<W: Write>(out: &mut W, comments: &[(&str, String)]) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}: {v}")?;
    }
    Ok(())
}

pub fn write_results_csv<W: Write>(mut out: W, rows: &[ResultRow], comments: &[(&str, String)]) -> Result<()> {
    write_comments(&mut out, comments)?;
    writeln!(out, "baseline,speed_kmh,bs_ny,bs_nz,snr_db,se_bps_hz,nmse_t_db,nmse_v_db,n_snapshots")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.4},{:.4},{}",
            r.baseline.as_str(),
            r.speed_kmh,
            r.bs[0],
            r.bs[1],
            r.snr_db,
            r.se_bps_hz,
            r.nmse_t_db,
            r.nmse_v_db,
            r.n_snapshots
        )?;
    }
    Ok(())
}

/// Long-format NMSE against prediction step.
pub fn write_nmse_steps_csv<W: Write>(mut out: W, rows: &[StepRow], comments: &[(&str, String)]) -> Result<()> {
    write_comments(&mut out, comments)?;
    writeln!(out, "baseline,speed_kmh,bs_ny,bs_nz,step,nmse_t_db,nmse_v_db")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4}",
            r.baseline.as_str(),
            r.speed_kmh,
            r.bs[0],
            r.bs[1],
            r.step,
            r.nmse_t_db,
            r.nmse_v_db
        )?;
    }
    Ok(())
}

/// Long-format SE against SNR.
pub fn write_se_snr_csv<W: Write>(mut out: W, rows: &[ResultRow], comments: &[(&str, String)]) -> Result<()> {
    write_comments(&mut out, comments)?;
    writeln!(out, "baseline,speed_kmh,bs_ny,bs_nz,snr_db,se_bps_hz")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            r.baseline.as_str(),
            r.speed_kmh,
            r.bs[0],
            r.bs[1],
            r.snr_db,
            r.se_bps_hz
        )?;
    }
    Ok(())
}

/// Port traces with 1-based `(n, m)`.
pub fn write_traces_csv<W: Write>(mut out: W, rows: &[TraceRow], comments: &[(&str, String)]) -> Result<()> {
    write_comments(&mut out, comments)?;
    writeln!(out, "baseline,speed_kmh,bs_ny,bs_nz,snapshot,step,n,m")?;
    for r in rows {
        let (n, m) = r.port.one_based();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.baseline.as_str(),
            r.speed_kmh,
            r.bs[0],
            r.bs[1],
            r.snapshot,
            r.step,
            n,
            m
        )?;
    }
    Ok(())
}
