//! Figure datasets. Each scenario renders its files in memory, then
//! [`run_scenario`] writes them under `<output_dir>/<scenario-slug>/`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{Scenario, ScenarioConfig};
use crate::devices::{expected_h_rate, GateState};
use crate::error::Error;
use crate::link::{random_key, RngStreams, SimulatedLink, StreamKind};
use crate::optics::{
    db_to_factor, fiber_loss_db, pbs_h_probability, pbs_v_probability, phase_for_voltage, sample_poisson,
    AlignmentError, PolarizationPhase,
};
use crate::protocol::{alice_run, bob_run_stream, run_session, SessionConfig};
use crate::report::{session_summary, write_csv, write_cycle_log, write_qber_series, Summary};
use crate::scalar::Picos;
use crate::tagfile;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Rendered files plus headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Summary,
}

impl ScenarioOutput {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

// Stream-index prefixes keeping scenario-specific draws apart.
const LANE_A: u64 = 1 << 40;
const LANE_B: u64 = 2 << 40;

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows).expect("writing to memory");
    buf
}

/// Expected counts over `[start, end)` ps for a light field gated at the
/// clock: `rate(cycle, open)` in counts/s; `open_len` ps of every cycle open.
fn integrate(start: u64, end: u64, period: u64, open_len: u64, rate: impl Fn(u64, bool) -> f64) -> f64 {
    let mut mean = 0.0;
    for cycle in start / period..=(end - 1) / period {
        let c0 = cycle * period;
        let lo = start.max(c0);
        let hi = end.min(c0 + period);
        let open = hi.min(c0 + open_len).saturating_sub(lo);
        let closed = (hi - lo) - open;
        mean += rate(cycle, true) * Picos(open).secs_f64() + rate(cycle, false) * Picos(closed).secs_f64();
    }
    mean
}

fn open_len(cfg: &SessionConfig<f64>) -> u64 {
    (cfg.modulator.gate_open_fraction * cfg.clock.period().0 as f64).round() as u64
}

fn bin_edges(span: Picos, width: Picos) -> impl Iterator<Item = (u64, u64, u64)> {
    let n = span.0.div_ceil(width.0);
    (0..n).map(move |b| (b, b * width.0, ((b + 1) * width.0).min(span.0)))
}

/// Gated pulse train seen by the H detector at two fiber lengths.
fn pulse_train(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let s = &cfg.session;
    let p = &cfg.params;
    let streams = RngStreams::new(s.seed);
    let period = s.clock.period().0;
    let open = open_len(s);
    let span = Picos::from_secs(p.trace_duration_s);
    let width = s.bin_width();
    let reference = fiber_loss_db(s.channel.reference_length_km, s.channel.alpha_db_per_km)?;
    let extinction = db_to_factor(s.modulator.extinction_db);
    let dark = s.detector.dark_rate;

    let lengths = [p.pulse_train_short_length_km, s.channel.length_km];
    let mut peak_rates = [0.0; 2];
    for (slot, &len) in peak_rates.iter_mut().zip(&lengths) {
        *slot = p.pulse_train_peak_rate_cps * db_to_factor(fiber_loss_db(len, s.channel.alpha_db_per_km)? - reference);
    }

    let mut rows = Vec::new();
    let mut open_sums = [0u64; 2];
    let mut open_bins = 0u64;
    for (b, lo, hi) in bin_edges(span, width) {
        let mut counts = [0u64; 2];
        for (k, &peak) in peak_rates.iter().enumerate() {
            let mean = integrate(lo, hi, period, open, |_, is_open| {
                dark + if is_open { peak } else { peak * extinction }
            });
            let mut rng = streams.stream(StreamKind::Detector, [LANE_A, LANE_B][k] | b);
            counts[k] = sample_poisson(mean, &mut rng)?;
        }
        let fully_open = hi - lo == width.0 && lo % period + width.0 <= open && lo / period == (hi - 1) / period;
        if fully_open {
            open_bins += 1;
            open_sums[0] += counts[0];
            open_sums[1] += counts[1];
        }
        rows.push([
            Picos(lo).secs_f64().to_string(),
            counts[0].to_string(),
            counts[1].to_string(),
        ]);
    }

    let mut summary = Summary::new();
    summary
        .push("short_length_km", lengths[0])
        .push("long_length_km", lengths[1])
        .push("bins", rows.len())
        .push("open_bins", open_bins);
    if open_bins > 0 {
        let w = width.secs_f64();
        let mean_short = open_sums[0] as f64 / open_bins as f64;
        let mean_long = open_sums[1] as f64 / open_bins as f64;
        summary
            .push("peak_rate_short_cps", mean_short / w)
            .push("peak_rate_long_cps", mean_long / w)
            .push("peak_ratio", mean_long / mean_short)
            .push("expected_peak_ratio", (dark + peak_rates[1]) / (dark + peak_rates[0]));
    }
    Ok(ScenarioOutput {
        scenario: Scenario::PulseTrain,
        files: vec![(
            "pulse_train.csv".into(),
            csv_bytes(&["time_s", "counts_short", "counts_long"], rows),
        )],
        summary,
    })
}

/// One row of the voltage sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub voltage: f64,
    pub h_cps: f64,
    pub v_cps: f64,
    pub total_cps: f64,
}

/// Expected H and V intensities over the configured voltage grid.
pub fn sweep_points(cfg: &ScenarioConfig) -> Result<Vec<SweepPoint>, Error> {
    let p = &cfg.params;
    let n = ((p.sweep_v_max - p.sweep_v_min) / p.sweep_v_step + 1e-9).floor() as u64;
    (0..=n)
        .map(|k| {
            // Snap to the 1e-12 V grid so 0.1-V steps print as 0.3, not 0.30000000000000004.
            let v = ((p.sweep_v_min + k as f64 * p.sweep_v_step) * 1e12).round() / 1e12;
            let phi = phase_for_voltage(v, cfg.session.v_pi, p.sweep_v_offset)?;
            let aligned = AlignmentError::aligned();
            Ok(SweepPoint {
                voltage: v,
                h_cps: p.sweep_total_cps * pbs_h_probability(phi, aligned),
                v_cps: p.sweep_total_cps * pbs_v_probability(phi, aligned),
                total_cps: p.sweep_total_cps,
            })
        })
        .collect()
}

fn voltage_sweep(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let points = sweep_points(cfg)?;
    let streams = RngStreams::new(cfg.session.seed);
    let mut rows = Vec::with_capacity(points.len());
    for (k, pt) in points.iter().enumerate() {
        // One second of counting per arm.
        let h = sample_poisson(pt.h_cps, &mut streams.stream(StreamKind::Detector, LANE_A | k as u64))?;
        let v = sample_poisson(pt.v_cps, &mut streams.stream(StreamKind::Detector, LANE_B | k as u64))?;
        rows.push([
            pt.voltage.to_string(),
            pt.h_cps.to_string(),
            pt.v_cps.to_string(),
            pt.total_cps.to_string(),
            h.to_string(),
            v.to_string(),
        ]);
    }
    let by = |f: fn(&SweepPoint) -> f64, max: bool| {
        points
            .iter()
            .fold(None::<&SweepPoint>, |best, pt| match best {
                Some(b) if (max && f(b) >= f(pt)) || (!max && f(b) <= f(pt)) => Some(b),
                _ => Some(pt),
            })
            .map_or(f64::NAN, |pt| pt.voltage)
    };
    let worst = points
        .iter()
        .map(|pt| (pt.h_cps + pt.v_cps - pt.total_cps).abs())
        .fold(0.0, f64::max);
    let mut summary = Summary::new();
    summary
        .push("points", points.len())
        .push("h_argmax_v", by(|p| p.h_cps, true))
        .push("h_argmin_v", by(|p| p.h_cps, false))
        .push("max_complementarity_error", worst);
    Ok(ScenarioOutput {
        scenario: Scenario::VoltageSweep,
        files: vec![(
            "voltage_sweep.csv".into(),
            csv_bytes(
                &[
                    "voltage_v",
                    "h_expected_cps",
                    "v_expected_cps",
                    "total_cps",
                    "h_counts",
                    "v_counts",
                ],
                rows,
            ),
        )],
        summary,
    })
}

/// CW light through the phase modulator driven by random bits.
fn phase_mod_cw(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let s = &cfg.session;
    let p = &cfg.params;
    let streams = RngStreams::new(s.seed);
    let period = s.clock.period().0;
    let span = Picos::from_secs(p.trace_duration_s);
    let cycles = span.0.div_ceil(period) as usize;
    let key = random_key(&streams, cycles);
    // CW plateaus keep the calibrated H : V-leak : dark proportions.
    let cw = crate::devices::DetectorSpec {
        signal_rate_h: p.cw_h_rate_cps,
        leak_rate_v: p.cw_h_rate_cps * s.detector.leak_rate_v / s.detector.signal_rate_h,
        dark_rate: s.detector.dark_rate,
    };
    let voltage = |c: u64| f64::from(key[c as usize]) * s.v_pi;
    let rates = key
        .iter()
        .map(|&b| {
            let phi = if b == 1 {
                PolarizationPhase::vertical()
            } else {
                PolarizationPhase::horizontal()
            };
            expected_h_rate(phi, AlignmentError::aligned(), GateState::Open, &cw, 0.0)
        })
        .collect::<Vec<_>>();

    let mut rows = Vec::new();
    for (b, lo, hi) in bin_edges(span, s.bin_width()) {
        let mean = integrate(lo, hi, period, period, |c, _| rates[c as usize]);
        let n = sample_poisson(mean, &mut streams.stream(StreamKind::Detector, LANE_A | b))?;
        rows.push([
            Picos(lo).secs_f64().to_string(),
            voltage(lo / period).to_string(),
            n.to_string(),
        ]);
    }
    let mut summary = Summary::new();
    summary
        .push("cycles", cycles)
        .push("bins", rows.len())
        .push(
            "h_rate_cps",
            rates
                .iter()
                .zip(&key)
                .find(|(_, &b)| b == 0)
                .map_or(f64::NAN, |(r, _)| *r),
        )
        .push(
            "v_rate_cps",
            rates
                .iter()
                .zip(&key)
                .find(|(_, &b)| b == 1)
                .map_or(f64::NAN, |(r, _)| *r),
        );
    Ok(ScenarioOutput {
        scenario: Scenario::PhaseModCw,
        files: vec![(
            "phase_mod_cw.csv".into(),
            csv_bytes(&["time_s", "voltage_v", "counts"], rows),
        )],
        summary,
    })
}

/// CW at 0 V until the clock starts, then gated pulses with random bits.
fn pulsed_random(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let p = &cfg.params;
    let width = cfg.session.bin_width();
    let start = Picos::from_secs(p.pulsed_mcss_start_s);
    let mut s = cfg.session.clone();
    s.duration_s = p.trace_duration_s - p.pulsed_mcss_start_s;
    if s.full_cycles() < 1 {
        return Err(Error::invalid(
            "pulsed.mcss_start_s",
            "trace.duration_s - pulsed.mcss_start_s must cover at least one clock period",
        )
        .into());
    }
    let streams = RngStreams::new(s.seed);
    let key = random_key(&streams, s.full_cycles() as usize);
    let (schedule, pulses) = alice_run(&key, &s)?;
    let link = SimulatedLink::new(&s, &pulses)?;
    let period = s.clock.period().0;

    let cw_rate = expected_h_rate(
        PolarizationPhase::horizontal(),
        AlignmentError::aligned(),
        GateState::Open,
        &s.detector,
        s.channel.extra_loss_db()?,
    );
    let mut rows = Vec::new();
    let pre_bins = start.0 / width.0;
    for b in 0..pre_bins {
        let n = sample_poisson(
            cw_rate * width.secs_f64(),
            &mut streams.stream(StreamKind::Detector, LANE_A | b),
        )?;
        rows.push([
            Picos(b * width.0).secs_f64().to_string(),
            "0".into(),
            "0".into(),
            n.to_string(),
        ]);
    }
    for b in 0..link.bins_in_span() {
        let sample = link.bin_sample(b)?;
        let t = sample.bin_start.0;
        let v = schedule.entries.get((t / period) as usize).map_or(0.0, |e| e.voltage);
        rows.push([
            Picos(start.0 + t).secs_f64().to_string(),
            s.clock.level_at(sample.bin_start).to_string(),
            v.to_string(),
            sample.counts.to_string(),
        ]);
    }
    let mut summary = Summary::new();
    summary
        .push("mcss_start_s", p.pulsed_mcss_start_s)
        .push("cycles", key.len())
        .push("bins", rows.len())
        .push("key", key.iter().map(|b| b.to_string()).collect::<String>());
    Ok(ScenarioOutput {
        scenario: Scenario::PulsedRandom,
        files: vec![(
            "pulsed_random.csv".into(),
            csv_bytes(&["time_s", "mcss_v", "pm_voltage_v", "counts"], rows),
        )],
        summary,
    })
}

/// Short tag stream, re-binned and gated by its own MCSS edges.
fn gating_demo(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let mut s = cfg.session.clone();
    s.duration_s = cfg.params.gating_span_s;
    if s.full_cycles() < 1 {
        return Err(Error::invalid("gating.span_s", "must cover at least one clock period").into());
    }
    let key = random_key(&RngStreams::new(s.seed), s.full_cycles() as usize);
    let (_, pulses) = alice_run(&key, &s)?;
    let tags = SimulatedLink::new(&s, &pulses)?.tag_stream(&key)?;
    let analysis = bob_run_stream(&tags, &s)?;
    let bins = crate::timing::ttu_bin(
        &crate::timing::channel_events(&tags, crate::timing::TagChannel::HDetector),
        s.bin_width(),
        Some(s.duration()),
    )?;

    let mut csv_tags = Vec::new();
    let mut bin_tags = Vec::new();
    tagfile::write_csv(&mut csv_tags, &tags).expect("writing to memory");
    tagfile::write_binary(&mut bin_tags, &tags).expect("writing to memory");

    let retained_cycle = |start: Picos| {
        analysis
            .gated
            .iter()
            .find(|g| g.sample.is_some_and(|x| x.bin_start == start))
            .map(|g| g.cycle.to_string())
            .unwrap_or_default()
    };
    let bin_rows = bins.iter().map(|b| {
        [
            b.bin_start.secs_f64().to_string(),
            b.counts.to_string(),
            retained_cycle(b.bin_start),
        ]
    });
    let bins_csv = csv_bytes(&["bin_start_s", "counts", "retained_cycle"], bin_rows);
    let gated_rows = analysis.gated.iter().zip(&analysis.classified).map(|(g, c)| {
        [
            g.cycle.to_string(),
            g.sample.map(|x| x.bin_start.secs_f64().to_string()).unwrap_or_default(),
            c.raw_count.map(|n| n.to_string()).unwrap_or_default(),
            c.decision.as_str().to_string(),
            key.get(g.cycle as usize).map(|b| b.to_string()).unwrap_or_default(),
        ]
    });
    let gated_csv = csv_bytes(&["cycle", "bin_start_s", "counts", "decision", "alice_bit"], gated_rows);

    let retained = analysis.gated.iter().filter(|g| g.sample.is_some()).count();
    let errors = analysis
        .classified
        .iter()
        .zip(&key)
        .filter(|(c, &b)| c.decision.bit().is_some_and(|x| x != b))
        .count();
    let mut summary = Summary::new();
    summary
        .push("span_s", cfg.params.gating_span_s)
        .push("tag_events", tags.len())
        .push("bins", bins.len())
        .push("mcss_edges", analysis.edges.len())
        .push("retained", retained)
        .push("sender_bits_recovered", analysis.sender_bits == key)
        .push("key_errors", errors);
    Ok(ScenarioOutput {
        scenario: Scenario::GatingDemo,
        files: vec![
            ("tags.csv".into(), csv_tags),
            ("tags.bin".into(), bin_tags),
            ("gating_bins.csv".into(), bins_csv),
            ("gated.csv".into(), gated_csv),
        ],
        summary,
    })
}

fn key_run(cfg: &ScenarioConfig, scenario: Scenario) -> Result<ScenarioOutput, ScenarioError> {
    let report = run_session(&cfg.session)?;
    let mut summary = session_summary(&report);
    let mut files = Vec::new();
    match scenario {
        Scenario::KeyRun => {
            let mut buf = Vec::new();
            write_cycle_log(&mut buf, &report.per_cycle_log).expect("writing to memory");
            files.push(("per_cycle.csv".into(), buf));
        }
        _ => {
            let t_stable = cfg.session.channel.drift.t_stable_s;
            let before = report
                .qber_series
                .iter()
                .filter(|p| p.time_s <= t_stable)
                .filter_map(|p| p.cumulative)
                .fold(0.0, f64::max);
            let overall = report
                .qber_series
                .iter()
                .filter_map(|p| p.cumulative)
                .fold(0.0, f64::max);
            summary
                .push("max_cumulative_qber_until_stable", before)
                .push("max_cumulative_qber", overall);
            let mut buf = Vec::new();
            write_qber_series(&mut buf, &report.qber_series).expect("writing to memory");
            files.push(("qber.csv".into(), buf));
        }
    }
    Ok(ScenarioOutput {
        scenario,
        files,
        summary,
    })
}

/// Renders the configured scenario without touching the filesystem.
pub fn render_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    cfg.session.validate()?;
    let mut out = match cfg.scenario {
        Scenario::PulseTrain => pulse_train(cfg),
        Scenario::VoltageSweep => voltage_sweep(cfg),
        Scenario::PhaseModCw => phase_mod_cw(cfg),
        Scenario::PulsedRandom => pulsed_random(cfg),
        Scenario::GatingDemo => gating_demo(cfg),
        Scenario::KeyRun => key_run(cfg, Scenario::KeyRun),
        Scenario::QberRun => key_run(cfg, Scenario::QberRun),
    }?;
    let mut head = Summary::new();
    head.push("scenario", cfg.scenario.name())
        .push("seed", cfg.session.seed);
    for (k, v) in out.summary.entries() {
        head.push(k, v);
    }
    out.summary = head;
    let mut text = Vec::new();
    out.summary.write(&mut text).expect("writing to memory");
    out.files.push(("summary.txt".into(), text));
    Ok(out)
}

/// Directory a scenario writes into.
pub fn scenario_dir(output_dir: &Path, scenario: Scenario) -> PathBuf {
    output_dir.join(scenario.slug())
}

/// Renders and writes the configured scenario; returns its summary.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let out = render_scenario(cfg)?;
    let dir = scenario_dir(&cfg.output_dir, cfg.scenario);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScenarioError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(out)
}
