use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mmfkey::calibration::Verdict;
use mmfkey::protocol::{
    run_calibration_phase, run_session, KeyStatus, SessionChannels, SessionOutcome,
    SessionTranscript,
};
use mmfkey::rng::seeded;
use mmfkey::security::{security_report, SecurityReport};
use serde::Serialize;

use crate::config::{parse_config, ExperimentConfig, Format};
use crate::figures::run_figure;
use crate::table::{Cell, Provenance, Table};
use crate::{Cli, CliError, Command};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Session { replay: Some(path) } = &cli.command {
        let config = cli.config.as_ref().map(|_| load(cli)).transpose()?;
        return replay(path, config.as_ref(), out_path(cli, config.as_ref()));
    }
    let config = load(cli)?;
    let out = out_path(cli, Some(&config));
    let format = cli.format.unwrap_or(config.output.format);
    match &cli.command {
        Command::Calibrate => calibrate(&config, out.as_deref(), format),
        Command::Session { .. } => session(&config, out.as_deref()),
        Command::Figure { id } => {
            write_table(&run_figure(*id, &config)?, &config, out.as_deref(), format)
        }
        Command::Report => write_table(&report(&config)?, &config, out.as_deref(), format),
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut config = parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_path(cli: &Cli, config: Option<&ExperimentConfig>) -> Option<PathBuf> {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.path.clone()))
}

fn write_table(
    table: &Table,
    config: &ExperimentConfig,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let provenance = Provenance::of(config);
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            table.write(&mut w, format, &provenance)?;
            w.flush()?;
        }
        None => table.write(io::stdout().lock(), format, &provenance)?,
    }
    Ok(())
}

fn calibrate(
    config: &ExperimentConfig,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let session = config.session_config()?;
    let channels = SessionChannels::draw(&session)?
        .ok_or_else(|| CliError::Config("calibration needs the simulated signal model".into()))?;
    let phase = run_calibration_phase(&session, &channels, &mut seeded(config.seed))?;
    let mut table = Table::new(&["symbol", "alpha2"])
        .note(format!(
            "focusing fidelity per detector after calibration; {} segments, {} repetitions, {} photons per probe",
            config.calibration.n_segments, config.calibration.repetitions, config.calibration.photons_per_pulse
        ))
        .note(format!(
            "speckle contrast {:?}, threshold {:?}, verdict {}",
            phase.tamper.contrast,
            config.protocol.contrast_threshold,
            if phase.tamper.verdict == Verdict::Attacked { "attacked" } else { "honest" }
        ));
    if phase.result.degenerate {
        table
            .notes
            .push("reconstruction degenerate: no interference signal in the record".into());
    }
    for (symbol, alpha2) in phase.result.fidelity_per_symbol.iter().enumerate() {
        table.push(vec![symbol.into(), (*alpha2).into()]);
    }
    write_table(&table, config, out, format)?;
    if phase.eve_detected {
        return Err(CliError::Abort(format!(
            "calibration speckle contrast {:.3} below threshold",
            phase.tamper.contrast
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    abort_reason: Option<String>,
    key_length: usize,
    symbols_sent: usize,
    discarded: usize,
    sampled: usize,
    qer_estimate: Option<f64>,
    qer_predicted: Option<f64>,
    shaping_fidelity: Option<f64>,
    /// Fraction of released key positions where Alice and Bob differ.
    key_disagreement: Option<f64>,
    eve_detected_in_calibration: bool,
    eve_observations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    security_report: Option<SecurityReport>,
}

fn summarize(
    t: &SessionTranscript,
    config: Option<&ExperimentConfig>,
) -> Result<SessionSummary, CliError> {
    let (status, abort_reason) = match &t.outcome {
        Some(SessionOutcome::Released { .. }) => ("released", None),
        Some(SessionOutcome::Aborted { reason }) => ("aborted", Some(reason.clone())),
        None => return Err(CliError::Config("transcript has no outcome".into())),
    };
    let (alice, bob) = t.final_keys();
    let key_disagreement = (!alice.is_empty()).then(|| {
        alice.iter().zip(&bob).filter(|(a, b)| a != b).count() as f64 / alice.len() as f64
    });
    let security_report = match config {
        Some(c) => {
            let mut params = c.report_params();
            params.link.mu2 = c.session_config()?.pulse_photons();
            if let Some(alpha2) = t.shaping_fidelity {
                params.link.alpha2 = alpha2;
            }
            Some(security_report(&params)?)
        }
        None => None,
    };
    Ok(SessionSummary {
        provenance: config.map(Provenance::of),
        status,
        abort_reason,
        key_length: alice.len(),
        symbols_sent: t.alice_key.len(),
        discarded: t.count(KeyStatus::Discarded),
        sampled: t.count(KeyStatus::Sampled),
        qer_estimate: t.estimated_qer,
        qer_predicted: t.predicted_qer,
        shaping_fidelity: t.shaping_fidelity,
        key_disagreement,
        eve_detected_in_calibration: t.eve_detected_in_calibration,
        eve_observations: t.eve_observations,
        security_report,
    })
}

fn write_summary(summary: &SessionSummary, dir: Option<&Path>) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
            serde_json::to_writer_pretty(&mut w, summary)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            serde_json::to_writer_pretty(&mut w, summary)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn finish(summary: &SessionSummary) -> Result<(), CliError> {
    match &summary.abort_reason {
        Some(reason) => Err(CliError::Abort(reason.clone())),
        None => Ok(()),
    }
}

/// Runs one session. With an output directory, writes `transcript.jsonl`
/// and `summary.json` there; otherwise prints the summary.
fn session(config: &ExperimentConfig, out: Option<&Path>) -> Result<(), CliError> {
    if config.sweep.is_some() {
        return Err(CliError::Config(
            "`session` runs a single configuration; remove [sweep] or use `report`".into(),
        ));
    }
    let transcript = run_session(&config.session_config()?)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("transcript.jsonl"))?);
        transcript.write_jsonl(&mut w)?;
        w.flush()?;
    }
    let summary = summarize(&transcript, Some(config))?;
    write_summary(&summary, out)?;
    finish(&summary)
}

fn replay(
    path: &Path,
    config: Option<&ExperimentConfig>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let transcript = SessionTranscript::read_jsonl(BufReader::new(file))?;
    let summary = summarize(&transcript, config)?;
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    write_summary(&summary, out.as_deref())?;
    finish(&summary)
}

fn report_row(report: &SecurityReport) -> Vec<Cell> {
    vec![
        report.h_bob.into(),
        report.h_eve_single.into(),
        report.h_eve_coherent_bound.into(),
        report.h_eve_coherent_mc.value.into(),
        report.h_eve_coherent_mc.stderr.into(),
        report.beta2.into(),
        report.qer_secure.into(),
        report.qer_interception.into(),
        report.secure_mu2.mu2.into(),
        report.secure_mu2.saturated.into(),
        report.throughput_bits_per_s.into(),
    ]
}

const REPORT_COLUMNS: [&str; 11] = [
    "h_bob",
    "h_eve_single",
    "h_eve_coherent_bound",
    "h_eve_coherent_mc",
    "h_eve_coherent_mc_stderr",
    "beta2",
    "qer_secure",
    "qer_interception",
    "secure_mu2",
    "secure_mu2_saturated",
    "throughput_bits_per_s",
];

/// One row of figures of merit, or one per sweep value.
fn report(config: &ExperimentConfig) -> Result<Table, CliError> {
    let link = config.link_params();
    let note = format!(
        "security figures of merit in bits per symbol; alpha2 = {}, mu2 = {}, N = {}, S = {}, L = {} km",
        link.alpha2, link.mu2, link.n_modes, link.n_symbols, link.length
    );
    match &config.sweep {
        None => {
            let mut t = Table::new(&REPORT_COLUMNS).note(note);
            t.push(report_row(&security_report(&config.report_params())?));
            Ok(t)
        }
        Some(sweep) => {
            let mut columns = vec![sweep.parameter.as_str()];
            columns.extend(REPORT_COLUMNS);
            let mut t = Table::new(&columns)
                .note(format!("sweep over {}", sweep.parameter))
                .note(note);
            for &v in &sweep.values {
                let cell = config.with_parameter(&sweep.parameter, v)?;
                let mut row = vec![Cell::Num(v)];
                row.extend(report_row(&security_report(&cell.report_params())?));
                t.push(row);
            }
            Ok(t)
        }
    }
}
