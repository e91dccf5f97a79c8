use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use xaihealth_core::altai::{evaluate_checklist, items_for_phase, Answer};
use xaihealth_core::dataset::load_dataset;
use xaihealth_core::metrics::{write_csv, MetricSummary};
use xaihealth_core::pipeline::{
    case_outcomes, emit_report, evaluate_machine_metrics, phase1_verdict, phase2_verdict, trust_results,
    MachineMetrics, PhaseResult, PipelineError, Study, TrustTable,
};
use xaihealth_core::sab::{generate_sab, SabConfig, SabError};
use xaihealth_core::trust::SessionStatus;
use xaihealth_core::Phase;

/// Evaluation engine for explainable-AI systems in healthcare.
#[derive(Debug, Parser)]
#[command(name = "xaihealth", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic attribution benchmark data.
    Sab {
        #[command(subcommand)]
        command: SabCommand,
    },
    /// Evaluate metrics without advancing the study.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Checklist status for one phase.
    Altai {
        #[command(subcommand)]
        command: AltaiCommand,
    },
    /// Advance a study through its phases.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// Check a deployed study for drift on new data.
    Monitor {
        #[arg(long)]
        study: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the evaluation report.
    Report {
        #[arg(long)]
        study: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the trust-elicitation API.
    Serve {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with built interface assets served at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SabCommand {
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct StudyArg {
    #[arg(long)]
    pub study: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    Machine {
        #[command(flatten)]
        study: StudyArg,
        /// Per-instance scores as CSV; defaults to `<study>/machine_metrics.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Trust {
        #[command(flatten)]
        study: StudyArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum AltaiCommand {
    Check {
        #[command(flatten)]
        study: StudyArg,
        #[arg(long)]
        phase: Phase,
    },
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    Run {
        #[command(flatten)]
        study: StudyArg,
        /// Stop after this phase has run.
        #[arg(long)]
        until: Option<Phase>,
    },
}

/// Exit codes: 0 pass, 1 gate failure, 2 usage or configuration, 3 runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    GateFail = 1,
    Config = 2,
    Runtime = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            status: Status::Config,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            status: Status::Runtime,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::ConfigurationIncomplete(_)
            | PipelineError::InvalidConfig(_)
            | PipelineError::PhaseOutOfOrder { .. }
            | PipelineError::NothingToReport
            | PipelineError::Dataset(_)
            | PipelineError::Altai(_) => Status::Config,
            PipelineError::Model(xaihealth_core::models::ModelError::InvalidSpec(_)) => Status::Config,
            _ => Status::Runtime,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<SabError> for CliError {
    fn from(e: SabError) -> Self {
        match e {
            SabError::RegionOutOfBounds { .. } | SabError::InvalidConfig(_) => CliError::config(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

type CliResult = Result<Status, CliError>;

fn status_of(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::GateFail
    }
}

pub fn run(cli: Cli, out: &mut String) -> CliResult {
    match cli.command {
        Command::Sab {
            command: SabCommand::Generate { config, out: dir },
        } => sab_generate(&config, &dir, out),
        Command::Eval {
            command: EvalCommand::Machine { study, csv },
        } => eval_machine(&study.study, csv.as_deref(), out),
        Command::Eval {
            command: EvalCommand::Trust { study },
        } => eval_trust(&study.study, out),
        Command::Altai {
            command: AltaiCommand::Check { study, phase },
        } => altai_check(&study.study, phase, out),
        Command::Study {
            command: StudyCommand::Run { study, until },
        } => study_run(&study.study, until, out),
        Command::Monitor { study, data } => monitor(&study, &data, out),
        Command::Report { study, out: file } => report(&study, file.as_deref(), out),
        Command::Serve { study, port, host, ui } => serve(&study, &host, port, ui),
    }
}

fn sab_generate(config: &Path, dir: &Path, out: &mut String) -> CliResult {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::config(format!("{}: {e}", config.display())))?;
    let cfg: SabConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", config.display())))?;
    let (dataset, model) = generate_sab(&cfg)?;
    let manifest = dataset
        .write_to_dir(dir)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let model_path = dir.join("model.json");
    std::fs::write(
        &model_path,
        serde_json::to_string_pretty(&model).expect("model serializes") + "\n",
    )
    .map_err(|e| CliError::runtime(format!("{}: {e}", model_path.display())))?;
    let positives = dataset.instances.iter().filter(|i| i.label == 1).count();
    let _ = writeln!(
        out,
        "wrote {} cases ({positives} positive) to {}",
        dataset.len(),
        manifest.display()
    );
    let _ = writeln!(out, "wrote transparent model to {}", model_path.display());
    Ok(Status::Pass)
}

fn summary_line(out: &mut String, name: &str, s: &MetricSummary) {
    let _ = writeln!(
        out,
        "{name:<18} mean={:.4} std={:.4} n={}",
        s.mean,
        s.std,
        s.per_instance.len()
    );
}

fn print_machine(out: &mut String, m: &MachineMetrics) {
    let _ = writeln!(
        out,
        "explainer {} | epsilon={:.6} num_samples={} seed={}",
        m.explainer_id, m.perturbation.epsilon, m.perturbation.num_samples, m.perturbation.seed
    );
    summary_line(out, "lle", &m.lle);
    summary_line(out, "sensitivity_avg", &m.sensitivity_avg);
    summary_line(out, "sensitivity_max", &m.sensitivity_max);
    for (name, s) in [
        ("fidelity_f1", &m.fidelity_f1),
        ("fidelity_cosine", &m.fidelity_cosine),
        ("entropy", &m.entropy),
        ("topk_mass", &m.topk_mass),
        ("localisation", &m.localisation),
    ] {
        if let Some(s) = s {
            summary_line(out, name, s);
        }
    }
    let _ = writeln!(
        out,
        "randomisation      rho_mean={:.4} pass={}",
        m.randomisation.rho_mean, m.randomisation.pass
    );
}

fn print_result(out: &mut String, r: &PhaseResult) {
    let _ = writeln!(
        out,
        "{} (attempt {}): {}",
        r.phase,
        r.attempt,
        if r.pass { "pass" } else { "fail" }
    );
    for g in &r.gates {
        let _ = writeln!(out, "  {}", g.line());
    }
    if !r.altai.pass {
        let _ = writeln!(out, "  altai blocking: {}", r.altai.blocking.join(", "));
    }
    if !r.reasons.is_empty() {
        let reasons: Vec<String> = r
            .reasons
            .iter()
            .map(|x| {
                serde_json::to_value(x)
                    .map(|v| v.as_str().unwrap_or_default().to_string())
                    .unwrap_or_default()
            })
            .collect();
        let _ = writeln!(out, "  reasons: {}", reasons.join(", "));
    }
}

fn eval_machine(dir: &Path, csv: Option<&Path>, out: &mut String) -> CliResult {
    let study = Study::open(dir)?;
    let ctx = study.context()?;
    let metrics = evaluate_machine_metrics(
        &ctx.model,
        &ctx.config.explainer,
        &ctx.dataset,
        &ctx.perturbation(),
        ctx.config.randomisation_seed,
        ctx.config.gates.randomisation_rho_max,
        ctx.config.complexity_k,
    )?;
    print_machine(out, &metrics);

    let csv_path = csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("machine_metrics.csv"));
    let mut rows: Vec<(&str, &MetricSummary)> = vec![
        ("lle", &metrics.lle),
        ("sensitivity_avg", &metrics.sensitivity_avg),
        ("sensitivity_max", &metrics.sensitivity_max),
    ];
    for (name, s) in [
        ("fidelity_f1", &metrics.fidelity_f1),
        ("fidelity_cosine", &metrics.fidelity_cosine),
        ("entropy", &metrics.entropy),
        ("topk_mass", &metrics.topk_mass),
        ("localisation", &metrics.localisation),
    ] {
        if let Some(s) = s {
            rows.push((name, s));
        }
    }
    let file =
        std::fs::File::create(&csv_path).map_err(|e| CliError::runtime(format!("{}: {e}", csv_path.display())))?;
    write_csv(file, &rows).map_err(|e| CliError::runtime(e.to_string()))?;
    let _ = writeln!(out, "per-instance scores written to {}", csv_path.display());

    let items =
        items_for_phase(Phase::MachineCentred, &ctx.bank, &study.state().altai_answers).map_err(PipelineError::from)?;
    let result = phase1_verdict(
        metrics,
        evaluate_checklist(&items),
        &ctx.config.gates,
        study.state().attempt,
    );
    print_result(out, &result);
    Ok(status_of(result.pass))
}

fn eval_trust(dir: &Path, out: &mut String) -> CliResult {
    let study = Study::open(dir)?;
    let ctx = study.context()?;
    let all = study.sessions().load_all().map_err(PipelineError::from)?;
    let complete: Vec<_> = all
        .values()
        .filter(|s| s.status == SessionStatus::Complete && s.attempt == study.state().attempt)
        .collect();
    if complete.is_empty() {
        return Err(PipelineError::NoCompleteSessions.into());
    }
    let outcomes = case_outcomes(&ctx.model, &ctx.dataset)?;
    let trust = trust_results(&complete, &outcomes)?;
    let table = TrustTable::from_results(&trust);
    let _ = writeln!(out, "{:<16} {:>9} {:>9} {:>9}", "user", "precision", "recall", "f1");
    for row in table.rows.iter().chain(std::iter::once(&table.mean)) {
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9}",
            row.user, row.precision, row.recall, row.f1
        );
    }
    let items =
        items_for_phase(Phase::HumanCentred, &ctx.bank, &study.state().altai_answers).map_err(PipelineError::from)?;
    let result = phase2_verdict(
        trust,
        evaluate_checklist(&items),
        &ctx.config.gates,
        study.state().attempt,
    );
    print_result(out, &result);
    Ok(status_of(result.pass))
}

fn altai_check(dir: &Path, phase: Phase, out: &mut String) -> CliResult {
    let mut study = Study::open(dir)?;
    let ctx = study.context()?;
    if study.sync_answers(&ctx, "cli")? {
        let _ = writeln!(out, "imported updated answers file");
    }
    let items = items_for_phase(phase, &ctx.bank, &study.state().altai_answers).map_err(PipelineError::from)?;
    for item in &items {
        let answer = match item.answer {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::NotApplicable => "n/a",
            Answer::Unanswered => "-",
        };
        let _ = writeln!(
            out,
            "[{answer:>3}] {} (req {}) {}",
            item.item_id,
            item.requirement.number(),
            item.question
        );
    }
    let verdict = evaluate_checklist(&items);
    if verdict.pass {
        let _ = writeln!(out, "{phase}: checklist pass");
    } else {
        let _ = writeln!(out, "{phase}: checklist blocked by {}", verdict.blocking.join(", "));
    }
    Ok(status_of(verdict.pass))
}

fn study_run(dir: &Path, until: Option<Phase>, out: &mut String) -> CliResult {
    let mut study = Study::open_as(dir, "cli")?;
    let ctx = study.context()?;
    study.sync_answers(&ctx, "cli")?;
    let mut status = Status::Pass;
    while study.state().phase != Phase::Operation {
        let phase = study.state().phase;
        let result = match study.run_current_phase(&ctx, "cli") {
            Ok(r) => r,
            Err(PipelineError::NoCompleteSessions) => {
                let _ = writeln!(
                    out,
                    "{phase}: awaiting complete trust sessions (serve the study to collect them)"
                );
                break;
            }
            Err(e) => return Err(e.into()),
        };
        print_result(out, &result);
        if !result.pass {
            let _ = writeln!(
                out,
                "returned to {} (attempt {})",
                study.state().phase,
                study.state().attempt
            );
            status = Status::GateFail;
            break;
        }
        if until == Some(phase) {
            break;
        }
    }
    let _ = writeln!(out, "current phase: {}", study.state().phase);
    if study.state().results.is_empty() {
        return Ok(status);
    }
    study.write_report(None)?;
    let _ = writeln!(out, "report written to {}", study.paths().report_json.display());
    Ok(status)
}

fn monitor(dir: &Path, data: &Path, out: &mut String) -> CliResult {
    let mut study = Study::open_as(dir, "cli")?;
    let ctx = study.context()?;
    let dataset = load_dataset(data).map_err(PipelineError::from)?;
    let report = study.monitor(&ctx, "cli", &dataset)?;
    let _ = writeln!(
        out,
        "accuracy {:.4} (baseline {:.4}), mean_lle {:.4} (baseline {:.4})",
        report.accuracy, report.baseline_accuracy, report.mean_lle, report.baseline_mean_lle
    );
    for g in &report.gates {
        let _ = writeln!(out, "  {}", g.line());
    }
    let _ = writeln!(
        out,
        "drift: {}; recommendation: {}",
        report.drift, report.recommendation
    );
    Ok(status_of(!report.drift))
}

fn report(dir: &Path, file: Option<&Path>, out: &mut String) -> CliResult {
    let state = Study::read_state(dir)?;
    let report = emit_report(&state)?;
    let path = file.map(Path::to_path_buf).unwrap_or_else(|| dir.join("report.json"));
    std::fs::write(&path, report.to_json()).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for line in report.gate_lines() {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "report written to {}", path.display());
    Ok(Status::Pass)
}

fn serve(dir: &Path, host: &str, port: u16, ui: Option<PathBuf>) -> CliResult {
    let state = Arc::new(crate::server::AppState::load(dir)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::runtime(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::runtime(e.to_string()))?;
        eprintln!("serving study {} on http://{addr}", dir.display());
        crate::server::serve(listener, state, ui)
            .await
            .map_err(|e| CliError::runtime(e.to_string()))?;
        Ok(Status::Pass)
    })
}
