use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use simmiss_core::diagnostics::{self, MetaModelOptions, Outcome, Term};
use simmiss_core::ingest::{self, ColumnMapping};
use simmiss_core::metrics::{self, MeasureError, MeasureOptions, SensitivityError, SensitivityOptions};
use simmiss_core::report::{self, Format, MetaModelSection, MissingnessSection, PerformanceSection, Report};
use simmiss_core::strategy::{StrategyError, DEFAULT_NON_ANALYSIS_THRESHOLD};
use simmiss_core::{plot, HandlingStrategy, Measure, RecordSet, StatusKind, StrategyConfig, StudyDesign, TruthSpec};
use simmiss_runner::config::StudyConfig;

use crate::{Command, DataArgs, MeasureArgs, OutputArgs};

pub const BUNDLE_DESIGN: &str = "design.csv";
pub const BUNDLE_TRUTHS: &str = "truths.csv";
pub const BUNDLE_RECORDS: &str = "records.csv";
pub const RUN_SUMMARY: &str = "run_summary.json";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Strategy(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Strategy(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Strategy(m) => f.write_str(m),
        }
    }
}

fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        CliError::Strategy(e.to_string())
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::IncompatibleImputation { .. } => CliError::Strategy(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::Strategy(s) => s.into(),
            SensitivityError::Measure(m) => m.into(),
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Ingest { data, out } => ingest_cmd(&data, &out),
        Command::Report { data, output } => report_cmd(&data, &output),
        Command::Analyze {
            data,
            output,
            measures,
            strategy,
            strategy_config,
        } => analyze_cmd(&data, &output, &measures, strategy.as_deref(), strategy_config.as_deref()),
        Command::Sensitivity {
            data,
            output,
            measures,
            strategies,
        } => sensitivity_cmd(&data, &output, &measures, &strategies),
        Command::Metamodel {
            data,
            output,
            outcome,
            terms,
        } => metamodel_cmd(&data, &output, &outcome, terms.as_deref()),
        Command::Run { config, seed, reps, out } => run_cmd(&config, seed, reps, out),
        Command::Plotdata {
            data,
            kind,
            out,
            svg,
            highlight_threshold,
            strategies,
            measures,
            threshold,
        } => plotdata_cmd(&data, &kind, &out, svg, highlight_threshold, &strategies, measures.as_deref(), threshold),
    }
}

struct Sources {
    records: PathBuf,
    design: PathBuf,
    truths: PathBuf,
}

fn sources(a: &DataArgs) -> Result<Sources, CliError> {
    let pick = |explicit: &Option<PathBuf>, file: &str, flag: &str| match (explicit, &a.bundle) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(b)) => Ok(b.join(file)),
        (None, None) => Err(CliError::Usage(format!("--{flag} is required without --bundle"))),
    };
    Ok(Sources {
        records: pick(&a.records, BUNDLE_RECORDS, "records")?,
        design: pick(&a.design, BUNDLE_DESIGN, "design")?,
        truths: pick(&a.truths, BUNDLE_TRUTHS, "truths")?,
    })
}

fn load(a: &DataArgs) -> Result<(RecordSet, Sources), CliError> {
    let src = sources(a)?;
    let mut design = ingest::load_design_files(&src.design, &src.truths).map_err(data)?;
    if let Some(alpha) = a.alpha {
        design = with_alpha(design, alpha)?;
    }
    let mapping = match &a.mapping {
        Some(p) => ColumnMapping::from_path(p).map_err(data)?,
        None => ColumnMapping::identity(),
    };
    let set = ingest::load_records_file(&src.records, &mapping, &design).map_err(data)?;
    Ok((set, src))
}

fn with_alpha(mut design: StudyDesign, alpha: f64) -> Result<StudyDesign, CliError> {
    let truths: Vec<(usize, TruthSpec)> = design.truths().iter().map(|(k, v)| (*k, *v)).collect();
    for (id, t) in truths {
        let t = TruthSpec::new(t.true_value, alpha, t.nominal_coverage).map_err(|e| CliError::Usage(format!("--alpha: {e}")))?;
        design.set_truth(id, t).map_err(data)?;
    }
    Ok(design)
}

fn emit(output: &OutputArgs, report: Report) -> Result<(), CliError> {
    let format: Format = output.format.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    let bytes = report.render(format);
    match &output.out {
        Some(p) => write_file(p, &bytes),
        None => std::io::stdout().write_all(&bytes).map_err(data),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn new_report(output: &OutputArgs, default_title: &str, set: &RecordSet, src: &Sources) -> Report {
    Report::new(output.title.clone().unwrap_or_else(|| default_title.to_string()), set.design())
        .provenance("records", src.records.display().to_string())
        .provenance("design", src.design.display().to_string())
        .provenance("truths", src.truths.display().to_string())
}

fn write_bundle(dir: &Path, set: &RecordSet) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let create = |name: &str| fs::File::create(dir.join(name)).map_err(|e| CliError::Data(format!("{}: {e}", dir.join(name).display())));
    ingest::write_design(set.design(), create(BUNDLE_DESIGN)?).map_err(data)?;
    ingest::write_truths(set.design(), create(BUNDLE_TRUTHS)?).map_err(data)?;
    ingest::write_records(set, create(BUNDLE_RECORDS)?).map_err(data)?;
    Ok(())
}

fn ingest_cmd(a: &DataArgs, out: &Path) -> Result<(), CliError> {
    let (set, _) = load(a)?;
    write_bundle(out, &set)?;
    eprintln!(
        "ingested {} records ({} methods, {} conditions) into {}",
        set.len(),
        set.methods().len(),
        set.design().len(),
        out.display()
    );
    Ok(())
}

fn report_cmd(a: &DataArgs, output: &OutputArgs) -> Result<(), CliError> {
    let (set, src) = load(a)?;
    let mut r = new_report(output, "Missingness report", &set, &src);
    r.missingness = Some(MissingnessSection::from_records(&set));
    emit(output, r)
}

fn sensitivity_options(m: &MeasureArgs) -> Result<SensitivityOptions, CliError> {
    let threshold = m.threshold.unwrap_or(DEFAULT_NON_ANALYSIS_THRESHOLD);
    Ok(SensitivityOptions {
        non_analysis_threshold: Some(threshold),
        measure: MeasureOptions { trim: m.trim },
        parameter_space: (
            m.parameter_lower.unwrap_or(f64::NEG_INFINITY),
            m.parameter_upper.unwrap_or(f64::INFINITY),
        ),
        null_value: m.null_value,
    })
}

fn parse_measures(s: &str) -> Result<Vec<Measure>, CliError> {
    let ms = metrics::parse_measures(s).map_err(|e| CliError::Usage(e.to_string()))?;
    if ms.is_empty() {
        return Err(CliError::Usage("--measures names no measure".into()));
    }
    Ok(ms)
}

fn analyze_cmd(
    a: &DataArgs,
    output: &OutputArgs,
    m: &MeasureArgs,
    strategy: Option<&str>,
    strategy_config: Option<&Path>,
) -> Result<(), CliError> {
    let measures = parse_measures(&m.measures)?;
    let mut opts = sensitivity_options(m)?;
    let strategy: HandlingStrategy = match (strategy, strategy_config) {
        (Some(s), _) => s.parse()?,
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let cfg: StrategyConfig = serde_json::from_str(&text).map_err(|e| CliError::Strategy(format!("{}: {e}", p.display())))?;
            if m.threshold.is_none() {
                opts.non_analysis_threshold = Some(cfg.non_analysis_threshold);
            }
            cfg.to_strategy()?
        }
        (None, None) => return Err(CliError::Usage("one of --strategy or --strategy-config is required".into())),
    };
    let (set, src) = load(a)?;
    let mut estimates = Vec::new();
    let mut descriptor = strategy.to_string();
    for &measure in &measures {
        let analysis = metrics::analysis_for(&set, &strategy, measure, &opts)?;
        descriptor = analysis.descriptor();
        estimates.extend(metrics::estimate_measure(&analysis, set.design(), measure, &opts.measure)?);
    }
    let cfg = StrategyConfig::new(&strategy, opts.non_analysis_threshold.unwrap_or(DEFAULT_NON_ANALYSIS_THRESHOLD));
    let mut r = new_report(output, "Performance report", &set, &src)
        .provenance("strategy", serde_json::to_string(&cfg).map_err(data)?);
    r.missingness = Some(MissingnessSection::from_records(&set));
    r.performance.push(PerformanceSection {
        strategy: descriptor,
        estimates,
    });
    emit(output, r)
}

fn parse_strategies(list: &[String]) -> Result<Vec<HandlingStrategy>, CliError> {
    list.iter().map(|s| s.parse().map_err(CliError::from)).collect()
}

fn sensitivity_cmd(a: &DataArgs, output: &OutputArgs, m: &MeasureArgs, strategies: &[String]) -> Result<(), CliError> {
    let measures = parse_measures(&m.measures)?;
    let strategies = parse_strategies(strategies)?;
    let opts = sensitivity_options(m)?;
    let (set, src) = load(a)?;
    let rows = metrics::sensitivity_table(&set, &strategies, &measures, &opts)?;
    let threshold = opts.non_analysis_threshold.unwrap_or(DEFAULT_NON_ANALYSIS_THRESHOLD);
    let mut r = new_report(output, "Sensitivity report", &set, &src);
    for s in &strategies {
        let cfg = StrategyConfig::new(s, threshold);
        r = r.provenance(format!("strategy {s}"), serde_json::to_string(&cfg).map_err(data)?);
    }
    r.missingness = Some(MissingnessSection::from_records(&set));
    r.sensitivity = Some(rows);
    emit(output, r)
}

fn parse_outcome(s: &str) -> Result<Outcome, CliError> {
    if s == "any_missing" {
        return Ok(Outcome::AnyMissing);
    }
    if let Some(class) = s.strip_prefix("class:") {
        return Ok(Outcome::ErrorClass(class.to_string()));
    }
    StatusKind::ALL
        .iter()
        .find(|k| k.as_str() == s && **k != StatusKind::Valid)
        .map(|k| Outcome::Status(*k))
        .ok_or_else(|| CliError::Usage(format!("unknown outcome '{s}'")))
}

fn metamodel_cmd(a: &DataArgs, output: &OutputArgs, outcome: &str, terms: Option<&str>) -> Result<(), CliError> {
    let outcome_v = parse_outcome(outcome)?;
    let (set, src) = load(a)?;
    let terms: Vec<Term> = match terms {
        Some(t) => t.split(',').filter(|x| !x.trim().is_empty()).map(Term::parse).collect(),
        None => std::iter::once(Term::Method)
            .chain(set.design().factors().iter().map(|f| Term::Factor(f.name.clone())))
            .collect(),
    };
    let fit = diagnostics::fit_metamodel(&set, &outcome_v, &terms, &MetaModelOptions::default()).map_err(data)?;
    let mut r = new_report(output, "Missingness meta-model", &set, &src);
    r.metamodel = Some(MetaModelSection {
        outcome: outcome.to_string(),
        terms: terms.iter().map(ToString::to_string).collect(),
        fit,
    });
    emit(output, r)
}

fn run_cmd(config: &Path, seed: Option<u64>, reps: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = StudyConfig::from_file(config).map_err(data)?;
    if let Some(s) = seed {
        cfg.policy.base_seed = s;
    }
    if let Some(r) = reps {
        cfg.policy.repetitions = r;
    }
    cfg.policy.validate().map_err(data)?;
    let out = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out\" in the config".into()))?;
    let design = cfg.design().map_err(data)?;
    let result = cfg.demo().map_err(data)?.run(&design, &cfg.policy).map_err(data)?;
    write_bundle(&out, &result.records)?;
    let mut summary = serde_json::to_vec_pretty(&result.summary).map_err(data)?;
    summary.push(b'\n');
    write_file(&out.join(RUN_SUMMARY), &summary)?;
    let c = result.summary.counters;
    eprintln!(
        "{}: {} records, {} invocations ({} retries, {} fallback) -> {}",
        result.summary.study,
        result.summary.n_records,
        c.invocations,
        c.retries,
        c.fallback_invocations,
        out.display()
    );
    for t in result.summary.top_up.iter().filter(|t| !t.reached) {
        eprintln!(
            "warning: condition {} reached {} of {} valid repetitions before the attempt cap ({})",
            t.condition_id, t.valid, t.target_valid, t.attempted
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn plotdata_cmd(
    a: &DataArgs,
    kind: &str,
    out: &Path,
    svg: bool,
    highlight_threshold: f64,
    strategies: &[String],
    measures: Option<&str>,
    threshold: Option<f64>,
) -> Result<(), CliError> {
    if !["beeswarm", "marginal", "strategy_comparison"].contains(&kind) {
        return Err(CliError::Usage(format!("unknown plot kind '{kind}'")));
    }
    let (set, _) = load(a)?;
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let (csv, picture) = match kind {
        "beeswarm" => {
            let rates = diagnostics::condition_rates(&set);
            (plot::beeswarm_csv(&rates), plot::beeswarm_svg(&rates))
        }
        "marginal" => {
            let rows = diagnostics::marginal_factor_rates(&set, highlight_threshold);
            (plot::marginal_csv(&rows), plot::marginal_svg(&rows))
        }
        _ => {
            if strategies.is_empty() {
                return Err(CliError::Usage("strategy_comparison needs at least one --strategy".into()));
            }
            let measures = parse_measures(measures.ok_or_else(|| CliError::Usage("strategy_comparison needs --measures".into()))?)?;
            let strategies = parse_strategies(strategies)?;
            let opts = SensitivityOptions {
                non_analysis_threshold: Some(threshold.unwrap_or(DEFAULT_NON_ANALYSIS_THRESHOLD)),
                ..SensitivityOptions::default()
            };
            let rows = metrics::sensitivity_table(&set, &strategies, &measures, &opts)?;
            (plot::strategy_comparison_csv(&rows, set.design()), plot::strategy_comparison_svg(&rows))
        }
    };
    write_file(&out.join(format!("{kind}.csv")), csv.as_bytes())?;
    if svg {
        write_file(&out.join(format!("{kind}.svg")), picture.as_bytes())?;
    }
    eprintln!("wrote {kind} plot data to {} ({})", out.display(), report::TOOL_VERSION);
    Ok(())
}
