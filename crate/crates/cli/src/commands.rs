use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Parser;
use counterfact_core::eval::{build_report, effect_chart, EffectReport, ModelForecasts};
use counterfact_core::panel::{PanelDataset, SimulationTruth};
use counterfact_core::synth::{generate_scenario, grid_configs, InterventionSpec, SynthConfig};
use counterfact_ingest::{
    join_covariates, read_covariates_csv, read_panel_csv, read_truth_csv, write_panel_csv, write_truth_csv,
    CovariateTable, IngestError, ModelConfigs, PanelTable, PeriodAxis, ScenarioManifest, SeriesSpec, StudyConfig,
};

use crate::cli::{Cli, Command, EvaluateArgs, FetchArgs, FitArgs, ReplayArgs, RunArgs, SimulateArgs, StudySource};
use crate::pipeline::{fit_model, synthetic_study_models, FitOutput, ModelKind};
use crate::run_manifest::{RunManifest, RunRecorder};
use crate::CliError;

/// Parse `argv` (including the program name) and run the command.
pub fn run_from_args(argv: Vec<String>) -> Result<(), CliError> {
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli, argv)
}

pub fn execute(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => simulate(&args, argv),
        Command::Fit(args) => fit(&args, argv),
        Command::Evaluate(args) => evaluate(&args, argv).map(|_| ()),
        Command::Run(args) => run_study(&args, argv).map(|_| ()),
        Command::Fetch(args) => fetch(&args, argv),
        Command::Replay(args) => replay(&args),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), IngestError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn simulate(args: &SimulateArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut rec = RunRecorder::new(argv);
    rec.seed(args.seed);
    let configs = if args.grid {
        grid_configs(args.seed)
    } else {
        vec![SynthConfig::new(args.units, args.length, args.trend, args.seed)]
    };
    rec.config(&configs);
    let spec = if args.null {
        InterventionSpec::null()
    } else {
        InterventionSpec::default()
    };
    for cfg in &configs {
        let scenario = generate_scenario(cfg, &spec)?;
        let dir = if args.grid {
            args.out.join(&scenario.label)
        } else {
            args.out.clone()
        };
        let panel = scenario.panel();
        let axis = PeriodAxis::indices();
        let table = PanelTable::from_panel(panel, axis);
        rec.write(&dir.join("panel.csv"), &csv_bytes(|b| write_panel_csv(b, &table))?)?;
        rec.write(
            &dir.join("truth.csv"),
            &csv_bytes(|b| write_truth_csv(b, scenario.truth(), &axis, panel.t0()))?,
        )?;
        let manifest = ScenarioManifest {
            label: scenario.label.clone(),
            seed: scenario.seed,
            sigma: scenario.sigma(),
            t0: panel.t0(),
            treated: panel.treated().map(|u| u.unit_id.clone()).collect(),
            true_att: scenario.truth().true_att,
            n_units: cfg.n_units,
            length: cfg.length,
            trend: cfg.trend,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        rec.write(&dir.join("manifest.json"), text.as_bytes())?;
        println!(
            "{}: {} units x {}, t0 {}, {} treated, true ATT {:.4}",
            manifest.label,
            manifest.n_units,
            manifest.length,
            manifest.t0,
            manifest.treated.len(),
            manifest.true_att
        );
    }
    rec.finish(&args.out.join("run_simulate.json"))?;
    Ok(())
}

/// A panel with its treated set, intervention time, season and model settings.
pub struct Study {
    pub axis: PeriodAxis,
    pub panel: PanelDataset,
    pub season: usize,
    pub models: ModelConfigs,
    pub seed: u64,
    pub truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub config: serde_json::Value,
}

pub fn load_study(source: &StudySource) -> Result<Study, CliError> {
    if let Some(config_path) = &source.config {
        let cfg = StudyConfig::load(config_path)?;
        return study_from_config(&cfg, source.panel.as_deref(), config_path);
    }
    let panel_path = source
        .panel
        .clone()
        .ok_or_else(|| CliError::Usage("either --panel or --config is required".into()))?;
    let manifest_path = source.manifest.clone().unwrap_or_else(|| {
        panel_path
            .parent()
            .unwrap_or(Path::new(""))
            .join("manifest.json")
    });
    let manifest = ScenarioManifest::read(&manifest_path)?;
    let table = read_panel_csv(&panel_path)?;
    let panel = table.into_panel(&manifest.treated, manifest.t0)?;
    let models = synthetic_study_models(manifest.seed);
    Ok(Study {
        axis: table.axis,
        panel,
        season: 7,
        config: serde_json::to_value(&models)?,
        models,
        seed: manifest.seed,
        truth: None,
        output_dir: None,
        inputs: vec![panel_path, manifest_path],
    })
}

pub fn study_from_config(cfg: &StudyConfig, panel_override: Option<&Path>, config_path: &Path) -> Result<Study, CliError> {
    let panel_path = panel_override.map(Path::to_path_buf).unwrap_or_else(|| cfg.panel.clone());
    let table = read_panel_csv(&panel_path)?;
    let t0 = cfg.resolve_t0(&table)?;
    let mut panel = table.into_panel(&cfg.treated_units, t0)?;
    let mut inputs = vec![config_path.to_path_buf(), panel_path];
    if !cfg.covariates.is_empty() {
        let mut all = CovariateTable::default();
        for path in &cfg.covariates {
            all.merge(read_covariates_csv(path, &table.axis)?);
            inputs.push(path.clone());
        }
        let joined = join_covariates(&panel, &all, &table.axis)?;
        for w in &joined.warnings {
            eprintln!("warning: {w}");
        }
        panel = joined.panel;
    }
    Ok(Study {
        axis: table.axis,
        panel,
        season: cfg.season,
        models: cfg.resolved_models(),
        seed: cfg.seed,
        truth: cfg.truth.clone(),
        output_dir: Some(cfg.output_dir.clone()),
        inputs,
        config: serde_json::to_value(cfg)?,
    })
}

fn quantile_column(tau: f64) -> String {
    format!("q{:02}", (tau * 100.0).round() as i64)
}

pub fn forecasts_csv(output: &FitOutput, axis: &PeriodAxis, t0: usize) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["unit_id".to_string(), "period".into(), "point".into()];
    if let Some((taus, _)) = &output.quantiles {
        header.extend(taus.iter().map(|&t| quantile_column(t)));
    }
    wtr.write_record(&header)?;
    for (unit, path) in &output.forecasts.points {
        for (k, v) in path.iter().enumerate() {
            let mut row = vec![unit.clone(), axis.label(t0 + k), v.to_string()];
            if let Some((_, q)) = &output.quantiles {
                let q = &q[unit];
                row.extend((0..q.taus.len()).map(|j| q.paths[(k, j)].to_string()));
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

/// Point forecasts from a `unit_id,period,point[,...]` file.
pub fn read_forecasts_csv(path: &Path, model: &str, axis: &PeriodAxis, panel: &PanelDataset) -> Result<ModelForecasts, CliError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (ui, pi, vi) = (col("unit_id")?, col("period")?, col("point")?);
    let (t0, h) = (panel.t0(), panel.horizon());
    let mut cells: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let bad = |column: &str, value: &str| IngestError::UnparseableValue {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let period = record.get(pi).unwrap_or("");
        let index = axis
            .index_of(period)
            .filter(|i| (t0..t0 + h).contains(i))
            .ok_or_else(|| bad("period", period))?;
        let raw = record.get(vi).unwrap_or("");
        let value: f64 = raw.parse().map_err(|_| bad("point", raw))?;
        cells.entry(record.get(ui).unwrap_or("").to_string()).or_insert_with(|| vec![None; h])[index - t0] = Some(value);
    }
    let mut points = BTreeMap::new();
    for (unit, path) in cells {
        let path = path
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| IngestError::GapInPeriods {
                    unit: unit.clone(),
                    period: axis.label(t0 + k),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        points.insert(unit, path);
    }
    Ok(ModelForecasts {
        model: model.to_string(),
        points,
    })
}

fn write_fit(out: &Path, output: &FitOutput, study: &Study, rec: &mut RunRecorder) -> Result<PathBuf, CliError> {
    let name = output.kind.name();
    let forecast_path = out.join(format!("forecasts_{name}.csv"));
    rec.write(&forecast_path, &forecasts_csv(output, &study.axis, study.panel.t0())?)?;
    match output.kind {
        ModelKind::Probcp | ModelKind::Mixer => {
            for p in &output.params {
                rec.write(&out.join(format!("{name}_model.json")), p.to_json().as_bytes())?;
            }
        }
        ModelKind::Ascm | ModelKind::Carima => {
            for p in &output.params {
                let unit = match p {
                    counterfact_core::params::ModelParams::Ascm { unit_id, .. }
                    | counterfact_core::params::ModelParams::Carima { unit_id, .. } => unit_id.as_str(),
                    _ => continue,
                };
                rec.write(&out.join(format!("{name}_models")).join(format!("{unit}.json")), p.to_json().as_bytes())?;
            }
        }
    }
    Ok(forecast_path)
}

fn fit(args: &FitArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut rec = RunRecorder::new(argv);
    let study = load_study(&args.source)?;
    study.inputs.iter().for_each(|p| rec.input(p));
    rec.seed(study.seed);
    rec.config(&study.config);
    let output = fit_model(&study.panel, args.model, &study.models)?;
    let path = write_fit(&args.out, &output, &study, &mut rec)?;
    println!(
        "{}: forecasts for {} units x {} steps -> {}",
        args.model.name(),
        output.forecasts.points.len(),
        study.panel.horizon(),
        path.display()
    );
    rec.finish(&args.out.join(format!("run_fit_{}.json", args.model.name())))?;
    Ok(())
}

fn model_name_for(spec: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = stem.strip_prefix("forecasts_").unwrap_or(&stem).to_string();
    (name, path)
}

fn svg_name(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write report.json, report.csv, effects.csv and one chart per model and treated unit.
pub fn write_report(
    out: &Path,
    report: &EffectReport,
    study: &Study,
    forecasts: &[ModelForecasts],
    rec: &mut RunRecorder,
) -> Result<(), CliError> {
    let mut json = report.to_json();
    json.push('\n');
    rec.write(&out.join("report.json"), json.as_bytes())?;
    rec.write(&out.join("report.csv"), report.summary_csv().as_bytes())?;
    rec.write(&out.join("effects.csv"), report.effects_csv().as_bytes())?;
    for fc in forecasts {
        for unit in study.panel.treated() {
            let title = format!("{} / {}: observed vs counterfactual", fc.model, unit.unit_id);
            let svg = effect_chart(&title, &unit.values, &fc.points[&unit.unit_id], study.panel.t0());
            let file = format!("{}_{}.svg", svg_name(&fc.model), svg_name(&unit.unit_id));
            rec.write(&out.join("plots").join(file), svg.as_bytes())?;
        }
    }
    Ok(())
}

fn print_report(report: &EffectReport) {
    println!("{:<10} {:>10} {:>9} {:>8} {:>8} {:>9}", "model", "att", "rel_att", "smape", "mase", "p_value");
    for m in &report.models {
        println!(
            "{:<10} {:>10.4} {:>8.2}% {:>8.4} {:>8.4} {:>9.4}{}",
            m.model,
            m.att,
            100.0 * m.relative_att,
            m.smape,
            m.mase,
            m.p_value,
            m.counterfactual_smape.map(|s| format!("  cf_smape {s:.4}")).unwrap_or_default()
        );
    }
}

fn placebo_gate(report: &EffectReport) -> Result<(), CliError> {
    let failed: Vec<String> = report
        .models
        .iter()
        .filter(|m| m.p_value >= 0.05)
        .map(|m| format!("{} (p = {:.4})", m.model, m.p_value))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::PlaceboFailed(failed))
    }
}

fn load_truth(path: Option<&Path>, study: &Study, rec: &mut RunRecorder) -> Result<Option<SimulationTruth>, CliError> {
    match path {
        Some(p) => {
            rec.input(p);
            Ok(Some(read_truth_csv(p, &study.axis, &study.panel)?))
        }
        None => Ok(None),
    }
}

fn evaluate(args: &EvaluateArgs, argv: Vec<String>) -> Result<EffectReport, CliError> {
    let mut rec = RunRecorder::new(argv);
    let study = load_study(&args.source)?;
    study.inputs.iter().for_each(|p| rec.input(p));
    rec.seed(study.seed);
    rec.config(&study.config);
    let mut forecasts = Vec::new();
    for spec in &args.forecasts {
        let (name, path) = model_name_for(spec);
        rec.input(&path);
        forecasts.push(read_forecasts_csv(&path, &name, &study.axis, &study.panel)?);
    }
    let truth_path = args.truth.clone().or_else(|| study.truth.clone());
    let truth = load_truth(truth_path.as_deref(), &study, &mut rec)?;
    let report = build_report(&study.panel, &forecasts, truth.as_ref(), study.season)?;
    write_report(&args.out, &report, &study, &forecasts, &mut rec)?;
    print_report(&report);
    rec.finish(&args.out.join("run_evaluate.json"))?;
    if args.assert_placebo {
        placebo_gate(&report)?;
    }
    Ok(report)
}

fn run_study(args: &RunArgs, argv: Vec<String>) -> Result<EffectReport, CliError> {
    let mut rec = RunRecorder::new(argv);
    let source = StudySource {
        panel: None,
        config: Some(args.config.clone()),
        manifest: None,
    };
    let study = load_study(&source)?;
    study.inputs.iter().for_each(|p| rec.input(p));
    rec.seed(study.seed);
    rec.config(&study.config);
    let out = study.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let kinds = if args.models.is_empty() {
        ModelKind::ALL.to_vec()
    } else {
        args.models.clone()
    };
    let mut forecasts = Vec::new();
    for kind in kinds {
        log::info!("fitting {}", kind.name());
        let output = fit_model(&study.panel, kind, &study.models)?;
        write_fit(&out, &output, &study, &mut rec)?;
        forecasts.push(output.forecasts);
    }
    let truth = load_truth(study.truth.clone().as_deref(), &study, &mut rec)?;
    let report = build_report(&study.panel, &forecasts, truth.as_ref(), study.season)?;
    write_report(&out, &report, &study, &forecasts, &mut rec)?;
    print_report(&report);
    rec.finish(&out.join("run_study.json"))?;
    if args.assert_placebo {
        placebo_gate(&report)?;
    }
    Ok(report)
}

fn fetch(args: &FetchArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut rec = RunRecorder::new(argv);
    let spec = match &args.spec {
        Some(p) => {
            rec.input(p);
            serde_json::from_str(&read_text(p)?)?
        }
        None => SeriesSpec::default(),
    };
    rec.config(&spec);
    let rows = counterfact_ingest::fetch_public_prices(&args.endpoint, &args.api_key_env, &spec, &args.out)?;
    rec.input(&args.out);
    println!("{rows} rows -> {}", args.out.display());
    let dir = args.out.parent().unwrap_or(Path::new(""));
    rec.finish(&dir.join("run_fetch.json"))?;
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let recorded = RunManifest::read(&args.manifest)?;
    if recorded.command.first().is_none() {
        return Err(CliError::Usage("manifest has no command".into()));
    }
    run_from_args(recorded.command.clone())?;
    let changed = recorded.changed_outputs()?;
    if changed.is_empty() {
        println!("replay reproduced {} outputs", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::ReplayMismatch(changed))
    }
}
