use std::path::Path;

use serde::Serialize;

use locgclstm::baselines::{lr_fit, lr_predict, persistence_predict, LrBaseline, LrMode};
use locgclstm::data::{
    impute_knn, ingest_csv, convert_wide_csv, sliding_window, write_cache, IngestOptions, SampleSet, WindowConfig,
};
use locgclstm::encoding::CalendarConfig;
use locgclstm::graph::RoadGraph;
use locgclstm::io::write_atomic;
use locgclstm::metrics::{self, render_table, MetricsReport};
use locgclstm::model::{LocGcLstmModel, ModelKind, Scaler};
use locgclstm::training::{fit, grid_search as run_grid, history_csv, Checkpoint, TrainConfig};
use locgclstm::Error;

use crate::config::{resolve, FileConfig, HyperArgs, Resolved, SplitPlan};
use crate::dataset::{write_info, Dataset, DatasetInfo, SAMPLES_FILE, DATASET_FILE};
use crate::manifest::RunManifest;
use crate::report::{line_chart_svg, mean_report, metrics_csv, per_road_csv, predictions_csv};
use crate::{CliError, CompareArgs, ConvertArgs, EvaluateArgs, Global, GridArgs, PredictArgs, PrepareArgs, SourceArgs, TrainArgs};

type CliResult<T = ()> = Result<T, CliError>;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_CHECKPOINT_FILE: &str = "checkpoint_last.bin";

fn write(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> CliResult {
    write_atomic(&dir.join(name), text.as_bytes())?;
    manifest.output(name);
    Ok(())
}

fn load_config(global: &Global) -> CliResult<FileConfig> {
    Ok(FileConfig::load(global.config.as_deref())?)
}

fn start_manifest(command: &str, global: &Global, resolved: impl Serialize) -> CliResult<RunManifest> {
    let mut m = RunManifest::start(command, global.seed, resolved);
    if let Some(c) = &global.config {
        m.input(c)?;
    }
    Ok(m)
}

pub fn prepare(global: &Global, args: &PrepareArgs) -> CliResult {
    let file = load_config(global)?;
    let resolved = resolve(&file, &HyperArgs::default(), &args.split, global.seed);
    let calendar = CalendarConfig {
        moment_num: args.moment_num,
        hour_num: 168,
        day_start_minutes: args.day_start_minutes,
        interval_minutes: args.interval_minutes,
    };
    calendar.validate()?;
    let window = WindowConfig {
        lags: args.lags,
        horizon: args.horizon,
        stride: args.stride,
    };
    #[derive(Serialize)]
    struct PrepareConfig<'a> {
        knn_k: usize,
        lags: usize,
        horizon: usize,
        stride: usize,
        max_fill_gap: usize,
        orientation: String,
        calendar: CalendarConfig,
        split: &'a SplitPlan,
    }
    let mut manifest = start_manifest(
        "prepare",
        global,
        PrepareConfig {
            knn_k: args.knn_k,
            lags: args.lags,
            horizon: args.horizon,
            stride: args.stride,
            max_fill_gap: args.max_fill_gap,
            orientation: format!("{:?}", args.orientation).to_lowercase(),
            calendar,
            split: &resolved.split,
        },
    )?;
    manifest.input(&args.flow)?;
    manifest.input(&args.adjacency)?;

    let opts = IngestOptions {
        interval_minutes: args.interval_minutes,
        max_fill_gap: args.max_fill_gap,
        node_count: None,
    };
    let raw = ingest_csv(&args.flow, &opts)?;
    let graph = RoadGraph::read_csv(&args.adjacency, raw.node_count, args.orientation)?;
    let missing = raw.missing_count();
    let (series, imputed) = impute_knn(&raw, args.knn_k)?;
    let set = sliding_window(&series, &window, &calendar)?;
    let n = graph.node_count();
    let adjacency = (0..n).map(|i| (0..n).map(|j| u8::from(graph.feeds(j, i))).collect()).collect();
    let info = DatasetInfo {
        node_count: n,
        feature_names: set.layout.feature_names.clone(),
        lags: args.lags,
        horizon: args.horizon,
        stride: args.stride,
        calendar,
        vocabulary: series.vocabulary.clone(),
        adjacency,
        sample_count: set.len(),
        timesteps: series.len(),
        spans: series.spans.len(),
        imputed,
    };
    let dir = &global.out_dir;
    write_cache(&dir.join(SAMPLES_FILE), &set)?;
    manifest.output(SAMPLES_FILE);
    write_info(dir, &info)?;
    manifest.output(DATASET_FILE);

    let dataset = Dataset {
        info,
        set,
        graph,
        dir: dir.clone(),
    };
    match dataset.split(&resolved.split).and_then(|s| Scaler::fit(&dataset.set, &s.train)) {
        Ok(scaler) => {
            let json = serde_json::to_string_pretty(&scaler).expect("scaler serializes");
            write(dir, "standardization.json", &json, &mut manifest)?;
        }
        Err(e) => log::warn!("standardization parameters not written: {e}"),
    }
    manifest.finish(dir)?;
    println!("nodes: {n}");
    println!("timesteps: {}", series.len());
    println!("spans: {}", series.spans.len());
    println!("missing: {missing}");
    println!("imputed: {imputed}");
    println!("samples: {}", dataset.set.len());
    Ok(())
}

pub fn train(global: &Global, args: &TrainArgs) -> CliResult {
    let file = load_config(global)?;
    let resolved = resolve(&file, &args.hyper, &args.split, global.seed);
    let data = Dataset::load(&args.data)?;
    let mut manifest = start_manifest("train", global, &resolved)?;
    for f in data.files() {
        manifest.input(&f)?;
    }
    let split = data.split(&resolved.split)?;
    let validation = data.set.subset(&split.test);
    let outcome = fit(&resolved.train, &data.graph, &data.set, &split.train, Some(&validation))?;
    let dir = &global.out_dir;
    outcome.best.save(&dir.join(CHECKPOINT_FILE))?;
    manifest.output(CHECKPOINT_FILE);
    outcome.last.save(&dir.join(LAST_CHECKPOINT_FILE))?;
    manifest.output(LAST_CHECKPOINT_FILE);
    write(dir, "history.csv", &history_csv(&outcome.history), &mut manifest)?;
    manifest.finish(dir)?;
    let best = outcome.best.epoch - 1;
    let rmse = outcome.history[best].validation.map_or(f64::NAN, |r| r.rmse);
    println!(
        "trained {} for {} epochs on {} samples; {CHECKPOINT_FILE} holds the best-validation epoch {best} (RMSE {rmse:.4}), {LAST_CHECKPOINT_FILE} the final epoch",
        resolved.train.model,
        resolved.train.epochs,
        split.train.len()
    );
    Ok(())
}

/// Anything that maps samples to `[N × horizon]` raw-unit predictions.
enum Predictor {
    Net(Box<LocGcLstmModel>),
    Lr(LrBaseline),
    Persistence,
}

impl Predictor {
    fn predict(&self, set: &SampleSet, indices: &[usize]) -> CliResult<Vec<Vec<f64>>> {
        Ok(match self {
            Predictor::Net(m) => m.predict_indices(set, indices)?,
            Predictor::Lr(m) => indices.iter().map(|&i| lr_predict(m, &set.layout, set.get(i))).collect(),
            Predictor::Persistence => indices.iter().map(|&i| persistence_predict(&set.layout, set.get(i))).collect(),
        })
    }
}

/// A name accepted by `--model` / `--models`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ModelChoice {
    Net(ModelKind),
    Lr,
    Persistence,
}

impl ModelChoice {
    fn parse(name: &str) -> CliResult<Self> {
        match name {
            "lr" => Ok(ModelChoice::Lr),
            "persistence" => Ok(ModelChoice::Persistence),
            other => other
                .parse()
                .map(ModelChoice::Net)
                .map_err(|_| CliError::Usage(format!("unknown model `{other}` (loc-gclstm, gclstm, lstm, lr, persistence)"))),
        }
    }

    fn name(self) -> String {
        match self {
            ModelChoice::Net(k) => k.to_string(),
            ModelChoice::Lr => "lr".into(),
            ModelChoice::Persistence => "persistence".into(),
        }
    }

    fn build(self, cfg: &TrainConfig, lr_mode: LrMode, data: &Dataset, train: &[usize], validation: &SampleSet) -> CliResult<Predictor> {
        Ok(match self {
            ModelChoice::Net(kind) => {
                let cfg = TrainConfig { model: kind, ..cfg.clone() };
                let out = fit(&cfg, &data.graph, &data.set, train, Some(validation))?;
                Predictor::Net(Box::new(out.best.model))
            }
            ModelChoice::Lr => Predictor::Lr(lr_fit(&data.set, train, lr_mode)?),
            ModelChoice::Persistence => Predictor::Persistence,
        })
    }
}

struct Scored {
    name: String,
    indices: Vec<usize>,
    pred: Vec<Vec<f64>>,
}

fn truth_rows(set: &SampleSet, indices: &[usize]) -> Vec<Vec<f64>> {
    indices.iter().map(|&i| set.samples()[i].target.clone()).collect()
}

/// Resolves the predictor and sample subset shared by `evaluate` and `predict`.
fn score(global: &Global, src: &SourceArgs, default_subset: &str, manifest_name: &str) -> CliResult<(Dataset, Scored, RunManifest)> {
    let file = load_config(global)?;
    let data = Dataset::load(&src.data)?;
    let checkpoint = src.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let seed = global.seed.or(file.seed).or(checkpoint.as_ref().map(|c| c.train_config.seed));
    let resolved = resolve(&file, &HyperArgs::default(), &src.split, seed);
    let mut manifest = start_manifest(manifest_name, global, &resolved)?;
    for f in data.files() {
        manifest.input(&f)?;
    }
    let split = data.split(&resolved.split);
    let subset = src.subset.as_deref().unwrap_or(default_subset);
    let indices: Vec<usize> = match subset {
        "all" => (0..data.set.len()).collect(),
        "train" => split?.train,
        "test" => split?.test,
        other => return Err(CliError::Usage(format!("unknown subset `{other}` (test, train, all)"))),
    };
    let (name, predictor) = match (&checkpoint, src.model.as_deref()) {
        (Some(ckpt), _) => {
            manifest.input(src.checkpoint.as_deref().unwrap())?;
            if !ckpt.model.config.matches(&data.set.layout) || ckpt.model.graph != data.graph {
                return Err(Error::Validation(format!(
                    "checkpoint shape does not match the dataset in {}",
                    data.dir.display()
                ))
                .into());
            }
            (ckpt.model.config.kind.to_string(), Predictor::Net(Box::new(ckpt.model.clone())))
        }
        (None, Some(name)) => match ModelChoice::parse(name)? {
            ModelChoice::Persistence => ("persistence".to_owned(), Predictor::Persistence),
            ModelChoice::Lr => {
                let train = data.split(&resolved.split)?.train;
                ("lr".to_owned(), Predictor::Lr(lr_fit(&data.set, &train, resolved.lr_mode)?))
            }
            ModelChoice::Net(k) => {
                return Err(CliError::Usage(format!("model `{k}` needs --checkpoint; train it first")));
            }
        },
        (None, None) => return Err(CliError::Usage("give --checkpoint or --model".into())),
    };
    let pred = predictor.predict(&data.set, &indices)?;
    Ok((data, Scored { name, indices, pred }, manifest))
}

pub fn evaluate(global: &Global, args: &EvaluateArgs) -> CliResult {
    let (data, scored, mut manifest) = score(global, &args.source, "test", "evaluate")?;
    let truth = truth_rows(&data.set, &scored.indices);
    let report = evaluate_rows(&scored.pred, &truth)?;
    let rows = [(scored.name.clone(), report)];
    let dir = &global.out_dir;
    write(dir, "metrics.csv", &metrics_csv(&rows), &mut manifest)?;
    let mut text = render_table(&rows);
    if let Some(path) = &args.source.checkpoint {
        text.push_str(&format!("checkpoint: {}\n", path.display()));
    }
    write(dir, "metrics.txt", &text, &mut manifest)?;
    write(dir, "predictions.csv", &predictions_csv(&data.set, &scored.indices, &scored.pred), &mut manifest)?;
    if args.per_road {
        write(dir, "per_road.csv", &per_road_csv(&data.set.layout, &scored.pred, &truth)?, &mut manifest)?;
    }
    if args.chart {
        let (node, h) = (args.chart_node, args.chart_horizon);
        let horizon = data.set.layout.horizon;
        if node >= data.info.node_count || h == 0 || h > horizon {
            return Err(CliError::Usage(format!("chart node {node} / horizon {h} out of range")));
        }
        let at = node * horizon + h - 1;
        let p: Vec<f64> = scored.pred.iter().map(|r| r[at]).collect();
        let t: Vec<f64> = truth.iter().map(|r| r[at]).collect();
        let title = format!("{} node {node}, horizon {h}", scored.name);
        write(dir, "chart.svg", &line_chart_svg(&title, &p, &t), &mut manifest)?;
    }
    manifest.finish(dir)?;
    print!("{text}");
    Ok(())
}

pub fn predict(global: &Global, args: &PredictArgs) -> CliResult {
    let (data, scored, mut manifest) = score(global, &args.source, "all", "predict")?;
    let dir = &global.out_dir;
    write(dir, "predictions.csv", &predictions_csv(&data.set, &scored.indices, &scored.pred), &mut manifest)?;
    manifest.finish(dir)?;
    println!("wrote {} predictions to {}", scored.indices.len(), dir.join("predictions.csv").display());
    Ok(())
}

fn evaluate_rows(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> CliResult<MetricsReport> {
    Ok(metrics::evaluate(&pred.concat(), &truth.concat())?)
}

pub fn grid_search(global: &Global, args: &GridArgs) -> CliResult {
    let file = load_config(global)?;
    let mut resolved: Resolved = resolve(&file, &args.hyper, &args.split, global.seed);
    for (flag, target) in [
        (&args.batch_sizes, &mut resolved.grid.batch_sizes),
        (&args.units, &mut resolved.grid.units),
        (&args.layers, &mut resolved.grid.layers),
    ] {
        if !flag.is_empty() {
            *target = flag.clone();
        }
    }
    if resolved.grid.is_empty() {
        return Err(Error::Validation("grid has no combinations".into()).into());
    }
    let data = Dataset::load(&args.data)?;
    let mut manifest = start_manifest("grid-search", global, &resolved)?;
    for f in data.files() {
        manifest.input(&f)?;
    }
    let split = data.split(&resolved.split)?;
    let test = data.set.subset(&split.test);
    let report = run_grid(&resolved.train, &resolved.grid, &data.graph, &data.set, &split.train, &test)?;
    let dir = &global.out_dir;
    let csv = report.to_csv();
    write(dir, "grid.csv", &csv, &mut manifest)?;
    if let Some(best) = report.best_cell() {
        let cfg = resolved.grid.config_for(&resolved.train, best.layers, best.units, best.batch_size)?;
        let toml = toml::to_string(&cfg).map_err(|e| Error::Validation(e.to_string()))?;
        write(dir, "best_config.toml", &toml, &mut manifest)?;
    } else {
        log::warn!("every grid cell failed");
    }
    manifest.finish(dir)?;
    print!("{csv}");
    Ok(())
}

pub fn compare(global: &Global, args: &CompareArgs) -> CliResult {
    let file = load_config(global)?;
    let resolved = resolve(&file, &args.hyper, &args.split, global.seed);
    let mut choices: Vec<ModelChoice> = Vec::new();
    for name in &args.models {
        let c = ModelChoice::parse(name.trim())?;
        if choices.contains(&c) {
            log::warn!("model `{}` listed more than once; keeping the first", c.name());
            eprintln!("warning: duplicate model `{}` ignored", c.name());
        } else {
            choices.push(c);
        }
    }
    let data = Dataset::load(&args.data)?;
    let mut manifest = start_manifest("compare", global, &resolved)?;
    for f in data.files() {
        manifest.input(&f)?;
    }
    let plans: Vec<SplitPlan> = match (&resolved.split, args.cv) {
        (SplitPlan::KFold { folds, seed, .. }, true) => (0..*folds)
            .map(|fold| SplitPlan::KFold {
                folds: *folds,
                fold,
                seed: *seed,
            })
            .collect(),
        (SplitPlan::TestDays(_), true) => return Err(CliError::Usage("--cv needs k-fold splitting, not --test-days".into())),
        (plan, false) => vec![plan.clone()],
    };
    let mut per_model: Vec<Vec<MetricsReport>> = vec![Vec::new(); choices.len()];
    for plan in &plans {
        let split = data.split(plan)?;
        let test = data.set.subset(&split.test);
        let truth = truth_rows(&data.set, &split.test);
        for (c, reports) in choices.iter().zip(&mut per_model) {
            log::info!("{}: fitting on {} samples", c.name(), split.train.len());
            let predictor = c.build(&resolved.train, resolved.lr_mode, &data, &split.train, &test)?;
            let pred = predictor.predict(&data.set, &split.test)?;
            reports.push(evaluate_rows(&pred, &truth)?);
        }
    }
    let rows: Vec<(String, MetricsReport)> = choices.iter().zip(&per_model).map(|(c, r)| (c.name(), mean_report(r))).collect();
    let dir = &global.out_dir;
    write(dir, "compare.csv", &metrics_csv(&rows), &mut manifest)?;
    let text = render_table(&rows);
    write(dir, "compare.txt", &text, &mut manifest)?;
    manifest.finish(dir)?;
    print!("{text}");
    Ok(())
}

pub fn convert_metr_la(global: &Global, args: &ConvertArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let mut manifest = start_manifest("convert-metr-la", global, serde_json::json!({ "output": args.output }))?;
    manifest.input(&args.input)?;
    let (long, sensors) = convert_wide_csv(&text, &args.input.display().to_string())?;
    write_atomic(&args.output, long.as_bytes())?;
    manifest.output(&args.output.display().to_string());
    let dir = &global.out_dir;
    write(dir, "sensors.json", &serde_json::to_string_pretty(&sensors).expect("names serialize"), &mut manifest)?;
    manifest.finish(dir)?;
    println!("converted {} sensors; node ids follow sensors.json order", sensors.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SplitArgs;

    #[test]
    fn model_names() {
        assert_eq!(ModelChoice::parse("lr").unwrap(), ModelChoice::Lr);
        assert_eq!(ModelChoice::parse("lstm").unwrap(), ModelChoice::Net(ModelKind::Lstm));
        assert!(matches!(ModelChoice::parse("xgboost"), Err(CliError::Usage(_))));
    }

    #[test]
    fn split_args_default() {
        let r = resolve(&FileConfig::default(), &HyperArgs::default(), &SplitArgs::default(), Some(4));
        assert_eq!(r.split, SplitPlan::KFold { folds: 5, fold: 0, seed: 4 });
    }
}
