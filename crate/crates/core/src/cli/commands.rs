//! Pipeline stages. Each stage reads only files: the raw inputs named in the
//! config and the outputs of earlier stages in the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{PipelineConfig, Regime};
use super::CliError;
use crate::evaluation::{
    cluster_bootstrap, human_model, normal_baseline, uniform_baseline, write_table3, write_table4, Clusters, Metrics, Panel,
    ScoredModel, Table3Row, Table4Row, MIN_RESAMPLES, TABLE_SCOPES,
};
use crate::features::{extract, read_feature_csv, write_feature_csv, FeatureRow, FEATURE_NAMES};
use crate::ingest::{parse_ratings, parse_tracking, segment_clips, ClipId, RatingsTable, Scope, Task};
use crate::psychometrics::report::{fit_scopes, read_cfa_params, reliability_rows, write_cfa_params, write_loadings, write_reliability};
use crate::psychometrics::{bartlett_scores, human_baseline_scores, mean_answers, require_raters, CfaFit};
use crate::regression::{grid_search, make_splits, predict, write_model, write_weights, Dataset, GridResult, ModelFile, Split};
use crate::report::{self, sig6, Provenance};
use crate::synth;

pub const SCORES_FILE: &str = "scores.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const CFA_PARAMS_FILE: &str = "cfa_params.csv";
pub const SCORES_HEADER: [&str; 5] = ["clip_id", "subject_id", "task", "score_task", "score_all"];

/// Half-width of the theoretical score range.
const SCORE_BOUND: f64 = 3.5;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn load_ratings(cfg: &PipelineConfig) -> Result<RatingsTable, CliError> {
    let tasks = cfg.task_list();
    let table = parse_ratings(&cfg.ratings_path())?.filter(|c| tasks.contains(&c.task));
    if table.is_empty() {
        return Err(CliError::Validation("no ratings for the selected tasks".into()));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub clip: ClipId,
    pub score_task: f64,
    pub score_all: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub scores: Vec<ScoreRow>,
    pub fits: Vec<(Scope, CfaFit)>,
}

/// Reliability, CFA fits and per-clip Bartlett scores.
pub fn cmd_score(cfg: &PipelineConfig) -> Result<ScoreOutcome, CliError> {
    cfg.validate()?;
    let table = load_ratings(cfg)?;
    require_raters(&table, cfg.raters_per_clip)?;
    let reliability = reliability_rows(&table, cfg.confidence)?;
    let fits = fit_scopes(&table)?;
    let fit_for = |s: Scope| &fits.iter().find(|(f, _)| *f == s).expect("fit per present scope").1;

    let means = mean_answers(&table);
    let x: Vec<[f64; 3]> = means.iter().map(|m| m.means).collect();
    let all = bartlett_scores(fit_for(Scope::All), &x)?;
    let mut by_task = HashMap::new();
    for &t in &table.tasks() {
        by_task.insert(t, bartlett_scores(fit_for(Scope::Task(t)), &x)?);
    }
    let scores: Vec<ScoreRow> = means
        .iter()
        .enumerate()
        .map(|(i, m)| ScoreRow { clip: m.clip.clone(), score_task: by_task[&m.clip.task][i], score_all: all[i] })
        .collect();

    let out = cfg.out_dir();
    let prov = cfg.provenance();
    let outside = scores.iter().filter(|s| s.score_task.abs() > SCORE_BOUND || s.score_all.abs() > SCORE_BOUND).count();
    write_with(&out.join(SCORES_FILE), |w| {
        prov.write_header(w)?;
        writeln!(w, "# clips with a score outside +-{SCORE_BOUND}: {outside}")?;
        report::write_csv(
            w,
            None,
            &SCORES_HEADER,
            scores.iter().map(|s| {
                vec![s.clip.to_string(), s.clip.subject.clone(), s.clip.task.to_string(), s.score_task.to_string(), s.score_all.to_string()]
            }),
        )
    })?;
    write_with(&out.join("reliability.csv"), |w| write_reliability(w, &reliability, Some(&prov)))?;
    write_with(&out.join("loadings.csv"), |w| write_loadings(w, &fits, Some(&prov)))?;
    write_with(&out.join(CFA_PARAMS_FILE), |w| write_cfa_params(w, &fits, Some(&prov)))?;
    Ok(ScoreOutcome { scores, fits })
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, CliError> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut reader = report::reader(open(path)?);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SCORES_HEADER {
        return Err(bad(format!("expected header {}", SCORES_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let clip: ClipId = rec[0].parse().map_err(bad)?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(format!("bad number `{}`", &rec[i])));
        rows.push(ScoreRow { clip, score_task: num(3)?, score_all: num(4)? });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizeOutcome {
    pub rows: Vec<FeatureRow>,
    /// Clips left out, with the reason.
    pub skipped: Vec<(ClipId, String)>,
}

pub fn tracking_path(cfg: &PipelineConfig, subject: &str, task: Task) -> PathBuf {
    cfg.tracking_dir().join(format!("{subject}_{task}.csv"))
}

/// Segments each recording and extracts the features of every scored clip.
pub fn cmd_featurize(cfg: &PipelineConfig) -> Result<FeaturizeOutcome, CliError> {
    cfg.validate()?;
    let out = cfg.out_dir();
    let tasks = cfg.task_list();
    let scores = read_scores(&out.join(SCORES_FILE))?;
    let mut groups: BTreeMap<(String, Task), Vec<ScoreRow>> = BTreeMap::new();
    for s in scores.into_iter().filter(|s| tasks.contains(&s.clip.task)) {
        groups.entry((s.clip.subject.clone(), s.clip.task)).or_default().push(s);
    }

    let groups: Vec<_> = groups.into_iter().collect();
    let per_recording: Vec<(Vec<FeatureRow>, Vec<(ClipId, String)>)> = groups
        .par_iter()
        .map(|((subject, task), scored)| {
            let path = tracking_path(cfg, subject, *task);
            let seq = parse_tracking(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let slices: HashMap<ClipId, _> =
                segment_clips(&seq, subject, *task).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?.into_iter().collect();
            let mut rows = Vec::new();
            let mut skipped = Vec::new();
            for s in scored {
                let slice = slices
                    .get(&s.clip)
                    .ok_or_else(|| CliError::Validation(format!("clip {} is not a {task} window", s.clip)))?;
                match extract(slice) {
                    Ok(features) => rows.push(FeatureRow { clip: s.clip.clone(), features, score_task: s.score_task, score_all: s.score_all }),
                    Err(e) => skipped.push((s.clip.clone(), e.to_string())),
                }
            }
            Ok((rows, skipped))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in per_recording {
        rows.extend(r);
        skipped.extend(s);
    }
    let prov = cfg.provenance();
    write_with(&out.join(FEATURES_FILE), |w| {
        prov.write_header(w)?;
        for (clip, why) in &skipped {
            writeln!(w, "# skipped {clip}: {why}")?;
        }
        write_feature_csv(w, &rows, None)
    })?;
    Ok(FeaturizeOutcome { rows, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainEvalOutcome {
    pub models: Vec<ModelFile>,
    pub table3: Vec<Table3Row>,
    pub table4: Vec<Table4Row>,
    pub regime_comparison: Vec<Table4Row>,
    /// Test clips in prediction order.
    pub test_clips: Vec<ClipId>,
    /// Test-set predictions per named model.
    pub predictions: Vec<(String, Vec<f64>)>,
}

pub const EN_PER_TASK: &str = "ElasticNet (per-task)";
pub const EN_ALL_TASKS: &str = "ElasticNet (all-tasks)";
pub const UNIFORM: &str = "Uniform baseline";
pub const NORMAL: &str = "Normal baseline";
pub const HUMAN: &str = "Human baseline";

fn design(rows: &[&FeatureRow], target: impl Fn(&FeatureRow) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    (rows.iter().map(|r| r.features.to_array().to_vec()).collect(), rows.iter().map(|r| target(r)).collect())
}

fn read_external(path: &Path, name: &str, test: &[&FeatureRow]) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut reader = report::reader(open(path)?);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let (Some(ci), Some(pi)) = (header.iter().position(|h| h == "clip_id"), header.iter().position(|h| h == "prediction")) else {
        return Err(bad("expected columns clip_id,prediction".into()));
    };
    let mut map = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v: f64 = rec[pi].parse().map_err(|_| bad(format!("bad prediction `{}`", &rec[pi])))?;
        if !v.is_finite() {
            return Err(bad(format!("non-finite prediction for {}", &rec[ci])));
        }
        map.insert(rec[ci].to_string(), v);
    }
    test.iter()
        .map(|r| {
            let id = r.clip.to_string();
            map.get(&id).copied().ok_or_else(|| bad(format!("model `{name}` has no prediction for test clip {id}")))
        })
        .collect()
}

fn truth(r: &FeatureRow, scope: Scope) -> f64 {
    match scope {
        Scope::Task(_) => r.score_task,
        Scope::All => r.score_all,
    }
}

/// Splits, grid search per regime, baselines, metrics and bootstrap comparisons.
pub fn cmd_train_eval(cfg: &PipelineConfig) -> Result<TrainEvalOutcome, CliError> {
    cfg.validate()?;
    if cfg.bootstrap.resamples < MIN_RESAMPLES {
        return Err(CliError::Validation(format!("{} resamples requested, at least {MIN_RESAMPLES} required", cfg.bootstrap.resamples)));
    }
    let out = cfg.out_dir();
    let prov = cfg.provenance();
    let tasks = cfg.task_list();
    let rows: Vec<FeatureRow> = read_feature_csv(open(&out.join(FEATURES_FILE))?)
        .map_err(|e| CliError::Validation(format!("{FEATURES_FILE}: {e}")))?
        .into_iter()
        .filter(|r| tasks.contains(&r.task()))
        .collect();
    let fits = read_cfa_params(open(&out.join(CFA_PARAMS_FILE))?).map_err(|e| CliError::Validation(format!("{CFA_PARAMS_FILE}: {e}")))?;
    let ratings = load_ratings(cfg)?;

    let subjects: Vec<&str> = rows.iter().map(|r| r.clip.subject.as_str()).collect();
    let splits = make_splits(&subjects, cfg.seed)?;
    let in_split = |split: Split, task: Option<Task>| -> Vec<&FeatureRow> {
        rows.iter().filter(|r| splits.get(&r.clip.subject) == Some(split) && task.is_none_or(|t| r.task() == t)).collect()
    };
    let test = in_split(Split::Test, None);
    let test_pos: HashMap<&ClipId, usize> = test.iter().enumerate().map(|(i, r)| (&r.clip, i)).collect();

    let grid = cfg.hyper_grid();
    let params = cfg.solver_params();
    let fit = |task: Option<Task>, target: fn(&FeatureRow) -> f64| -> Result<GridResult, CliError> {
        let (tx, ty) = design(&in_split(Split::Train, task), target);
        let (vx, vy) = design(&in_split(Split::Val, task), target);
        let scope = task.map_or(Scope::All, Scope::Task);
        if tx.len() < 2 || vx.is_empty() {
            return Err(CliError::Validation(format!("{scope}: too few training or validation clips ({} / {})", tx.len(), vx.len())));
        }
        Ok(grid_search(Dataset { x: &tx, y: &ty }, Dataset { x: &vx, y: &vy }, &grid, params, cfg.refit)?)
    };
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let test_x: Vec<Vec<f64>> = test.iter().map(|r| r.features.to_array().to_vec()).collect();

    let mut models = Vec::new();
    let mut grids = Vec::new();
    let mut en_per_task = None;
    if cfg.regime.per_task() {
        let mut pred = vec![f64::NAN; test.len()];
        for &task in &tasks {
            let res = fit(Some(task), |r| r.score_task)?;
            let idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].task() == task).collect();
            let x: Vec<Vec<f64>> = idx.iter().map(|&i| test_x[i].clone()).collect();
            for (&i, p) in idx.iter().zip(predict(&res.fit, &x)?) {
                pred[i] = p;
            }
            grids.push((Scope::Task(task), res.clone()));
            models.push(ModelFile { scope: Scope::Task(task), seed: cfg.seed, feature_names: names.clone(), fit: res.fit });
        }
        en_per_task = Some(pred);
    }
    let mut en_all = None;
    if cfg.regime.all_tasks() {
        let res = fit(None, |r| r.score_all)?;
        en_all = Some(predict(&res.fit, &test_x)?);
        grids.push((Scope::All, res.clone()));
        models.push(ModelFile { scope: Scope::All, seed: cfg.seed, feature_names: names.clone(), fit: res.fit });
    }

    let mut point: Vec<(String, Vec<f64>)> = vec![
        (UNIFORM.into(), uniform_baseline(test.len(), cfg.seed.wrapping_add(1))),
        (NORMAL.into(), normal_baseline(test.len(), cfg.seed.wrapping_add(2))),
    ];
    for ext in &cfg.external {
        point.push((ext.name.clone(), read_external(&cfg.resolve(&ext.predictions), &ext.name, &test)?));
    }
    if let Some(p) = &en_per_task {
        point.push((EN_PER_TASK.into(), p.clone()));
    }
    if let Some(p) = &en_all {
        point.push((EN_ALL_TASKS.into(), p.clone()));
    }

    let scope_included = |s: Scope| match s {
        Scope::Task(t) => tasks.contains(&t),
        Scope::All => true,
    };
    let point_model = |name: &str, pred: &[f64], scope: Scope| -> ScoredModel {
        let idx: Vec<usize> = (0..test.len()).filter(|&i| scope.contains(test[i].task())).collect();
        let panel = Panel {
            clips: idx.clone(),
            pred: idx.iter().map(|&i| pred[i]).collect(),
            truth: idx.iter().map(|&i| truth(test[i], scope)).collect(),
        };
        ScoredModel::single(name, panel)
    };
    let human_for = |scope: Scope| -> Result<ScoredModel, CliError> {
        let fit = &fits
            .iter()
            .find(|(s, _)| *s == scope)
            .ok_or_else(|| CliError::Validation(format!("{CFA_PARAMS_FILE} has no {scope} fit")))?
            .1;
        let table = ratings.filter(|c| scope.contains(c.task) && test_pos.contains_key(c));
        let outcomes = human_baseline_scores(&table, fit, cfg.raters_per_clip)?;
        Ok(human_model(HUMAN, &outcomes, |c| test_pos.get(c).copied()))
    };
    let n_base = 2;

    // Models per scope, in report row order: baselines, human, externals, ElasticNet.
    let mut by_scope: Vec<Option<Vec<ScoredModel>>> = Vec::new();
    for &scope in &TABLE_SCOPES {
        if !scope_included(scope) {
            by_scope.push(None);
            continue;
        }
        let mut ms: Vec<ScoredModel> = point.iter().map(|(n, p)| point_model(n, p, scope)).collect();
        ms.insert(n_base, human_for(scope)?);
        by_scope.push(Some(ms));
    }
    let all_models = by_scope[3].as_ref().expect("all scope is always included");
    let table3: Vec<Table3Row> = all_models
        .iter()
        .enumerate()
        .map(|(m, model)| Table3Row {
            model: model.name.clone(),
            metrics: std::array::from_fn(|s| by_scope[s].as_ref().map_or(Metrics::default(), |ms| ms[m].metrics(None))),
        })
        .collect();

    let clusters = Clusters::from_labels(&test.iter().map(|r| r.clip.subject.as_str()).collect::<Vec<_>>());
    let bootstrap = |a: &ScoredModel, b: &ScoredModel| cluster_bootstrap(a, b, &clusters, cfg.bootstrap.resamples, cfg.seed);
    let primary_name = if cfg.regime.all_tasks() { EN_ALL_TASKS } else { EN_PER_TASK };
    let primary = all_models.iter().find(|m| m.name == primary_name).expect("primary model evaluated");
    let table4 = all_models
        .iter()
        .filter(|m| m.name != EN_PER_TASK && m.name != EN_ALL_TASKS)
        .map(|m| Ok(Table4Row { comparison: format!("EN - {}", m.name), result: bootstrap(primary, m)? }))
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut regime_comparison = Vec::new();
    if cfg.regime == Regime::Both {
        for (s, ms) in TABLE_SCOPES.iter().zip(&by_scope) {
            let Some(ms) = ms else { continue };
            let find = |n: &str| ms.iter().find(|m| m.name == n).expect("both regimes evaluated");
            let result = bootstrap(find(EN_PER_TASK), find(EN_ALL_TASKS))?;
            regime_comparison.push(Table4Row { comparison: format!("EN per-task - EN all-tasks ({s})"), result });
        }
    }

    write_outputs(&prov, &out, &models, &grids, &table3, &table4, &regime_comparison, &test, &point, &splits)?;
    Ok(TrainEvalOutcome {
        models,
        table3,
        table4,
        regime_comparison,
        test_clips: test.iter().map(|r| r.clip.clone()).collect(),
        predictions: point,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    prov: &Provenance,
    out: &Path,
    models: &[ModelFile],
    grids: &[(Scope, GridResult)],
    table3: &[Table3Row],
    table4: &[Table4Row],
    regime_comparison: &[Table4Row],
    test: &[&FeatureRow],
    point: &[(String, Vec<f64>)],
    splits: &crate::regression::SplitAssignment,
) -> Result<(), CliError> {
    for m in models {
        let name = match m.scope {
            Scope::Task(t) => format!("model_{t}.txt"),
            Scope::All => "model_all.txt".into(),
        };
        write_with(&out.join("models").join(name), |w| {
            prov.write_header(w)?;
            write_model(w, m)
        })?;
    }
    write_with(&out.join("weights.csv"), |w| write_weights(w, models, Some(prov)))?;
    write_with(&out.join("table3.csv"), |w| write_table3(w, table3, Some(prov)))?;
    write_with(&out.join("table4.csv"), |w| write_table4(w, table4, Some(prov)))?;
    write_with(&out.join("regime_comparison.csv"), |w| write_table4(w, regime_comparison, Some(prov)))?;

    let grid_rows = grids.iter().flat_map(|(scope, g)| {
        g.cells.iter().map(move |c| {
            vec![
                scope.to_string(),
                c.alpha.to_string(),
                c.l1_ratio.to_string(),
                sig6(c.val_rmse),
                c.converged.to_string(),
                (c.alpha == g.alpha && c.l1_ratio == g.l1_ratio).to_string(),
            ]
        })
    });
    write_with(&out.join("grid.csv"), |w| {
        report::write_csv(w, Some(prov), &["model", "alpha", "l1_ratio", "val_rmse", "converged", "selected"], grid_rows)
    })?;

    let mut header = vec!["clip_id".to_string(), "subject_id".into(), "task".into(), "score_task".into(), "score_all".into()];
    header.extend(point.iter().map(|(n, _)| n.clone()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_with(&out.join("predictions.csv"), |w| {
        report::write_csv(
            w,
            Some(prov),
            &header,
            test.iter().enumerate().map(|(i, r)| {
                let mut rec = vec![r.clip.to_string(), r.clip.subject.clone(), r.clip.task.to_string(), r.score_task.to_string(), r.score_all.to_string()];
                rec.extend(point.iter().map(|(_, p)| p[i].to_string()));
                rec
            }),
        )
    })?;
    write_with(&out.join("splits.csv"), |w| {
        report::write_csv(w, Some(prov), &["subject_id", "split"], splits.iter().map(|(s, sp)| vec![s.to_string(), sp.to_string()]))
    })?;
    Ok(())
}

/// Writes a synthetic study and a config that runs the pipeline on it.
pub fn cmd_synth(cfg: &PipelineConfig, dir: &Path) -> Result<synth::SynthData, CliError> {
    let data = synth::generate(&cfg.synth)?;
    data.write_dir(dir)?;
    let study = PipelineConfig {
        seed: cfg.seed,
        tasks: cfg.synth.tasks.iter().copied().filter(|t| Task::RATED.contains(t)).collect(),
        raters_per_clip: cfg.synth.n_raters,
        synth: cfg.synth.clone(),
        ..PipelineConfig::default()
    };
    let text = toml::to_string(&study).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::write(dir.join("config.toml"), text).map_err(|e| CliError::io(dir, e))?;
    Ok(data)
}
