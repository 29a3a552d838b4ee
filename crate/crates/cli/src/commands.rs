use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use tol_core::ashl::{emit_dataset, extract_record, oracle_detections, parse_view_hierarchy};
use tol_core::config::{Backend, Config};
use tol_core::describer::{describe_point, ChatClient, PipelineError, Regions};
use tol_core::eval::{
    aggregate, judges, load_benchmark, load_predictions, run_content_eval, run_layout_eval,
    synthetic, DirSource, EvalError, EvalOptions, Metric, Outcome, CONTENT_QUESTION_VERSION,
    LAYOUT_QUESTION_VERSION,
};
use tol_core::geometry::{to_pixel, PointNorm, PointPx, Rect};
use tol_core::hierarchy::{build_tree, validate, DetectionFile, RegionKind, ScoredRegion};
use tol_core::verify::{
    baseline_confidence_filter, load_trajectories, score_trajectories, verify_direct,
    verify_trajectory, DirAssets, RepetitionJudge, StepVerdict, VerifyConfig,
};
use tol_core::VerificationMetrics;

use crate::failure::{Failure, ResultExt};
use crate::{
    AshlExtractArgs, AuxiliaryArg, BackendArg, EvalArgs, JudgeArg, MethodArg, OraclePredArgs,
    ReadArgs, ServeArgs, SynthArgs, TreeBuildArgs, VerifyArgs,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    Config::load_or_default(path).invalid("loading config")
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).invalid(format!("reading {}", path.display()))
}

/// Pretty JSON with a trailing newline.
fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).invalid(format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).invalid(format!("writing {}", path.display()))
}

/// File name only, so reports do not depend on where inputs live.
fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_detections(path: &Path) -> Result<DetectionFile, Failure> {
    DetectionFile::from_json(&read_file(path)?).invalid(format!("parsing {}", path.display()))
}

pub fn tree_build(cfg: &Config, a: TreeBuildArgs) -> Result<(), Failure> {
    let file = load_detections(&a.detections)?;
    let screen = file
        .screen_rect(a.screen)
        .invalid("resolving screen size (pass --screen WxH)")?;
    let tree = build_tree(screen, &file.detections, &cfg.tree()).invalid("building tree")?;
    let violations = validate(&tree);
    if !violations.is_empty() {
        return Err(Failure::validation(anyhow!(
            "built tree violates invariants: {violations:?}"
        )));
    }
    write_json(
        &a.out,
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": cfg,
            "detections": file_label(&a.detections),
            "summary": tree.summary(),
            "tree": tree,
        }),
    )
}

pub fn ashl_extract(mut cfg: Config, a: AshlExtractArgs) -> Result<(), Failure> {
    if a.include_unmerged_multileaf {
        cfg.labels.include_unmerged_multileaf = true;
    }
    let mut records = Vec::new();
    for path in &a.hierarchy {
        let vh = parse_view_hierarchy(&read_file(path)?)
            .invalid(format!("parsing {}", path.display()))?;
        let image_ref = vh.image.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| format!("{}.png", s.to_string_lossy()))
                .unwrap_or_default()
        });
        records.push(
            extract_record(&vh, &image_ref, &cfg.ashl())
                .invalid(format!("extracting {}", path.display()))?,
        );
    }
    emit_dataset(&records, &a.out_dir).invalid("writing dataset")?;
    let per_file: Vec<_> = a
        .hierarchy
        .iter()
        .zip(&records)
        .map(|(p, r)| {
            let (g, l) = (r.count(RegionKind::Global), r.count(RegionKind::Local));
            json!({ "hierarchy": file_label(p), "image": r.image_ref, "globals": g, "locals": l })
        })
        .collect();
    write_json(
        &a.out_dir.join("extract_report.json"),
        &json!({ "schema_version": REPORT_SCHEMA_VERSION, "config": cfg, "records": per_file }),
    )
}

fn apply_backend(
    model: &mut tol_core::config::ModelConfig,
    backend: Option<BackendArg>,
    fixture: Option<PathBuf>,
) {
    if let Some(b) = backend {
        model.backend = match b {
            BackendArg::Mock => Backend::Mock,
            BackendArg::Fixture => Backend::Fixture,
            BackendArg::Http => Backend::Http,
        };
    }
    if fixture.is_some() {
        model.fixture_path = fixture;
    }
}

fn regions_for(
    detections: Option<&Path>,
    hierarchy: Option<&Path>,
    cfg: &Config,
) -> Result<Vec<ScoredRegion>, Failure> {
    if let Some(p) = detections {
        return Ok(load_detections(p)?.detections);
    }
    if let Some(p) = hierarchy {
        let vh =
            parse_view_hierarchy(&read_file(p)?).invalid(format!("parsing {}", p.display()))?;
        let record = extract_record(&vh, &file_label(p), &cfg.ashl())
            .invalid(format!("extracting {}", p.display()))?;
        return Ok(oracle_detections(&record));
    }
    Ok(Vec::new())
}

pub fn read(mut cfg: Config, a: ReadArgs) -> Result<(), Failure> {
    apply_backend(&mut cfg.model, a.backend, a.fixture.clone());
    cfg.validate().invalid("validating config")?;
    let img = image::open(&a.image)
        .invalid(format!("decoding {}", a.image.display()))?
        .to_rgb8();
    let regions = regions_for(a.detections.as_deref(), a.hierarchy.as_deref(), &cfg)?;
    let screen = Rect::screen(img.width(), img.height()).invalid("screenshot size")?;
    let tree = build_tree(screen, &regions, &cfg.tree()).invalid("building tree")?;
    let point = match (a.point, a.norm_point) {
        (Some((x, y)), _) => PointPx::new(x, y).invalid("--point")?,
        (None, Some((x, y))) => {
            let n = PointNorm::new(x, y).invalid("--norm-point")?;
            to_pixel(n, img.width(), img.height()).invalid("--norm-point")?
        }
        (None, None) => return Err(Failure::validation(anyhow!("pass --point or --norm-point"))),
    };
    let client = cfg.model.client().invalid("model backend")?;
    let reading = describe_point(
        &img,
        Regions::Tree(&tree),
        point,
        client.as_ref(),
        &cfg.reader(),
    )
    .map_err(|e| match e {
        PipelineError::Describe(_) => Failure::upstream(e),
        other => Failure::validation(other),
    })?;
    reading
        .lenses
        .write_to(&a.out_dir)
        .invalid("writing lenses")?;
    write_json(
        &a.out_dir.join("description.json"),
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": cfg,
            "model_backend": client.backend(),
            "image": file_label(&a.image),
            "screen": [img.width(), img.height()],
            "tree": tree.summary(),
            "point": reading.point,
            "point_norm": reading.point_norm,
            "path": reading.path,
            "layout": reading.lenses.layout,
            "description": reading.description,
        }),
    )
}

fn auxiliary_client(
    cfg: &Config,
    arg: AuxiliaryArg,
    metric: Metric,
    seed: u64,
) -> Result<Box<dyn ChatClient>, Failure> {
    Ok(match (arg, metric) {
        (AuxiliaryArg::Mock, Metric::Content) => Box::new(judges::OracleContentJudge),
        (AuxiliaryArg::Mock, Metric::Layout) => Box::new(judges::OracleLayoutJudge {
            tau: cfg.thresholds.relation_deadband,
        }),
        (AuxiliaryArg::Random, Metric::Content) => {
            Box::new(judges::RandomChoiceJudge::content(seed))
        }
        (AuxiliaryArg::Random, Metric::Layout) => Box::new(judges::RandomChoiceJudge::layout(seed)),
        (AuxiliaryArg::Http, _) => {
            let mut aux = cfg.auxiliary.clone();
            aux.backend = Backend::Http;
            aux.client().invalid("auxiliary backend")?
        }
    })
}

pub fn eval(mut cfg: Config, a: EvalArgs, metric: Metric) -> Result<(), Failure> {
    if let Some(seed) = a.seed {
        cfg.eval.seed = seed;
    }
    if let Some(jobs) = a.jobs {
        cfg.eval.jobs = jobs;
    }
    cfg.validate().invalid("validating config")?;
    let bench = load_benchmark(&a.manifest).map_err(Failure::validation)?;
    let predictions = load_predictions(&a.predictions).map_err(Failure::validation)?;
    let client = auxiliary_client(&cfg, a.auxiliary, metric, cfg.eval.seed)?;
    let opts = EvalOptions {
        seed: cfg.eval.seed,
        jobs: cfg.eval.jobs,
        relation_deadband: cfg.thresholds.relation_deadband,
        params: cfg.auxiliary.params.clone(),
    };
    let results = match metric {
        Metric::Content => {
            let source = DirSource::new(&bench.root);
            run_content_eval(
                &bench.samples,
                &predictions,
                &source,
                client.as_ref(),
                &opts,
            )
            .map_err(Failure::validation)?
        }
        Metric::Layout => run_layout_eval(&bench.samples, &predictions, client.as_ref(), &opts),
    };
    let any_skipped = results.iter().any(|r| r.outcome == Outcome::Skipped);
    let report = aggregate(results).map_err(|e| match e {
        EvalError::NothingAttempted { .. } if any_skipped => Failure::upstream(e),
        other => Failure::validation(other),
    })?;
    if let Some(csv) = &a.csv {
        fs::write(csv, report.to_csv()).invalid(format!("writing {}", csv.display()))?;
    }
    let question_version = match metric {
        Metric::Content => CONTENT_QUESTION_VERSION,
        Metric::Layout => LAYOUT_QUESTION_VERSION,
    };
    write_json(
        &a.report,
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": cfg,
            "metric": metric,
            "auxiliary": client.backend(),
            "manifest": file_label(&a.manifest),
            "predictions": file_label(&a.predictions),
            "question_version": question_version,
            "report": report,
        }),
    )
}

pub fn bench_synth(a: SynthArgs) -> Result<(), Failure> {
    let (samples, source) = synthetic::synthetic_benchmark(a.samples, a.seed);
    fs::create_dir_all(&a.out_dir).invalid(format!("creating {}", a.out_dir.display()))?;
    let mut names: Vec<_> = source.iter().collect();
    names.sort_by(|x, y| x.0.cmp(y.0));
    for (name, img) in names {
        let path = a.out_dir.join(name);
        let png = tol_core::lens::encode_png(img).invalid("encoding screenshot")?;
        fs::write(&path, png).invalid(format!("writing {}", path.display()))?;
    }
    let manifest: String = samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
        .collect();
    let path = a.out_dir.join("manifest.jsonl");
    fs::write(&path, manifest).invalid(format!("writing {}", path.display()))
}

pub fn bench_oracle(a: OraclePredArgs) -> Result<(), Failure> {
    let bench = load_benchmark(&a.manifest).map_err(Failure::validation)?;
    let preds = judges::oracle_predictions(&bench.samples, &DirSource::new(&bench.root))
        .map_err(Failure::validation)?;
    let text: String = preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
        .collect();
    fs::write(&a.out, text).invalid(format!("writing {}", a.out.display()))
}

#[derive(Serialize)]
struct TrajectoryReport {
    id: String,
    goal: String,
    verdicts: Vec<StepVerdict>,
}

pub fn verify(mut cfg: Config, a: VerifyArgs) -> Result<(), Failure> {
    apply_backend(&mut cfg.model, a.backend, None);
    if let Some(t) = a.threshold {
        cfg.thresholds.confidence_baseline = t;
    }
    if let Some(jobs) = a.jobs {
        cfg.eval.jobs = jobs;
    }
    cfg.validate().invalid("validating config")?;
    let trajs = load_trajectories(&a.trajectory).map_err(Failure::validation)?;
    let root = a
        .trajectory
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let assets = DirAssets::new(root);
    let vcfg = VerifyConfig {
        reader: cfg.reader(),
        paths: cfg.paths(),
        confidence_baseline: cfg.thresholds.confidence_baseline,
    };
    let describer: Arc<dyn ChatClient> = Arc::from(cfg.model.client().invalid("model backend")?);
    let judge: Arc<dyn ChatClient> = match a.judge {
        JudgeArg::Mock => Arc::new(RepetitionJudge::default()),
        JudgeArg::Http => {
            let mut aux = cfg.auxiliary.clone();
            aux.backend = Backend::Http;
            Arc::from(aux.client().invalid("judge backend")?)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.eval.jobs)
        .build()
        .map_err(Failure::validation)?;
    let verdicts: Vec<Vec<StepVerdict>> = pool.install(|| {
        trajs
            .par_iter()
            .map(|t| match a.method {
                MethodArg::Tol => {
                    verify_trajectory(t, &assets, describer.as_ref(), judge.as_ref(), &vcfg)
                }
                MethodArg::Direct => verify_direct(t, &assets, judge.as_ref(), &vcfg),
                MethodArg::Confidence => baseline_confidence_filter(t, vcfg.confidence_baseline),
            })
            .collect()
    });
    let labeled: Vec<usize> = trajs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.labels.is_some())
        .map(|(i, _)| i)
        .collect();
    let metrics: Option<VerificationMetrics> = if labeled.is_empty() {
        None
    } else {
        let ts: Vec<_> = labeled.iter().map(|&i| trajs[i].clone()).collect();
        let vs: Vec<_> = labeled.iter().map(|&i| verdicts[i].clone()).collect();
        Some(score_trajectories(&ts, &vs).map_err(Failure::validation)?)
    };
    let method = match a.method {
        MethodArg::Tol => "tol",
        MethodArg::Confidence => "confidence",
        MethodArg::Direct => "direct",
    };
    let judge_name = match a.method {
        MethodArg::Confidence => None,
        _ => Some(judge.backend()),
    };
    let skipped: BTreeMap<&str, usize> = trajs
        .iter()
        .zip(&verdicts)
        .map(|(t, v)| {
            (
                t.id.as_str(),
                v.iter().filter(|s| s.skipped.is_some()).count(),
            )
        })
        .filter(|(_, n)| *n > 0)
        .collect();
    for (id, n) in &skipped {
        tracing::warn!(trajectory = %id, steps = n, "steps skipped");
    }
    let all_steps: usize = verdicts.iter().map(Vec::len).sum();
    let all_skipped: usize = skipped.values().sum();
    let reports: Vec<TrajectoryReport> = trajs
        .iter()
        .zip(verdicts)
        .map(|(t, v)| TrajectoryReport {
            id: t.id.clone(),
            goal: t.goal.clone(),
            verdicts: v,
        })
        .collect();
    write_json(
        &a.report,
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": cfg,
            "method": method,
            "judge": judge_name,
            "describer": (a.method == MethodArg::Tol).then(|| describer.backend()),
            "trajectory_file": file_label(&a.trajectory),
            "metrics": metrics,
            "trajectories": reports,
        }),
    )?;
    if all_steps > 0 && all_skipped == all_steps && a.method != MethodArg::Confidence {
        return Err(Failure::upstream(anyhow!(
            "every step was skipped; see the report for reasons"
        )));
    }
    Ok(())
}

pub fn serve(mut cfg: Config, config_path: Option<PathBuf>, a: ServeArgs) -> Result<(), Failure> {
    if let Some(bind) = a.bind {
        cfg.server.bind = bind;
    }
    let state = tol_service::AppState::new(cfg, config_path).map_err(Failure::validation)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::validation)?;
    rt.block_on(tol_service::serve(state))
        .map_err(Failure::validation)
}
