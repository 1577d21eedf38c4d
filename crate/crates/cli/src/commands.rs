//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use compseg_core::evaluation::{evaluate_cases, CaseEvalSettings, CaseEvaluation};
use compseg_core::nn::Segmenter;
use compseg_core::synthslide::{
    build_corpus as generate_corpus, load_corpus, write_corpus, write_rgba_png, Corpus, CorpusConfig, CorpusRole,
    MissingSlide, SyntheticCase, CLASS_A, CLASS_B,
};
use compseg_core::trainer::ablation::mean_and_sample_std;
use compseg_core::trainer::{
    run_ablation, train as train_model, AblationConfig, Condition, DatasetSpec, ExperimentConfig, TrainedModel,
};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::svg::{box_strip_plot, confusion_heatmap};
use crate::{fetch, AblationArgs, CliError, CorpusArgs, EvalArgs, FetchArgs, ReportArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn default_under(root: Option<&Path>, sub: &str) -> PathBuf {
    root.map_or_else(|| Path::new("data").join(sub), |r| r.join(sub))
}

pub fn fetch_data(args: &FetchArgs, root: Option<&Path>) -> Result<i32, CliError> {
    let dir = args.out.clone().unwrap_or_else(|| default_under(root, "mnist"));
    let mut manifest = RunManifest::start(
        "fetch-data",
        &format!("offline={} seed={} url={}", args.offline, args.seed, args.url),
        vec![args.seed],
    );
    let files = if args.offline { fetch::write_offline(&dir, args.seed)? } else { fetch::fetch_mnist(&dir, &args.url)? };
    for f in &files {
        eprintln!("{} {} md5 {}", f.status, f.path.display(), f.md5);
    }
    manifest.artifacts.reports.push(write(&dir.join("files.json"), json(&files))?);
    manifest.finish(&dir)?;
    Ok(0)
}

pub fn build_corpus(args: &CorpusArgs, root: Option<&Path>) -> Result<i32, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str::<CorpusConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => CorpusConfig::default(),
    };
    if let Some(p) = args.patch_size {
        cfg.patch_size = p;
    }
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    let dir = args.out.clone().unwrap_or_else(|| default_under(root, "synthslide"));
    let effective = toml::to_string(&cfg).expect("config serializes");
    let mut manifest = RunManifest::start("build-corpus", &effective, vec![args.seed]);
    let corpus = generate_corpus(&cfg, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(&dir)?;
    let path = write_corpus(&corpus, &dir).map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!("wrote {} cases to {}", corpus.cases.len(), path.display());
    manifest.artifacts.reports.push(path);
    manifest.artifacts.reports.push(write(&dir.join("corpus.toml"), &effective)?);
    manifest.finish(&dir)?;
    Ok(0)
}

fn parse_condition(s: &str) -> Result<Condition, CliError> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| CliError::Config(format!("unknown condition {s:?}; use baseline, complementary or fully-supervised")))
}

/// Resolves relative data paths against the config file and fills unset
/// data locations from the data root.
pub fn resolve_data_paths(cfg: &mut ExperimentConfig, config_path: &Path, root: Option<&Path>) {
    let base = config_path.parent().unwrap_or(Path::new(""));
    let anchor = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
    match &mut cfg.dataset {
        DatasetSpec::MnistSeg(spec) => {
            spec.data_dir = spec.data_dir.as_ref().map(anchor);
            if spec.data_dir.is_none() {
                if let Some(dir) = root.map(|r| r.join("mnist")).filter(|d| d.is_dir()) {
                    eprintln!("using MNIST files from {}", dir.display());
                    spec.data_dir = Some(dir);
                }
            }
        }
        DatasetSpec::Synthslide(spec) => {
            spec.corpus_manifest = spec.corpus_manifest.as_ref().map(anchor);
            if spec.corpus_manifest.is_none() {
                if let Some(m) = root.map(|r| r.join("synthslide").join("manifest.csv")).filter(|m| m.is_file()) {
                    eprintln!("using corpus {}", m.display());
                    spec.corpus_manifest = Some(m);
                }
            }
        }
    }
}

pub fn train(args: &TrainArgs, root: Option<&Path>) -> Result<i32, CliError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(c) = &args.condition {
        cfg.condition = parse_condition(c)?;
    }
    resolve_data_paths(&mut cfg, &args.config, root);
    cfg.validate()?;
    let effective = cfg.to_toml();
    let mut manifest = RunManifest::start("train", &effective, vec![cfg.seed]);
    let (model, report) = train_model(&cfg)?;
    eprintln!(
        "{} seed {}: macro F1 {:.4} at epoch {} ({:.1} s)",
        cfg.condition.as_str(),
        cfg.seed,
        report.best_macro_f1,
        report.best_epoch,
        report.wall_clock_secs
    );
    let out = &args.out;
    create_dir(out)?;
    let ckpt = out.join("model.ckpt");
    model.save(&ckpt)?;
    manifest.artifacts.checkpoints.push(ckpt);
    manifest.artifacts.reports.push(write(&out.join("config.toml"), &effective)?);
    manifest.artifacts.reports.push(write(&out.join("report.csv"), report.to_csv())?);
    manifest.artifacts.reports.push(write(&out.join("report.json"), report.to_json())?);
    manifest.finish(out)?;
    Ok(0)
}

/// `--seeds` as a count starting at `start`, or as an explicit list.
pub fn parse_seeds(spec: &str, start: u64) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("--seeds {spec:?}: expected a count or a comma-separated list"));
    if spec.contains(',') {
        return spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = spec.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((start..start + n).collect())
}

fn ablation_figure(groups: &[(String, Vec<f64>)]) -> String {
    box_strip_plot("Macro F1 by condition", "macro F1", groups)
}

pub fn ablation(args: &AblationArgs, root: Option<&Path>) -> Result<i32, CliError> {
    let mut cfg = AblationConfig::from_file(&args.config)?;
    resolve_data_paths(&mut cfg.base, &args.config, root);
    if let Some(spec) = &args.seeds {
        cfg.ablation.seeds = parse_seeds(spec, args.seed.unwrap_or(0))?;
    } else if let Some(start) = args.seed {
        let n = cfg.ablation.seeds.len() as u64;
        cfg.ablation.seeds = (start..start + n).collect();
    }
    if !args.condition.is_empty() {
        for name in &args.condition {
            if !cfg.ablation.arms.iter().any(|a| &a.name == name) {
                let known: Vec<&str> = cfg.ablation.arms.iter().map(|a| a.name.as_str()).collect();
                return Err(CliError::Config(format!("unknown condition {name:?}; configured: {}", known.join(", "))));
            }
        }
        cfg.ablation.arms.retain(|a| args.condition.contains(&a.name));
    }
    let effective = format!("{}\n[ablation]\n{}", cfg.base.to_toml(), toml::to_string(&cfg.ablation).expect("serializes"));
    let mut manifest = RunManifest::start("ablation", &effective, cfg.ablation.seeds.clone());
    let out = &args.out;
    let runs_dir = out.join("runs");
    create_dir(&runs_dir)?;

    let total = cfg.ablation.arms.len() * cfg.ablation.seeds.len();
    let done = AtomicUsize::new(0);
    let write_errors = std::sync::Mutex::new(Vec::new());
    let table = run_ablation(&cfg.base, &cfg.ablation.arms, &cfg.ablation.seeds, args.jobs, |arm, seed, result| {
        let i = done.fetch_add(1, Ordering::SeqCst) + 1;
        match result {
            Ok(report) => {
                eprintln!(
                    "[{i}/{total}] {} seed {seed}: macro F1 {:.4} at epoch {} ({:.1} s)",
                    arm.name, report.best_macro_f1, report.best_epoch, report.wall_clock_secs
                );
                let stem = runs_dir.join(format!("{}-seed{seed}", arm.name));
                for (ext, text) in [("csv", report.to_csv()), ("json", report.to_json())] {
                    if let Err(e) = write(&stem.with_extension(ext), text) {
                        write_errors.lock().expect("not poisoned").push(e.to_string());
                    }
                }
            }
            Err(e) => eprintln!("[{i}/{total}] {} seed {seed}: failed: {e}", arm.name),
        }
    })?;

    manifest.artifacts.reports.push(write(&out.join("ablation.csv"), table.rows_csv())?);
    manifest.artifacts.reports.push(write(&out.join("summary.csv"), table.summary_csv())?);
    manifest.artifacts.reports.push(write(&out.join("config.toml"), &effective)?);
    for row in &table.rows {
        let stem = runs_dir.join(format!("{}-seed{}", row.arm, row.seed));
        manifest.artifacts.reports.push(stem.with_extension("csv"));
        manifest.artifacts.reports.push(stem.with_extension("json"));
    }
    if !table.failures.is_empty() {
        let mut text = String::from("arm,seed,error\n");
        for f in &table.failures {
            text.push_str(&format!("{},{},\"{}\"\n", f.arm, f.seed, f.error.replace('"', "'")));
        }
        manifest.artifacts.reports.push(write(&out.join("failures.csv"), text)?);
    }
    let groups: Vec<(String, Vec<f64>)> = table
        .summary
        .iter()
        .map(|s| (s.arm.clone(), table.rows.iter().filter(|r| r.arm == s.arm).map(|r| r.macro_f1).collect()))
        .collect();
    manifest.artifacts.figures.push(write(&out.join("figures").join("ablation_f1.svg"), ablation_figure(&groups))?);
    for s in &table.summary {
        eprintln!("{}: mean {:.4} std {:.4} over {} runs", s.arm, s.mean_macro_f1, s.std_macro_f1, s.runs);
    }
    let write_errors = write_errors.into_inner().expect("not poisoned");
    if let Some(e) = write_errors.first() {
        return Err(CliError::Io(e.clone()));
    }
    manifest.finish(out)?;
    Ok(if table.failures.is_empty() { 0 } else { 1 })
}

const CLASS_NAMES: [&str; 3] = ["class-a", "class-b", "other"];

fn role_filter(role: &str) -> Result<Option<CorpusRole>, CliError> {
    if role == "all" {
        return Ok(None);
    }
    CorpusRole::parse(role)
        .map(Some)
        .ok_or_else(|| CliError::Config(format!("unknown role {role:?}; use test, validation, annotated, complementary or all")))
}

/// Segmentation map as RGBA: tumor classes in color, everything else
/// (the "other" class and unevaluated pixels) fully transparent.
pub fn overlay_rgba(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        let px: [u8; 4] = match l {
            l if l == CLASS_A => [31, 119, 180, 200],
            l if l == CLASS_B => [214, 39, 40, 200],
            _ => [0, 0, 0, 0],
        };
        out.extend_from_slice(&px);
    }
    out
}

#[derive(Debug, Serialize)]
struct EvalSummary<'a> {
    cases: usize,
    balanced_accuracy: f64,
    ci_low: f64,
    ci_high: f64,
    confidence: f64,
    resamples: usize,
    resamples_rejected: usize,
    mean_complementary_area_share: f64,
    missing_slides: Vec<&'a str>,
}

fn cases_csv(ev: &CaseEvaluation) -> String {
    let mut out = String::from(
        "case_id,diagnosis,predicted,share_class_a,share_class_b,pixels_class_a,pixels_class_b,tie,no_tumor,complementary_area_share\n",
    );
    for c in &ev.cases {
        let p = &c.prediction;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.case_id,
            c.diagnosis.as_str(),
            p.predicted_class.map_or("none", |k| CLASS_NAMES[k]),
            p.class_pixel_shares[0],
            p.class_pixel_shares[1],
            p.class_pixel_counts[0],
            p.class_pixel_counts[1],
            p.tie,
            p.no_tumor_pixels,
            c.complementary_area_share
        ));
    }
    out
}

fn confusion_csv(ev: &CaseEvaluation) -> String {
    let mut out = String::from("diagnosis,predicted_class_a,predicted_class_b,predicted_none\n");
    for (i, row) in ev.confusion.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", CLASS_NAMES[i], row[0], row[1], row[2]));
    }
    out
}

/// Scores `model` on the selected cases and writes every artifact into
/// `out`. Returns the exit code: non-zero when slides were missing.
pub fn eval_cases_with<S: Segmenter + ?Sized>(
    model: &S,
    corpus: &Corpus,
    missing: &[MissingSlide],
    args: &EvalArgs,
    manifest: &mut RunManifest,
) -> Result<(i32, CaseEvaluation), CliError> {
    let role = role_filter(&args.role)?;
    let cases: Vec<&SyntheticCase> = corpus.cases.iter().filter(|c| role.map_or(true, |r| c.role == r)).collect();
    if cases.is_empty() {
        return Err(CliError::Data(format!("no cases with role {}", args.role)));
    }
    let settings = CaseEvalSettings {
        patch: args.patch_size,
        stride: args.stride,
        batch_size: args.batch_size,
        n_resamples: args.resamples,
        confidence: args.confidence,
        seed: args.seed,
    };
    let ev = evaluate_cases(model, &cases, &settings)?;
    let out = &args.out;
    create_dir(out)?;
    for m in missing {
        eprintln!("missing slide for {}: {} ({})", m.case_id, m.path.display(), m.reason);
    }
    manifest.artifacts.reports.push(write(&out.join("cases.csv"), cases_csv(&ev))?);
    manifest.artifacts.reports.push(write(&out.join("confusion.csv"), confusion_csv(&ev))?);
    let summary = EvalSummary {
        cases: ev.cases.len(),
        balanced_accuracy: ev.balanced_accuracy,
        ci_low: ev.ci.low,
        ci_high: ev.ci.high,
        confidence: ev.confidence,
        resamples: args.resamples,
        resamples_rejected: ev.ci.rejected,
        mean_complementary_area_share: ev.mean_area_share(),
        missing_slides: missing.iter().map(|m| m.case_id.as_str()).collect(),
    };
    manifest.artifacts.reports.push(write(&out.join("summary.json"), json(&summary))?);
    if !missing.is_empty() {
        let mut text = String::from("case_id,path,reason\n");
        for m in missing {
            text.push_str(&format!("{},{},\"{}\"\n", m.case_id, m.path.display(), m.reason.replace('"', "'")));
        }
        manifest.artifacts.reports.push(write(&out.join("missing_slides.csv"), text)?);
    }
    let rows = [CLASS_NAMES[0].to_string(), CLASS_NAMES[1].to_string()];
    let cols = rows.iter().cloned().chain(["none".to_string()]).collect::<Vec<_>>();
    let counts: Vec<Vec<u64>> = ev.confusion.iter().map(|r| r.to_vec()).collect();
    let fig = confusion_heatmap("Case-level confusion", &rows, &cols, &counts);
    manifest.artifacts.figures.push(write(&out.join("figures").join("confusion.svg"), fig)?);
    let overlay_dir = out.join("overlays");
    create_dir(&overlay_dir)?;
    for (case, maps) in cases.iter().zip(&ev.segmentations) {
        for (i, (slide, map)) in case.slides.iter().zip(maps).enumerate() {
            let path = overlay_dir.join(format!("{}-s{i}.png", case.case_id));
            write_rgba_png(&path, slide.width, slide.height, &overlay_rgba(map.labels()))
                .map_err(|e| CliError::Io(e.to_string()))?;
            manifest.artifacts.figures.push(path);
        }
    }
    eprintln!(
        "{} cases: balanced accuracy {:.4} ({:.0}% CI {:.4}..{:.4}), complementary area share {:.4}",
        ev.cases.len(),
        ev.balanced_accuracy,
        ev.confidence * 100.0,
        ev.ci.low,
        ev.ci.high,
        ev.mean_area_share()
    );
    Ok((if missing.is_empty() { 0 } else { 2 }, ev))
}

pub fn eval_cases(args: &EvalArgs, root: Option<&Path>) -> Result<i32, CliError> {
    let corpus_path = match (&args.corpus, root) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => r.join("synthslide").join("manifest.csv"),
        (None, None) => return Err(CliError::Config(format!("--corpus is required unless {} is set", crate::DATA_DIR_ENV))),
    };
    let model = TrainedModel::load(&args.checkpoint)?;
    let (corpus, missing) = load_corpus(&corpus_path).map_err(|e| CliError::Data(e.to_string()))?;
    let settings_text = format!(
        "checkpoint={} corpus={} patch={} stride={} role={} resamples={} confidence={} seed={}",
        crate::manifest::sha256_hex(&std::fs::read(&args.checkpoint).map_err(|e| CliError::io(&args.checkpoint, e))?),
        corpus_path.display(),
        args.patch_size,
        args.stride,
        args.role,
        args.resamples,
        args.confidence,
        args.seed
    );
    let mut manifest = RunManifest::start("eval-cases", &settings_text, vec![args.seed]);
    manifest.artifacts.checkpoints.push(args.checkpoint.clone());
    let (code, _) = eval_cases_with(&model, &corpus, &missing, args, &mut manifest)?;
    manifest.finish(&args.out)?;
    Ok(code)
}

/// Rows of a CSV file split on commas; enough for the files this tool writes.
fn read_simple_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize, CliError> {
    header.iter().position(|h| h == name).ok_or_else(|| CliError::Data(format!("{}: no column {name}", path.display())))
}

pub fn report(args: &ReportArgs) -> Result<i32, CliError> {
    let input = &args.input;
    let out = args.out.clone().unwrap_or_else(|| input.join("report"));
    create_dir(&out)?;
    let mut manifest = RunManifest::start("report", &input.display().to_string(), Vec::new());
    let mut md = String::from("# Report\n");
    let mut found = false;

    let ablation_csv = input.join("ablation.csv");
    if ablation_csv.is_file() {
        found = true;
        let (header, rows) = read_simple_csv(&ablation_csv)?;
        let (arm_col, f1_col) = (column(&header, "arm", &ablation_csv)?, column(&header, "macro_f1", &ablation_csv)?);
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for r in &rows {
            let v: f64 = r[f1_col].parse().map_err(|_| CliError::Data(format!("bad macro_f1 {:?}", r[f1_col])))?;
            match groups.iter_mut().find(|(a, _)| a == &r[arm_col]) {
                Some((_, vals)) => vals.push(v),
                None => groups.push((r[arm_col].clone(), vec![v])),
            }
        }
        md.push_str("\n## Ablation\n\n| condition | runs | mean macro F1 | std |\n|---|---|---|---|\n");
        let mut summary = String::from("arm,runs,mean_macro_f1,std_macro_f1\n");
        for (arm, vals) in &groups {
            let (mean, std) = mean_and_sample_std(vals);
            summary.push_str(&format!("{arm},{},{mean},{std}\n", vals.len()));
            md.push_str(&format!("| {arm} | {} | {mean:.4} | {std:.4} |\n", vals.len()));
        }
        manifest.artifacts.reports.push(write(&out.join("summary.csv"), summary)?);
        manifest.artifacts.figures.push(write(&out.join("figures").join("ablation_f1.svg"), ablation_figure(&groups))?);
    }

    let eval_json = input.join("summary.json");
    let confusion = input.join("confusion.csv");
    if eval_json.is_file() && confusion.is_file() {
        found = true;
        let text = std::fs::read_to_string(&eval_json).map_err(|e| CliError::io(&eval_json, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", eval_json.display())))?;
        let num = |k: &str| v.get(k).and_then(|x| x.as_f64()).unwrap_or(f64::NAN);
        md.push_str(&format!(
            "\n## Case-level evaluation\n\n- cases: {}\n- balanced accuracy: {:.4} (CI {:.4} to {:.4})\n- mean complementary area share: {:.4}\n",
            num("cases"),
            num("balanced_accuracy"),
            num("ci_low"),
            num("ci_high"),
            num("mean_complementary_area_share")
        ));
        let (header, rows) = read_simple_csv(&confusion)?;
        let counts = rows
            .iter()
            .map(|r| r[1..].iter().map(|c| c.parse().map_err(|_| CliError::Data(format!("bad count {c:?}")))).collect())
            .collect::<Result<Vec<Vec<u64>>, _>>()?;
        let names: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
        let cols: Vec<String> = header[1..].iter().map(|h| h.trim_start_matches("predicted_").to_string()).collect();
        let fig = confusion_heatmap("Case-level confusion", &names, &cols, &counts);
        manifest.artifacts.figures.push(write(&out.join("figures").join("confusion.svg"), fig)?);
    }
    if !found {
        return Err(CliError::Data(format!("{} holds neither ablation.csv nor summary.json", input.display())));
    }
    manifest.artifacts.reports.push(write(&out.join("report.md"), md)?);
    manifest.finish(&out)?;
    Ok(0)
}
