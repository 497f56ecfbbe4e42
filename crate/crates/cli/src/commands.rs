use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use axregion::abstraction::{abstract_partition, Backend, ChatClient, HttpChatClient, LmEndpointConfig, LmError};
use axregion::axtree::trace::{action_target, parse_trace, Trace};
use axregion::decomposer::checkpoint::{self, CheckpointError, Scorer};
use axregion::decomposer::synthetic::{read_corpus, rule_corpus, write_corpus, SyntheticConfig};
use axregion::decomposer::{
    decompose, partition_from_roots, sweep, train, DecomposeError, RegionPartition, TrainConfig,
};
use axregion::digest::replay::replay;
use axregion::digest::{KeywordSelector, LmSelector, Pipeline, Selector};
use axregion::metrics::{change_histogram, change_ratio, lca_depth_ratio, median, ratio_histogram, region_prf, Histogram, MatchCounts};
use axregion::{parse_axtree, preprocess, serialize_axtree, AXTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{BackendArg, Cli, Command, Format};

pub const PARTITION_SCHEMA: &str = "axregion.partition.v1";
pub const EVAL_SCHEMA: &str = "axregion.eval.v1";
pub const ANALYZE_SCHEMA: &str = "axregion.analyze.v1";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
    fn service(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<DecomposeError> for CliError {
    fn from(e: DecomposeError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) | CheckpointError::Format(_) => CliError::input(format!("checkpoint: {e}")),
            CheckpointError::Version(_) | CheckpointError::Shape(_) => CliError::config(format!("checkpoint: {e}")),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Config(_) | LmError::MissingKey(_) => CliError::config(e.to_string()),
            _ => CliError::service(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("{}: no such file", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::input(format!("{}: not a directory", path.display())))
    }
}

fn load_tree(path: &Path) -> Result<AXTree> {
    let text = read(path)?;
    parse_axtree(&text, &path.display().to_string()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_scorer(path: &Path, tau: Option<f64>) -> Result<(Scorer, f64)> {
    let scorer = checkpoint::load(path)?;
    let tau = tau.unwrap_or_else(|| scorer.tau());
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DecomposeError::InvalidTau(tau).into());
    }
    Ok((scorer, tau))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Counts model calls so a run that never reached the service can be told
/// apart from one that merely fell back now and then.
struct CountingClient {
    inner: HttpChatClient,
    ok: AtomicUsize,
    failed: AtomicUsize,
    last_error: std::sync::Mutex<Option<String>>,
}

impl CountingClient {
    fn from_config(path: Option<&Path>) -> Result<Self> {
        let path = path.ok_or_else(|| CliError::config("--backend lm needs --lm-config"))?;
        require_file(path)?;
        let config = LmEndpointConfig::from_toml(&read(path)?)?;
        Ok(CountingClient {
            inner: HttpChatClient::new(config)?,
            ok: AtomicUsize::new(0),
            failed: AtomicUsize::new(0),
            last_error: std::sync::Mutex::new(None),
        })
    }

    fn check_reachable(&self) -> Result<()> {
        let failed = self.failed.load(Ordering::SeqCst);
        if failed > 0 && self.ok.load(Ordering::SeqCst) == 0 {
            let last = self.last_error.lock().expect("not poisoned").clone().unwrap_or_default();
            return Err(CliError::service(format!(
                "language-model endpoint failed on all {failed} requests ({last}); offline fallbacks were used"
            )));
        }
        Ok(())
    }
}

impl ChatClient for CountingClient {
    fn complete(&self, prompt: &str) -> std::result::Result<String, LmError> {
        let r = self.inner.complete(prompt);
        match &r {
            Ok(_) => self.ok.fetch_add(1, Ordering::SeqCst),
            Err(e) => {
                *self.last_error.lock().expect("not poisoned") = Some(e.to_string());
                self.failed.fetch_add(1, Ordering::SeqCst)
            }
        };
        r
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Parse { input, out, raw } => cmd_parse(input, out.as_deref(), *raw),
        Command::Decompose {
            input,
            checkpoint,
            tau,
            abstract_regions,
            backend,
            lm_config,
            out,
        } => cmd_decompose(input, checkpoint, *tau, *abstract_regions, *backend, lm_config.as_deref(), out.as_deref()),
        Command::Train {
            data_dir,
            config,
            out,
            log,
        } => cmd_train(data_dir, config.as_deref(), out, log.as_deref(), cli.seed),
        Command::Eval {
            pred,
            truth,
            iou,
            taus,
            format,
        } => cmd_eval(pred, truth, *iou, taus, *format),
        Command::Digest {
            trace,
            checkpoint,
            tau,
            backend,
            lm_config,
            top_k,
            out_dir,
            format,
        } => cmd_digest(trace, checkpoint, *tau, *backend, lm_config.as_deref(), *top_k, out_dir.as_deref(), *format),
        Command::Analyze { trace, baseline_pairs } => cmd_analyze(trace, *baseline_pairs, cli.seed.unwrap_or(0)),
        Command::GenCorpus {
            out_dir,
            count,
            roles,
            min_nodes,
            max_nodes,
        } => cmd_gen_corpus(out_dir, *count, roles, *min_nodes, *max_nodes, cli.seed.unwrap_or(0)),
    }
}

fn cmd_parse(input: &Path, out: Option<&Path>, raw: bool) -> Result<()> {
    require_file(input)?;
    let tree = load_tree(input)?;
    let tree = if raw { tree } else { preprocess(&tree) };
    emit(out, &serialize_axtree(&tree))?;
    eprintln!("{} nodes", tree.node_count());
    Ok(())
}

#[derive(Serialize)]
struct PartitionFile<'a> {
    schema: &'static str,
    tau: f64,
    region_count: usize,
    #[serde(flatten)]
    partition: &'a RegionPartition,
}

fn cmd_decompose(
    input: &Path,
    ckpt: &Path,
    tau: Option<f64>,
    abstract_regions: bool,
    backend: BackendArg,
    lm_config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    require_file(input)?;
    require_file(ckpt)?;
    let tree = preprocess(&load_tree(input)?);
    let (scorer, tau) = load_scorer(ckpt, tau)?;
    let mut partition = decompose(&tree, &scorer, tau)?;
    let client = match (abstract_regions, backend) {
        (true, BackendArg::Lm) => Some(CountingClient::from_config(lm_config)?),
        _ => None,
    };
    if abstract_regions {
        let b = match &client {
            Some(c) => Backend::lm(c),
            None => Backend::Heuristic,
        };
        let abstractions = abstract_partition(&partition, &tree, &b);
        for (r, a) in partition.regions.iter_mut().zip(abstractions) {
            r.purpose = Some(a.purpose);
            r.state_summary = Some(a.state_summary);
        }
    }
    let file = PartitionFile {
        schema: PARTITION_SCHEMA,
        tau,
        region_count: partition.len(),
        partition: &partition,
    };
    let json = serde_json::to_string_pretty(&file).expect("partition serializes") + "\n";
    emit(out, &json)?;
    eprintln!("{} regions", partition.len());
    if let Some(c) = &client {
        c.check_reachable()?;
    }
    Ok(())
}

fn cmd_train(data_dir: &Path, config: Option<&Path>, out: &Path, log_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    require_dir(data_dir)?;
    let mut cfg = match config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::from_toml(&read(p)?).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = read_corpus(data_dir).map_err(|e| CliError::input(e.to_string()))?;
    if data.is_empty() {
        return Err(CliError::config(format!("{}: no .axtree files to train on", data_dir.display())));
    }
    let outcome = train(&data, &cfg).map_err(|e| CliError::config(e.to_string()))?;
    let mut model = outcome.model;

    // region-level threshold on the held-out pages
    let validation: Vec<(AXTree, RegionPartition)> = outcome
        .val_indices
        .iter()
        .map(|&i| {
            let item = &data[i];
            let truth = axregion::decomposer::partition_from_labels(&item.tree, &item.labels).expect("labels from the corpus");
            (item.tree.clone(), truth)
        })
        .collect();
    if !validation.is_empty() && !cfg.taus.is_empty() {
        let report = sweep(&model, &validation, &cfg.taus, 0.5).map_err(|e| CliError::config(e.to_string()))?;
        model = model.with_tau(report.best_tau)?;
        for row in &report.rows {
            log::info!("tau {:.2}: region P {:.4} R {:.4} F1 {:.4}", row.tau, row.precision, row.recall, row.f1);
        }
    }

    checkpoint::save(&model, out).map_err(|e| CliError::input(e.to_string()))?;
    let log_path = log_path.map(PathBuf::from).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log_text = String::new();
    for e in &outcome.log {
        log_text.push_str(&serde_json::to_string(e).expect("log serializes"));
        log_text.push('\n');
    }
    write(&log_path, &log_text)?;
    match (model.metadata.best_epoch, model.metadata.val_edge_f1) {
        (Some(epoch), Some(f1)) => println!(
            "trained {} epochs on {} trees ({} held out); best epoch {epoch} val edge-F1 {f1:.4}; tau {:.2}",
            outcome.log.len(),
            outcome.train_indices.len(),
            outcome.val_indices.len(),
            model.tau
        ),
        _ => println!("no epochs run; wrote the initial model (tau {:.2})", model.tau),
    }
    println!("checkpoint: {}", out.display());
    println!("epoch log: {}", log_path.display());
    Ok(())
}

fn truth_set(dir: &Path) -> Result<Vec<(String, AXTree, RegionPartition)>> {
    require_dir(dir)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "axtree"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!("{}: no .axtree files", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            let tree = load_tree(&p)?;
            let roots = read_roots(&p.with_extension("regions"))?;
            let truth = partition_from_roots(&tree, &roots).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            Ok((stem, tree, truth))
        })
        .collect()
}

fn read_roots(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn read_prediction(dir: &Path, stem: &str, tree: &AXTree) -> Result<RegionPartition> {
    let regions = dir.join(format!("{stem}.regions"));
    if regions.is_file() {
        let roots = read_roots(&regions)?;
        return partition_from_roots(tree, &roots).map_err(|e| CliError::input(format!("{}: {e}", regions.display())));
    }
    let json = dir.join(format!("{stem}.json"));
    if json.is_file() {
        let mut v: serde_json::Value =
            serde_json::from_str(&read(&json)?).map_err(|e| CliError::input(format!("{}: {e}", json.display())))?;
        if let Some(o) = v.as_object_mut() {
            o.remove("schema");
            o.remove("tau");
            o.remove("region_count");
        }
        let p: RegionPartition = serde_json::from_value(v).map_err(|e| CliError::input(format!("{}: {e}", json.display())))?;
        p.validate(tree).map_err(|e| CliError::input(format!("{}: {e}", json.display())))?;
        return Ok(p);
    }
    Err(CliError::input(format!("{}: no prediction for `{stem}`", dir.display())))
}

#[derive(Serialize)]
struct EvalRow {
    tau: Option<f64>,
    counts: MatchCounts,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Serialize)]
struct EvalReport {
    schema: &'static str,
    iou_threshold: f64,
    trees: usize,
    rows: Vec<EvalRow>,
    best_tau: Option<f64>,
}

fn cmd_eval(pred: &Path, truth: &Path, iou: f64, taus: &[f64], format: Format) -> Result<()> {
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::config(format!("--iou {iou} outside (0, 1]")));
    }
    let truths = truth_set(truth)?;
    let report = if pred.is_dir() {
        let mut counts = MatchCounts::default();
        for (stem, tree, t) in &truths {
            let p = read_prediction(pred, stem, tree)?;
            let r = region_prf(&p, t, iou).map_err(|e| CliError::input(format!("{stem}: {e}")))?;
            counts = counts.merge(r.counts);
        }
        let (precision, recall, f1) = counts.prf();
        EvalReport {
            schema: EVAL_SCHEMA,
            iou_threshold: iou,
            trees: truths.len(),
            rows: vec![EvalRow {
                tau: None,
                counts,
                precision,
                recall,
                f1,
            }],
            best_tau: None,
        }
    } else {
        require_file(pred)?;
        let (scorer, tau) = load_scorer(pred, None)?;
        let taus = if taus.is_empty() { vec![tau] } else { taus.to_vec() };
        if let Some(bad) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(DecomposeError::InvalidTau(*bad).into());
        }
        let validation: Vec<(AXTree, RegionPartition)> = truths.iter().map(|(_, t, p)| (t.clone(), p.clone())).collect();
        let sw = sweep(&scorer, &validation, &taus, iou).map_err(|e| CliError::config(e.to_string()))?;
        EvalReport {
            schema: EVAL_SCHEMA,
            iou_threshold: iou,
            trees: truths.len(),
            rows: sw
                .rows
                .into_iter()
                .map(|r| EvalRow {
                    tau: Some(r.tau),
                    counts: r.counts,
                    precision: r.precision,
                    recall: r.recall,
                    f1: r.f1,
                })
                .collect(),
            best_tau: Some(sw.best_tau),
        }
    };
    match format {
        Format::Json => print!("{}", serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
        Format::Text => {
            println!("# {EVAL_SCHEMA}");
            println!("trees: {}  IoU threshold: {}", report.trees, report.iou_threshold);
            println!("{:>6} {:>8} {:>9} {:>6} {:>9} {:>7} {:>7}", "tau", "matched", "predicted", "truth", "precision", "recall", "F1");
            for r in &report.rows {
                let tau = r.tau.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into());
                println!(
                    "{tau:>6} {:>8} {:>9} {:>6} {:>9.4} {:>7.4} {:>7.4}",
                    r.counts.matched, r.counts.predicted, r.counts.truth, r.precision, r.recall, r.f1
                );
            }
            if let Some(b) = report.best_tau {
                println!("best tau: {b:.2}");
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_digest(
    trace_path: &Path,
    ckpt: &Path,
    tau: Option<f64>,
    backend: BackendArg,
    lm_config: Option<&Path>,
    top_k: usize,
    out_dir: Option<&Path>,
    format: Format,
) -> Result<()> {
    require_file(trace_path)?;
    require_file(ckpt)?;
    let (scorer, tau) = load_scorer(ckpt, tau)?;
    let trace = parse_trace(&read(trace_path)?).map_err(|e| CliError::input(format!("{}: {e}", trace_path.display())))?;
    if trace.steps.is_empty() {
        return Err(CliError::input(format!("{}: trace has no steps", trace_path.display())));
    }
    let client = match backend {
        BackendArg::Lm => Some(CountingClient::from_config(lm_config)?),
        BackendArg::Heuristic => None,
    };
    let keyword = KeywordSelector { top_k: Some(top_k) };
    let lm_selector = client.as_ref().map(|c| LmSelector {
        client: c,
        max_retries: c.inner.config().max_retries,
    });
    let (abstraction, selector): (Backend<'_>, &dyn Selector) = match (&client, &lm_selector) {
        (Some(c), Some(s)) => (
            Backend::Lm {
                client: c,
                max_retries: c.inner.config().max_retries,
                concurrency: c.inner.config().concurrency,
            },
            s,
        ),
        _ => (Backend::Heuristic, &keyword),
    };
    let pipeline = Pipeline::new(&scorer, tau, abstraction, selector);
    let run = replay(&trace, &pipeline).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        for (row, d) in run.report.steps.iter().zip(&run.digests) {
            write(&dir.join(format!("step{:04}.digest", row.step)), d)?;
        }
        write(&dir.join("report.json"), &run.report.to_json())?;
    }
    match format {
        Format::Json => print!("{}", run.report.to_json()),
        Format::Text => print!("{}", run.report.to_text()),
    }
    if let Some(c) = &client {
        c.check_reachable()?;
    }
    Ok(())
}

fn histogram_text(out: &mut String, title: &str, h: &Histogram) {
    let _ = writeln!(out, "{title} (n={})", h.total());
    for (i, (label, &count)) in h.labels.iter().zip(&h.counts).enumerate() {
        let bar = "#".repeat((40.0 * h.fraction(i)).round() as usize);
        let _ = writeln!(out, "  {label:>10} {count:>6}  {bar}");
    }
}

/// Consecutive same-URL snapshot pairs and the node pairs acted on in them.
fn analyze_trace(trace: &Trace, pairs: usize, seed: u64) -> String {
    let trees: Vec<AXTree> = trace.steps.iter().map(|s| preprocess(&s.tree)).collect();
    let mut lca = Vec::new();
    let mut change = Vec::new();
    let mut skipped = BTreeMap::<&str, usize>::new();
    for i in 1..trace.steps.len() {
        let (a, b) = (&trace.steps[i - 1], &trace.steps[i]);
        if a.url != b.url {
            *skipped.entry("page changes").or_default() += 1;
            continue;
        }
        change.push(change_ratio(&trees[i - 1], &trees[i]).unwrap_or(0.0));
        match (action_target(&a.action), action_target(&b.action)) {
            (Some(x), Some(y)) => match lca_depth_ratio(&trees[i], x, y) {
                Ok(r) => lca.push(r),
                Err(_) => *skipped.entry("target pairs missing from the snapshot").or_default() += 1,
            },
            _ => *skipped.entry("steps without an element target").or_default() += 1,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut baseline = Vec::new();
    for t in &trees {
        let ids: Vec<&str> = t.nodes().map(|n| n.id.as_str()).collect();
        if ids.len() < 2 {
            continue;
        }
        for _ in 0..pairs {
            let a = ids[rng.random_range(0..ids.len())];
            let b = ids[rng.random_range(0..ids.len())];
            baseline.push(lca_depth_ratio(t, a, b).expect("ids from the tree"));
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "# {ANALYZE_SCHEMA}");
    let _ = writeln!(out, "task: {}", trace.task);
    let _ = writeln!(out, "snapshots: {}", trace.steps.len());
    for (why, n) in &skipped {
        let _ = writeln!(out, "skipped {n} {why}");
    }
    let _ = writeln!(out);
    histogram_text(&mut out, "LCA depth ratio of consecutive action targets", &ratio_histogram(&lca));
    let fmt_median = |v: &[f64]| median(v).map(|m| format!("{m:.3}")).unwrap_or_else(|| "n/a".into());
    let _ = writeln!(out, "  median: {}", fmt_median(&lca));
    let _ = writeln!(
        out,
        "  random baseline (approximation: uniform node pairs, {pairs} per snapshot, seed {seed}): median {}",
        fmt_median(&baseline)
    );
    let _ = writeln!(out);
    histogram_text(&mut out, "Change ratio between consecutive same-page snapshots", &change_histogram(&change));
    let _ = writeln!(out, "  median: {}", fmt_median(&change));
    out
}

fn cmd_analyze(trace_path: &Path, pairs: usize, seed: u64) -> Result<()> {
    require_file(trace_path)?;
    let trace = parse_trace(&read(trace_path)?).map_err(|e| CliError::input(format!("{}: {e}", trace_path.display())))?;
    if trace.steps.is_empty() {
        return Err(CliError::config(format!("{}: trace has no steps", trace_path.display())));
    }
    print!("{}", analyze_trace(&trace, pairs, seed));
    Ok(())
}

fn cmd_gen_corpus(out_dir: &Path, count: usize, roles: &[String], min_nodes: usize, max_nodes: usize, seed: u64) -> Result<()> {
    if count == 0 || min_nodes == 0 || max_nodes < min_nodes {
        return Err(CliError::config("need count > 0 and 0 < min_nodes <= max_nodes"));
    }
    let cfg = SyntheticConfig {
        seed,
        min_nodes,
        max_nodes,
        ..SyntheticConfig::default()
    };
    let roles: Vec<&str> = roles.iter().map(String::as_str).collect();
    let items = rule_corpus(count, &cfg, &roles);
    write_corpus(out_dir, &items).map_err(|e| CliError::input(format!("{}: {e}", out_dir.display())))?;
    let nodes: usize = items.iter().map(|i| i.tree.node_count()).sum();
    let cuts: usize = items.iter().map(|i| i.labels.cut_count()).sum();
    println!("wrote {count} trees ({nodes} nodes, {cuts} cut edges) to {}", out_dir.display());
    Ok(())
}
