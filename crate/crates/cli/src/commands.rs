use std::path::{Path, PathBuf};

use gkedm::distill::{DistillConfig, DistillMode};
use gkedm::graph::{load_dataset, sbm_generate, save_dataset, NodeDataset, Split};
use gkedm::io::write_atomic;
use gkedm::layers::{load_checkpoint, save_checkpoint, ArchSpec, GnnModel, Module};
use gkedm::pipeline::{
    alpha_sweep, compare_baselines, distill_student, enhance_with_gkedm, evaluate, pretrain_gcn, StudentSpec,
    TrainReport,
};
use gkedm::report::{best_components, read_summary, summary_text, sweep_to_csv, ExperimentRow, ReportFormat};
use gkedm::{Error, Result};
use serde_json::json;

use crate::args::*;
use crate::config::{parse_list, parse_relations, set, Config};

const FULL_REPORT: &str = "train_report.json";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(&mut cfg, a),
        Command::Pretrain(a) => pretrain(&mut cfg, a),
        Command::Enhance(a) => enhance(&mut cfg, a),
        Command::Distill(a) => distill(&mut cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::AlphaSweep(a) => sweep(&mut cfg, a),
        Command::Report(a) => report(&cfg, a),
    }
}

fn echo(command: &str, cfg: &Config) -> serde_json::Value {
    json!({ "command": command, "config": cfg })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Writes to `path`, or to stdout when there is none.
fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(cfg: &mut Config, a: GenDataArgs) -> Result<()> {
    let d = &mut cfg.data;
    set(&mut d.blocks, a.blocks);
    set(&mut d.nodes_per_block, a.nodes_per_block);
    set(&mut d.p_in, a.p_in);
    set(&mut d.p_out, a.p_out);
    set(&mut d.feature_dim, a.feature_dim);
    set(&mut d.noise_sigma, a.noise_sigma);
    set(&mut d.seed, a.seed);
    let ds = sbm_generate(d)?;
    save_dataset(&ds, &a.out)?;
    log::info!("wrote {} nodes, {} edges to {}", ds.n_nodes(), ds.graph().n_edges(), a.out.display());
    Ok(())
}

/// Explicit `--data`, else the dataset a checkpoint was trained on.
fn dataset_for(data: Option<PathBuf>, recorded: Option<String>, ckpt: &Path) -> Result<(NodeDataset, String)> {
    let path = data.or_else(|| recorded.map(PathBuf::from)).ok_or_else(|| {
        Error::Config(format!("{} records no dataset; pass --data", ckpt.display()))
    })?;
    Ok((load_dataset(&path)?, display(&path)))
}

fn write_training(
    report: &TrainReport,
    out: Option<&Path>,
    output_flags: &OutputFlags,
    with_components: bool,
) -> Result<()> {
    if let Some(dir) = out {
        write_atomic(dir.join(FULL_REPORT), (report.to_json()? + "\n").as_bytes())?;
    }
    if let Some(p) = &output_flags.log {
        write_atomic(p, report.epochs_csv()?.as_bytes())?;
    }
    let format = output_flags.report.as_deref().map_or(ReportFormat::Csv, ReportFormat::from_path);
    let comps = [best_components(report)];
    let text = summary_text(
        &[ExperimentRow::from_report(report)],
        with_components.then_some(&comps[..]),
        &report.config,
        format,
    )?;
    output(output_flags.report.as_deref(), &text)
}

fn pretrain(cfg: &mut Config, a: PretrainArgs) -> Result<()> {
    cfg.apply_train(&a.train);
    set(&mut cfg.model.arch, a.arch);
    let arch: ArchSpec = cfg.model.arch.parse()?;
    let ds = load_dataset(&a.data)?;
    let (model, mut report) = pretrain_gcn(&ds, &arch, &cfg.train)?;
    report.dataset = display(&a.data);
    report.config = echo("pretrain", cfg);
    save_checkpoint(&model, &a.out, Some(&report.dataset))?;
    log::info!("pretrained {}: test {:.4}", report.model, report.test_metric);
    write_training(&report, Some(&a.out), &a.output, false)
}

fn enhance(cfg: &mut Config, a: EnhanceArgs) -> Result<()> {
    cfg.apply_train(&a.train);
    set(&mut cfg.model.n_heads, a.heads);
    set(&mut cfg.model.m, a.m);
    let (pre, manifest) = load_checkpoint(&a.checkpoint)?;
    let (ds, name) = dataset_for(a.data, manifest.dataset, &a.checkpoint)?;
    let (model, mut report) = enhance_with_gkedm(&pre, &ds, cfg.model.m, cfg.model.n_heads, &cfg.train)?;
    report.dataset = name;
    report.config = echo("enhance", cfg);
    save_checkpoint(&model, &a.out, Some(&report.dataset))?;
    log::info!("enhanced {}: test {:.4}", report.model, report.test_metric);
    write_training(&report, Some(&a.out), &a.output, false)
}

struct DistillSetup {
    teacher: GnnModel,
    spec: StudentSpec,
    ds: NodeDataset,
    dataset: String,
}

fn distill_setup(cfg: &mut Config, f: DistillFlags) -> Result<DistillSetup> {
    set(&mut cfg.model.student_arch, f.student_arch);
    if let Some(r) = &f.relations {
        cfg.distill.relations = parse_relations(r)?;
    }
    set(&mut cfg.distill.kd_temperature, f.temperature);
    set(&mut cfg.distill.lsp_weight, f.lsp_weight);
    if let Some(s) = &f.seeds {
        cfg.sweep.seeds = parse_list(s, "seed")?;
    }
    let (teacher, manifest) = load_checkpoint(&f.teacher)?;
    let (ds, dataset) = dataset_for(f.data, manifest.dataset, &f.teacher)?;
    let arch: ArchSpec = cfg.model.student_arch.parse()?;
    let spec = match teacher.attention_layer() {
        Some(_) => StudentSpec::like_teacher(arch, &teacher)?,
        None => StudentSpec {
            arch,
            n_heads: cfg.model.n_heads,
            m: cfg.model.m,
        },
    };
    Ok(DistillSetup {
        teacher,
        spec,
        ds,
        dataset,
    })
}

fn distill(cfg: &mut Config, a: DistillArgs) -> Result<()> {
    cfg.apply_train(&a.train);
    if let Some(m) = &a.mode {
        cfg.distill.mode = m.parse()?;
    }
    set(&mut cfg.distill.alpha, a.alpha);
    let s = distill_setup(cfg, a.distill)?;
    let before = s.teacher.checksum();

    if a.compare {
        if a.out.is_some() || a.output.log.is_some() {
            return Err(Error::Config("--compare writes only a summary; drop --out and --log".into()));
        }
        let rows = compare_baselines(&s.teacher, &s.spec, &s.ds, &cfg.distill, &cfg.train, &cfg.sweep.seeds)?;
        let model = s.spec.arch.to_string();
        let rows: Vec<ExperimentRow> =
            rows.iter().map(|r| ExperimentRow::from_comparison(r, &model, &s.dataset)).collect();
        let format = a.output.report.as_deref().map_or(ReportFormat::Csv, ReportFormat::from_path);
        let text = summary_text(&rows, None, &echo("distill", cfg), format)?;
        return output(a.output.report.as_deref(), &text);
    }

    let none = DistillConfig {
        mode: DistillMode::None,
        ..cfg.distill.clone()
    };
    let (_, baseline) = distill_student(&s.teacher, &s.spec, &s.ds, &none, &cfg.train)?;
    let (student, mut report) = distill_student(&s.teacher, &s.spec, &s.ds, &cfg.distill, &cfg.train)?;
    if s.teacher.checksum() != before {
        return Err(Error::Contract("teacher parameters changed during distillation".into()));
    }
    report.dataset = s.dataset;
    report.baseline_metric = Some(baseline.test_metric);
    report.config = echo("distill", cfg);
    log::info!(
        "student {}: test {:.4}, undistilled {:.4}",
        report.model,
        report.test_metric,
        baseline.test_metric
    );
    if let Some(dir) = &a.out {
        save_checkpoint(&student, dir, Some(&report.dataset))?;
    }
    write_training(&report, a.out.as_deref(), &a.output, true)
}

fn eval(cfg: &Config, a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let (model, manifest) = load_checkpoint(&a.checkpoint)?;
    let (ds, dataset) = dataset_for(a.data, manifest.dataset, &a.checkpoint)?;
    let metric = evaluate(&model, &ds, split)?;
    let doc = json!({
        "checkpoint": display(&a.checkpoint),
        "model": model.describe(),
        "dataset": dataset,
        "split": a.split,
        "metric": metric,
        "param_count": model.param_count(),
        "config": echo("eval", cfg),
    });
    output(a.report.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn sweep(cfg: &mut Config, a: SweepArgs) -> Result<()> {
    cfg.apply_train(&a.train);
    if let Some(s) = &a.alphas {
        cfg.sweep.alphas = parse_list(s, "alpha")?;
    }
    let s = distill_setup(cfg, a.distill)?;
    let rows = alpha_sweep(
        &s.teacher,
        &s.spec,
        &s.ds,
        &cfg.sweep.alphas,
        &cfg.distill,
        &cfg.train,
        &cfg.sweep.seeds,
    )?;
    for r in &rows {
        log::info!("alpha {}: improvement {:+.4}", r.alpha, r.improvement);
    }
    let text = format!(
        "# config: {}\n{}",
        serde_json::to_string(&echo("alpha-sweep", cfg))?,
        sweep_to_csv(&rows)?
    );
    output(a.out.as_deref(), &text)
}

fn read_rows(path: &Path) -> Result<Vec<ExperimentRow>> {
    let text = gkedm::io::read_to_string(path)?;
    let format = ReportFormat::from_path(path);
    if format == ReportFormat::Json {
        if let Ok(r) = serde_json::from_str::<TrainReport>(&text) {
            return Ok(vec![ExperimentRow::from_report(&r)]);
        }
    }
    read_summary(&text, format).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn report(cfg: &Config, a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(read_rows(p)?);
    }
    let format = match (&a.format, &a.out) {
        (Some(f), _) => f.parse()?,
        (None, Some(p)) => ReportFormat::from_path(p),
        (None, None) => ReportFormat::Csv,
    };
    let inputs: Vec<String> = a.inputs.iter().map(|p| display(p)).collect();
    let config = json!({ "command": "report", "inputs": inputs, "config": cfg });
    output(a.out.as_deref(), &summary_text(&rows, None, &config, format)?)
}
