use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use ror::analysis::{
    conditional_matrix, count_correlation, derive_incompatibility_rules, heatmap_csv, heatmap_svg, invalid_count,
    js_distance, rule_records, score, subset_f1, Convention, Granularity,
};
use ror::corpus::TypeSchema;

use crate::commands::{load_config, read_corpus, Common};
use crate::failure::{DataContext, Failure, Result};
use crate::run::{say, write_atomic, write_json, RunRecord};

#[derive(clap::Subcommand, Debug)]
pub enum AnalyzeCmd {
    /// Role pairs whose admissible entity types never overlap.
    Rules {
        #[command(flatten)]
        common: Common,
        /// Keep both roles of symmetric relations.
        #[arg(long)]
        unmerged: bool,
    },
    /// Conditional co-occurrence of roles on the same entity.
    Cond {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Level::Role)]
        granularity: Level,
    },
    /// Share of role combinations of each size with no admissible entity type.
    Invalid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 7)]
        k_max: usize,
    },
    /// Pearson correlation of per-document relation counts.
    Counts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Jensen-Shannon distance between predicted and gold conditional matrices.
    Js {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Level::Role)]
        granularity: Level,
    },
    /// Precision, recall and F1 of predictions against gold.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Only score cells touching an entity with at least this many gold relations.
        #[arg(long)]
        min_relations: Option<usize>,
        #[arg(long)]
        include_diagonal: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Level {
    Role,
    Relation,
}

impl From<Level> for Granularity {
    fn from(l: Level) -> Self {
        match l {
            Level::Role => Granularity::Role,
            Level::Relation => Granularity::Relation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum HeatmapKind {
    Cond,
    Counts,
}

#[derive(clap::Args, Debug)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub common: Common,
    /// A cond.json or counts.json written by `analyze`.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub matrix: Option<PathBuf>,
    /// Compute the matrix from this corpus instead.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HeatmapKind::Cond)]
    pub kind: HeatmapKind,
    #[arg(long, value_enum, default_value_t = Level::Role)]
    pub granularity: Level,
    #[arg(long)]
    pub title: Option<String>,
}

/// Writes `name` under `out` when an output directory was given.
fn emit(out: Option<&Path>, name: &str, value: &impl Serialize) -> Result<()> {
    match out {
        Some(dir) => write_json(&dir.join(name), value),
        None => Ok(()),
    }
}

fn emit_text(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => write_atomic(&dir.join(name), text.as_bytes()),
        None => Ok(()),
    }
}

fn print_json(value: &impl Serialize) {
    say(&(serde_json::to_string_pretty(value).expect("report serializes") + "\n"));
}

pub fn analyze(cmd: &AnalyzeCmd) -> Result<()> {
    let (name, common) = match cmd {
        AnalyzeCmd::Rules { common, .. } => ("rules", common),
        AnalyzeCmd::Cond { common, .. } => ("cond", common),
        AnalyzeCmd::Invalid { common, .. } => ("invalid", common),
        AnalyzeCmd::Counts { common, .. } => ("counts", common),
        AnalyzeCmd::Js { common, .. } => ("js", common),
        AnalyzeCmd::Score { common, .. } => ("score", common),
    };
    let mut run = RunRecord::start(&format!("analyze {name}"));
    let cfg = load_config(common)?;
    run.config(&cfg, None);
    let schema = cfg.schema()?;
    // only write files when asked to
    let out = common.out.as_deref().or(cfg.out.as_deref());
    match cmd {
        AnalyzeCmd::Rules { unmerged, .. } => {
            let rules = derive_incompatibility_rules(&schema, !unmerged);
            let records = rule_records(&schema, &rules);
            for r in &records {
                say(&format!("{} x {}\n", r.a, r.b));
            }
            say(&format!("{} rules\n", records.len()));
            emit(out, "rules.json", &records)?;
        }
        AnalyzeCmd::Cond { corpus, granularity, .. } => {
            let c = read_corpus(corpus, &schema, false)?;
            let m = conditional_matrix(&c, (*granularity).into());
            emit(out, "cond.json", &m)?;
            emit_text(out, "cond.csv", &heatmap_csv(&m.labels, &m.display))?;
            emit_text(out, "cond_probs.csv", &heatmap_csv(&m.labels, &m.probs))?;
            say(&heatmap_csv(&m.labels, &m.display));
        }
        AnalyzeCmd::Invalid { k_max, .. } => {
            if *k_max == 0 {
                return Err(Failure::usage("--k-max must be at least 1"));
            }
            let mut rows = Vec::new();
            for conv in [Convention::DistinctRolesMerged, Convention::MultisetAllRoles] {
                for k in 1..=*k_max {
                    // the distinct convention runs out of roles before the multiset one
                    let Ok(c) = invalid_count(&schema, k, conv) else { break };
                    rows.push(serde_json::json!({
                        "convention": conv, "k": k, "invalid": c.invalid, "total": c.total, "percent": c.percent(),
                    }));
                    say(&format!("{conv:?} k={k}: {}/{} = {:.2}%\n", c.invalid, c.total, c.percent()));
                }
            }
            emit(out, "invalid.json", &rows)?;
        }
        AnalyzeCmd::Counts { corpus, .. } => {
            let c = read_corpus(corpus, &schema, false)?;
            let m = count_correlation(&c).data(|| format!("correlating counts in {}", corpus.display()))?;
            let values: Vec<Vec<f64>> = m.r.iter().map(|row| row.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
            emit(out, "counts.json", &m)?;
            emit_text(out, "counts.csv", &heatmap_csv(&m.labels, &values))?;
            say(&heatmap_csv(&m.labels, &values));
        }
        AnalyzeCmd::Js { pred, gold, granularity, .. } => {
            let p = read_corpus(pred, &schema, false)?;
            let g = read_corpus(gold, &schema, false)?;
            let level = (*granularity).into();
            let report = js_distance(&conditional_matrix(&p, level), &conditional_matrix(&g, level))
                .data(|| "comparing conditional matrices".into())?;
            emit(out, "js.json", &report)?;
            print_json(&report);
        }
        AnalyzeCmd::Score {
            pred,
            gold,
            min_relations,
            include_diagonal,
            ..
        } => {
            // predictions may break type constraints; gold may not
            let p = read_corpus(pred, &schema, false)?;
            let g = read_corpus(gold, &schema, true)?;
            let report = match min_relations {
                Some(n) => subset_f1(&schema, &p.documents, &g.documents, *n, *include_diagonal),
                None => score(&schema, &p.documents, &g.documents, *include_diagonal),
            }
            .map_err(|e| match e {
                ror::analysis::AnalysisError::Invalid(_) => Failure::Usage(e.into()),
                other => Failure::Data(other.into()),
            })?;
            if report.empty {
                log::warn!("no cells matched the subset filter");
            }
            emit(out, "score.json", &report)?;
            print_json(&report);
        }
    }
    run.phase("analyze");
    match out {
        Some(dir) => run.finish(dir),
        None => Ok(()),
    }
}

/// Labels and values of a matrix report written by `analyze cond|counts`.
fn matrix_from_json(v: &Value) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let labels: Vec<String> = serde_json::from_value(v.get("labels")?.clone()).ok()?;
    let rows = v.get("display").or_else(|| v.get("r"))?.as_array()?;
    let values = rows
        .iter()
        .map(|row| {
            row.as_array()
                .map(|cells| cells.iter().map(|c| c.as_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>())
        })
        .collect::<Option<Vec<_>>>()?;
    (values.len() == labels.len() && values.iter().all(|r| r.len() == labels.len())).then_some((labels, values))
}

pub fn export_heatmap(args: &HeatmapArgs) -> Result<()> {
    let mut run = RunRecord::start("export-heatmap");
    let cfg = load_config(&args.common)?;
    run.config(&cfg, None);
    let out = cfg.out_dir();
    let (labels, values, default_title) = match (&args.matrix, &args.corpus) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).data(|| format!("reading {}", path.display()))?;
            let v: Value = serde_json::from_str(&text).data(|| format!("parsing {}", path.display()))?;
            let (l, m) = matrix_from_json(&v).ok_or_else(|| {
                Failure::Data(anyhow::anyhow!("{} holds no square labeled matrix", path.display()))
            })?;
            (l, m, path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        }
        (None, Some(path)) => {
            let schema: TypeSchema = cfg.schema()?;
            let c = read_corpus(path, &schema, false)?;
            match args.kind {
                HeatmapKind::Cond => {
                    let m = conditional_matrix(&c, args.granularity.into());
                    (m.labels, m.display, "conditional co-occurrence".to_string())
                }
                HeatmapKind::Counts => {
                    let m = count_correlation(&c).data(|| format!("correlating counts in {}", path.display()))?;
                    let values = m.r.iter().map(|row| row.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
                    (m.labels, values, "count correlation".to_string())
                }
            }
        }
        (None, None) => return Err(Failure::usage("give --matrix or --corpus")),
    };
    let title = args.title.clone().unwrap_or(default_title);
    write_atomic(&out.join("heatmap.csv"), heatmap_csv(&labels, &values).as_bytes())?;
    write_atomic(&out.join("heatmap.svg"), heatmap_svg(&labels, &values, &title).as_bytes())?;
    log::info!("wrote {}", out.join("heatmap.svg").display());
    run.output("csv", out.join("heatmap.csv"));
    run.output("svg", out.join("heatmap.svg"));
    run.phase("render");
    run.finish(&out)
}
