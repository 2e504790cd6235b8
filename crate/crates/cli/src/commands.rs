use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{debug, error, info};
use relgraph::annotations::{load_coreference, load_dependencies, CorefBank, DependencyBank};
use relgraph::attention::verify::{
    self, GRADIENT_TOLERANCE, PERMUTATION_TOLERANCE, ROW_SUM_TOLERANCE, ZERO_EMBEDDING_TOLERANCE,
};
use relgraph::corpus::{
    find_content_source, load_content, load_schemas, stream_interactions, ContentConfig, ContentStore, DataMode,
    Interaction, Schema,
};
use relgraph::graph::histogram_json;
use relgraph::pipeline::{compile_interaction, link_report, CompiledTurn, Options, PipelineError, Resources};
use relgraph::propagation::{propagate, tokenize, weighted_histogram, GreedyTokenizer};
use relgraph::rasm::save_rasm;
use relgraph::RelationType;
use serde_json::{json, Value};

use crate::{AttnArgs, PipelineArgs};

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Serialize,
    Link,
    Graph,
    Stats,
}

/// Everything loaded once per run. Content is loaded lazily, once per database.
struct Session {
    task: Task,
    schemas: HashMap<String, Schema>,
    content_root: Option<PathBuf>,
    contents: HashMap<String, Option<ContentStore>>,
    deps: Option<DependencyBank>,
    coref: Option<CorefBank>,
    tokenizer: Option<GreedyTokenizer>,
    options: Options,
    out: Option<PathBuf>,
    histogram: [usize; RelationType::COUNT],
    subtoken_histogram: [usize; RelationType::COUNT],
    turns: usize,
}

impl Session {
    fn open(task: Task, args: &PipelineArgs) -> Result<Self> {
        let schemas = load_schemas(&args.schemas)?
            .into_iter()
            .map(|s| (s.db_id.clone(), s))
            .collect();
        for p in std::iter::once(&args.data).chain(&args.content) {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        let deps = args.deps.as_ref().map(load_dependencies).transpose()?;
        let coref = args.coref.as_ref().map(load_coreference).transpose()?;
        let tokenizer = args
            .vocab
            .as_ref()
            .map(GreedyTokenizer::from_file)
            .transpose()?;
        if args.budget == 0 {
            bail!("--budget must be positive");
        }
        let out = match (task, &args.out) {
            (Task::Stats, out) => out.clone(),
            (_, Some(out)) => Some(out.clone()),
            (_, None) => Some(PathBuf::from("out")),
        };
        if let Some(dir) = &out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Session {
            task,
            schemas,
            content_root: args.content.clone(),
            contents: HashMap::new(),
            deps,
            coref,
            tokenizer,
            options: Options {
                mode: args.data_mode(),
                token_budget: args.budget,
            },
            out,
            histogram: [0; RelationType::COUNT],
            subtoken_histogram: [0; RelationType::COUNT],
            turns: 0,
        })
    }

    fn ensure_content(&mut self, db_id: &str) -> Result<()> {
        if self.contents.contains_key(db_id) {
            return Ok(());
        }
        let store = match (&self.content_root, self.schemas.get(db_id)) {
            (Some(root), Some(schema)) => match find_content_source(root, db_id) {
                Some(src) => {
                    info!("loading content for {db_id} from {}", src.display());
                    Some(load_content(schema, &src, &ContentConfig::default())?)
                }
                None => {
                    debug!("no content source for {db_id}");
                    None
                }
            },
            _ => None,
        };
        self.contents.insert(db_id.to_string(), store);
        Ok(())
    }

    fn process(&mut self, idx: usize, interaction: &Interaction) -> Result<()> {
        self.ensure_content(&interaction.db_id)?;
        let schema = self
            .schemas
            .get(&interaction.db_id)
            .ok_or_else(|| PipelineError::UnknownDatabase(interaction.db_id.clone()))?;
        let res = Resources {
            schema,
            content: self.contents[&interaction.db_id].as_ref(),
            dependencies: self.deps.as_ref(),
            coreference: self.coref.as_ref(),
        };
        let compiled = compile_interaction(interaction, &idx.to_string(), &res, &self.options)?;
        for turn in &compiled {
            let stem = format!("{idx:05}_{:02}", turn.turn);
            self.emit(&stem, interaction, turn)?;
        }
        self.turns += compiled.len();
        Ok(())
    }

    fn emit(&mut self, stem: &str, interaction: &Interaction, turn: &CompiledTurn) -> Result<()> {
        let schema = &self.schemas[&interaction.db_id];
        let header = |mut v: Value| {
            let obj = v.as_object_mut().expect("object");
            obj.insert("db_id".into(), json!(interaction.db_id));
            obj.insert("turn".into(), json!(turn.turn));
            v
        };
        match self.task {
            Task::Serialize => {
                let mut v = header(turn.input.to_json());
                v["text"] = json!(turn.input.text());
                self.write_json(&format!("{stem}.json"), &v)?;
            }
            Task::Link => {
                let v = link_report(turn, schema, interaction);
                self.write_json(&format!("{stem}.link.json"), &v)?;
            }
            Task::Graph => {
                let mut v = header(turn.graph.to_json());
                let dir = self.out.clone().expect("graph output directory");
                save_rasm(dir.join(format!("{stem}.rasm")), &turn.graph.matrix)?;
                if let Some(tok) = &self.tokenizer {
                    let map = tokenize(&turn.input, tok);
                    let sub = propagate(&turn.graph, &map)?;
                    save_rasm(dir.join(format!("{stem}.sub.rasm")), &sub)?;
                    let offsets: Vec<usize> = map.items.iter().map(|i| i.offset).collect();
                    v["subtokens"] = json!({
                        "pieces": map.subtokens(),
                        "item_offsets": offsets,
                        "m": sub.size(),
                    });
                }
                self.write_json(&format!("{stem}.graph.json"), &v)?;
            }
            Task::Stats => {
                for &id in turn.graph.matrix.ids() {
                    self.histogram[id as usize] += 1;
                }
                if let Some(tok) = &self.tokenizer {
                    let map = tokenize(&turn.input, tok);
                    let sizes: Vec<usize> = map.items.iter().map(|i| i.pieces.len()).collect();
                    let sub = weighted_histogram(&turn.graph.matrix, &sizes);
                    for (acc, c) in self.subtoken_histogram.iter_mut().zip(sub) {
                        *acc += c;
                    }
                }
            }
        }
        Ok(())
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        let dir = self.out.as_ref().expect("output directory");
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn histogram_value(counts: &[usize; RelationType::COUNT]) -> Value {
    let hist = RelationType::ALL
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0)
        .map(|(r, &c)| (*r, c))
        .collect();
    histogram_json(&hist)
}

/// Streams the dataset through one task. Returns whether every example
/// succeeded; failures are logged with their example index.
pub fn run_pipeline(task: Task, args: &PipelineArgs) -> Result<bool> {
    let mut session = Session::open(task, args)?;
    let mut failed: Vec<usize> = Vec::new();
    let count = stream_interactions(&args.data, session.options.mode, |idx, parsed| {
        let outcome = parsed
            .map_err(anyhow::Error::from)
            .and_then(|inter| session.process(idx, &inter));
        if let Err(e) = outcome {
            error!("example {idx}: {e:#}");
            failed.push(idx);
        }
    })?;

    if task == Task::Stats {
        let mut report = json!({
            "examples": count,
            "turns": session.turns,
            "failed": failed.len(),
            "histogram": histogram_value(&session.histogram),
        });
        if session.tokenizer.is_some() {
            report["subtoken_histogram"] = histogram_value(&session.subtoken_histogram);
        }
        if session.out.is_some() {
            session.write_json("stats.json", &report)?;
        }
        say(&serde_json::to_string_pretty(&report)?)?;
    }
    let mode = match session.options.mode {
        DataMode::SingleTurn => "single",
        DataMode::MultiTurn => "multi",
    };
    eprintln!(
        "{count} examples ({mode}-turn), {} turns, {} failed",
        session.turns,
        failed.len()
    );
    Ok(failed.is_empty())
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(line: &str) -> Result<()> {
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

pub fn attn_check(args: &AttnArgs) -> Result<bool> {
    let report = verify::attn_check(args.seed, args.instances)?;
    say(&format!("instances: {} (seed {})", report.instances, args.seed))?;
    say(&format!(
        "softmax row-sum deviation: {:.3e} (tolerance {ROW_SUM_TOLERANCE:e}) {}",
        report.max_row_deviation,
        verdict(report.max_row_deviation < ROW_SUM_TOLERANCE)
    ))?;
    say(&format!(
        "zero-embedding max error: {:.3e} (tolerance {ZERO_EMBEDDING_TOLERANCE:e}) {}",
        report.zero_embedding_max_error,
        verdict(report.zero_embedding_max_error < ZERO_EMBEDDING_TOLERANCE)
    ))?;
    say(&format!(
        "gradient max relative error: {:.3e} in {} (tolerance {GRADIENT_TOLERANCE:e}) {}",
        report.gradient_max_relative_error,
        if report.gradient_worst_field.is_empty() { "-" } else { &report.gradient_worst_field },
        verdict(report.gradient_max_relative_error < GRADIENT_TOLERANCE)
    ))?;
    say(&format!(
        "permutation max error: {:.3e} (tolerance {PERMUTATION_TOLERANCE:e}) {}",
        report.permutation_max_error,
        verdict(report.permutation_max_error < PERMUTATION_TOLERANCE)
    ))?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let path: &Path = dir.as_ref();
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(path.join("attn_check.json"), text)?;
    }
    Ok(report.passed())
}
