use std::fmt::Write as _;
use std::path::PathBuf;

use clap::ValueEnum;
use dictnet_core::evalmetrics::{evaluate_defmod, evaluate_revdic};
use dictnet_core::exec::Execution;
use dictnet_core::inference::DecodeParams;
use dictnet_core::training::load_checkpoint;

use super::{create_dir, load_entries, load_table, write};
use crate::error::CliError;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Revdic,
    Defmod,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Revdic => "revdic",
            Mode::Defmod => "defmod",
        }
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
    pub mode: Mode,
    pub table: Option<PathBuf>,
    pub out: PathBuf,
    pub decode: DecodeParams,
    pub lowercase: bool,
    pub execution: Execution,
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.mode == Mode::Revdic && args.table.is_none() {
        return Err(CliError::Usage(
            "revdic evaluation needs a candidate table (--table)".into(),
        ));
    }
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    let model = ckpt.best_model();
    let table = load_table(args.table.as_deref())?;
    let entries = load_entries(&args.test, table.as_ref(), Some(model.config.d_w))?;
    create_dir(&args.out)?;
    let mode = args.mode.name();
    let report_json = args.out.join(format!("{mode}_report.json"));
    let report_txt = args.out.join(format!("{mode}_report.txt"));
    let details = args.out.join(format!("{mode}_outputs.tsv"));

    let (json, table_text) = match args.mode {
        Mode::Revdic => {
            let t = table.as_ref().expect("checked above");
            let (report, ranks) = evaluate_revdic(&model, &ckpt.vocab, &entries, t, args.lowercase, args.execution)?;
            let mut rows = String::from("word\trank\n");
            for (e, r) in entries.iter().zip(&ranks) {
                let _ = writeln!(rows, "{}\t{r}", e.word);
            }
            write(&details, &rows)?;
            (serde_json::to_string_pretty(&report), report.to_table())
        }
        Mode::Defmod => {
            let (report, generated) = evaluate_defmod(
                &model,
                &ckpt.vocab,
                &entries,
                args.decode,
                args.lowercase,
                args.execution,
            )?;
            let mut rows = String::from("word\tgenerated\treference\n");
            for (e, g) in entries.iter().zip(&generated) {
                let _ = writeln!(rows, "{}\t{g}\t{}", e.word, e.definition_text());
            }
            write(&details, &rows)?;
            (serde_json::to_string_pretty(&report), report.to_table())
        }
    };
    write(&report_json, &(json.expect("report serializes") + "\n"))?;
    write(&report_txt, &table_text)?;
    print!("{table_text}");

    let config = [
        ("eval.mode", mode.to_string()),
        ("eval.beam_size", args.decode.beam_size.to_string()),
        ("eval.max_len", args.decode.max_len.to_string()),
        ("eval.lowercase", args.lowercase.to_string()),
        ("eval.execution", format!("{:?}", args.execution).to_lowercase()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut manifest = RunManifest::new("eval", config, ckpt.train_config.seed);
    manifest.input("checkpoint", &args.checkpoint)?;
    manifest.input("test", &args.test)?;
    if let Some(t) = &args.table {
        manifest.input("table", t)?;
    }
    manifest.output("report", &report_json)?;
    manifest.output("table", &report_txt)?;
    manifest.output("outputs", &details)?;
    manifest.save(&args.out.join(format!("{mode}_manifest.json")))
}
