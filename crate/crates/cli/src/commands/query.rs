use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, IsTerminal, Write};
use std::path::PathBuf;

use dictnet_core::data::{frame, EmbeddingTable, Vocabulary};
use dictnet_core::exec::Execution;
use dictnet_core::inference::{generate_definition, reverse_lookup, Candidate, DecodeParams, WordSource};
use dictnet_core::model::UnifiedModel;
use dictnet_core::training::load_checkpoint;
use serde::{Deserialize, Serialize};

use super::load_table;
use crate::error::CliError;

pub struct QueryArgs {
    pub checkpoint: PathBuf,
    pub table: Option<PathBuf>,
    pub top_k: usize,
    pub decode: DecodeParams,
    pub lowercase: bool,
    pub transcript: Option<PathBuf>,
    pub batch: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

struct Session {
    model: UnifiedModel,
    vocab: Vocabulary,
    table: Option<EmbeddingTable>,
    top_k: usize,
    decode: DecodeParams,
    lowercase: bool,
}

const HELP: &str =
    ":w <word>        generate a definition\n:d <definition>  find words for a definition\n:q               quit";

impl Session {
    fn define(&self, word: &str) -> Result<String, String> {
        let source = WordSource {
            table: self.table.as_ref(),
            subword_vectors: None,
        };
        generate_definition(&self.model, &self.vocab, word, source, self.decode).map_err(|e| e.to_string())
    }

    fn lookup(&self, text: &str) -> Result<Vec<Candidate>, String> {
        let table = self.table.as_ref().ok_or("no candidate table loaded (--table)")?;
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        if text.split_whitespace().next().is_none() {
            return Err("empty definition".into());
        }
        let ids = frame(self.vocab.encode(&text));
        let r = reverse_lookup(&self.model, &ids, table, None, Execution::Parallel).map_err(|e| e.to_string())?;
        Ok(r.top(self.top_k).to_vec())
    }

    /// Output for one REPL line; `None` quits.
    fn respond(&self, line: &str) -> Option<String> {
        let line = line.trim();
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        Some(match cmd {
            ":q" => return None,
            ":w" if !rest.is_empty() => match self.define(rest) {
                Ok(d) => format!("{rest}: {d}"),
                Err(e) => format!("miss: {e}"),
            },
            ":d" => match self.lookup(rest) {
                Ok(cands) => {
                    let mut s = String::new();
                    for (i, c) in cands.iter().enumerate() {
                        let _ = writeln!(s, "{:>3}. {:<20} {:.6}", i + 1, c.word, c.distance);
                    }
                    s.pop();
                    s
                }
                Err(e) => format!("error: {e}"),
            },
            "" => String::new(),
            _ => HELP.to_string(),
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchQuery {
    word: Option<String>,
    definition: Option<String>,
}

#[derive(Serialize)]
struct BatchResult<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    word: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    definition: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<Candidate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn batch(session: &Session, input: &PathBuf, out: &mut dyn Write) -> Result<(), CliError> {
    let file = std::fs::File::open(input).map_err(|e| CliError::data(input.display(), e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::data(input.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", input.display(), i + 1);
        let q: BatchQuery = serde_json::from_str(&line).map_err(|e| CliError::data(&at, e))?;
        let mut r = BatchResult {
            word: q.word.as_deref(),
            definition: q.definition.as_deref(),
            generated: None,
            candidates: None,
            error: None,
        };
        match (&q.word, &q.definition) {
            (Some(w), None) => match session.define(w) {
                Ok(g) => r.generated = Some(g),
                Err(e) => r.error = Some(e),
            },
            (None, Some(d)) => match session.lookup(d) {
                Ok(c) => r.candidates = Some(c),
                Err(e) => r.error = Some(e),
            },
            _ => return Err(CliError::data(at, "a query has exactly one of `word` or `definition`")),
        }
        let json = serde_json::to_string(&r).expect("result serializes");
        writeln!(out, "{json}").map_err(|e| CliError::data("output", e))?;
    }
    Ok(())
}

pub fn run(args: &QueryArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    let session = Session {
        model: ckpt.best_model(),
        vocab: ckpt.vocab,
        table: load_table(args.table.as_deref())?,
        top_k: args.top_k,
        decode: args.decode,
        lowercase: args.lowercase,
    };

    if let Some(input) = &args.batch {
        return match &args.out {
            Some(p) => {
                let mut f = std::fs::File::create(p).map_err(|e| CliError::data(p.display(), e))?;
                batch(&session, input, &mut f)
            }
            None => batch(&session, input, &mut std::io::stdout().lock()),
        };
    }

    let mut transcript = match &args.transcript {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| CliError::data(p.display(), e))?,
        ),
        None => None,
    };
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut stdout = std::io::stdout();
    let io_err = |e: std::io::Error| CliError::data("terminal", e);
    if interactive {
        println!("{HELP}");
    }
    let mut line = String::new();
    loop {
        if interactive {
            print!("> ");
            stdout.flush().map_err(io_err)?;
        }
        line.clear();
        if stdin.lock().read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        let reply = session.respond(&line);
        if let Some(t) = transcript.as_mut() {
            writeln!(t, "> {}", line.trim_end()).map_err(io_err)?;
            if let Some(r) = reply.as_deref().filter(|r| !r.is_empty()) {
                writeln!(t, "{r}").map_err(io_err)?;
            }
        }
        match reply {
            None => break,
            Some(r) if r.is_empty() => {}
            Some(r) => println!("{r}"),
        }
    }
    Ok(())
}
