use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dictnet_core::data::{save_dataset, EmbeddingTable};
use dictnet_core::synth::{generate, SynthSpec};
use serde_json::Value;
use tempfile::TempDir;

fn dictnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dictnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn dictnet_stdin(args: &[&str], input: &str) -> Output {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_dictnet"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Data {
    dir: TempDir,
    train: PathBuf,
    table: PathBuf,
}

fn data(words: usize, seed: u64) -> Data {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&SynthSpec {
        words,
        dim: 4,
        tokens: 12,
        min_len: 4,
        max_len: 6,
        seed,
    })
    .unwrap();
    let train = dir.path().join("train.jsonl");
    let table = dir.path().join("table.txt");
    save_dataset(&corpus.entries, &train).unwrap();
    corpus.table.save(&table).unwrap();
    Data { dir, train, table }
}

impl Data {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, out: &str, extra: &str) -> PathBuf {
        let p = self.path(&format!("{out}.conf"));
        let text = format!(
            "# tiny model\ndata.train = {t}\ndata.dev = {t}\noutput.dir = {o}\n\
             model.d_tok = 8\nmodel.d_share = 8\nmodel.d_ff = 16\nmodel.depth = 1\nmodel.heads = 2\n\
             train.batch_size = 4\ntrain.max_epochs = 2\n{extra}",
            t = s(&self.train),
            o = s(&self.path(out)),
        );
        std::fs::write(&p, text).unwrap();
        p
    }

    fn train(&self, out: &str, extra: &str) -> Output {
        let cfg = self.config(out, extra);
        dictnet(&["train", "--config", s(&cfg)])
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts_and_a_manifest_with_defaults() {
    let d = data(6, 1);
    let o = d.train("run", "");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = d.path("run");
    for f in ["model.ckpt", "history.csv", "vocab.txt", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let m = read_json(&run.join("manifest.json"));
    assert_eq!(m["config"]["train.lr"].as_str().unwrap().parse::<f64>().unwrap(), 1e-4);
    assert_eq!(m["config"]["model.d_tok"], "8");
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 0);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for rec in outputs {
        let path = rec["path"].as_str().unwrap();
        let bytes = std::fs::read(path).unwrap();
        use sha2::Digest;
        let hex: String = sha2::Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(rec["sha256"], hex.as_str());
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
}

#[test]
fn identical_invocations_give_identical_artifacts() {
    let d = data(6, 2);
    assert_eq!(code(&d.train("a", "train.seed = 4")), 0);
    assert_eq!(code(&d.train("b", "train.seed = 4")), 0);
    for f in ["history.csv", "model.ckpt", "vocab.txt"] {
        assert_eq!(
            std::fs::read(d.path("a").join(f)).unwrap(),
            std::fs::read(d.path("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn overrides_beat_the_file() {
    let d = data(4, 3);
    let cfg = d.config("run", "train.lr = 0.5");
    let o = dictnet(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "train.lr=0.002",
        "--set",
        "train.max_epochs=1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&d.path("run").join("manifest.json"));
    assert_eq!(m["config"]["train.lr"], "0.002");
    assert_eq!(m["config"]["train.max_epochs"], "1");
}

#[test]
fn config_and_data_errors_have_distinct_exit_codes() {
    let d = data(4, 4);
    let o = d.train("run", "train.learning_rate = 0.1");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`train.learning_rate`"), "{}", stderr(&o));

    let o = dictnet(&["train", "--set", "model.width=3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`model.width`"));

    let bad = d.path("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"word\": \"a\", \"definition\": \"x y\", \"word_vector\": [1, 2, 3, 4]}\n{oops\n",
    )
    .unwrap();
    let cfg = d.config("run", "");
    let o = dictnet(&["train", "--config", s(&cfg), "--set", &format!("data.dev={}", s(&bad))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.jsonl:2"), "{}", stderr(&o));

    assert_eq!(code(&dictnet(&["train", "--bogus"])), 2);
}

#[test]
fn divergence_exits_with_the_numerical_code() {
    let d = data(4, 5);
    let huge = d.path("huge.jsonl");
    std::fs::write(
        &huge,
        "{\"word\": \"a\", \"definition\": \"x y z\", \"word_vector\": [1e200, 0, 0, 0]}\n",
    )
    .unwrap();
    let cfg = d.config("run", "");
    let o = dictnet(&["train", "--config", s(&cfg), "--set", &format!("data.dev={}", s(&huge))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn eval_reports_match_their_mode() {
    let d = data(8, 6);
    assert_eq!(code(&d.train("run", "")), 0);
    let ckpt = d.path("run").join("model.ckpt");
    let out = d.path("eval");

    let o = dictnet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&d.train),
        "--mode",
        "revdic",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--table"));

    let o = dictnet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&d.train),
        "--mode",
        "revdic",
        "--table",
        s(&d.table),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("acc@1") && !stdout(&o).contains("BLEU"));
    let r = read_json(&out.join("revdic_report.json"));
    assert_eq!(r["n"], 8);
    for k in [
        "acc_at_1",
        "acc_at_10",
        "acc_at_100",
        "median_rank",
        "rank_std_forced",
        "rank_std_real",
    ] {
        assert!(r[k].is_number(), "{k}");
    }
    assert_eq!(
        std::fs::read_to_string(out.join("revdic_outputs.tsv"))
            .unwrap()
            .lines()
            .count(),
        9
    );

    let o = dictnet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&d.train),
        "--mode",
        "defmod",
        "--out",
        s(&out),
        "--max-len",
        "6",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("BLEU") && stdout(&o).contains("ROUGE-L"));
    let r = read_json(&out.join("defmod_report.json"));
    assert_eq!(r["n"], 8);
    assert!(r.get("acc_at_1").is_none());
    assert!(out.join("defmod_manifest.json").exists());
}

#[test]
fn overfit_checkpoint_reproduces_its_glosses() {
    let d = data(5, 7);
    let cfg = d.config("fit", "");
    let mut args = vec!["train", "--config", s(&cfg)];
    for kv in [
        "model.d_tok=16",
        "model.d_share=16",
        "model.d_ff=32",
        "model.dropout_transformer=0",
        "model.dropout_linear=0",
        "train.lr=0.005",
        "train.batch_size=5",
        "train.max_epochs=200",
        "train.patience=500",
        "train.execution=sequential",
        "train.seed=3",
    ] {
        args.extend(["--set", kv]);
    }
    let o = dictnet(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = d.path("eval");
    let ckpt = d.path("fit").join("model.ckpt");
    let o = dictnet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&d.train),
        "--mode",
        "defmod",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&out.join("defmod_report.json"));
    assert_eq!(r["corpus_bleu"], 1.0, "{r}");
    assert_eq!(r["rouge_l_f1"], 1.0);
}

#[test]
fn repl_answers_both_directions_and_keeps_a_transcript() {
    let d = data(4, 8);
    assert_eq!(code(&d.train("run", "")), 0);
    let ckpt = d.path("run").join("model.ckpt");
    let single = d.path("single.txt");
    let table = EmbeddingTable::load(&d.table).unwrap();
    let (w, v) = table.iter().next().unwrap();
    let mut one = EmbeddingTable::new(table.dim());
    one.insert(w, v).unwrap();
    one.save(&single).unwrap();

    let script = format!(":d anything at all\n:w {w}\n:w nowhere\n:x\n:q\n:w {w}\n");
    let run = |t: &Path| {
        dictnet_stdin(
            &[
                "query",
                "--checkpoint",
                s(&ckpt),
                "--table",
                s(&single),
                "--transcript",
                s(t),
                "--max-len",
                "5",
            ],
            &script,
        )
    };
    let (t1, t2) = (d.path("t1.txt"), d.path("t2.txt"));
    let o = run(&t1);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("  1. ") && lines[0].contains(w), "{out}");
    assert!(lines[1].starts_with(&format!("{w}: ")));
    assert!(lines[2].starts_with("miss:") && lines[2].contains("nowhere"));
    assert!(out.contains(":q"), "help text for an unknown command");
    assert_eq!(out.matches(&format!("{w}: ")).count(), 1, "stops at :q");

    assert_eq!(code(&run(&t2)), 0);
    let a = std::fs::read_to_string(&t1).unwrap();
    assert_eq!(a, std::fs::read_to_string(&t2).unwrap());
    assert!(a.starts_with("> :d anything at all\n"));
    assert!(a.contains("> :q"));
}

#[test]
fn batch_queries_write_json_lines() {
    let d = data(5, 9);
    assert_eq!(code(&d.train("run", "")), 0);
    let ckpt = d.path("run").join("model.ckpt");
    let input = d.path("q.jsonl");
    std::fs::write(
        &input,
        "{\"word\": \"w001\"}\n\n{\"definition\": \"some words\"}\n{\"word\": \"zzz\"}\n",
    )
    .unwrap();
    let out = d.path("answers.jsonl");
    let o = dictnet(&[
        "query",
        "--checkpoint",
        s(&ckpt),
        "--table",
        s(&d.table),
        "--batch",
        s(&input),
        "--out",
        s(&out),
        "--top-k",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0]["generated"].is_string());
    assert_eq!(rows[1]["candidates"].as_array().unwrap().len(), 3);
    assert!(rows[2]["error"].as_str().unwrap().contains("zzz"));

    std::fs::write(&input, "{\"word\": \"a\", \"definition\": \"b\"}\n").unwrap();
    let o = dictnet(&["query", "--checkpoint", s(&ckpt), "--batch", s(&input)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn build_vocab_kinds() {
    let d = data(10, 10);
    let out = d.path("ws.txt");
    let o = dictnet(&[
        "build-vocab",
        "--corpus",
        s(&d.train),
        "--kind",
        "whitespace",
        "--size",
        "99",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("ignored"), "{}", stderr(&o));

    let (u1, u2) = (d.path("u1.txt"), d.path("u2.txt"));
    for u in [&u1, &u2] {
        let o = dictnet(&["build-vocab", "--corpus", s(&d.train), "--size", "30", "--out", s(u)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&u1).unwrap(), std::fs::read(&u2).unwrap());

    let o = dictnet(&["build-vocab", "--corpus", s(&d.train), "--size", "5", "--out", s(&u1)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = dictnet(&["build-vocab", "--corpus", s(&d.train), "--out", s(&u1)]);
    assert_eq!(code(&o), 2);

    // A trained unigram vocabulary can drive training.
    let o = d.train("uni", &format!("data.vocab = {}", s(&u2)));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn grad_check_lists_every_case_once() {
    let o = dictnet(&["grad-check"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("PASS"))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    for n in ["matmul", "softmax_axis1", "five_task_forward", "decoder_block_causal"] {
        assert!(names.contains(&n), "{n} missing from\n{out}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn corrupted_gradient_is_caught_by_name() {
    let o = dictnet(&["grad-check", "--corrupt", "matmul"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o)
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("matmul")));
    assert!(stderr(&o).contains("matmul"));
    assert_eq!(code(&dictnet(&["grad-check", "--corrupt", "nonexistent"])), 2);
}
