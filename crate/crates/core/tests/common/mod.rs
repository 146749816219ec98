#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dupforge::duptower::{QuestionTokens, TowerExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOPICS: [(&str, &[&str], &str); 5] = [
    (
        "python",
        &[
            "list", "dict", "loop", "import", "module", "string", "pandas", "numpy",
        ],
        "for x in items:\n    total += x",
    ),
    (
        "rust",
        &[
            "borrow", "lifetime", "trait", "vector", "iterator", "crate", "macro", "closure",
        ],
        "let v: Vec<u32> = xs.iter().map(|x| x * 2).collect();",
    ),
    (
        "java",
        &[
            "class",
            "interface",
            "stream",
            "exception",
            "thread",
            "spring",
            "maven",
            "generic",
        ],
        "List<String> names = new ArrayList<>();",
    ),
    (
        "sql",
        &[
            "join",
            "index",
            "query",
            "table",
            "column",
            "group",
            "insert",
            "transaction",
        ],
        "SELECT name FROM users WHERE id = 42;",
    ),
    (
        "javascript",
        &[
            "promise", "async", "callback", "array", "object", "event", "node", "react",
        ],
        "const xs = items.filter(x => x.ok);",
    ),
];

const FILLER: [&str; 12] = [
    "how", "can", "I", "make", "this", "work", "when", "using", "the", "with", "my", "code",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\n', "&#xA;")
}

fn sentence(rng: &mut ChaCha8Rng, words: &[&str], n: usize) -> String {
    (0..n)
        .map(|i| {
            if i % 3 == 1 {
                words[rng.gen_range(0..words.len())]
            } else {
                FILLER[rng.gen_range(0..FILLER.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct Dump {
    pub posts: PathBuf,
    pub links: PathBuf,
    pub questions: usize,
}

/// A small Stack Overflow style dump: `questions` questions over five topics,
/// two answers each (the first accepted), and a duplicate link from every
/// twentieth question to the question five ids later in the same topic.
pub fn write_dump(dir: &Path, questions: usize, seed: u64) -> Dump {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n");
    let mut next_id = 1000i64;
    for q in 0..questions {
        let (tag, words, code) = TOPICS[q % TOPICS.len()];
        let qid = q as i64 + 1;
        let a1 = next_id;
        let a2 = next_id + 1;
        next_id += 2;
        let title = format!(
            "{} {} in {tag}",
            sentence(&mut rng, words, 3),
            words[q % words.len()]
        );
        let body = format!(
            "<p>{} {} items?</p><pre><code>{code} // step {q}</code></pre>",
            sentence(&mut rng, words, 9),
            q % 7 + 2
        );
        let second_tag = words[rng.gen_range(0..words.len())];
        writeln!(
            posts,
            "  <row Id=\"{qid}\" PostTypeId=\"1\" AcceptedAnswerId=\"{a1}\" Title=\"{}\" Tags=\"{}\" Body=\"{}\" OwnerUserId=\"{}\" />",
            esc(&title),
            esc(&format!("<{tag}><{second_tag}>")),
            esc(&body),
            q % 13
        )
        .unwrap();
        for (aid, accepted) in [(a1, true), (a2, false)] {
            let body = if accepted {
                format!(
                    "<p>{}.</p><pre><code>{code}</code></pre>",
                    sentence(&mut rng, words, 8)
                )
            } else {
                format!("<p>{}.</p>", sentence(&mut rng, words, 6))
            };
            writeln!(
                posts,
                "  <row Id=\"{aid}\" PostTypeId=\"2\" ParentId=\"{qid}\" Body=\"{}\" OwnerDisplayName=\"user{}\" />",
                esc(&body),
                aid % 17
            )
            .unwrap();
        }
    }
    posts.push_str("</posts>\n");
    let mut links = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<postlinks>\n");
    let mut link_id = 1;
    for q in (0..questions.saturating_sub(5)).step_by(20) {
        writeln!(
            links,
            "  <row Id=\"{link_id}\" PostId=\"{}\" RelatedPostId=\"{}\" LinkTypeId=\"3\" />",
            q + 1,
            q + 6
        )
        .unwrap();
        link_id += 1;
        writeln!(
            links,
            "  <row Id=\"{link_id}\" PostId=\"{}\" RelatedPostId=\"{}\" LinkTypeId=\"1\" />",
            q + 2,
            q + 3
        )
        .unwrap();
        link_id += 1;
    }
    links.push_str("</postlinks>\n");
    let posts_path = dir.join("Posts.xml");
    let links_path = dir.join("PostLinks.xml");
    fs::write(&posts_path, posts).unwrap();
    fs::write(&links_path, links).unwrap();
    Dump {
        posts: posts_path,
        links: links_path,
        questions,
    }
}

pub const PLANT: u32 = 9;

fn planted_question(rng: &mut ChaCha8Rng, planted: bool, vocab: u32) -> QuestionTokens {
    let mut text: Vec<u32> = (0..8).map(|_| rng.gen_range(20..vocab)).collect();
    let code: Vec<u32> = (0..4).map(|_| rng.gen_range(20..vocab)).collect();
    if planted {
        let at = rng.gen_range(0..text.len());
        text[at] = PLANT;
    }
    QuestionTokens { text, code }
}

/// Duplicate pairs carry token [`PLANT`] in both questions; non-duplicates
/// carry it in neither or in exactly one.
pub fn planted_pairs(n: usize, seed: u64, vocab: u32) -> Vec<TowerExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let dup = i % 2 == 0;
            let (a, b) = if dup {
                (true, true)
            } else {
                match i % 6 {
                    1 => (false, false),
                    3 => (true, false),
                    _ => (false, true),
                }
            };
            TowerExample {
                first_id: i as i64,
                second_id: (n + i) as i64,
                first: planted_question(&mut rng, a, vocab),
                second: planted_question(&mut rng, b, vocab),
                target: dup as u8,
            }
        })
        .collect()
}

/// Runs the command line in-process.
pub fn dupforge(args: &[&str]) -> i32 {
    let mut full = vec!["dupforge", "--log-level", "warn"];
    full.extend_from_slice(args);
    dupforge::cli::run(full)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Outputs of [`run_pipeline`].
pub struct Pipeline {
    pub root: PathBuf,
    pub vocab: PathBuf,
    pub sod: PathBuf,
    pub sodd: PathBuf,
    pub encoder: PathBuf,
    pub tower: PathBuf,
    pub report: PathBuf,
    pub index: PathBuf,
    pub query: PathBuf,
}

impl Pipeline {
    /// Every data file the pipeline writes, relative to the root, sorted.
    pub fn artifacts(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_none_or(|x| x != "xml") {
                    out.push(p.strip_prefix(&self.root).unwrap().to_path_buf());
                }
            }
        }
        out.sort();
        out
    }
}

/// Fixture dump through every stage of the command line with `--seed`.
pub fn run_pipeline(root: &Path, seed: u64) -> Pipeline {
    let dump = write_dump(&root.join("dump"), 200, 11);
    let seed = seed.to_string();
    let p = |rel: &str| root.join(rel);
    let ingest = p("ingest");
    let posts = ingest.join("posts.jsonl");
    let pl = Pipeline {
        root: root.to_path_buf(),
        vocab: p("vocab.txt"),
        sod: p("sod"),
        sodd: p("sodd"),
        encoder: p("encoder"),
        tower: p("tower"),
        report: p("report.json"),
        index: p("index"),
        query: p("query.json"),
    };
    let steps: Vec<Vec<String>> = vec![
        vec![
            "ingest",
            "--posts",
            s(&dump.posts),
            "--links",
            s(&dump.links),
            "--out",
            s(&ingest),
        ],
        vec![
            "tokenizer",
            "train",
            "--input",
            s(&posts),
            "--vocab-size",
            "300",
            "--min-freq",
            "2",
            "--out",
            s(&pl.vocab),
        ],
        vec![
            "sod",
            "build",
            "--posts",
            s(&posts),
            "--vocab",
            s(&pl.vocab),
            "--out",
            s(&pl.sod),
            "--shards",
            "3",
        ],
        vec![
            "sod",
            "stats",
            "--posts",
            s(&posts),
            "--vocab",
            s(&pl.vocab),
            "--out",
            s(&p("stats.json")),
        ],
        vec![
            "sodd",
            "build",
            "--posts",
            s(&posts),
            "--links",
            s(&ingest.join("links.jsonl")),
            "--out",
            s(&pl.sodd),
        ],
        vec![
            "pretrain",
            "--records",
            s(&pl.sod.join("records.bin")),
            "--vocab",
            s(&pl.vocab),
            "--out",
            s(&pl.encoder),
            "--preset",
            "tiny",
            "--phase1-len",
            "64",
            "--phase1-examples",
            "392",
            "--phase2-len",
            "128",
            "--phase2-examples",
            "8",
            "--batch-size",
            "8",
            "--lr",
            "1e-3",
            "--cycle",
            "--log-out",
            s(&p("pretrain.jsonl")),
        ],
        vec![
            "finetune-dup",
            "--encoder",
            s(&pl.encoder),
            "--vocab",
            s(&pl.vocab),
            "--train",
            s(&pl.sodd.join("train.jsonl")),
            "--dev",
            s(&pl.sodd.join("dev.jsonl")),
            "--out",
            s(&pl.tower),
            "--steps",
            "20",
            "--eval-every",
            "10",
            "--batch-size",
            "8",
            "--seq-len",
            "64",
            "--hidden-dim",
            "16",
            "--lr",
            "1e-3",
            "--metrics-out",
            s(&p("metrics.jsonl")),
        ],
        vec![
            "eval",
            "--checkpoint",
            s(&pl.tower),
            "--vocab",
            s(&pl.vocab),
            "--data",
            s(&pl.sodd.join("test.jsonl")),
            "--out",
            s(&pl.report),
        ],
        vec![
            "index",
            "build",
            "--checkpoint",
            s(&pl.tower),
            "--vocab",
            s(&pl.vocab),
            "--corpus",
            s(&posts),
            "--out",
            s(&pl.index),
        ],
        vec![
            "query",
            "--checkpoint",
            s(&pl.tower),
            "--vocab",
            s(&pl.vocab),
            "--index",
            s(&pl.index),
            "--html",
            "<p>how can I make this loop work in python</p>",
            "--k",
            "3",
            "--out",
            s(&pl.query),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in steps {
        let mut full: Vec<&str> = vec!["--seed", &seed];
        full.extend(args.iter().map(String::as_str));
        assert_eq!(dupforge(&full), 0, "dupforge {}", args.join(" "));
    }
    pl
}
