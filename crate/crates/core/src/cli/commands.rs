use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::*;
use crate::dup_service::{self, EmbeddingIndex, ServiceState};
use crate::duptower::{evaluate, finetune, DupTower, TowerExample};
use crate::encoder::Encoder;
use crate::ingest::{
    parse_duplicate_links, parse_posts, read_jsonl, write_jsonl, DuplicateLink, ParseOptions,
    PostRecord,
};
use crate::sod::{
    build_tuples, expand_pairs, export_sod, read_records, tokenize_pair, NegativeBatches,
    RecordWriter, SodStats, TokenizedPair, NEGATIVE_BATCH_SIZE,
};
use crate::sodd::{assemble_sodd, emit_accepted_answers, split, SoddExample};
use crate::tokenizer::{train_wordpiece, Vocabulary};
use crate::train_eval::{pretrain, PhaseConfig, Schedule};

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let seed = cli.global.seed;
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Tokenizer(TokenizerCommand::Train(a)) => tokenizer_train(a, &file),
        Command::Sod(SodCommand::Build(a)) => sod_build(a, seed),
        Command::Sod(SodCommand::Stats(a)) => sod_stats(a),
        Command::Sodd(SoddCommand::Build(a)) => sodd_build(a, &file, seed),
        Command::Pretrain(a) => pretrain_cmd(a, &file, seed),
        Command::FinetuneDup(a) => finetune_cmd(a, &file, seed),
        Command::Eval(a) => eval_cmd(a),
        Command::Index(IndexCommand::Build(a)) => index_build(a),
        Command::Serve(a) => serve_cmd(a, cli.global.threads),
        Command::Query(a) => query_cmd(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io_at(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io_at(path, e))
}

fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(open(path)?).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn summary<T: Serialize>(what: &str, value: &T) {
    log::info!(
        "{what} {}",
        serde_json::to_string(value).unwrap_or_default()
    );
}

fn ingest(a: &IngestArgs) -> Result<()> {
    fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    let opts = ParseOptions { strict: a.strict };
    let mut posts = parse_posts(open(&a.posts)?, opts);
    let n = write_jsonl_results(&mut posts, &a.out.join("posts.jsonl"))?;
    summary("posts", &posts.stats());
    log::info!("wrote {n} posts");
    if let Some(links_path) = &a.links {
        let mut links = parse_duplicate_links(open(links_path)?, opts);
        let n = write_jsonl_results(&mut links, &a.out.join("links.jsonl"))?;
        summary("links", &links.stats());
        log::info!("wrote {n} duplicate links");
    }
    Ok(())
}

/// Streams fallible items to a JSON Lines file, stopping at the first error.
fn write_jsonl_results<T: Serialize>(
    items: &mut impl Iterator<Item = Result<T>>,
    path: &Path,
) -> Result<u64> {
    let mut w = create(path)?;
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut w, &item?)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

fn tokenizer_train(a: &TokenizerTrainArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = file.tokenizer.unwrap_or_default();
    if let Some(v) = a.vocab_size {
        cfg.vocab_size = v;
    }
    if let Some(m) = a.min_freq {
        cfg.min_frequency = m;
    }
    let posts: Vec<PostRecord> = read_all(&a.input)?;
    if posts.is_empty() {
        return Err(Error::Empty("tokenizer corpus"));
    }
    let corpus = posts.iter().flat_map(|p| {
        std::iter::once(p.text.as_str()).chain(p.code_blocks.iter().map(String::as_str))
    });
    let vocab = train_wordpiece(corpus, cfg)?;
    vocab.save(&a.out)?;
    log::info!(
        "vocabulary of {} tokens written to {}",
        vocab.len(),
        a.out.display()
    );
    Ok(())
}

fn sod_build(a: &SodBuildArgs, seed: u64) -> Result<()> {
    let posts: Vec<PostRecord> = read_all(&a.posts)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let build = build_tuples(posts);
    if build.orphans > 0 {
        log::warn!("{} answers have no question in the input", build.orphans);
    }
    let export = export_sod(&build.tuples, a.out.join("csv"), a.shards)?;
    summary("export", &export);

    let positives = build
        .tuples
        .iter()
        .flat_map(|t| expand_pairs(t).0)
        .map(|p| tokenize_pair(&p, &vocab));
    let path = a.out.join("records.bin");
    let mut w = RecordWriter::new(create(&path)?)?;
    let mut batches = NegativeBatches::new(positives, NEGATIVE_BATCH_SIZE, seed);
    for batch in batches.by_ref() {
        for rec in &batch {
            w.write(rec)?;
        }
    }
    if batches.unpaired_batches > 0 {
        log::warn!(
            "{} batch(es) too small for negatives",
            batches.unpaired_batches
        );
    }
    let n = w.finish()?;
    log::info!("wrote {n} training records to {}", path.display());
    Ok(())
}

fn sod_stats(a: &SodStatsArgs) -> Result<()> {
    let posts: Vec<PostRecord> = read_all(&a.posts)?;
    let vocab = a.vocab.as_deref().map(Vocabulary::load).transpose()?;
    let build = build_tuples(posts);
    let stats = SodStats::compute(&build.tuples, vocab.as_ref(), a.top);
    write_json(&a.out, &stats)
}

fn sodd_build(a: &SoddBuildArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let mut cfg = file.sodd.unwrap_or_default();
    cfg.n_random = a.n_random.unwrap_or(cfg.n_random);
    cfg.n_text = a.n_text.unwrap_or(cfg.n_text);
    cfg.n_tag = a.n_tag.unwrap_or(cfg.n_tag);
    cfg.max_pairs = a.max_pairs.or(cfg.max_pairs);
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--ratios takes three values".into()))?;
    let posts: Vec<PostRecord> = read_all(&a.posts)?;
    let links: Vec<DuplicateLink> = read_all(&a.links)?;
    let (mut examples, tally) = assemble_sodd(&links, &posts, seed, cfg)?;
    summary("sodd", &tally);
    if !a.no_accepted_answers {
        examples.extend(emit_accepted_answers(&posts, &posts));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    write_jsonl(&examples, create(&a.out.join("sodd.jsonl"))?)?;
    let parts = split(&examples, ratios, seed)?;
    for (name, part) in [
        ("train", &parts.train),
        ("dev", &parts.dev),
        ("test", &parts.test),
    ] {
        let n = write_jsonl(part, create(&a.out.join(format!("{name}.jsonl")))?)?;
        log::info!("{name}: {n} examples");
    }
    Ok(())
}

fn record_stream(
    path: &Path,
    cycle: bool,
) -> Result<Box<dyn Iterator<Item = Result<TokenizedPair>>>> {
    if !cycle {
        return Ok(Box::new(read_records(path)?));
    }
    if read_records(path)?.next().transpose()?.is_none() {
        return Err(Error::Empty("record file"));
    }
    let path = path.to_path_buf();
    Ok(Box::new(
        std::iter::repeat_with(move || read_records(&path)).flat_map(
            |r| -> Box<dyn Iterator<Item = Result<TokenizedPair>>> {
                match r {
                    Ok(reader) => Box::new(reader),
                    Err(e) => Box::new(std::iter::once(Err(e))),
                }
            },
        ),
    ))
}

fn pretrain_cmd(a: &PretrainArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let mut encoder = match &a.init {
        Some(dir) => Encoder::load(dir)?,
        None => {
            let mut c = match &file.encoder {
                Some(c) => c.clone(),
                None => EncoderConfig::preset(&a.preset)?,
            };
            c.vocab_size = vocab.len();
            Encoder::new(c, seed)?
        }
    };
    if encoder.config().vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocabulary {} is smaller than {}",
            encoder.config().vocab_size,
            vocab.len()
        )));
    }
    let base = file.pretrain.clone().unwrap_or_else(|| {
        let mut p = PretrainConfig::full_scale();
        p.phase1.examples = 0;
        p.phase2.examples = 0;
        p
    });
    let phase1 = PhaseConfig {
        seq_len: a.phase1_len.unwrap_or(base.phase1.seq_len),
        examples: a.phase1_examples.unwrap_or(base.phase1.examples),
    };
    let phase2 = PhaseConfig {
        seq_len: a.phase2_len.unwrap_or(base.phase2.seq_len),
        examples: a.phase2_examples.unwrap_or(base.phase2.examples),
    };
    let batch_size = a.batch_size.unwrap_or(base.batch_size);
    let bs = batch_size.max(1) as u64;
    let total = phase1.examples.div_ceil(bs) + phase2.examples.div_ceil(bs);
    if total == 0 {
        return Err(Error::Config(
            "set --phase1-examples and/or --phase2-examples".into(),
        ));
    }
    let flags_changed_length =
        a.phase1_examples.is_some() || a.phase2_examples.is_some() || a.batch_size.is_some();
    let schedule =
        if file.pretrain.is_some() && !flags_changed_length && a.warmup.is_none() && a.lr.is_none()
        {
            base.schedule
        } else {
            let warmup = a
                .warmup
                .unwrap_or_else(|| base.schedule.warmup_steps.min((total / 10).max(1)))
                .min(total);
            Schedule::new(a.lr.unwrap_or(base.schedule.base_lr), warmup.max(1), total)?
        };
    let cfg = PretrainConfig {
        phase1,
        phase2,
        batch_size,
        schedule,
        seed,
        ..base
    };
    let mut log_out = a.log_out.as_deref().map(create).transpose()?;
    let mut write_err = None;
    let report = pretrain(
        &mut encoder,
        record_stream(&a.records, a.cycle)?,
        &cfg,
        |s| {
            log::debug!("step {} loss {:.5}", s.step, s.loss);
            if let Some(w) = log_out.as_mut() {
                if let Err(e) = serde_json::to_writer(&mut *w, s)
                    .map_err(Error::from)
                    .and_then(|_| Ok(w.write_all(b"\n")?))
                {
                    write_err.get_or_insert(e);
                }
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(mut w) = log_out {
        w.flush()?;
    }
    if let Some(last) = report.history.last() {
        log::info!(
            "finished {} steps, last loss {:.5}",
            report.steps,
            last.loss
        );
    }
    encoder.save(&a.out)
}

fn tower_examples(path: &Path, vocab: &Vocabulary) -> Result<Vec<TowerExample>> {
    let mut out = Vec::new();
    let mut skipped = 0u64;
    for ex in read_jsonl::<SoddExample, _>(open(path)?) {
        match TowerExample::from_sodd(&ex?, vocab) {
            Ok(Some(t)) => out.push(t),
            Ok(None) => {}
            Err(e) => {
                skipped += 1;
                log::debug!("skipping pair: {e}");
            }
        }
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} pair(s) in {} have an empty question",
            path.display()
        );
    }
    Ok(out)
}

fn finetune_cmd(a: &FinetuneArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let encoder = Encoder::load(&a.encoder)?;
    let mut tc = file.tower.clone().unwrap_or_default();
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.sequence_length = a.seq_len.unwrap_or(tc.sequence_length);
    tc.hidden_dim = a.hidden_dim.unwrap_or(tc.hidden_dim);
    let mut opts = file.finetune.clone().unwrap_or_default();
    opts.steps = a.steps.unwrap_or(opts.steps);
    opts.eval_every = a.eval_every.unwrap_or(opts.eval_every);
    opts.freeze_encoder |= a.freeze_encoder;
    opts.seed = seed;
    let mut tower = DupTower::new(encoder, tc, seed)?;
    let train = tower_examples(&a.train, &vocab)?;
    let dev = match &a.dev {
        Some(p) => tower_examples(p, &vocab)?,
        None => Vec::new(),
    };
    let mut metrics_out = a.metrics_out.as_deref().map(create).transpose()?;
    let mut write_err = None;
    let report = finetune(&mut tower, &train, &dev, &opts, |m| {
        if let Some(w) = metrics_out.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *w, m)
                .map_err(Error::from)
                .and_then(|_| Ok(w.write_all(b"\n")?))
            {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(mut w) = metrics_out {
        w.flush()?;
    }
    log::info!(
        "fine-tuned {} steps, last loss {:.5}",
        report.steps,
        report.last_loss
    );
    tower.save(&a.out)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let tower = DupTower::load(&a.checkpoint)?;
    let data = tower_examples(&a.data, &vocab)?;
    let eval = evaluate(&tower, &data)?;
    summary("metrics", &eval.report);
    write_json(&a.out, &eval.report)
}

fn index_build(a: &IndexBuildArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let tower = DupTower::load(&a.checkpoint)?;
    let posts: Vec<PostRecord> = read_all(&a.corpus)?;
    let index = dup_service::build_index(&posts, &tower, &vocab, !a.inner_product)?;
    index.save(&a.out)?;
    log::info!("indexed {} questions into {}", index.len(), a.out.display());
    Ok(())
}

fn serve_cmd(a: &ServeArgs, threads: Option<usize>) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let tower = DupTower::load(&a.checkpoint)?;
    let index = match &a.index_path {
        Some(p) if p.join("index.json").exists() => Some(EmbeddingIndex::load(p)?),
        _ => None,
    };
    let mut state = ServiceState::new(tower, vocab, index);
    state.index_path = a.index_path.clone();
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad listen address: {e}")))?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n.max(1));
    }
    let rt = rt.enable_all().build()?;
    rt.block_on(dup_service::serve(addr, Arc::new(state)))
}

fn query_cmd(a: &QueryArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let tower = DupTower::load(&a.checkpoint)?;
    let index = EmbeddingIndex::load(&a.index)?;
    let html = match (&a.html, &a.html_file) {
        (Some(h), _) => h.clone(),
        (None, Some(p)) => fs::read_to_string(p).map_err(|e| Error::io_at(p, e))?,
        (None, None) => return Err(Error::Config("pass --html or --html-file".into())),
    };
    let result = dup_service::query_duplicates(&index, &html, a.k, &tower, &vocab)?;
    match &a.out {
        Some(p) => write_json(p, &result),
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &result)?;
            out.write_all(b"\n")?;
            Ok(())
        }
    }
}
