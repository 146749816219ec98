use std::collections::{BTreeMap, HashMap, HashSet};

use dupforge::autodiff::{dense_attention, Real};
use dupforge::dup_service::EmbeddingIndex;
use dupforge::duptower::TowerHead;
use dupforge::encoder::{
    apply_mlm_masking, full_attention, sliding_window_attention, MaskingStrategy,
};
use dupforge::ingest::{normalize_code, normalize_text, split_code_text};
use dupforge::sod::{
    build_input, replacement_indices, NegativeBatches, PairType, RecordReader, RecordWriter,
    TokenizedPair,
};
use dupforge::sodd::{
    analyze, split, tag_similarity, Bm25Index, Bm25Params, SoddExample, SoddLabel,
};
use dupforge::tokenizer::{
    decode, encode, pre_tokenize, train_wordpiece, TrainerConfig, Vocabulary,
};
use dupforge::train_eval::{adam_step, metrics, metrics_with, AdamConfig, AdamMoments, Schedule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn no_standalone_digit_runs(s in "[a-z0-9 .,:_()\\-+eE]{0,60}") {
        let digits = Regex::new(r"\b\d+\b").unwrap();
        let t = normalize_text(&s);
        prop_assert!(!digits.is_match(&t), "text {s:?} -> {t:?}");
        let c = normalize_code(&s);
        prop_assert!(!digits.is_match(&c), "code {s:?} -> {c:?}");
    }

    #[test]
    fn normalized_text_has_no_angle_brackets(html in "[a-z <>/p&;=\"]{0,80}") {
        let (text, _) = split_code_text(&html);
        let t = normalize_text(&text);
        prop_assert!(!t.contains('<') && !t.contains('>'));
    }

    #[test]
    fn code_blocks_come_from_pre_code_spans(
        parts in prop::collection::vec((any::<bool>(), "[a-z0-9 =;(){}]{0,20}"), 0..6)
    ) {
        let mut html = String::new();
        let mut want_code = Vec::new();
        let mut want_text = Vec::new();
        for (is_code, body) in &parts {
            if *is_code {
                html.push_str(&format!("<pre><code>{body}</code></pre>"));
                let c = body.split_whitespace().collect::<Vec<_>>().join(" ");
                if !c.is_empty() {
                    want_code.push(c);
                }
            } else {
                html.push_str(&format!("<p>{body}</p>"));
                want_text.extend(body.split_whitespace().map(String::from));
            }
        }
        let (text, code) = split_code_text(&html);
        prop_assert_eq!(code, want_code);
        prop_assert_eq!(text, want_text.join(" "));
    }
}

fn letter_vocab() -> Vocabulary {
    train_wordpiece(
        ["a b c d e f g h i j abcdefghij ja . , !", "abc abc hij hij"],
        TrainerConfig {
            vocab_size: 200,
            min_frequency: 1,
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn tokenizer_round_trip_over_known_alphabet(text in "[a-j.,! ]{0,50}") {
        let vocab = letter_vocab();
        let seq = encode(&text, &vocab);
        prop_assert!(seq.ids.iter().all(|&id| (id as usize) < vocab.len()));
        let words: Vec<&str> = pre_tokenize(&text).iter().map(|w| w.text).collect();
        prop_assert_eq!(decode(&seq.ids, &vocab), words.join(" "));
    }

    #[test]
    fn encode_ids_stay_inside_vocab(text in "\\PC{0,40}") {
        let vocab = letter_vocab();
        prop_assert!(encode(&text, &vocab).ids.iter().all(|&id| (id as usize) < vocab.len()));
    }

    #[test]
    fn learned_tokens_meet_min_frequency(
        words in prop::collection::vec("[abc]{1,5}", 1..40),
        min_freq in 1u64..4,
    ) {
        let config = TrainerConfig { vocab_size: 300, min_frequency: min_freq };
        let vocab = train_wordpiece(words.iter().map(String::as_str), config).unwrap();
        let again = train_wordpiece(words.iter().map(String::as_str), config).unwrap();
        prop_assert_eq!(vocab.tokens(), again.tokens());
        for tok in vocab.tokens() {
            if tok.starts_with('[') {
                continue;
            }
            let (piece, continuation) = match tok.strip_prefix("##") {
                Some(p) => (p, true),
                None => (tok.as_str(), false),
            };
            if piece.chars().count() < 2 {
                continue;
            }
            // every merge of the piece is one of its (overlapping) occurrences
            let support: u64 = words
                .iter()
                .map(|w| {
                    if continuation {
                        (1..w.len()).filter(|&i| w[i..].starts_with(piece)).count() as u64
                    } else {
                        w.starts_with(piece) as u64
                    }
                })
                .sum();
            prop_assert!(support >= min_freq, "{tok} occurs {support} times");
        }
    }
}

fn pair(rng: &mut ChaCha8Rng) -> TokenizedPair {
    let t = PairType::ALL[rng.gen_range(0..6)];
    let (qa, sp) = t.labels(false);
    TokenizedPair {
        first: (0..rng.gen_range(0..20))
            .map(|_| rng.gen_range(0..5000))
            .collect(),
        second: (0..rng.gen_range(0..20))
            .map(|_| rng.gen_range(0..5000))
            .collect(),
        pair_type: t,
        qa_label: qa,
        sp_label: sp,
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn one_negative_per_positive(n in 0usize..350, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positives: Vec<TokenizedPair> = (0..n).map(|_| pair(&mut rng)).collect();
        let mut seen = 0;
        for batch in NegativeBatches::new(positives.clone().into_iter(), 100, seed) {
            let k = batch.len() / 2;
            if batch.len() == 1 {
                seen += 1;
                continue;
            }
            prop_assert_eq!(batch.len() % 2, 0);
            for (i, neg) in batch[k..].iter().enumerate() {
                prop_assert_eq!((neg.qa_label, neg.sp_label), (0, 0));
                prop_assert_eq!(&neg.first, &batch[i].first);
            }
            prop_assert!(batch[..k].iter().all(|p| p.qa_label + p.sp_label == 1));
            seen += k;
        }
        prop_assert_eq!(seen, n);
    }

    #[test]
    fn replacement_never_picks_itself(n in 0usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = replacement_indices(n, &mut rng);
        prop_assert_eq!(r.len(), if n < 2 { 0 } else { n });
        prop_assert!(r.iter().enumerate().all(|(i, &j)| i != j && j < n));
    }

    #[test]
    fn record_round_trip(n in 0usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<TokenizedPair> = (0..n).map(|_| pair(&mut rng)).collect();
        let mut bytes = Vec::new();
        let mut w = RecordWriter::new(&mut bytes).unwrap();
        for r in &recs {
            w.write(r).unwrap();
        }
        prop_assert_eq!(w.finish().unwrap(), n as u64);
        let back: Vec<TokenizedPair> = RecordReader::new(bytes.as_slice()).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, recs);
    }

    #[test]
    fn model_input_layout(a in prop::collection::vec(10u32..99, 0..40), b in prop::collection::vec(10u32..99, 0..40), max_len in 3usize..64) {
        let input = build_input(&a, &b, max_len);
        prop_assert!(input.len() <= max_len);
        prop_assert_eq!(input.ids[0], dupforge::tokenizer::CLS_ID);
        prop_assert_eq!(*input.ids.last().unwrap(), dupforge::tokenizer::SEP_ID);
        let seps = input.ids.iter().filter(|&&t| t == dupforge::tokenizer::SEP_ID).count();
        prop_assert_eq!(seps, 2);
        prop_assert_eq!(input.segments.len(), input.ids.len());
    }
}

fn sodd_example(i: usize, label: SoddLabel) -> SoddExample {
    SoddExample {
        first_id: i as i64,
        second_id: 10_000 + i as i64,
        first_post: String::new(),
        second_post: String::new(),
        first_author: String::new(),
        second_author: String::new(),
        label,
        page: "stackoverflow".into(),
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn split_is_stratified_and_deterministic(
        labels in prop::collection::vec(0u8..5, 0..200),
        r in (1u32..10, 0u32..5, 0u32..5),
        seed in any::<u64>(),
    ) {
        let examples: Vec<SoddExample> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sodd_example(i, SoddLabel::try_from(l).unwrap()))
            .collect();
        let ratios = [r.0 as f64, r.1 as f64, r.2 as f64];
        let s = split(&examples, ratios, seed).unwrap();
        prop_assert_eq!(&s, &split(&examples, ratios, seed).unwrap());
        prop_assert_eq!(s.train.len() + s.dev.len() + s.test.len(), examples.len());
        let total: f64 = ratios.iter().sum();
        let mut per_label: BTreeMap<SoddLabel, usize> = BTreeMap::new();
        for e in &examples {
            *per_label.entry(e.label).or_default() += 1;
        }
        for (label, n) in per_label {
            for (part, ratio) in [(&s.train, ratios[0]), (&s.dev, ratios[1]), (&s.test, ratios[2])] {
                let got = part.iter().filter(|e| e.label == label).count() as f64;
                let quota = n as f64 * ratio / total;
                prop_assert!((got - quota).abs() <= 1.0, "{label:?}: {got} vs {quota}");
            }
        }
    }

    #[test]
    fn bm25_matches_brute_force(
        docs in prop::collection::vec(prop::collection::vec(0usize..8, 1..12), 1..20),
        query in prop::collection::vec(0usize..10, 1..5),
        k in 1usize..10,
    ) {
        const WORDS: [&str; 10] = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"];
        let texts: Vec<(i64, String)> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (i as i64 + 1, d.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")))
            .collect();
        let q = query.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
        let ix = Bm25Index::build(&texts, Bm25Params::default()).unwrap();

        let analyzed: Vec<Vec<String>> = texts.iter().map(|(_, t)| analyze(t)).collect();
        let n = analyzed.len() as f64;
        let avg = analyzed.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let terms: HashSet<String> = analyze(&q).into_iter().collect();
        let mut brute: Vec<(i64, f64)> = Vec::new();
        for (d, words) in analyzed.iter().enumerate() {
            let mut s = 0.0;
            let mut hit = false;
            for t in &terms {
                let tf = words.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = analyzed.iter().filter(|ws| ws.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = 1.0 - 0.75 + 0.75 * words.len() as f64 / avg;
                s += idf * tf * 2.2 / (tf + 1.2 * norm);
            }
            if hit {
                brute.push((d as i64 + 1, s));
            }
        }
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = ix.top_k(&q, k);
        prop_assert_eq!(got.len(), brute.len().min(k));
        for (g, b) in got.iter().zip(&brute) {
            prop_assert!((g.1 - b.1).abs() < 1e-9);
            let own = brute.iter().find(|x| x.0 == g.0).unwrap().1;
            prop_assert!((g.1 - own).abs() < 1e-9);
        }
    }

    #[test]
    fn jaccard_is_a_symmetric_unit_measure(
        a in prop::collection::vec("[a-e]", 0..5),
        b in prop::collection::vec("[a-e]", 0..5),
    ) {
        let s = tag_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, tag_similarity(&b, &a));
        if !a.is_empty() {
            prop_assert_eq!(tag_similarity(&a, &a), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn windowed_attention_equals_masked_dense(n in 1usize..40, window in 0usize..10, heads in 1usize..3, seed in any::<u64>()) {
        let hidden = 4 * heads;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k, v) = (randn(&mut rng, n * hidden), randn(&mut rng, n * hidden), randn(&mut rng, n * hidden));
        let mut global = vec![false; n];
        global[0] = true;
        let valid = vec![true; n];
        let got = sliding_window_attention(&q, &k, &v, n, hidden, heads, window, &valid, &global).unwrap();
        let want = dense_attention(&q, &k, &v, n, hidden, heads, |i, j| i == 0 || j == 0 || i.abs_diff(j) <= window);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        if window + 1 >= n {
            let full = full_attention(&q, &k, &v, n, hidden, heads);
            for (a, b) in got.iter().zip(&full) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masking_respects_specials_and_records_targets(ids in prop::collection::vec(0u32..60, 0..80), seed in any::<u64>(), rate in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = MaskingStrategy { rate, ..Default::default() };
        let plan = apply_mlm_masking(&ids, &mut rng, s, 60).unwrap();
        prop_assert_eq!(plan.masked_ids.len(), ids.len());
        prop_assert_eq!(plan.positions.len(), plan.targets.len());
        let picked: HashSet<usize> = plan.positions.iter().copied().collect();
        for (&p, &t) in plan.positions.iter().zip(&plan.targets) {
            prop_assert!(!Vocabulary::is_special(ids[p]));
            prop_assert_eq!(t, ids[p]);
        }
        for i in 0..ids.len() {
            if !picked.contains(&i) {
                prop_assert_eq!(plan.masked_ids[i], ids[i]);
            }
            prop_assert!(plan.masked_ids[i] < 60);
        }
    }

    #[test]
    fn head_hidden_layer_is_nonnegative_and_probs_sum_to_one(d in 1usize..8, h in 1usize..12, seed in any::<u64>(), scale in 0.01f64..5.0) {
        let head = TowerHead::new(d, h, scale, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (a, b) = (randn(&mut rng, d), randn(&mut rng, d));
        let x = head.hidden_activations(&a, &b).unwrap();
        prop_assert_eq!(x.len(), h);
        prop_assert!(x.iter().all(|&v| v >= 0.0));
        let p = head.classify(&a, &b).unwrap();
        prop_assert!((p.duplicate + p.not_duplicate - 1.0).abs() < 1e-12);
        prop_assert!(p.duplicate >= 0.0 && p.not_duplicate >= 0.0);
    }
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn schedule_is_piecewise_linear_with_peak_at_warmup(warmup in 1u64..500, extra in 0u64..500, base in 1e-6f64..1.0) {
        let total = warmup + extra;
        let s = Schedule::new(base, warmup, total).unwrap();
        let peak = s.lr_at(warmup);
        prop_assert!((peak - base).abs() <= base * 1e-12);
        for t in 0..=total + 2 {
            prop_assert!(s.lr_at(t) <= peak);
        }
        // constant slope on each side of the peak
        if warmup >= 2 {
            let d1 = s.lr_at(1) - s.lr_at(0);
            let d2 = s.lr_at(warmup) - s.lr_at(warmup - 1);
            prop_assert!((d1 - d2).abs() <= base * 1e-9);
        }
        if extra >= 2 {
            let d1 = s.lr_at(warmup + 1) - s.lr_at(warmup);
            let d2 = s.lr_at(total) - s.lr_at(total - 1);
            prop_assert!((d1 - d2).abs() <= base * 1e-9);
        }
        if extra > 0 {
            prop_assert_eq!(s.lr_at(total), 0.0);
        }
    }

    #[test]
    fn adam_first_step_ignores_gradient_scale(grads in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 1e-5f64..1e-1) {
        prop_assume!(grads.iter().all(|g| g.abs() > 0.05));
        let cfg = AdamConfig::default();
        let mut a = vec![0.5; grads.len()];
        let mut b = a.clone();
        let scaled: Vec<f64> = grads.iter().map(|g| 10.0 * g).collect();
        adam_step(&mut a, &grads, &mut AdamMoments::default(), 1, lr, &cfg);
        adam_step(&mut b, &scaled, &mut AdamMoments::default(), 1, lr, &cfg);
        for (x, y) in a.iter().zip(&b) {
            let (ux, uy) = (x - 0.5, y - 0.5);
            prop_assert!((ux - uy).abs() <= 1e-6 * ux.abs());
        }
    }

    #[test]
    fn bootstrap_interval_contains_point_estimate(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..60)) {
        let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let r = metrics_with(&p, &l, 200, 0).unwrap();
        prop_assert!(r.ci_low <= r.accuracy && r.accuracy <= r.ci_high);
        prop_assert!(r.f1_ci_low <= r.f1 && r.f1 <= r.f1_ci_high);
    }

    #[test]
    fn flat_search_equals_brute_force(n in 1usize..60, d in 1usize..6, k in 0usize..70, seed in any::<u64>(), normalized in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ix = EmbeddingIndex::new(d, normalized);
        let mut rows = Vec::new();
        for i in 0..n {
            let v = randn(&mut rng, d);
            ix.insert(i as i64 * 3 + 1, &v).unwrap();
            rows.push((i as i64 * 3 + 1, v));
        }
        let q = randn(&mut rng, d);
        let unit = |v: &[f64]| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| if norm == 0.0 { *x } else { x / norm }).collect::<Vec<_>>()
        };
        let qq = if normalized { unit(&q) } else { q.clone() };
        let mut brute: Vec<(i64, f64)> = rows
            .iter()
            .map(|(id, v)| {
                let v = if normalized { unit(v) } else { v.clone() };
                (*id, v.iter().zip(&qq).map(|(a, b)| a * b).sum())
            })
            .collect();
        let truth: HashMap<i64, f64> = brute.iter().copied().collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        brute.truncate(k);
        let got: Vec<(i64, f64)> = ix.search(&q, k).unwrap().iter().map(|h| (h.question_id, h.similarity)).collect();
        prop_assert_eq!(got.len(), brute.len());
        let distinct: HashSet<i64> = got.iter().map(|g| g.0).collect();
        prop_assert_eq!(distinct.len(), got.len());
        for (g, b) in got.iter().zip(&brute) {
            // rank-wise scores agree, and each returned id really has its score
            prop_assert!((g.1 - b.1).abs() < 1e-12, "{:?} vs {:?}", got, brute);
            prop_assert!((truth[&g.0] - g.1).abs() < 1e-12);
        }
    }
}

#[test]
fn bootstrap_width_shrinks_with_sample_size() {
    let width = |n: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
        let preds: Vec<u8> = labels
            .iter()
            .map(|&l| if rng.gen_bool(0.75) { l } else { 1 - l })
            .collect();
        let r = metrics(&preds, &labels).unwrap();
        r.ci_high - r.ci_low
    };
    let mut narrower = 0;
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..20 {
        let (a, b) = (width(100, seed), width(10_000, seed));
        small += a;
        large += b;
        narrower += (b < a) as usize;
    }
    assert_eq!(narrower, 20);
    assert!(large < small / 5.0);
}
