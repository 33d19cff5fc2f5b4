//! Acceptance suite: one test per claim, each printing a PASS line with the
//! measured values. Run with `cargo test --test acceptance -- --nocapture`
//! to see the numbers.
//!
//! The tests share a gate mutex so the wall-clock measurements in the
//! efficiency criterion never overlap another CPU-heavy test.

use std::sync::Mutex;

use lrdwm_core::baselines::build_inverse_table;
use lrdwm_core::bench::{run_detectability, run_efficiency, run_robustness, BenchContext, ExperimentConfig};
use lrdwm_core::corpus::{CorpusParams, MarkovChain};
use lrdwm_core::decode::{decode, Sampler};
use lrdwm_core::detector::{calibrate_null, detect, detect_many, MaskCache};
use lrdwm_core::inject::{inject, InjectorConfig};
use lrdwm_core::model::train_base_model;
use lrdwm_core::rng::{derive_seed, Mix64Stream};
use lrdwm_core::schedule::{make_schedule, Schedule, ScheduleKind};
use lrdwm_core::state::SequenceState;
use lrdwm_core::vocab::{green_mask, GreenMaskBuilder, Vocabulary, WatermarkKey};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|p| p.into_inner())
}

/// Criterion 1: over >= 10^6 i.i.d. uniform token triples at |V| = 64,
/// gamma = 0.5, the ternary score has mean within 0.003 of 0 and variance
/// within 0.01 of 1/2.
#[test]
fn criterion_1_null_moments() {
    let _g = gate();
    let start = std::time::Instant::now();
    let vocab = Vocabulary::new(64).unwrap();
    let cfg = InjectorConfig::new(
        WatermarkKey(0x1CE0_2244_66AA_0001),
        WatermarkKey(0x0DD0_1133_55BB_0002),
        2.0,
        0.5,
    )
    .unwrap();
    let cache = MaskCache::new(&cfg, &vocab).unwrap();
    let n = 1_000_000u64;
    let mut rng = Mix64Stream::new(0xACCE_0001);
    let mut sum = 0i64;
    let mut sq = 0i64;
    for _ in 0..n {
        let a = rng.next_below(64) as u32;
        let x = rng.next_below(64) as u32;
        let b = rng.next_below(64) as u32;
        let s = cache.left_mask(a).is_green(x).unwrap() as i64
            + cache.right_mask(b).is_green(x).unwrap() as i64
            - 1;
        sum += s;
        sq += s * s;
    }
    let mean = sum as f64 / n as f64;
    let var = sq as f64 / n as f64 - mean * mean;
    let secs = start.elapsed().as_secs_f64();
    assert!(mean.abs() <= 0.003, "mean(s) = {mean}");
    assert!((var - 0.5).abs() <= 0.01, "var(s) = {var}");
    assert!(secs < 60.0, "runtime {secs:.1}s exceeds 1 minute");
    println!(
        "[PASS] criterion 1 (null moments): mean(s) = {mean:+.5} (|.| <= 0.003), \
         var(s) = {var:.5} (within 0.01 of 0.5), {n} triples in {secs:.1}s"
    );
}

/// Criterion 2: calibrate on 10,000 unwatermarked sequences of length 400;
/// on a disjoint 10,000-sequence null set the empirical FPR at the 1%
/// threshold lies in [0.6%, 1.6%].
#[test]
fn criterion_2_fpr_calibration() {
    let _g = gate();
    let start = std::time::Instant::now();
    let params = CorpusParams {
        vocab_size: 256,
        sequences: 1,
        seq_len: 400,
        branching: 8,
        dominance: 0.65,
        seed: 0xCA11_B001,
    };
    let chain = MarkovChain::build(&params).unwrap();
    let vocab = Vocabulary::new(256).unwrap();
    let cal_corpus: Vec<Vec<u32>> = (0..10_000u64)
        .map(|i| chain.sample_sequence(400, derive_seed(0xCA11_0001, "cal", i)))
        .collect();
    let eval_corpus: Vec<Vec<u32>> = (0..10_000u64)
        .map(|i| chain.sample_sequence(400, derive_seed(0xCA11_0002, "eval", i)))
        .collect();
    let cfg = InjectorConfig::new(
        WatermarkKey(0xFEED_0000_0000_0001),
        WatermarkKey(0xFEED_0000_0000_0002),
        2.0,
        0.5,
    )
    .unwrap();
    let cal = calibrate_null(&cal_corpus, &cfg, &vocab, &[0.05, 0.01]).unwrap();
    let dets = detect_many(&eval_corpus, &cfg, &vocab, &cal, 0.01).unwrap();
    let fpr = dets.iter().filter(|d| d.decision).count() as f64 / dets.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    assert!(
        (0.006..=0.016).contains(&fpr),
        "disjoint-set FPR {fpr} outside [0.6%, 1.6%]"
    );
    assert!(secs < 600.0, "runtime {secs:.1}s exceeds 10 minutes");
    println!(
        "[PASS] criterion 2 (FPR calibration): sigma2 = {:.4}, 1% threshold = {:.4} \
         (gaussian {:.4}), disjoint FPR = {:.4} in [0.006, 0.016], {secs:.1}s",
        cal.sigma2,
        cal.threshold_for(0.01).unwrap(),
        cal.thresholds
            .iter()
            .find(|t| t.fpr == 0.01)
            .unwrap()
            .gaussian_z,
        fpr
    );
}

/// Criterion 3: at L = 300, S = 300, random-order schedule, greedy decode,
/// some delta <= 6 reaches TPR@1%FPR >= 0.99 over 600 generations, and TPR
/// is nondecreasing over the delta grid {0, 0.5, 1, 2, 4, 6} within 3-sigma
/// binomial slack.
#[test]
fn criterion_3_detectability_saturation() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut cfg = ExperimentConfig::with_seed(0xACCE_0003);
    cfg.methods = vec!["lr".into()];
    cfg.generation.gen_len = 300;
    cfg.generation.steps = Some(300);
    cfg.generation.schedule = "random".into();
    cfg.generation.temperature = 0.0;
    cfg.detectability.count = 600;
    cfg.detectability.null_count = 5000;
    cfg.detectability.deltas = vec![0.0, 0.5, 1.0, 2.0, 4.0, 6.0];
    cfg.detectability.target_fprs = vec![0.01];
    let ctx = BenchContext::new(cfg).unwrap();
    let rows = run_detectability(&ctx).unwrap();
    let grid: Vec<(f64, f64, usize)> = rows
        .iter()
        .map(|r| (r.delta, r.tpr_at_fpr.unwrap(), r.n))
        .collect();
    let saturated = grid.iter().find(|(_, tpr, _)| *tpr >= 0.99);
    assert!(
        saturated.is_some(),
        "no delta <= 6 reached TPR >= 0.99: {grid:?}"
    );
    for w in grid.windows(2) {
        let (d1, p1, n1) = w[0];
        let (d2, p2, n2) = w[1];
        let pooled = (p1 * n1 as f64 + p2 * n2 as f64) / (n1 + n2) as f64;
        let sigma = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
        assert!(
            p2 >= p1 - 3.0 * sigma,
            "TPR dropped from {p1} (delta {d1}) to {p2} (delta {d2}) beyond 3 sigma"
        );
    }
    // Embedded null-side sanity (>= 2000 null sequences).
    for r in &rows {
        assert_eq!(r.null_fpr_ok, Some(true), "null sanity failed: {r:?}");
    }
    let secs = start.elapsed().as_secs_f64();
    let (sat_delta, sat_tpr, _) = saturated.unwrap();
    println!(
        "[PASS] criterion 3 (detectability saturation): TPR grid {:?}, \
         saturation at delta = {sat_delta} (TPR = {sat_tpr:.4}), {secs:.1}s",
        grid.iter()
            .map(|(d, p, _)| format!("{d}:{p:.3}"))
            .collect::<Vec<_>>()
    );
}

/// Criterion 4: for 100 seeded cases where random-order and block schedules
/// yield identical final sequences (forced via a near-deterministic corpus),
/// the DetectionResult is bit-identical. Zero tolerance.
#[test]
fn criterion_4_schedule_agnostic_detection() {
    let _g = gate();
    let start = std::time::Instant::now();
    let vocab = Vocabulary::new(32).unwrap();
    let total_len = 40usize;
    let null: Vec<Vec<u32>> = (0..200u64)
        .map(|i| {
            let mut rng = Mix64Stream::new(derive_seed(0xACCE_0004, "null", i));
            (0..total_len).map(|_| rng.next_below(32) as u32).collect()
        })
        .collect();
    let mut differing_orders = 0usize;
    for case in 0..100u64 {
        let m = (derive_seed(0xACCE_0004, "dominant", case) % 32) as u32;
        let a = {
            let c = (derive_seed(0xACCE_0004, "prefix", case) % 32) as u32;
            if c == m {
                (c + 1) % 32
            } else {
                c
            }
        };
        // Near-deterministic corpus: every context overwhelmingly continues
        // with token m; the prefix token a is seen transitioning into m.
        let mut corpus = vec![vec![m; 60]; 30];
        let mut lead = vec![a];
        lead.extend(vec![m; 59]);
        corpus.push(lead);
        let model = train_base_model(&corpus, 3, 1e-4, &vocab).unwrap();
        let keys = InjectorConfig::new(
            WatermarkKey(derive_seed(0xACCE_0004, "kl", case)),
            WatermarkKey(derive_seed(0xACCE_0004, "kr", case)),
            1.0,
            0.5,
        )
        .unwrap();
        let prompt = [a, m];
        let sched_seed = derive_seed(0xACCE_0004, "sched", case);
        let random = make_schedule(ScheduleKind::RandomOrder, total_len, 2, 38, None, sched_seed)
            .unwrap();
        let block =
            make_schedule(ScheduleKind::Block, total_len, 2, 38, Some(8), sched_seed).unwrap();
        let run = |s: &Schedule| {
            let mut inj =
                lrdwm_core::inject::LrInjector::new(keys, vocab.clone()).unwrap();
            decode(&model, &prompt, s, Sampler::Greedy, Some(&mut inj), case).unwrap()
        };
        let out_r = run(&random);
        let out_b = run(&block);
        if out_r.audit.realized_steps != out_b.audit.realized_steps {
            differing_orders += 1;
        }
        // Forcing precondition: the two schedules converged on the same
        // final sequence.
        assert_eq!(
            out_r.state.tokens(),
            out_b.state.tokens(),
            "case {case}: near-deterministic corpus failed to force equality"
        );
        // Shared calibration (content irrelevant; identical for both arms).
        let cal = calibrate_null(&null, &keys, &vocab, &[0.05]).unwrap();
        let det_r = detect(out_r.state.tokens(), &keys, &vocab, &cal, 0.05).unwrap();
        let det_b = detect(out_b.state.tokens(), &keys, &vocab, &cal, 0.05).unwrap();
        assert_eq!(det_r, det_b, "case {case}: DetectionResult differs");
        assert_eq!(
            serde_json::to_string(&det_r).unwrap(),
            serde_json::to_string(&det_b).unwrap(),
            "case {case}: serialized DetectionResult differs"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 4 (schedule-agnostic detection): 100/100 cases bit-identical \
         ({differing_orders} with genuinely different reveal orders), {secs:.1}s"
    );
}

mod oracle {
    //! Brute-force per-step argmax reference, independent of the decode
    //! implementation: counts come straight from the corpus and the reveal
    //! state is tracked in a plain Option vector.

    pub struct CountOracle {
        pub n: usize,
        pub alpha: f64,
        pub order: usize,
        pub unigram: Vec<u64>,
        pub total: u64,
        /// pairs[d-1][a][b] = count of (a, b) at distance d.
        pub pairs: Vec<Vec<Vec<u64>>>,
    }

    impl CountOracle {
        pub fn train(corpus: &[Vec<u32>], order: usize, alpha: f64, n: usize) -> Self {
            let mut unigram = vec![0u64; n];
            let mut pairs = vec![vec![vec![0u64; n]; n]; order - 1];
            for seq in corpus {
                for &t in seq {
                    unigram[t as usize] += 1;
                }
                for (di, table) in pairs.iter_mut().enumerate() {
                    let d = di + 1;
                    for i in 0..seq.len().saturating_sub(d) {
                        table[seq[i] as usize][seq[i + d] as usize] += 1;
                    }
                }
            }
            let total = unigram.iter().sum();
            Self {
                n,
                alpha,
                order,
                unigram,
                total,
                pairs,
            }
        }

        fn row_sum(&self, d: usize, a: u32) -> u64 {
            self.pairs[d - 1][a as usize].iter().sum()
        }

        /// Normalized probabilities following the documented combination:
        /// left factor (or unigram), right factor, normalize.
        pub fn probs(
            &self,
            left: Option<(u32, usize)>,
            right: Option<(u32, usize)>,
        ) -> Vec<f64> {
            let n = self.n;
            let mut w = vec![0.0f64; n];
            match left {
                Some((a, dl)) => {
                    let d = dl.min(self.order - 1);
                    let inv = 1.0 / (self.row_sum(d, a) as f64 + self.alpha * n as f64);
                    for (v, wv) in w.iter_mut().enumerate() {
                        *wv = (self.pairs[d - 1][a as usize][v] as f64 + self.alpha) * inv;
                    }
                }
                None => {
                    let denom = self.total as f64 + self.alpha * n as f64;
                    for (v, wv) in w.iter_mut().enumerate() {
                        *wv = (self.unigram[v] as f64 + self.alpha) / denom;
                    }
                }
            }
            if let Some((b, dr)) = right {
                let d = dr.min(self.order - 1);
                for (v, wv) in w.iter_mut().enumerate() {
                    let inv = 1.0 / (self.row_sum(d, v as u32) as f64 + self.alpha * n as f64);
                    *wv *= (self.pairs[d - 1][v][b as usize] as f64 + self.alpha) * inv;
                }
            }
            let sum: f64 = w.iter().sum();
            let inv_sum = 1.0 / sum;
            for wv in &mut w {
                *wv *= inv_sum;
            }
            w
        }
    }

    pub fn nearest_left(state: &[Option<u32>], pos: usize) -> Option<(u32, usize)> {
        (0..pos)
            .rev()
            .find_map(|p| state[p].map(|t| (t, pos - p)))
    }

    pub fn nearest_right(state: &[Option<u32>], pos: usize) -> Option<(u32, usize)> {
        (pos + 1..state.len()).find_map(|p| state[p].map(|t| (t, p - pos)))
    }

    pub fn argmax(xs: &[f64]) -> usize {
        let mut best = 0;
        let mut bv = f64::NEG_INFINITY;
        for (i, &x) in xs.iter().enumerate() {
            if x > bv {
                bv = x;
                best = i;
            }
        }
        best
    }
}

/// Criterion 5: greedy decode with delta = 0 matches a brute-force per-step
/// argmax reference on 200 seeded instances with L <= 12, |V| <= 16. Zero
/// tolerance.
#[test]
fn criterion_5_oracle_equivalence() {
    let _g = gate();
    let start = std::time::Instant::now();
    for case in 0..200u64 {
        let mut rng = Mix64Stream::new(derive_seed(0xACCE_0005, "case", case));
        let n = 8 + rng.next_below(9) as usize; // |V| in [8, 16]
        let total_len = 6 + rng.next_below(7) as usize; // L in [6, 12]
        let prompt_len = 1 + rng.next_below(2) as usize;
        let order = 2 + rng.next_below(2) as usize;
        let alpha = [1e-3, 0.05, 0.5][rng.next_below(3) as usize];
        let kind = [
            ScheduleKind::RandomOrder,
            ScheduleKind::Block,
            ScheduleKind::Confidence,
        ][rng.next_below(3) as usize];
        let gen_len = total_len - prompt_len;
        let steps = 1 + rng.next_below(gen_len as u64) as usize;
        let vocab = Vocabulary::new(n).unwrap();
        let params = CorpusParams {
            vocab_size: n,
            sequences: 6,
            seq_len: 30,
            branching: 1 + rng.next_below(3) as usize,
            dominance: 0.4 + 0.6 * rng.next_f64(),
            seed: derive_seed(0xACCE_0005, "corpus", case),
        };
        let corpus = lrdwm_core::corpus::generate_corpus(&params).unwrap();
        let model = train_base_model(&corpus, order, alpha, &vocab).unwrap();
        let prompt: Vec<u32> = (0..prompt_len)
            .map(|_| rng.next_below(n as u64) as u32)
            .collect();
        let schedule = make_schedule(
            kind,
            total_len,
            prompt_len,
            steps,
            Some(1 + rng.next_below(4) as usize),
            derive_seed(0xACCE_0005, "sched", case),
        )
        .unwrap();

        let out = decode(&model, &prompt, &schedule, Sampler::Greedy, None, case).unwrap();

        // Independent replay: corpus counts, plain Option state, documented
        // combination formula, greedy argmax, lowest-index ties.
        let oracle = oracle::CountOracle::train(&corpus, order, alpha, n);
        let mut state: Vec<Option<u32>> = vec![None; total_len];
        for (i, &p) in prompt.iter().enumerate() {
            state[i] = Some(p);
        }
        for step in 0..steps {
            let mut selected: Vec<usize> = match schedule.step_positions(step) {
                Some(s) => s.to_vec(),
                None => {
                    // Confidence: rank masked positions by max normalized
                    // probability, ties toward the lowest index.
                    let quota = schedule.confidence_quota(step);
                    let mut ranked: Vec<(usize, f64)> = (prompt_len..total_len)
                        .filter(|&p| state[p].is_none())
                        .map(|p| {
                            let probs = oracle.probs(
                                oracle::nearest_left(&state, p),
                                oracle::nearest_right(&state, p),
                            );
                            (p, probs.iter().cloned().fold(f64::MIN, f64::max))
                        })
                        .collect();
                    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    ranked.truncate(quota);
                    ranked.into_iter().map(|(p, _)| p).collect()
                }
            };
            selected.sort_unstable();
            for pos in selected {
                let probs = oracle.probs(
                    oracle::nearest_left(&state, pos),
                    oracle::nearest_right(&state, pos),
                );
                state[pos] = Some(oracle::argmax(&probs) as u32);
            }
        }
        let expect: Vec<u32> = state.into_iter().map(Option::unwrap).collect();
        assert_eq!(
            out.state.tokens(),
            &expect[..],
            "case {case}: n={n} L={total_len} order={order} kind={kind:?} steps={steps}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 5 (oracle equivalence): 200/200 greedy decodes match the \
         count-based per-step argmax reference exactly, {secs:.1}s"
    );
}

/// Criterion 6: inverse-table cells verified exhaustively at |V| <= 256, and
/// memory accounting scales as |V|^2: bytes(4096) / bytes(1024) = 16 +- 5%.
#[test]
fn criterion_6_inverse_table() {
    let _g = gate();
    let start = std::time::Instant::now();
    let key = WatermarkKey(0xACCE_0006_0000_0001);
    for n in [64usize, 256] {
        let vocab = Vocabulary::new(n).unwrap();
        let table = build_inverse_table(key, &vocab, 0.5).unwrap();
        let mut builder = GreenMaskBuilder::new();
        for ctx in 0..n as u32 {
            let mask = builder.build(ctx, key, &vocab, 0.5).unwrap();
            for target in 0..n as u32 {
                assert_eq!(
                    table.makes_green(target, ctx),
                    mask.is_green(target).unwrap(),
                    "|V|={n} target={target} ctx={ctx}"
                );
            }
        }
    }
    let t1k = build_inverse_table(key, &Vocabulary::new(1024).unwrap(), 0.5).unwrap();
    let t4k = build_inverse_table(key, &Vocabulary::new(4096).unwrap(), 0.5).unwrap();
    let ratio = t4k.memory_bytes as f64 / t1k.memory_bytes as f64;
    assert!(
        (ratio - 16.0).abs() / 16.0 <= 0.05,
        "memory ratio {ratio} not within 5% of 16"
    );
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 6 (inverse table): cells exact at |V| = 64 and 256; \
         bytes(4096)/bytes(1024) = {ratio:.3} (within 5% of 16), {secs:.1}s"
    );
}

/// Criterion 7: at |V| = 4096, L = 300, the two-sided watermark costs at
/// most 1.10x the unwatermarked baseline in median wall-clock (>= 50
/// sequences after warmup) and at most 1 MiB of accounted memory overhead.
#[test]
fn criterion_7_efficiency_overhead() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut cfg = ExperimentConfig::with_seed(0xACCE_0007);
    cfg.methods = vec!["lr".into(), "none".into()];
    cfg.generation.gen_len = 300;
    cfg.generation.steps = Some(300);
    cfg.efficiency.vocab_size = 4096;
    cfg.efficiency.sequences = 50;
    cfg.efficiency.warmup = 5;
    cfg.efficiency.single_thread = true;
    cfg.detectability.count = 0;
    cfg.quality.enabled = false;
    cfg.robustness.enabled = false;
    let ctx = BenchContext::new(cfg).unwrap();
    let rows = run_efficiency(&ctx).unwrap();
    let lr = rows.iter().find(|r| r.method == "lr").unwrap();
    let none = rows.iter().find(|r| r.method == "none").unwrap();
    let ratio = lr.gen_time_ms.unwrap() / none.gen_time_ms.unwrap();
    let overhead = lr.peak_mem_bytes.unwrap() - none.peak_mem_bytes.unwrap();
    assert!(
        ratio <= 1.10,
        "median wall-clock ratio {ratio:.4} exceeds 1.10 (lr {:.2}ms vs none {:.2}ms)",
        lr.gen_time_ms.unwrap(),
        none.gen_time_ms.unwrap()
    );
    assert!(
        overhead <= 1 << 20,
        "accounted memory overhead {overhead} bytes exceeds 1 MiB"
    );
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 7 (efficiency): median {:.1}ms (lr) vs {:.1}ms (none), \
         ratio {ratio:.4} <= 1.10; accounted overhead {overhead} bytes <= 1 MiB, {secs:.1}s",
        lr.gen_time_ms.unwrap(),
        none.gen_time_ms.unwrap()
    );
}

/// Criterion 8: at an operating delta reaching 100% clean TPR, 10% deletion
/// keeps TPR >= 0.90; TPR strictly decreases from 10% to 50% for both
/// deletion and substitution; and the mean-Z drop at 10% deletion does not
/// exceed the drop at 30%.
#[test]
fn criterion_8_robustness_trend() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut cfg = ExperimentConfig::with_seed(0xACCE_0008);
    cfg.methods = vec!["lr".into()];
    cfg.generation.gen_len = 300;
    cfg.generation.steps = Some(300);
    cfg.detectability.null_count = 5000;
    cfg.detectability.target_fprs = vec![0.01];
    cfg.robustness.count = 600;
    cfg.robustness.kinds = vec!["delete".into(), "substitute".into()];
    cfg.robustness.intensities = vec![0.1, 0.3, 0.5];
    cfg.robustness.operating_deltas = vec![4.0, 6.0];
    cfg.quality.enabled = false;
    cfg.efficiency.enabled = false;
    let ctx = BenchContext::new(cfg).unwrap();
    let rows = run_robustness(&ctx).unwrap();
    let cell = |kind: &str, p: f64| {
        rows.iter()
            .find(|r| {
                r.attack_kind.as_deref() == Some(kind)
                    && r.attack_p.map(|q| (q - p).abs() < 1e-12).unwrap_or(false)
            })
            .unwrap_or_else(|| panic!("missing cell {kind} {p}"))
    };
    let clean = cell("clean", 0.0);
    assert_eq!(
        clean.tpr_at_fpr,
        Some(1.0),
        "operating point did not reach 100% clean TPR"
    );
    let del10 = cell("delete", 0.1);
    let del30 = cell("delete", 0.3);
    let del50 = cell("delete", 0.5);
    let sub10 = cell("substitute", 0.1);
    let sub50 = cell("substitute", 0.5);
    assert!(
        del10.tpr_at_fpr.unwrap() >= 0.90,
        "TPR at 10% deletion = {:?}",
        del10.tpr_at_fpr
    );
    assert!(
        del50.tpr_at_fpr.unwrap() < del10.tpr_at_fpr.unwrap(),
        "deletion TPR did not strictly decrease 10% -> 50%"
    );
    assert!(
        sub50.tpr_at_fpr.unwrap() < sub10.tpr_at_fpr.unwrap(),
        "substitution TPR did not strictly decrease 10% -> 50%"
    );
    assert!(
        del10.z_drop.unwrap() <= del30.z_drop.unwrap(),
        "Z drop at 10% deletion ({:?}) exceeds drop at 30% ({:?})",
        del10.z_drop,
        del30.z_drop
    );
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 8 (robustness trend): operating delta = {} (clean TPR 1.00, \
         mean Z {:.2}); delete TPR 10/30/50% = {:.3}/{:.3}/{:.3}; substitute 10/50% = \
         {:.3}/{:.3}; Z drops 10/30% deletion = {:.2}/{:.2}; {secs:.1}s",
        clean.delta,
        clean.mean_z.unwrap(),
        del10.tpr_at_fpr.unwrap(),
        del30.tpr_at_fpr.unwrap(),
        del50.tpr_at_fpr.unwrap(),
        sub10.tpr_at_fpr.unwrap(),
        sub50.tpr_at_fpr.unwrap(),
        del10.z_drop.unwrap(),
        del30.z_drop.unwrap()
    );
}

/// Criterion 9: for 10^4 random (logits, state, pos, config) cases, the
/// per-coordinate bias is exactly 0, delta, or 2*delta, with the 2*delta
/// set exactly the intersection of the two green masks. Zero tolerance
/// (bitwise against an independently recomputed expectation).
#[test]
fn criterion_9_injection_arithmetic() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut rng = Mix64Stream::new(0xACCE_0009);
    for case in 0..10_000u64 {
        let n = 8 + rng.next_below(57) as usize; // |V| in [8, 64]
        let vocab = Vocabulary::new(n).unwrap();
        let len = 3 + rng.next_below(8) as usize;
        let prompt = vec![rng.next_below(n as u64) as u32];
        let mut state = SequenceState::new(&prompt, len, &vocab).unwrap();
        for p in 1..len {
            if rng.next_f64() < 0.5 {
                state.reveal(p, rng.next_below(n as u64) as u32).unwrap();
            }
        }
        let masked: Vec<usize> = state.masked_positions().collect();
        if masked.is_empty() {
            continue;
        }
        let pos = masked[rng.next_below(masked.len() as u64) as usize];
        let gamma = [0.25, 0.5, 0.75][rng.next_below(3) as usize];
        let delta = rng.next_f64() * 8.0;
        let cfg = InjectorConfig::new(
            WatermarkKey(rng.next_u64()),
            WatermarkKey(rng.next_u64()),
            delta,
            gamma,
        )
        .unwrap();
        let logits: Vec<f64> = (0..n).map(|_| rng.next_f64() * 20.0 - 10.0).collect();
        let (biased, report) = inject(&logits, &state, pos, &cfg, &vocab).unwrap();

        // Independent expectation from directly constructed masks.
        let left = state.revealed_left(pos).filter(|&t| vocab.contains(t));
        let right = state.revealed_right(pos).filter(|&t| vocab.contains(t));
        assert_eq!(report.left_active, left.is_some(), "case {case}");
        assert_eq!(report.right_active, right.is_some(), "case {case}");
        let gl = left.map(|a| green_mask(a, cfg.key_left, &vocab, gamma).unwrap());
        let gr = right.map(|b| green_mask(b, cfg.key_right, &vocab, gamma).unwrap());
        for v in 0..n as u32 {
            let in_l = gl.as_ref().map(|m| m.is_green(v).unwrap()).unwrap_or(false);
            let in_r = gr.as_ref().map(|m| m.is_green(v).unwrap()).unwrap_or(false);
            let mut expect = logits[v as usize];
            if in_l {
                expect += delta;
            }
            if in_r {
                expect += delta;
            }
            // Bit-exact: the 2-delta coordinates are exactly the mask
            // intersection, the delta coordinates the symmetric difference.
            assert_eq!(
                biased[v as usize].to_bits(),
                expect.to_bits(),
                "case {case}, token {v}: sides ({in_l}, {in_r})"
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 9 (injection arithmetic): 10^4 random cases, per-coordinate \
         bias exactly delta * (left indicator + right indicator), {secs:.1}s"
    );
}
