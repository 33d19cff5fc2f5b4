//! Experiment execution: detectability, quality, efficiency, robustness.
//!
//! All randomness is split from the single experiment seed through tagged
//! derivations, so any grid row can be regenerated in isolation. Generation
//! grids run in parallel; efficiency timing runs sequentially (by default)
//! to keep wall-clock numbers free of contention noise.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{
    build_inverse_table, green_fraction_z, DmarkInjector, InverseTable, LeftOnlyInjector,
};
use crate::corpus::{CorpusParams, MarkovChain};
use crate::decode::{decode, Sampler};
use crate::detector::{
    calibrate_null, empirical_threshold, score_tokens_cached, z_statistic, MaskCache,
    NullCalibration,
};
use crate::error::{Error, Result};
use crate::inject::{InjectorConfig, LrInjector, StepInjector};
use crate::model::{train_base_model, BaseModel};
use crate::rng::derive_seed;
use crate::schedule::{make_schedule, Schedule, ScheduleKind};
use crate::vocab::{Vocabulary, WatermarkKey};

use super::config::ExperimentConfig;
use super::report::{ReportRow, TradeoffRow};
use super::Method;

/// Everything a run needs that is derived once from the config: vocabulary,
/// Markov source, trained model, held-out perplexity oracle, keys, and the
/// shared inverse table when the dmark baseline is enabled.
pub struct BenchContext {
    pub cfg: ExperimentConfig,
    pub digest: String,
    pub vocab: Vocabulary,
    pub chain: MarkovChain,
    pub model: BaseModel,
    pub oracle: BaseModel,
    pub key_left: WatermarkKey,
    pub key_right: WatermarkKey,
    pub dmark_table: Option<Arc<InverseTable>>,
}

impl BenchContext {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let digest = cfg.digest();
        let vocab = Vocabulary::new(cfg.corpus.vocab_size)?;
        let params = CorpusParams {
            vocab_size: cfg.corpus.vocab_size,
            sequences: cfg.corpus.sequences,
            seq_len: cfg.corpus.seq_len,
            branching: cfg.corpus.branching,
            dominance: cfg.corpus.dominance,
            seed: derive_seed(cfg.seed, "bench-chain", 0),
        };
        let chain = MarkovChain::build(&params)?;
        let train = chain.sample_corpus(
            cfg.corpus.sequences,
            cfg.corpus.seq_len,
            derive_seed(cfg.seed, "bench-train", 0),
        );
        let holdout = chain.sample_corpus(
            cfg.corpus.sequences,
            cfg.corpus.seq_len,
            derive_seed(cfg.seed, "bench-holdout", 0),
        );
        let model = train_base_model(&train, cfg.model.order, cfg.model.smoothing, &vocab)?;
        let oracle = train_base_model(&holdout, cfg.model.order, cfg.model.smoothing, &vocab)?;
        let key_left = cfg.key_left()?;
        let key_right = cfg.key_right()?;
        let dmark_table = if cfg.methods.iter().any(|m| m == "dmark") {
            Some(Arc::new(build_inverse_table(key_left, &vocab, cfg.gamma)?))
        } else {
            None
        };
        Ok(Self {
            cfg,
            digest,
            vocab,
            chain,
            model,
            oracle,
            key_left,
            key_right,
            dmark_table,
        })
    }

    pub fn injector_config(&self, delta: f64) -> InjectorConfig {
        InjectorConfig {
            key_left: self.key_left,
            key_right: self.key_right,
            delta,
            gamma: self.cfg.gamma,
        }
    }

    fn schedule_kind(&self) -> ScheduleKind {
        self.cfg
            .generation
            .schedule
            .parse()
            .expect("validated schedule kind")
    }

    fn make_injector(
        &self,
        method: Method,
        delta: f64,
        vocab: &Vocabulary,
        table: Option<&Arc<InverseTable>>,
    ) -> Result<Option<Box<dyn StepInjector>>> {
        Ok(match method {
            Method::NoWm => None,
            Method::Lr => Some(Box::new(LrInjector::new(
                self.injector_config(delta),
                vocab.clone(),
            )?)),
            Method::Left => Some(Box::new(LeftOnlyInjector::new(
                self.key_left,
                delta,
                self.cfg.gamma,
                vocab.clone(),
            )?)),
            Method::Dmark => {
                let table = table
                    .ok_or_else(|| Error::Config("dmark method without inverse table".into()))?;
                Some(Box::new(DmarkInjector::new(
                    Arc::clone(table),
                    self.key_left,
                    delta,
                    vocab.clone(),
                )?))
            }
        })
    }

    fn build_schedule(&self, tag: &str, i: u64, model: &BaseModel) -> Result<(Vec<u32>, Schedule)> {
        let g = &self.cfg.generation;
        let total = g.prompt_len + g.gen_len;
        let prompt = self
            .chain
            .sample_sequence(g.prompt_len, derive_seed(self.cfg.seed, &format!("{tag}-prompt"), i));
        // The chain and the model share the vocabulary size at generation
        // scale; efficiency runs pass their own model over their own chain.
        debug_assert_eq!(model.vocab().size(), self.chain.vocab_size());
        let schedule = make_schedule(
            self.schedule_kind(),
            total,
            g.prompt_len,
            g.steps_or_default(),
            g.block_len,
            derive_seed(self.cfg.seed, &format!("{tag}-sched"), i),
        )?;
        Ok((prompt, schedule))
    }

    /// One seeded generation; returns the full sequence (prompt included)
    /// and the wall-clock cost of schedule + injector + decode.
    pub fn generate(
        &self,
        tag: &str,
        method: Method,
        delta: f64,
        i: u64,
        model: &BaseModel,
        table: Option<&Arc<InverseTable>>,
    ) -> Result<(Vec<u32>, f64)> {
        let g = &self.cfg.generation;
        let (prompt, schedule) = self.build_schedule(tag, i, model)?;
        let sampler = Sampler::from_temperature(g.temperature)?;
        let start = Instant::now();
        let mut injector = self.make_injector(method, delta, model.vocab(), table)?;
        let out = decode(
            model,
            &prompt,
            &schedule,
            sampler,
            injector.as_deref_mut(),
            derive_seed(self.cfg.seed, &format!("{tag}-sample"), i),
        )?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok((out.state.tokens().to_vec(), elapsed_ms))
    }

    /// Unwatermarked sequences standing in for human-written text, at the
    /// generation length so thresholds match the scored span.
    pub fn null_corpus(&self, tag: &str, count: usize) -> Vec<Vec<u32>> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                self.chain.sample_sequence(
                    self.cfg.generation.gen_len,
                    derive_seed(self.cfg.seed, tag, i as u64),
                )
            })
            .collect()
    }

    pub fn passes_filter(&self, continuation: &[u32]) -> bool {
        passes_filter(continuation, self.cfg.filter.max_token_frequency)
    }

    /// Calibrates the detector a method is scored with.
    pub fn calibrate_method(
        &self,
        method: Method,
        null: &[Vec<u32>],
        fprs: &[f64],
    ) -> Result<MethodDetector> {
        let inj_cfg = self.injector_config(0.0);
        let cache = MaskCache::new(&inj_cfg, &self.vocab)?;
        match method {
            Method::Lr | Method::NoWm => {
                let cal = calibrate_null(null, &inj_cfg, &self.vocab, fprs)?;
                Ok(MethodDetector {
                    kind: DetectorKind::Ternary(cal),
                    cache,
                    gamma: self.cfg.gamma,
                })
            }
            Method::Left | Method::Dmark => {
                let mut zs: Vec<f64> = null
                    .par_iter()
                    .map(|seq| green_z_cached(seq, &cache, self.cfg.gamma))
                    .collect::<Result<_>>()?;
                zs.sort_by(|a, b| b.total_cmp(a));
                let thresholds = fprs
                    .iter()
                    .map(|&f| (f, empirical_threshold(&zs, f)))
                    .collect();
                Ok(MethodDetector {
                    kind: DetectorKind::GreenFraction { thresholds },
                    cache,
                    gamma: self.cfg.gamma,
                })
            }
        }
    }
}

/// Degenerate-repetition filter: a sequence passes unless one token exceeds
/// the frequency cap.
pub fn passes_filter(tokens: &[u32], max_token_frequency: f64) -> bool {
    if tokens.is_empty() {
        return false;
    }
    let mut counts = std::collections::HashMap::new();
    for &t in tokens {
        *counts.entry(t).or_insert(0usize) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    (max as f64) <= max_token_frequency * tokens.len() as f64
}

fn green_z_cached(tokens: &[u32], cache: &MaskCache, gamma: f64) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::SequenceTooShort {
            got: tokens.len(),
            min: 2,
        });
    }
    for &t in tokens {
        cache.vocab().check_token(t)?;
    }
    let greens: Vec<bool> = (1..tokens.len())
        .map(|i| cache.left_mask(tokens[i - 1]).test(tokens[i]))
        .collect();
    green_fraction_z(&greens, gamma)
}

enum DetectorKind {
    /// Ternary two-sided statistic with empirical null calibration.
    Ternary(NullCalibration),
    /// Left-context green-fraction z with empirical thresholds.
    GreenFraction { thresholds: Vec<(f64, f64)> },
}

/// A calibrated per-method detector used by the grid runs.
pub struct MethodDetector {
    kind: DetectorKind,
    cache: MaskCache,
    gamma: f64,
}

impl MethodDetector {
    pub fn z_of(&self, tokens: &[u32]) -> Result<f64> {
        match &self.kind {
            DetectorKind::Ternary(cal) => {
                let scores = score_tokens_cached(tokens, &self.cache)?;
                z_statistic(&scores, cal.sigma2)
            }
            DetectorKind::GreenFraction { .. } => green_z_cached(tokens, &self.cache, self.gamma),
        }
    }

    pub fn threshold(&self, fpr: f64) -> Result<f64> {
        match &self.kind {
            DetectorKind::Ternary(cal) => cal.threshold_for(fpr),
            DetectorKind::GreenFraction { thresholds } => thresholds
                .iter()
                .find(|(f, _)| (f - fpr).abs() < 1e-12)
                .map(|&(_, z)| z)
                .ok_or(Error::ThresholdMissing { fpr }),
        }
    }

    pub fn evaluate(&self, tokens: &[u32], fpr: f64) -> Result<(f64, bool)> {
        let z = self.z_of(tokens)?;
        Ok((z, z > self.threshold(fpr)?))
    }

    pub fn calibration(&self) -> Option<&NullCalibration> {
        match &self.kind {
            DetectorKind::Ternary(cal) => Some(cal),
            DetectorKind::GreenFraction { .. } => None,
        }
    }

    /// Empirical FPR of this detector over a null set.
    pub fn null_fpr(&self, null: &[Vec<u32>], fpr: f64) -> Result<f64> {
        let thr = self.threshold(fpr)?;
        let hits = null
            .par_iter()
            .map(|seq| Ok(usize::from(self.z_of(seq)? > thr)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
        Ok(hits as f64 / null.len() as f64)
    }
}

/// Generates the per-(method, delta) batch, filtered, with continuations
/// split out. Returns (full sequences, continuations).
fn generate_batch(
    ctx: &BenchContext,
    tag: &str,
    method: Method,
    delta: f64,
    count: usize,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>)> {
    let prompt_len = ctx.cfg.generation.prompt_len;
    let gens: Vec<Vec<u32>> = (0..count)
        .into_par_iter()
        .map(|i| {
            ctx.generate(
                tag,
                method,
                delta,
                i as u64,
                &ctx.model,
                ctx.dmark_table.as_ref(),
            )
            .map(|(full, _)| full)
        })
        .collect::<Result<_>>()?;
    let mut fulls = Vec::new();
    let mut conts = Vec::new();
    for full in gens {
        let cont = full[prompt_len..].to_vec();
        if ctx.passes_filter(&cont) {
            fulls.push(full);
            conts.push(cont);
        }
    }
    Ok((fulls, conts))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// TPR at each calibrated FPR for every (method, delta) grid point, with a
/// null-side sanity check embedded: the measured FPR on a held-out null set
/// must sit within [0.5x, 2x] of the target (evaluated at N >= 2000).
pub fn run_detectability(ctx: &BenchContext) -> Result<Vec<ReportRow>> {
    let d = &ctx.cfg.detectability;
    let null_cal = ctx.null_corpus("det-null-cal", d.null_count);
    let null_eval = ctx.null_corpus("det-null-eval", d.null_count);
    let mut rows = Vec::new();
    for method_name in &ctx.cfg.methods {
        let method = Method::parse(method_name)?;
        let det = ctx.calibrate_method(method, &null_cal, &d.target_fprs)?;
        let null_fprs: Vec<(f64, f64)> = d
            .target_fprs
            .iter()
            .map(|&f| Ok((f, det.null_fpr(&null_eval, f)?)))
            .collect::<Result<_>>()?;
        for &delta in &d.deltas {
            let tag = format!("det-{method_name}-{delta}");
            let (_, conts) = generate_batch(ctx, &tag, method, delta, d.count)?;
            let zs: Vec<f64> = conts
                .par_iter()
                .map(|c| det.z_of(c))
                .collect::<Result<_>>()?;
            for &fpr in &d.target_fprs {
                let thr = det.threshold(fpr)?;
                let tpr = zs.iter().filter(|&&z| z > thr).count() as f64 / zs.len().max(1) as f64;
                let measured = null_fprs
                    .iter()
                    .find(|(f, _)| (f - fpr).abs() < 1e-12)
                    .map(|&(_, m)| m)
                    .unwrap();
                let mut row = ReportRow::new(
                    "detectability",
                    method_name,
                    delta,
                    conts.len(),
                    &ctx.digest,
                    ctx.cfg.seed,
                );
                row.target_fpr = Some(fpr);
                row.tpr_at_fpr = Some(tpr);
                row.mean_z = Some(mean(&zs));
                row.null_fpr_measured = Some(measured);
                row.null_fpr_ok = (null_eval.len() >= 2000)
                    .then(|| measured >= 0.5 * fpr && measured <= 2.0 * fpr);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Perplexity (under the held-out oracle) against detectability for each
/// grid point, plus the operating-point tradeoff table.
pub fn run_quality(ctx: &BenchContext) -> Result<(Vec<ReportRow>, Vec<TradeoffRow>)> {
    let q = &ctx.cfg.quality;
    let d = &ctx.cfg.detectability;
    if !q.enabled {
        return Ok((Vec::new(), Vec::new()));
    }
    let quality_fpr = d
        .target_fprs
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min);
    let null_cal = ctx.null_corpus("qual-null", d.null_count);
    let prompt_len = ctx.cfg.generation.prompt_len;
    let mut rows = Vec::new();
    let mut tradeoff = Vec::new();
    for method_name in &ctx.cfg.methods {
        let method = Method::parse(method_name)?;
        let det = ctx.calibrate_method(method, &null_cal, &[quality_fpr])?;
        let mut per_delta: Vec<(f64, f64, f64, f64)> = Vec::new(); // delta, tpr, ppl, sem
        for &delta in &d.deltas {
            let tag = format!("qual-{method_name}-{delta}");
            let (fulls, conts) = generate_batch(ctx, &tag, method, delta, q.count)?;
            let thr = det.threshold(quality_fpr)?;
            let zs: Vec<f64> = conts
                .par_iter()
                .map(|c| det.z_of(c))
                .collect::<Result<_>>()?;
            let tpr = zs.iter().filter(|&&z| z > thr).count() as f64 / zs.len().max(1) as f64;
            let ppls: Vec<f64> = fulls
                .par_iter()
                .map(|full| ctx.oracle.sequence_ppl(full, prompt_len))
                .collect::<Result<_>>()?;
            let geo = (ppls.iter().map(|p| p.ln()).sum::<f64>() / ppls.len().max(1) as f64).exp();
            let sem = if ppls.len() > 1 {
                let m = mean(&ppls);
                (ppls.iter().map(|p| (p - m) * (p - m)).sum::<f64>()
                    / (ppls.len() - 1) as f64)
                    .sqrt()
                    / (ppls.len() as f64).sqrt()
            } else {
                0.0
            };
            let mut row = ReportRow::new(
                "quality",
                method_name,
                delta,
                conts.len(),
                &ctx.digest,
                ctx.cfg.seed,
            );
            row.target_fpr = Some(quality_fpr);
            row.tpr_at_fpr = Some(tpr);
            row.mean_z = Some(mean(&zs));
            row.mean_ppl = Some(geo);
            row.ppl_sem = Some(sem);
            rows.push(row);
            per_delta.push((delta, tpr, geo, sem));
        }
        // Operating anchors: smallest delta reaching each target rate.
        for &(delta, tpr, ppl, sem) in &per_delta {
            let operating = q
                .tradeoff_tprs
                .iter()
                .find(|&&target| {
                    tpr >= target
                        && per_delta
                            .iter()
                            .all(|&(d2, t2, _, _)| d2 >= delta || t2 < target)
                })
                .copied();
            tradeoff.push(TradeoffRow {
                method: method_name.clone(),
                delta,
                tpr_at_fpr: tpr,
                target_fpr: quality_fpr,
                mean_ppl: ppl,
                ppl_sem: sem,
                operating_tpr: operating,
            });
        }
    }
    Ok((rows, tradeoff))
}

/// Median wall-clock per generated sequence and accounted peak memory per
/// method, at the efficiency-scale vocabulary. The unwatermarked baseline is
/// always included for reference.
pub fn run_efficiency(ctx: &BenchContext) -> Result<Vec<ReportRow>> {
    let e = &ctx.cfg.efficiency;
    if !e.enabled {
        return Ok(Vec::new());
    }
    let vocab = Vocabulary::new(e.vocab_size)?;
    let params = CorpusParams {
        vocab_size: e.vocab_size,
        sequences: ctx.cfg.corpus.sequences,
        seq_len: ctx.cfg.corpus.seq_len,
        branching: ctx.cfg.corpus.branching,
        dominance: ctx.cfg.corpus.dominance,
        seed: derive_seed(ctx.cfg.seed, "eff-chain", 0),
    };
    let chain = MarkovChain::build(&params)?;
    let corpus = chain.sample_corpus(
        params.sequences,
        params.seq_len,
        derive_seed(ctx.cfg.seed, "eff-train", 0),
    );
    let model = train_base_model(&corpus, ctx.cfg.model.order, ctx.cfg.model.smoothing, &vocab)?;
    let table = if ctx.cfg.methods.iter().any(|m| m == "dmark") {
        Some(Arc::new(build_inverse_table(
            ctx.key_left,
            &vocab,
            ctx.cfg.gamma,
        )?))
    } else {
        None
    };
    let g = &ctx.cfg.generation;
    let total_len = g.prompt_len + g.gen_len;
    // Accounted baseline: model tables + sequence state + denoiser buffers.
    let baseline_bytes = model.accounted_bytes()
        + (total_len * (4 + 1)) as u64
        + (e.vocab_size * 8) as u64;

    let mut methods: Vec<String> = ctx.cfg.methods.clone();
    if !methods.iter().any(|m| m == "none") {
        methods.push("none".into());
    }

    let mut rows = Vec::new();
    for method_name in &methods {
        let method = Method::parse(method_name)?;
        let delta = if method == Method::NoWm { 0.0 } else { e.delta };
        let gen_one = |i: u64| -> Result<f64> {
            let (prompt, schedule) = {
                let gsec = &ctx.cfg.generation;
                let prompt = chain.sample_sequence(
                    gsec.prompt_len,
                    derive_seed(ctx.cfg.seed, "eff-prompt", i),
                );
                let schedule = make_schedule(
                    ctx.cfg.generation.schedule.parse()?,
                    total_len,
                    gsec.prompt_len,
                    gsec.steps_or_default(),
                    gsec.block_len,
                    derive_seed(ctx.cfg.seed, "eff-sched", i),
                )?;
                (prompt, schedule)
            };
            let sampler = Sampler::from_temperature(g.temperature)?;
            let start = Instant::now();
            let mut injector = ctx.make_injector(method, delta, &vocab, table.as_ref())?;
            decode(
                &model,
                &prompt,
                &schedule,
                sampler,
                injector.as_deref_mut(),
                derive_seed(ctx.cfg.seed, "eff-sample", i),
            )?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        };

        for w in 0..e.warmup {
            gen_one(1_000_000 + w as u64)?;
        }
        let mut times: Vec<f64> = if e.single_thread {
            (0..e.sequences)
                .map(|i| gen_one(i as u64))
                .collect::<Result<_>>()?
        } else {
            (0..e.sequences)
                .into_par_iter()
                .map(|i| gen_one(i as u64))
                .collect::<Result<_>>()?
        };
        let med = median(&mut times);

        let overhead = ctx
            .make_injector(method, delta, &vocab, table.as_ref())?
            .map(|inj| inj.accounted_overhead_bytes())
            .unwrap_or(0);
        let mut row = ReportRow::new(
            "efficiency",
            method_name,
            delta,
            e.sequences,
            &ctx.digest,
            ctx.cfg.seed,
        );
        row.gen_time_ms = Some(med);
        row.peak_mem_bytes = Some(baseline_bytes + overhead);
        rows.push(row);
    }
    Ok(rows)
}

/// Robustness grid for the two-sided watermark: find an operating delta that
/// detects all clean sequences, then measure detection and Z decay under
/// each configured attack cell.
pub fn run_robustness(ctx: &BenchContext) -> Result<Vec<ReportRow>> {
    let r = &ctx.cfg.robustness;
    if !r.enabled {
        return Ok(Vec::new());
    }
    let d = &ctx.cfg.detectability;
    let fpr = if d.target_fprs.iter().any(|f| (f - 0.01).abs() < 1e-12) {
        0.01
    } else {
        d.target_fprs.iter().cloned().fold(f64::MAX, f64::min)
    };
    let null_cal = ctx.null_corpus("rob-null", d.null_count);
    let det = ctx.calibrate_method(Method::Lr, &null_cal, &[fpr])?;
    let thr = det.threshold(fpr)?;

    // Operating-point search: smallest candidate delta with TPR = 1.
    let mut chosen: Option<(f64, Vec<Vec<u32>>, Vec<f64>)> = None;
    let mut best: Option<(f64, f64, Vec<Vec<u32>>, Vec<f64>)> = None;
    for (di, &delta) in r.operating_deltas.iter().enumerate() {
        let tag = format!("rob-gen-{di}");
        let (_, conts) = generate_batch(ctx, &tag, Method::Lr, delta, r.count)?;
        let zs: Vec<f64> = conts
            .par_iter()
            .map(|c| det.z_of(c))
            .collect::<Result<_>>()?;
        let tpr = zs.iter().filter(|&&z| z > thr).count() as f64 / zs.len().max(1) as f64;
        if tpr >= 1.0 {
            chosen = Some((delta, conts, zs));
            break;
        }
        if best.as_ref().map(|b| tpr > b.0).unwrap_or(true) {
            best = Some((tpr, delta, conts, zs));
        }
    }
    let (op_delta, clean, clean_zs) = match chosen {
        Some(c) => c,
        None => {
            let (_, delta, conts, zs) =
                best.ok_or_else(|| Error::Config("no operating deltas configured".into()))?;
            (delta, conts, zs)
        }
    };
    let clean_tpr =
        clean_zs.iter().filter(|&&z| z > thr).count() as f64 / clean_zs.len().max(1) as f64;
    let clean_mean_z = mean(&clean_zs);

    let mut rows = Vec::new();
    let mut clean_row = ReportRow::new(
        "robustness",
        "lr",
        op_delta,
        clean.len(),
        &ctx.digest,
        ctx.cfg.seed,
    );
    clean_row.target_fpr = Some(fpr);
    clean_row.tpr_at_fpr = Some(clean_tpr);
    clean_row.mean_z = Some(clean_mean_z);
    clean_row.attack_kind = Some("clean".into());
    clean_row.attack_p = Some(0.0);
    clean_row.z_drop = Some(0.0);
    rows.push(clean_row);

    for kind in &r.kinds {
        for (pi, &p) in r.intensities.iter().enumerate() {
            let attacked: Vec<Vec<u32>> = clean
                .par_iter()
                .enumerate()
                .map(|(i, seq)| {
                    let seed =
                        derive_seed(ctx.cfg.seed, &format!("rob-attack-{kind}-{pi}"), i as u64);
                    match kind.as_str() {
                        "delete" => crate::attacks::delete_tokens(seq, p, seed),
                        "substitute" => {
                            crate::attacks::substitute_tokens(seq, p, &ctx.vocab, seed)
                        }
                        other => Err(Error::Config(format!("unknown attack kind {other:?}"))),
                    }
                })
                .collect::<Result<_>>()?;
            let zs: Vec<f64> = attacked
                .par_iter()
                .map(|c| det.z_of(c))
                .collect::<Result<_>>()?;
            let tpr = zs.iter().filter(|&&z| z > thr).count() as f64 / zs.len().max(1) as f64;
            let mut row = ReportRow::new(
                "robustness",
                "lr",
                op_delta,
                attacked.len(),
                &ctx.digest,
                ctx.cfg.seed,
            );
            row.target_fpr = Some(fpr);
            row.tpr_at_fpr = Some(tpr);
            row.mean_z = Some(mean(&zs));
            row.attack_kind = Some(kind.clone());
            row.attack_p = Some(p);
            row.z_drop = Some(clean_mean_z - mean(&zs));
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Runs every enabled evaluation and writes the report files into `out_dir`:
/// `rows.csv`, `rows.jsonl`, `tradeoff.csv`, `efficiency.csv`,
/// `robustness.csv`.
pub fn run_all(ctx: &BenchContext, out_dir: &std::path::Path) -> Result<Vec<ReportRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = run_detectability(ctx)?;
    let (qrows, tradeoff) = run_quality(ctx)?;
    rows.extend(qrows);
    rows.extend(run_efficiency(ctx)?);
    rows.extend(run_robustness(ctx)?);

    super::report::write_rows_csv(&out_dir.join("rows.csv"), &rows)?;
    super::report::write_rows_jsonl(&out_dir.join("rows.jsonl"), &rows)?;
    super::report::write_tradeoff_csv(&out_dir.join("tradeoff.csv"), &tradeoff)?;
    let eff: Vec<ReportRow> = rows.iter().filter(|r| r.run == "efficiency").cloned().collect();
    super::report::write_rows_csv(&out_dir.join("efficiency.csv"), &eff)?;
    let rob: Vec<ReportRow> = rows.iter().filter(|r| r.run == "robustness").cloned().collect();
    super::report::write_rows_csv(&out_dir.join("robustness.csv"), &rob)?;
    Ok(rows)
}
