//! One function per acceptance criterion. Each returns a short summary on
//! success or the first violation found.

use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;
use trojan_prune::cli::{self, cmd_measure, cmd_search, with_jobs};
use trojan_prune::config::{DetectSpec, RunConfig};
use trojan_prune::detector::search::{collect_signals, evaluate_config};
use trojan_prune::detector::{fit_mapping, least_squares, load_arch, loss_ce, staged_search, ErrorParams, PChoice, SearchBudget};
use trojan_prune::fingerprint::fingerprint;
use trojan_prune::forge::{arch, Corpus};
use trojan_prune::nn::{self, Dense, Layer};
use trojan_prune::pruning::{derive_p_coverage, derive_p_min_layer, plan_samples, prune, rank_filters, sample_set_size, search_space_size_for};
use trojan_prune::qa::{qa_check, ReferenceTable};
use trojan_prune::{store, Model, PruneMethod, PruningConfig, RankMethod, SampleMethod, Tensor};

use super::*;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub const INFERENCE_TOL: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_COORDS: usize = 20;
pub const REGRESSION_TOL: f64 = 1e-9;

pub fn inference_oracle(models: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..models {
        let model = random_model(seed);
        let batch = random_batch(&model, 3, 1000 + seed);
        let logits = nn::forward(&model, &batch).map_err(|e| e.to_string())?;
        for n in 0..3 {
            let expected = naive_forward(&model, batch.row(n));
            let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let err = logits.row(n).iter().zip(&expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            worst = worst.max(err);
            ensure!(err < INFERENCE_TOL, "model {seed} sample {n}: relative error {err:.3e}");
        }
    }
    Ok(format!("{models} models, max relative error {worst:.2e} (tol {INFERENCE_TOL:e})"))
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients from
/// turning round-off into huge relative errors.
pub fn grad_rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn kind_of(layer: &Layer, param: usize) -> &'static str {
    match (layer, param) {
        (Layer::Conv2d(_), 0) => "conv.weight",
        (Layer::Conv2d(_), _) => "conv.bias",
        (Layer::BatchNorm(_), 0) => "bn.gamma",
        (Layer::BatchNorm(_), _) => "bn.beta",
        (Layer::Dense(_), 0) => "dense.weight",
        _ => "dense.bias",
    }
}

/// Worst relative error per parameter kind (plus the input) over
/// [`GRAD_COORDS`] sampled coordinates each.
pub fn gradient_errors(model: &Model, batch: &Tensor, labels: &[usize], seed: u64) -> Vec<(&'static str, f64)> {
    let grads = nn::backward(model, batch, labels).unwrap();
    let mut kinds: Vec<(&'static str, Vec<(usize, usize, usize)>)> = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        for (pi, p) in layer.params().iter().enumerate() {
            if !layer.is_trainable(pi) {
                continue;
            }
            let kind = kind_of(layer, pi);
            let coords = (0..p.len()).map(|e| (li, pi, e));
            match kinds.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, v)) => v.extend(coords),
                None => kinds.push((kind, coords.collect())),
            }
        }
    }
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (kind, coords) in &kinds {
        let mut worst = 0.0f64;
        for i in index::sample(&mut r, coords.len(), GRAD_COORDS.min(coords.len())) {
            let (li, pi, e) = coords[i];
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                m.layers[li].params_mut()[pi].data_mut()[e] += delta;
                nn::training_loss(&m, batch, labels).unwrap()
            };
            let numeric = (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(grad_rel(grads.layers[li][pi].data()[e], numeric));
        }
        out.push((*kind, worst));
    }
    let mut worst = 0.0f64;
    for e in index::sample(&mut r, batch.len(), GRAD_COORDS) {
        let loss_at = |delta: f64| {
            let mut b = batch.clone();
            b.data_mut()[e] += delta;
            nn::training_loss(model, &b, labels).unwrap()
        };
        let numeric = (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(grad_rel(grads.input.data()[e], numeric));
    }
    out.push(("input", worst));
    out
}

/// He-initialised toy model with non-trivial batchnorm affine parameters.
pub fn toy_with_bn(arch_id: &str, seed: u64) -> Model {
    let mut m = arch::build(arch_id, 5, seed).unwrap();
    let mut r = rng(seed + 77);
    for layer in &mut m.layers {
        if let Layer::BatchNorm(bn) = layer {
            for v in bn.gamma.data_mut() {
                *v = r.random_range(0.6..1.4);
            }
            for v in bn.beta.data_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    m
}

pub fn gradient_check() -> Check {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut cases: Vec<(Model, Tensor, Vec<usize>, u64)> = Vec::new();
    for (i, id) in arch::ARCHITECTURES.iter().enumerate() {
        let m = toy_with_bn(id, i as u64);
        let b = random_batch(&m, 4, 50 + i as u64);
        cases.push((m, b, vec![0, 1, 2, 3], 10 + i as u64));
    }
    for seed in 0..6 {
        let m = random_model(200 + seed);
        let b = random_batch(&m, 4, 300 + seed);
        let labels = (0..4).map(|i| i % m.num_classes).collect();
        cases.push((m, b, labels, 400 + seed));
    }
    for (m, b, labels, seed) in &cases {
        for (kind, err) in gradient_errors(m, b, labels, *seed) {
            ensure!(err < GRAD_TOL, "{} {kind}: relative error {err:.3e}", m.architecture_id);
            match worst.iter_mut().find(|(k, _)| *k == kind) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((kind, err)),
            }
        }
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!("{} models, {} kinds x {GRAD_COORDS} coords, h={FD_STEP:e}, max rel {max:.2e} (tol {GRAD_TOL:e})", cases.len(), worst.len()))
}

pub fn regression_oracle() -> Check {
    let mut worst = 0.0f64;
    for inst in 0..5u64 {
        let mut r = rng(100 + inst);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| r.random_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..30).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (b, ridge) = least_squares(&refs, &y).map_err(|e| e.to_string())?;
        ensure!(!ridge, "instance {inst} fell back to ridge");
        for (got, want) in b.iter().zip(normal_equations(&rows, &y)) {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure!(err <= REGRESSION_TOL, "instance {inst}: {got} vs {want}");
        }
    }
    let truth = [0.2, 0.5, -0.3, 0.1];
    let mut r = rng(7);
    let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|a| truth[0] + a.iter().zip(&truth[1..]).map(|(x, b)| x * b).sum::<f64>()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let (b, _) = least_squares(&refs, &y).map_err(|e| e.to_string())?;
    let interp = b.iter().zip(truth).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure!(interp < 1e-12, "interpolating data recovered with error {interp:e}");
    let pairs: Vec<(&[f64], u8)> = rows.iter().enumerate().map(|(i, a)| (a.as_slice(), (i % 2) as u8)).collect();
    ensure!(fit_mapping(&pairs, "x").map_err(|e| e.to_string())?.coefficients.len() == 4, "mapping width");
    Ok(format!("5 instances |S|=5 n=30, max rel {worst:.2e} (tol {REGRESSION_TOL:e}); interpolation error {interp:.1e}"))
}

/// Parameter count after removing `removed[j]` filters from the j-th conv,
/// derived by walking the layer table with reduced channel counts.
pub fn count_after_removal(model: &Model, removed: &[usize]) -> usize {
    let (mut c, mut h, mut w) = model.input_shape;
    let (mut features, mut conv, mut total) = (0, 0, 0);
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(k) => {
                let (kh, kw) = k.kernel();
                let out = k.out_channels() - removed[conv];
                total += out * c * kh * kw + out;
                h = (h + 2 * k.padding - kh) / k.stride + 1;
                w = (w + 2 * k.padding - kw) / k.stride + 1;
                c = out;
                conv += 1;
            }
            Layer::BatchNorm(_) => total += 4 * c,
            Layer::MaxPool { window, stride } => {
                h = (h - window) / stride + 1;
                w = (w - window) / stride + 1;
            }
            Layer::GlobalAvgPool => features = c,
            Layer::Flatten => features = c * h * w,
            Layer::Dense(d) => {
                total += d.out_features() * features + d.out_features();
                features = d.out_features();
            }
            Layer::Relu => {}
        }
    }
    total
}

pub fn pruning_suite(pairs: u64) -> Check {
    let mut r = rng(2024);
    let mut pruned_models = 0;
    for pair in 0..pairs {
        let arch_id = arch::ARCHITECTURES[r.random_range(0..arch::ARCHITECTURES.len())];
        let model = arch::build(arch_id, 5, pair).unwrap();
        let pm = PruneMethod::ALL[r.random_range(0..3)];
        let sm = SampleMethod::ALL[r.random_range(0..3)];
        let rm = RankMethod::ALL[r.random_range(0..4)];
        let p = [0.125, 0.25, 0.375, 0.5][r.random_range(0..4)];
        let min_f = *model.filter_counts().iter().min().unwrap();
        let s = r.random_range(1..=(min_f / sample_set_size(p, min_f)).max(1));
        let ranking = rank_filters(&model, rm).map_err(|e| e.to_string())?;
        let plan = plan_samples(&ranking, p, s, sm, pair).map_err(|e| e.to_string())?;
        ensure!(plan.samples.len() == s, "pair {pair}: {} samples", plan.samples.len());
        let base_fp = fingerprint(&model).digest;
        let batch = random_batch(&model, 4, 31);

        if sm == SampleMethod::Targeted {
            for (j, &li) in plan.layers.iter().enumerate() {
                let Layer::Conv2d(c) = &model.layers[li] else { unreachable!() };
                let mut order: Vec<usize> = (0..c.out_channels()).collect();
                let norm = |f: usize| trojan_prune::pruning::filter_norm(c.filter(f), rm);
                order.sort_by(|&a, &b| norm(a).total_cmp(&norm(b)).then(a.cmp(&b)));
                let m = sample_set_size(p, c.out_channels());
                let mut seen = vec![false; c.out_channels()];
                let mut prev_max = f64::NEG_INFINITY;
                for (si, sample) in plan.samples.iter().enumerate() {
                    let mut block = order[si * m..(si + 1) * m].to_vec();
                    block.sort_unstable();
                    ensure!(sample[j] == block, "pair {pair}: targeted block {si} not contiguous");
                    ensure!(sample[j].iter().all(|&f| norm(f) >= prev_max), "pair {pair}: blocks not ascending");
                    prev_max = sample[j].iter().map(|&f| norm(f)).fold(f64::NEG_INFINITY, f64::max);
                    for &f in &sample[j] {
                        ensure!(!seen[f], "pair {pair}: blocks overlap");
                        seen[f] = true;
                    }
                }
            }
        }

        for sample in &plan.samples {
            let pruned = prune(&model, sample, pm, 0.5).map_err(|e| format!("pair {pair}: {e}"))?;
            pruned_models += 1;
            let logits = nn::forward(&pruned, &batch).map_err(|e| e.to_string())?;
            ensure!(logits.is_finite() && logits.shape() == [4, 5], "pair {pair}: invalid logits");
            if pm == PruneMethod::Remove {
                ensure!(fingerprint(&pruned).digest != base_fp, "pair {pair}: Remove kept the fingerprint");
                let removed: Vec<usize> = sample.iter().map(Vec::len).collect();
                let want = count_after_removal(&model, &removed);
                ensure!(pruned.param_count() == want, "pair {pair}: {} params, expected {want}", pruned.param_count());
            } else {
                ensure!(fingerprint(&pruned).digest == base_fp, "pair {pair}: {pm} changed the fingerprint");
                ensure!(pruned.param_count() == model.param_count(), "pair {pair}: {pm} changed the parameter count");
            }
        }
        ensure!(fingerprint(&model).digest == base_fp, "pair {pair}: input model mutated");
    }

    // two-valued filters with exact mean and stdev sit on the k = 1 band edges
    let weight = Tensor::new(vec![3, 2, 1, 1], vec![1.0, 3.0, -1.0, 3.0, 2.0, 2.0]).unwrap();
    let conv = trojan_prune::nn::Conv2d { weight, bias: Tensor::zeros(vec![3]), stride: 1, padding: 0 };
    let dense = Dense { weight: Tensor::filled(vec![2, 12], 0.1), bias: Tensor::zeros(vec![2]) };
    let model = Model::new("t", (2, 2, 2), 2, vec![Layer::Conv2d(conv), Layer::Relu, Layer::Flatten, Layer::Dense(dense)]).unwrap();
    let trimmed = prune(&model, &[vec![0, 1, 2]], PruneMethod::Trim, 1.0).map_err(|e| e.to_string())?;
    ensure!(trimmed == model, "Trim altered filters already inside mean +- k*stdev");
    Ok(format!("{pairs} pairs, {pruned_models} pruned models"))
}

pub fn formula_checks() -> Check {
    let sizes = search_space_size_for(&[2, 3]);
    ensure!(sizes == (BigUint::from(21u32), BigUint::from(6u32)), "search_space_size([2,3]) = {sizes:?}");
    for id in arch::ARCHITECTURES {
        let m = arch::build(id, 5, 0).unwrap();
        let min = *m.filter_counts().iter().min().unwrap();
        ensure!(derive_p_min_layer(&m).unwrap() == 1.0 / min as f64, "{id}: min-layer p");
    }
    for (k, s) in [(1, 2), (1, 5), (2, 5), (3, 10)] {
        ensure!(derive_p_coverage(k, s).unwrap() == k as f64 / s as f64, "coverage p for k={k} s={s}");
    }
    let ce = loss_ce(1, 0.5);
    ensure!((ce - 0.6931).abs() < 1e-4, "loss_ce(1, 0.5) = {ce}");
    Ok(format!("search space (21, 6); derived p exact; loss_ce(1,0.5) = {ce:.6}"))
}

pub fn exec_constraint(corpus_dir: &Path, arch_id: &str) -> Check {
    let corpus = Corpus::open(corpus_dir).map_err(|e| e.to_string())?;
    let data = load_arch(&corpus, arch_id).map_err(|e| e.to_string())?;
    let base = PruningConfig { pm: PruneMethod::Reset, sm: SampleMethod::Random, p: 0.25, ..PruningConfig::default() };
    let low = PruningConfig { num_samples: 1, num_images: 10, ..base };
    let high = PruningConfig { num_samples: 6, num_images: 100, ..base };
    let t_low = evaluate_config(&low, &data, 0, 60.0).map_err(|e| e.to_string())?.mean_elapsed();
    let t_high = evaluate_config(&high, &data, 0, 60.0).map_err(|e| e.to_string())?.mean_elapsed();
    ensure!(t_high > 10.0 * t_low, "inflation too small: {t_low} vs {t_high}");
    let t_max = (t_low * t_high).sqrt();
    let budget = SearchBudget {
        t_max_seconds: t_max,
        error_stage_grid: vec![ErrorParams { pm: base.pm, sm: base.sm, rm: RankMethod::L1, p: PChoice::Fixed(0.25), trim_k: 0.5 }],
        exec_stage_grid: vec![(1, 10), (6, 100)],
        fixed_low_exec: (1, 10),
        config_seed: 0,
        split_seed: 0,
    };
    let single = Corpus { entries: corpus.entries.iter().filter(|e| e.architecture_id == arch_id).cloned().collect(), ..corpus.clone() };
    let outcome = staged_search(&budget, &single).map_err(|e| e.to_string())?;
    let arch = &outcome.architectures[0];
    let inflated = arch.rows.iter().find(|r| r.exec == (6, 100)).and_then(|r| r.evaluation()).ok_or("inflated row missing")?;
    ensure!(!inflated.feasible && inflated.mean_exec > 1.0, "inflated config feasible (exec {})", inflated.mean_exec);
    let w = arch.winner().map_err(|e| e.to_string())?;
    ensure!((w.config.num_samples, w.config.num_images) == (1, 10), "winner is the inflated config");
    let strict = SearchBudget { t_max_seconds: t_low * 1e-3, ..budget };
    let none = staged_search(&strict, &single).map_err(|e| e.to_string())?;
    ensure!(none.architectures[0].winner().is_err(), "a config won although none was feasible");
    Ok(format!("t_max {t_max:.4}s; inflated exec {:.2} marked infeasible; low config wins", inflated.mean_exec))
}

pub fn timing_trend(corpus_dir: &Path, arch_id: &str) -> Check {
    let corpus = Corpus::open(corpus_dir).map_err(|e| e.to_string())?;
    let data = load_arch(&corpus, arch_id).map_err(|e| e.to_string())?;
    let base = PruningConfig { pm: PruneMethod::Reset, sm: SampleMethod::Random, p: 0.25, num_images: 20, ..PruningConfig::default() };
    let mean_time = |cfg: &PruningConfig| {
        // best of three passes damps scheduler noise
        (0..3)
            .map(|_| {
                let recs = collect_signals(&data, cfg).unwrap();
                recs.iter().map(|r| r.elapsed_seconds).sum::<f64>() / recs.len() as f64
            })
            .fold(f64::INFINITY, f64::min)
    };
    let s_grid = [5.0, 10.0, 15.0];
    let by_s: Vec<f64> = s_grid.iter().map(|&s| mean_time(&PruningConfig { num_samples: s as usize, ..base })).collect();
    let d_grid = [10.0, 20.0, 40.0];
    let by_d: Vec<f64> =
        d_grid.iter().map(|&d| mean_time(&PruningConfig { num_samples: 5, num_images: d as usize, ..base })).collect();
    let (rho_s, rho_d) = (spearman(&s_grid, &by_s), spearman(&d_grid, &by_d));
    ensure!(rho_s > 0.0, "time vs |S| not increasing: {by_s:?}");
    ensure!(rho_d > 0.0, "time vs |D| not increasing: {by_d:?}");
    let mut warn = String::new();
    for (name, times) in [("|S|", &by_s), ("|D|", &by_d)] {
        if times.windows(2).any(|w| w[1] < w[0]) {
            warn += &format!(" (warning: not strictly monotone in {name})");
        }
    }
    Ok(format!("rho_S {rho_s:.2}, rho_D {rho_d:.2}; |S| {by_s:.4?}; |D| {by_d:.4?}{warn}"))
}

pub fn qa_gate(corpus_dir: &Path) -> Check {
    let corpus = Corpus::open(corpus_dir).map_err(|e| e.to_string())?;
    let table = ReferenceTable::load(corpus_dir.join(cli::REFERENCE_TABLE)).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let id = &corpus.accepted().next().ok_or("empty corpus")?.id;
    let model = corpus.load_model(id).map_err(|e| e.to_string())?;
    ensure!(qa_check(corpus.model_path(id), &table).unwrap().passed(), "untouched model fails QA");

    let mut tampered = model.clone();
    let c = tampered.num_classes;
    tampered.layers.push(Layer::Dense(Dense { weight: Tensor::zeros(vec![c, c]), bias: Tensor::zeros(vec![c]) }));
    let path = tmp.path().join("tampered.prnt");
    store::save(&tampered, &path).map_err(|e| e.to_string())?;
    let report = qa_check(&path, &table).map_err(|e| e.to_string())?;
    ensure!(!report.graph_ok, "appended layer passed the graph check");

    let mut r = rng(11);
    for i in 0..100 {
        let mut edited = model.clone();
        for layer in &mut edited.layers {
            let is_bn = matches!(layer, Layer::BatchNorm(_));
            for (pi, t) in layer.params_mut().into_iter().enumerate() {
                for v in t.data_mut() {
                    *v += r.random_range(-0.1..0.1);
                    if is_bn && pi == 3 {
                        *v = v.abs().max(1e-3);
                    }
                }
            }
        }
        let path = tmp.path().join(format!("edit{i}.prnt"));
        store::save(&edited, &path).map_err(|e| e.to_string())?;
        let report = qa_check(&path, &table).map_err(|e| e.to_string())?;
        ensure!(report.passed(), "weight edit {i} failed QA: {}", report.summary());
    }
    Ok("appended layer: graph_ok=false; 100/100 weight-only edits pass".into())
}

/// Replaces every value of the named column with `-`.
pub fn strip_column(tsv: &str, name: &str) -> String {
    let mut lines = tsv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let Some(col) = header.iter().position(|h| *h == name) else { return tsv.to_string() };
    std::iter::once(header.join("\t"))
        .chain(lines.map(|l| l.split('\t').enumerate().map(|(i, f)| if i == col { "-" } else { f }).collect::<Vec<_>>().join("\t")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Non-timing text of a search run directory.
fn run_text(out: &Path, leaderboard: String, archs: &[String]) -> Result<String, String> {
    let mut text = leaderboard;
    text += &read(&out.join(cli::RESOLVED))?;
    text += &strip_column(&strip_column(&read(&out.join(cli::WINNERS))?, "mean_exec"), "mean_seconds");
    for a in archs {
        text += &read(&out.join(format!("mappings/{a}.map")))?;
        text += &read(&out.join(format!("winners/{a}.cfg")))?;
        text += &strip_column(&read(&out.join(format!("outcomes/{a}.tsv")))?, "elapsed_seconds");
    }
    Ok(text)
}

pub fn determinism(corpus_dir: &Path, search: &RunConfig, detect: &DetectSpec) -> Check {
    let measure = |jobs| -> Result<String, String> {
        let tsv = with_jobs(Some(jobs), || cmd_measure(corpus_dir, detect)).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        Ok(strip_column(&tsv, "elapsed_seconds"))
    };
    let m1 = measure(1)?;
    ensure!(m1 == measure(1)?, "cmd_measure differs between two runs");
    ensure!(m1 == measure(8)?, "cmd_measure differs between --jobs 1 and 8");

    let archs = Corpus::open(corpus_dir).map_err(|e| e.to_string())?.architectures();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (i, jobs) in [1, 1, 8].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let outcome = with_jobs(Some(jobs), || cmd_search(corpus_dir, search, &out, None)).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        runs.push(run_text(&out, outcome.leaderboard_tsv(false), &archs)?);
    }
    ensure!(runs[0] == runs[1], "cmd_search differs between two runs");
    ensure!(runs[0] == runs[2], "cmd_search differs between --jobs 1 and 8");
    Ok(format!("measure {} rows, search {} bytes identical across runs and --jobs 1/8", m1.lines().count() - 1, runs[0].len()))
}

/// Pooled cross-validated accuracy and mean CE over every architecture's winner.
pub struct Detection {
    pub accuracy: f64,
    pub mean_ce: f64,
    pub per_arch: Vec<(String, f64, f64, String)>,
    pub seconds: f64,
}

pub fn run_detection(corpus_dir: &Path, config: &RunConfig, out: &Path, shuffle: Option<u64>) -> Result<Detection, String> {
    let start = std::time::Instant::now();
    let outcome = cmd_search(corpus_dir, config, out, shuffle).map_err(|e| e.to_string())?;
    let (mut correct, mut ce, mut n) = (0.0, 0.0, 0usize);
    let mut per_arch = Vec::new();
    for a in &outcome.architectures {
        let w = a.winner().map_err(|e| format!("{}: {e}", a.architecture_id))?;
        for o in &w.outcomes {
            correct += f64::from(trojan_prune::detector::loss_ac(o.label, o.f));
            ce += loss_ce(o.label, o.f);
            n += 1;
        }
        per_arch.push((a.architecture_id.clone(), w.accuracy(), w.mean_ce, w.config.canonical()));
    }
    Ok(Detection { accuracy: correct / n as f64, mean_ce: ce / n as f64, per_arch, seconds: start.elapsed().as_secs_f64() })
}

impl Detection {
    pub fn describe(&self) -> String {
        let archs: Vec<String> =
            self.per_arch.iter().map(|(a, acc, ce, cfg)| format!("{a}: acc {acc:.3} ce {ce:.4} [{cfg}]")).collect();
        format!("accuracy {:.3}, mean CE {:.4}, {:.1}s; {}", self.accuracy, self.mean_ce, self.seconds, archs.join("; "))
    }
}
