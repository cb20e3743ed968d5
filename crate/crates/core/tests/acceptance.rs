//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use calibkit::audit::dimension_audit;
use calibkit::confidence::{ensemble_ablation, ensemble_confidence, trial_samples, EnsembleChoice, TrialAggregation};
use calibkit::io::{self, ParseMode};
use calibkit::metrics::{brier, ece, metric_report, nll};
use calibkit::monitor::{evaluate_halting, fit_and_evaluate, fit_thresholds, lower_quantile};
use calibkit::recalibrate::protocol::{run_splits, Method, SplitProtocol};
use calibkit::recalibrate::{
    fit_platt, platt_nll, DimSamples, FitConfig, FitMode, RecalParams, Recalibrator,
};
use calibkit::synth::{generate, preset_config, Preset, SynthConfig};
use calibkit::temporal::{aggregated_confidence, completion_curve, TemporalAggregation};
use calibkit::types::{argmax, softmax};
use calibkit::{ConfidenceSample, DimensionStep, EpisodeRecord, ThresholdProfile, TimestepRecord, VariantTrajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn samples(pairs: &[(f64, u8)]) -> Vec<ConfidenceSample> {
    pairs.iter().map(|&(c, y)| ConfidenceSample::new(c, y == 1).unwrap()).collect()
}

/// Textbook binned ECE: sort, cut at floor(j N / m), compare mean confidence
/// with accuracy per bin. Inputs have distinct confidences.
fn naive_ece(pairs: &[(f64, bool)], q: u32, m: usize) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = sorted.len();
    let mut total = 0.0;
    for j in 0..m {
        let bin = &sorted[j * n / m..(j + 1) * n / m];
        let conf: f64 = bin.iter().map(|p| p.0).sum::<f64>() / bin.len() as f64;
        let acc = bin.iter().filter(|p| p.1).count() as f64 / bin.len() as f64;
        total += bin.len() as f64 / n as f64 * (acc - conf).abs().powi(q as i32);
    }
    total.powf(1.0 / q as f64)
}

fn ece_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n);
        while pairs.len() < n {
            let c: f64 = rng.random();
            if pairs.iter().all(|p| p.0 != c) {
                pairs.push((c, rng.random::<bool>()));
            }
        }
        let m = rng.random_range(1..=n);
        let s: Vec<ConfidenceSample> = pairs.iter().map(|&(c, y)| ConfidenceSample::new(c, y).unwrap()).collect();
        for q in [1, 2] {
            worst = worst.max((ece(&s, q, m).unwrap() - naive_ece(&pairs, q, m)).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("1000 fixtures, max |diff| {worst:.2e} (tol 1e-12), {:.2}s (limit 5s)", elapsed.as_secs_f64()),
    )
}

fn closed_forms() -> Outcome {
    let four = samples(&[(0.2, 0), (0.4, 1), (0.6, 1), (0.8, 1)]);
    let cases: Vec<(&str, f64, f64)> = vec![
        ("ece1 4-sample", ece(&four, 1, 2).unwrap(), 0.25),
        ("ece2 4-sample", ece(&four, 2, 2).unwrap(), (0.5f64 * 0.04 + 0.5 * 0.09).sqrt()),
        ("brier perfect", brier(&samples(&[(1.0, 1), (0.0, 0)])).unwrap(), 0.0),
        ("brier 0.7", brier(&samples(&[(0.7, 1)])).unwrap(), 0.09),
        ("brier coin", brier(&samples(&[(0.5, 1), (0.5, 0)])).unwrap(), 0.25),
        ("nll ln2", nll(&samples(&[(0.5, 1)]), 1e-12).unwrap(), std::f64::consts::LN_2),
        ("nll sure", nll(&samples(&[(1.0, 1)]), 1e-12).unwrap(), 1e-12),
        ("nll clamp", nll(&samples(&[(1.0, 0)]), 1e-12).unwrap(), -(1e-12f64).ln()),
    ];
    let coin = metric_report(&samples(&[(0.5, 1), (0.5, 0)]), 1).unwrap();
    let mut all: Vec<(&str, f64, f64)> = cases;
    all.extend([
        ("report ece1", coin.ece1, 0.0),
        ("report brier", coin.brier, 0.25),
        ("report nll", coin.nll, std::f64::consts::LN_2),
        ("report 4-sample", metric_report(&four, 2).unwrap().ece1, 0.25),
    ]);
    let bad: Vec<&str> = all.iter().filter(|(_, got, want)| (got - want).abs() > 1e-12).map(|c| c.0).collect();
    check(bad.is_empty(), format!("{} values within 1e-12; mismatches: {bad:?}", all.len()))
}

fn perfect_preset() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig { n_episodes: 100_000, ..preset_config(Preset::Perfect) };
    let out = generate(&cfg).unwrap();
    let s = trial_samples(&out.episodes, TrialAggregation::PreAction, EnsembleChoice::Original).unwrap();
    let ece1 = ece(&s, 1, 12).unwrap();
    let rate = s.iter().filter(|x| x.outcome).count() as f64 / s.len() as f64;
    let constant: Vec<ConfidenceSample> = s.iter().map(|x| ConfidenceSample::new(rate, x.outcome).unwrap()).collect();
    let worst_const = [1, 2, 7, 12, 50, 1000, 99_999, 100_000]
        .iter()
        .map(|&m| ece(&constant, 1, m).unwrap())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    check(
        ece1 < 0.01 && worst_const == 0.0 && elapsed < Duration::from_secs(30),
        format!(
            "ece1 {ece1:.5} (< 0.01), base-rate ece1 max {worst_const:e} over 8 bin counts (= 0), {:.1}s (limit 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Mean log loss of `sigmoid(alpha c + beta)`, written as softplus terms.
fn logistic_nll(data: &[ConfidenceSample], alpha: f64, beta: f64) -> f64 {
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    data.iter()
        .map(|s| {
            let z = alpha * s.confidence + beta;
            if s.outcome {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / data.len() as f64
}

/// Smallest NLL over the beta grid at fixed alpha. The loss is convex in
/// beta, so its values along the grid are a convex sequence and bisection on
/// the forward difference finds the grid minimum exactly.
fn grid_min_over_beta(data: &[ConfidenceSample], alpha: f64, betas: &[f64]) -> f64 {
    let f = |j: usize| logistic_nll(data, alpha, betas[j]);
    let (mut lo, mut hi) = (0, betas.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if f(mid + 1) < f(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    f(lo)
}

fn platt_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<ConfidenceSample> = (0..50_000)
        .map(|_| {
            let c: f64 = rng.random();
            let p = 1.0 / (1.0 + (-(2.0 * c - 1.0)).exp());
            ConfidenceSample::new(c, rng.random::<f64>() < p).unwrap()
        })
        .collect();
    let r = fit_platt(&data, &FitConfig::default()).unwrap();
    let RecalParams::Platt(p) = r.params else { unreachable!() };
    let c: Vec<f64> = data.iter().map(|s| s.confidence).collect();
    let t: Vec<f64> = data.iter().map(ConfidenceSample::y).collect();
    let fitted = platt_nll(p, &c, &t, 1e-12);
    let grid: Vec<f64> = (0..200).map(|i| -5.0 + 10.0 * i as f64 / 199.0).collect();
    let best = grid.iter().map(|&alpha| grid_min_over_beta(&data, alpha, &grid)).fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    let near = (p.alpha - 2.0).abs() <= 0.2 && (p.beta + 1.0).abs() <= 0.2;
    check(
        near && fitted <= best + 1e-8 && elapsed < Duration::from_secs(60),
        format!(
            "(alpha, beta) = ({:.4}, {:.4}) (within 0.2 of (2, -1)), nll {fitted:.8} vs grid {best:.8} (+1e-8), {:.1}s (limit 60s)",
            p.alpha,
            p.beta,
            elapsed.as_secs_f64()
        ),
    )
}

fn hetero7() -> DimSamples {
    DimSamples::pre_action(&generate(&preset_config(Preset::Hetero7)).unwrap().episodes).unwrap()
}

fn actionwise_beats_global(data: &DimSamples) -> Outcome {
    let start = Instant::now();
    let protocol = SplitProtocol { splits: 100, seed: 0, bins: 10, ..SplitProtocol::default() };
    let results = run_splits(data, &[Method::Platt, Method::ActionwisePlatt(FitMode::Joint)], &protocol).unwrap();
    let mean = |i: usize| results.iter().map(|r| r.methods[i].test.ece1).sum::<f64>() / results.len() as f64;
    let (global, aw) = (mean(0), mean(1));
    let wins = results.iter().filter(|r| r.methods[1].test.ece1 < r.methods[0].test.ece1).count();
    let elapsed = start.elapsed();
    check(
        aw < global && wins >= 80 && elapsed < Duration::from_secs(300),
        format!(
            "mean test ece1 aw-platt {aw:.5} vs platt {global:.5}, aw lower in {wins}/100 splits (>= 80), {:.1}s (limit 300s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn dimension_spread(data: &DimSamples) -> Outcome {
    let audit = dimension_audit(data, 12).unwrap();
    let spread = audit.ece1_spread();
    check(spread >= 5.0, format!("N={}, per-dimension ece1 max/min {spread:.2} (>= 5)", data.len()))
}

fn ensemble_config(seed: u64) -> SynthConfig {
    // Mid-range latents keep most variant confidences off the clip at 1/K.
    SynthConfig {
        n_episodes: 10_000,
        n_variants: 20,
        prompt_noise_sd: 0.15,
        latent_range: (0.2, 0.8),
        seed,
        ..preset_config(Preset::Perfect)
    }
}

fn ensemble_improvement() -> Outcome {
    let (mut single, mut ensemble) = (0.0, 0.0);
    for seed in 0..20 {
        let eps = generate(&ensemble_config(seed)).unwrap().episodes;
        let score = |choice| ece(&trial_samples(&eps, TrialAggregation::PreAction, choice).unwrap(), 1, 12).unwrap();
        single += score(EnsembleChoice::Original) / 20.0;
        ensemble += score(EnsembleChoice::First(None)) / 20.0;
    }

    let eps = generate(&ensemble_config(100)).unwrap().episodes;
    let rows = ensemble_ablation(&eps, &[1, 5, 10, 20], 1000, 0, 12).unwrap();
    let curve: Vec<f64> = rows.iter().map(|r| r.mean_ece1).collect();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);

    // Spread of the ensemble around the clean confidence, away from the clip.
    let cfg = SynthConfig { latent_range: (0.3, 0.7), prompt_noise_sd: 0.05, ..ensemble_config(200) };
    let out = generate(&cfg).unwrap();
    let clean: Vec<f64> = out.truth.episodes.iter().map(|t| t.clean_dims.iter().sum::<f64>() / t.clean_dims.len() as f64).collect();
    let variance = |r: usize| {
        let dev: Vec<f64> = out
            .episodes
            .iter()
            .zip(&clean)
            .map(|(ep, c)| {
                let per_variant: Vec<f64> = ep.variants[..r]
                    .iter()
                    .map(|v| v.steps[0].dims.iter().map(|d| d.top_prob).sum::<f64>() / v.steps[0].dims.len() as f64)
                    .collect();
                ensemble_confidence(&per_variant).unwrap() - c
            })
            .collect();
        dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64
    };
    let base = variance(1);
    let ratios: Vec<f64> = [5, 10, 20].iter().map(|&r| variance(r) * r as f64 / base).collect();
    let scaled = ratios.iter().all(|x| (x - 1.0).abs() <= 0.1);

    check(
        ensemble < single && monotone && scaled,
        format!(
            "20 seeds ece1 ensemble {ensemble:.5} < single {single:.5}; ablation k=1,5,10,20 mean ece1 {curve:.5?} non-increasing; r*var_r/var_1 {ratios:.3?} (within 0.9..1.1)"
        ),
    )
}

fn episode_with(baselines: &[f64], proximity: &[bool], outcome: bool) -> EpisodeRecord {
    let steps = baselines
        .iter()
        .zip(proximity)
        .enumerate()
        .map(|(i, (&c, &p))| TimestepRecord { t: i + 1, dims: vec![DimensionStep::new(c).unwrap()], proximity: p })
        .collect();
    EpisodeRecord::new("fixture", "task", outcome, vec![VariantTrajectory { variant_id: 0, instruction_text: String::new(), steps }])
        .unwrap()
}

fn temporal_pattern() -> Outcome {
    let cfg = preset_config(Preset::Sharpening);
    let eps = generate(&cfg).unwrap().episodes;
    let curve = completion_curve(&eps, TemporalAggregation::Current, 12).unwrap();
    let mean = |lo: usize, hi: usize| curve.points[lo..=hi].iter().map(|p| p.ece1).sum::<f64>() / (hi - lo + 1) as f64;
    let (early, mid) = (mean(0, 10), mean(40, 60));

    let ep = episode_with(&[0.9, 0.5, 0.7], &[false; 3], true);
    let fixtures = [
        (3, TemporalAggregation::Window(5), 0.7),
        (3, TemporalAggregation::AvgAll, 0.7),
        (3, TemporalAggregation::Current, 0.7),
        (3, TemporalAggregation::Window(2), 0.6),
        (1, TemporalAggregation::Window(5), 0.9),
        (1, TemporalAggregation::AvgAll, 0.9),
        (1, TemporalAggregation::Current, 0.9),
    ];
    let worst = fixtures
        .iter()
        .map(|&(t, agg, want)| (aggregated_confidence(&ep, t, agg).unwrap() - want).abs())
        .fold(0.0, f64::max);
    check(
        mid < early && worst <= 1e-12,
        format!("sharpening mean ece1 pct 40-60 {mid:.4} < pct 0-10 {early:.4}; 3-step fixtures max |diff| {worst:.1e} (tol 1e-12)"),
    )
}

fn monitor_checks() -> Outcome {
    let mut problems = Vec::new();
    let flat = |v: f64| ThresholdProfile { quantile_level: 0.1, thresholds: vec![v; 100] };
    let above = episode_with(&[0.9; 10], &[true; 10], true);
    let d = evaluate_halting(&above, &flat(0.5), TemporalAggregation::Current).unwrap();
    if d.halted {
        problems.push("always-above episode halted");
    }
    let mut confs = [0.9; 10];
    let mut prox = [false; 10];
    confs[2] = 0.1;
    confs[6] = 0.1;
    prox[6] = true;
    let d = evaluate_halting(&episode_with(&confs, &prox, false), &flat(0.5), TemporalAggregation::Current).unwrap();
    if d.halt_timestep != Some(7) {
        problems.push("conjunction fixture did not halt at t=7");
    }
    let mut prox = [false; 10];
    prox[0] = true;
    let mut confs = [0.9; 10];
    confs[0] = 0.1;
    let d = evaluate_halting(&episode_with(&confs, &prox, false), &flat(0.5), TemporalAggregation::Current).unwrap();
    if (d.halt_timestep, d.halt_pct) != (Some(1), Some(0)) {
        problems.push("immediate fixture did not halt at t=1, pct 0");
    }

    let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let q = lower_quantile(&values, 0.10);
    let pool: Vec<EpisodeRecord> = values.iter().map(|&v| episode_with(&[v], &[false], true)).collect();
    let fitted = fit_thresholds(&pool, 0.10, TemporalAggregation::Current).unwrap();
    if q != 0.1 || fitted.thresholds.iter().any(|&t| t != 0.1) {
        problems.push("quantile of {0.1..1.0} at q=0.10 is not 0.1");
    }

    let eps = generate(&preset_config(Preset::Discriminative)).unwrap().episodes;
    let (_, summary) = fit_and_evaluate(&eps, 0.10, TemporalAggregation::Current, true).unwrap();
    let (fail, succ) = (summary.halt_rate_failures.unwrap(), summary.halt_rate_successes.unwrap());
    if fail <= succ {
        problems.push("discriminative preset halts successes at least as often as failures");
    }
    check(
        problems.is_empty(),
        format!("3 halting fixtures, quantile fixture, discriminative halt rate failures {fail:.3} > successes {succ:.3}; problems: {problems:?}"),
    )
}

fn argmax_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = 0usize;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=256);
        let scale: f64 = rng.random_range(0.1..20.0);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();
        let want = argmax(&z);
        for _ in 0..50 {
            let t = 10f64.powf(rng.random_range(-2.0..3.0));
            failures += usize::from(argmax(&softmax(&z, t)) != want);
        }
    }
    check(failures == 0, format!("10000 logit vectors x 50 temperatures, {failures} argmax changes (= 0)"))
}

fn round_trips() -> Outcome {
    let cfg = SynthConfig { n_episodes: 1000, t_range: (1, 5), n_variants: 3, prompt_noise_sd: 0.05, proximity_rate: 0.2, ..preset_config(Preset::Hetero7) };
    let out = generate(&cfg).unwrap();
    let mut first = Vec::new();
    io::write_log(&mut first, &out.episodes).unwrap();
    let parsed = io::parse_log(first.as_slice(), ParseMode::Strict).unwrap().episodes;
    let mut second = Vec::new();
    io::write_log(&mut second, &parsed).unwrap();
    let log_ok = first == second && parsed == out.episodes;

    let data = DimSamples::pre_action(&out.episodes).unwrap();
    let fit = FitConfig::default();
    let fitted: Vec<Recalibrator> = [Method::Platt, Method::Temperature, Method::ActionwisePlatt(FitMode::Joint), Method::ActionwiseTemperature]
        .iter()
        .map(|m| m.fit(&data, &fit).unwrap())
        .collect();
    let records_ok = fitted.iter().all(|r| {
        let text = r.to_record();
        let back = Recalibrator::from_record(&text).unwrap();
        back == *r && back.to_record() == text
    });
    check(
        log_ok && records_ok,
        format!("1000-episode log bytes identical: {log_ok}; 4 recalibrator records identical: {records_ok}"),
    )
}

fn main() {
    let start = Instant::now();
    let data = hetero7();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("ECE oracle equivalence", Box::new(ece_oracle)),
        ("closed-form fixtures", Box::new(closed_forms)),
        ("perfect-preset calibration", Box::new(perfect_preset)),
        ("Platt recovery", Box::new(platt_recovery)),
        ("action-wise beats global", Box::new(|| actionwise_beats_global(&data))),
        ("per-dimension spread", Box::new(|| dimension_spread(&data))),
        ("ensemble improvement", Box::new(ensemble_improvement)),
        ("temporal pattern", Box::new(temporal_pattern)),
        ("monitor correctness", Box::new(monitor_checks)),
        ("argmax invariance", Box::new(argmax_invariance)),
        ("round-trips", Box::new(round_trips)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("{} {:>2}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
