//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any failed.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use combiowl::bench::{run_benchmark, BenchConfig, Method, RunReport};
use combiowl::cli::{cmd_verify, TheoremChoice, VerifyArgs};
use combiowl::losses::{hamming_distance, surrogate_empirical_risk, tau_order_loss, zero_one_loss};
use combiowl::metrics::avg_benefit;
use combiowl::network::backward;
use combiowl::rng::{derive_seed, rng_for};
use combiowl::simulator::{gen_dataset, gen_truth, SimConfig};
use combiowl::{Combo, LabeledSample, LossSpec, NetConfig, NetParams, PenaltyKind, SurrogateKind};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_sample(rng: &mut combiowl::rng::SimRng, p: usize, k: usize) -> LabeledSample {
    let x = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let a = Combo::new((0..k).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()).unwrap();
    LabeledSample::new(x, a, rng.random_range(0.0..3.0))
}

/// Central differences of the penalized risk, one coordinate at a time.
fn finite_difference(params: &NetParams, data: &[LabeledSample], w: &[f64], loss: &LossSpec) -> Vec<f64> {
    let h = 1e-6;
    let mut probe = params.clone();
    (0..params.as_flat().len())
        .map(|j| {
            let base = params.as_flat()[j];
            probe.as_flat_mut()[j] = base + h;
            let up = surrogate_empirical_risk(data, w, &probe, loss).unwrap();
            probe.as_flat_mut()[j] = base - h;
            let down = surrogate_empirical_risk(data, w, &probe, loss).unwrap();
            probe.as_flat_mut()[j] = base;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Every margin and hidden pre-activation is at least `gap` from a kink.
fn away_from_kinks(params: &NetParams, data: &[LabeledSample], loss: &LossSpec, gap: f64) -> bool {
    data.iter().all(|s| {
        let trace = params.forward(&s.x).unwrap();
        let relu_ok = trace.z1.iter().all(|z| z.abs() > gap);
        let hinge_ok = loss.surrogate != SurrogateKind::Hinge
            || trace
                .scores
                .iter()
                .zip(s.a.as_slice())
                .all(|(d, &a)| (f64::from(a) * d - 1.0).abs() > gap);
        let lasso_ok = loss.penalty != PenaltyKind::Lasso
            || params.w1().iter().chain(params.w2()).all(|v| v.abs() > gap);
        relu_ok && hinge_ok && lasso_ok
    })
}

fn criterion_gradients() -> Outcome {
    let mut rng = rng_for(SEED, 1);
    let mut worst_smooth = 0.0f64;
    let mut worst_hinge = 0.0f64;
    let mut configs = 0;
    let mut attempts = 0;
    while configs < 50 {
        attempts += 1;
        let p = rng.random_range(1..=6);
        let d = rng.random_range(0..=6);
        let k = rng.random_range(1..=6);
        let n = rng.random_range(1..=8);
        let surrogate = SurrogateKind::ALL[rng.random_range(0..4)];
        let penalty = [PenaltyKind::None, PenaltyKind::Ridge, PenaltyKind::Lasso][rng.random_range(0..3)];
        let loss = LossSpec::new(surrogate, penalty, rng.random_range(0.0..0.1)).unwrap();
        let cfg = NetConfig::new(p, d, k).unwrap();
        let mut params = NetParams::init(cfg, rng.random()).unwrap();
        for v in params.as_flat_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let data: Vec<LabeledSample> = (0..n).map(|_| random_sample(&mut rng, p, k)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        if !away_from_kinks(&params, &data, &loss, 1e-4) {
            continue;
        }
        configs += 1;
        let exact = backward(&params, &data, &w, &loss).unwrap();
        let fd = finite_difference(&params, &data, &w, &loss);
        let diff: f64 = exact.as_flat().iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = exact.as_flat().iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|b| b * b).sum::<f64>().sqrt());
        let rel = diff / norm.max(1e-8);
        if surrogate == SurrogateKind::Hinge {
            worst_hinge = worst_hinge.max(rel);
        } else {
            worst_smooth = worst_smooth.max(rel);
        }
    }
    outcome(
        worst_smooth < 1e-6 && worst_hinge < 1e-4,
        format!("50 configs ({attempts} drawn), max rel err smooth {worst_smooth:.2e}, hinge {worst_hinge:.2e}"),
    )
}

fn criterion_theorems() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let args = VerifyArgs {
        theorem: TheoremChoice::All,
        instances: 1000,
        seed: SEED,
        inject_adversarial: false,
        out: Some(dir.path().join("verify.json")),
    };
    let report = cmd_verify(&args).unwrap();
    let summary: Vec<String> = report
        .theorems
        .iter()
        .map(|t| format!("T{}: {}/{} ({} counterexamples)", t.theorem, t.passed, t.instances, t.counterexamples.len()))
        .collect();
    let counts_ok = report.theorems.len() == 3 && report.theorems.iter().all(|t| t.instances == 1000);
    outcome(report.ok() && counts_ok, summary.join(", "))
}

fn criterion_loss_identities() -> Outcome {
    let mut checked = 0usize;
    let mut failures = 0usize;
    for k in 1..=5 {
        let combos: Vec<Combo> = Combo::enumerate(k).unwrap().collect();
        for a in &combos {
            for d in &combos {
                checked += 1;
                let h = hamming_distance(a, d).unwrap();
                let z = zero_one_loss(a, d).unwrap();
                let losses: Vec<f64> = (1..=k).map(|t| tau_order_loss(a, d, t).unwrap()).collect();
                let ok = losses[0] == h && losses[k - 1] == z && losses.windows(2).all(|w| w[0] <= w[1]);
                failures += usize::from(!ok);
            }
        }
    }
    outcome(failures == 0, format!("{checked} label pairs, {failures} violations"))
}

fn criterion_unbiasedness() -> Outcome {
    let mut rng = rng_for(SEED, 4);
    let (p, k, n) = (3, 2, 8);
    let loss = LossSpec::new(SurrogateKind::Logistic, PenaltyKind::Ridge, 0.01).unwrap();
    let params = NetParams::init(NetConfig::new(p, 4, k).unwrap(), 9).unwrap();
    let data: Vec<LabeledSample> = (0..n).map(|_| random_sample(&mut rng, p, k)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let full = backward(&params, &data, &w, &loss).unwrap();

    let mut sum = params.zeros_like();
    let mut batches = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != 4 {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let batch: Vec<LabeledSample> = idx.iter().map(|&i| data[i].clone()).collect();
        let bw: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        sum.axpy(1.0, &backward(&params, &batch, &bw, &loss).unwrap());
        batches += 1;
    }
    sum.scale(1.0 / f64::from(batches));
    let err = sum
        .as_flat()
        .iter()
        .zip(full.as_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(batches == 70 && err < 1e-12, format!("{batches} batches, max abs diff {err:.2e}"))
}

/// Structural statistics over 10^5 patients (10 truths x 10^4), serialized
/// for the determinism check.
fn structural_stats(seed: u64) -> String {
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut m_min, mut m_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut mu_min, mut mu_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..10 {
        let cfg = SimConfig::correct(derive_seed(seed, j));
        let truth = gen_truth(&cfg).unwrap();
        let data = gen_dataset(&truth, &cfg, 10_000, derive_seed(seed, 100 + j)).unwrap();
        for i in 0..data.len() {
            for t in &data.effects[i] {
                t_min = t_min.min(t.abs());
                t_max = t_max.max(t.abs());
            }
            m_min = m_min.min(data.main[i]);
            m_max = m_max.max(data.main[i]);
            for mu in data.means(i) {
                mu_min = mu_min.min(mu);
                mu_max = mu_max.max(mu);
            }
        }
    }
    serde_json::to_string(&[t_min, t_max, m_min, m_max, mu_min, mu_max]).unwrap()
}

fn criterion_structure(stats: &str) -> Outcome {
    let v: Vec<f64> = serde_json::from_str(stats).unwrap();
    let pass = v[0] >= 2.0 && v[1] <= 2.05 && v[2] >= -2.05 && v[3] <= -2.0 && v[4] >= -12.5 && v[5] <= 8.5;
    outcome(
        pass,
        format!(
            "|T| in [{:.4}, {:.4}], M in [{:.4}, {:.4}], mean in [{:.3}, {:.3}]",
            v[0], v[1], v[2], v[3], v[4], v[5]
        ),
    )
}

/// Bayes average benefit averaged over 1000 truths x 100 patients.
fn bayes_ab(seed: u64) -> f64 {
    let mut total = 0.0;
    for j in 0..1000 {
        let cfg = SimConfig::correct(derive_seed(seed, j));
        let truth = gen_truth(&cfg).unwrap();
        let data = gen_dataset(&truth, &cfg, 100, derive_seed(seed, 5000 + j)).unwrap();
        total += avg_benefit(&data.bayes_rules(), &data).unwrap();
    }
    total / 1000.0
}

fn criterion_bayes(ab: f64) -> Outcome {
    outcome((2.7..=3.4).contains(&ab), format!("Bayes AB {ab:.4} over 10^5 patients"))
}

fn benchmark(misspec: bool) -> RunReport {
    let sim = if misspec {
        SimConfig::misspecified(SEED)
    } else {
        SimConfig::correct(SEED)
    };
    let cfg = BenchConfig::new(sim);
    run_benchmark(&cfg, 0).unwrap()
}

fn adj(report: &RunReport, m: Method) -> (f64, f64) {
    let s = report.summary_for(m).unwrap();
    (s.adj_mcr.mean, s.ab.mean)
}

fn criterion_ordering(report: &RunReport) -> Outcome {
    let (naive, naive_ab) = adj(report, Method::Naive);
    let (simple, simple_ab) = adj(report, Method::DnnSimple);
    let (hdd, hdd_ab) = adj(report, Method::Dnn1hdd);
    let (bayes, _) = adj(report, Method::Bayes);
    let pass = bayes < simple
        && bayes < hdd
        && naive - simple >= 0.05
        && naive - hdd >= 0.05
        && simple_ab > naive_ab
        && hdd_ab > naive_ab;
    outcome(
        pass,
        format!(
            "adj MCR naive {naive:.4}, simple {simple:.4}, 1hdd {hdd:.4}, bayes {bayes:.4}; AB naive {naive_ab:.3}, simple {simple_ab:.3}, 1hdd {hdd_ab:.3}"
        ),
    )
}

fn criterion_misspec(report: &RunReport) -> Outcome {
    let (naive, naive_ab) = adj(report, Method::Naive);
    let (simple, simple_ab) = adj(report, Method::DnnSimple);
    let (hdd, hdd_ab) = adj(report, Method::Dnn1hdd);
    let pass = simple < naive && hdd < naive && simple_ab > naive_ab && hdd_ab > naive_ab;
    outcome(
        pass,
        format!(
            "adj MCR naive {naive:.4}, simple {simple:.4}, 1hdd {hdd:.4}; AB naive {naive_ab:.3}, simple {simple_ab:.3}, 1hdd {hdd_ab:.3}"
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let value = f();
    (value, start.elapsed())
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome, Duration)> = Vec::new();
    let mut record = |id, name, (o, t): (Outcome, Duration)| {
        println!(
            "criterion {id} {:<28} {} ({:.1}s) {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t.as_secs_f64(),
            o.detail
        );
        results.push((id, name, o, t));
    };

    record(1, "gradient-check", timed(criterion_gradients));
    record(2, "theorem-oracles", timed(criterion_theorems));
    record(3, "loss-identities", timed(criterion_loss_identities));
    record(4, "sgd-unbiasedness", timed(criterion_unbiasedness));

    let (stats, t5) = timed(|| structural_stats(SEED));
    record(5, "simulation-bounds", (criterion_structure(&stats), t5));
    let (ab, t6) = timed(|| bayes_ab(SEED));
    record(6, "bayes-value", (criterion_bayes(ab), t6));
    let (correct, t7) = timed(|| benchmark(false));
    record(7, "ordering-correct-model", (criterion_ordering(&correct), t7));
    let (missp, t8) = timed(|| benchmark(true));
    record(8, "ordering-misspecified", (criterion_misspec(&missp), t8));

    let (same, t9) = timed(|| {
        let json = |r: &RunReport| serde_json::to_string(r).unwrap();
        [
            structural_stats(SEED) == stats,
            bayes_ab(SEED).to_bits() == ab.to_bits(),
            json(&benchmark(false)) == json(&correct),
            json(&benchmark(true)) == json(&missp),
        ]
    });
    record(
        9,
        "determinism",
        (
            outcome(same.iter().all(|&b| b), format!("byte-identical reruns of 5-8: {same:?}")),
            t9,
        ),
    );

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
