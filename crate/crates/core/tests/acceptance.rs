//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! show up in `cargo test` output.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use jpac::admission::{admissible, foschini_miljanic};
use jpac::harness::{
    instance_seed, matches_benchmark, revalidated_support, run_experiment, Experiment, ExperimentConfig,
};
use jpac::kernel::{
    guaranteed_decrease, multistart_solve, AugmentedProblem, KktCertificate, MultistartResult, SolverConfig,
    Termination, DEFAULT_BETA,
};
use jpac::oracle::{enumerate_l0, lp_exact, lp_objective, optimum_allocation};
use jpac::rng::child_stream;
use jpac::scenario::{generate, ScenarioConfig};
use jpac::{normalize, select_alpha, AlphaRule, NormalizedProblem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn worked_example() -> NormalizedProblem {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0, -1.0, -1.0, 1.0]);
    NormalizedProblem::new(a, DVector::from_element(3, 0.5), DVector::from_element(3, 1.0), Some(1.0 / 15.0)).unwrap()
}

fn random_problem(k: usize, seed: u64) -> NormalizedProblem {
    let p = normalize(&generate(&ScenarioConfig::with_links(k, seed)).unwrap()).unwrap();
    let alpha = select_alpha(&p, &AlphaRule::default()).unwrap();
    p.with_alpha(alpha).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Solver settings of the Monte-Carlo studies (the harness default ε).
fn study_solver() -> SolverConfig {
    let cfg = ExperimentConfig::new(Experiment::ApproxCompare);
    cfg.solver()
}

/// Every certificate produced by the suite, for the soundness check.
#[derive(Default)]
struct Corpus {
    certificates: Vec<KktCertificate>,
}

impl Corpus {
    fn absorb(&mut self, result: &MultistartResult) {
        self.certificates.extend(result.certificates().cloned());
    }
}

fn worked_example_recovery(corpus: &mut Corpus) -> Outcome {
    let problem = worked_example();
    let aug = AugmentedProblem::new(&problem, 0.5).unwrap();
    let config = SolverConfig {
        epsilon: 1e-4,
        ..SolverConfig::default()
    };
    let start = Instant::now();
    let result = multistart_solve(&aug, &config, 20, 0).unwrap();
    let elapsed = start.elapsed();
    corpus.absorb(&result);
    let target = DVector::from_vec(vec![0.5, 0.5, 0.0]);
    let err = (&result.best_x - &target).amax();
    outcome(
        err <= 1e-3 && elapsed < Duration::from_secs(1),
        format!("‖x - x*‖∞ = {err:.2e}, runtime {elapsed:.2?}"),
    )
}

fn l1_failure_case(corpus: &mut Corpus) -> Outcome {
    let problem = worked_example();
    let alpha = problem.alpha().unwrap();
    let aug = AugmentedProblem::new(&problem, 1.0).unwrap();
    let config = study_solver();
    let result = multistart_solve(&aug, &config, 1, 0).unwrap();
    corpus.absorb(&result);
    let lp = lp_exact(&problem).unwrap();
    let lp_x = DVector::from_vec(lp.x.clone());
    let kernel_obj = lp_objective(&problem, &result.best_x, alpha);
    let gap = (kernel_obj - lp.objective).abs();
    let (kx, lx) = (result.best_x.amax(), lp_x.amax());
    outcome(
        kx <= 1e-4 && lx <= 1e-4 && gap <= 1e-6,
        format!(
            "kernel ‖x‖∞ = {kx:.2e} (ε = {:e}), LP ‖x‖∞ = {lx:.2e}, objective gap {gap:.2e}",
            config.epsilon
        ),
    )
}

fn potential_decrease(corpus: &mut Corpus) -> Outcome {
    let floor = guaranteed_decrease(DEFAULT_BETA) - 1e-9;
    let config = SolverConfig::default();
    let mut worst = f64::INFINITY;
    let mut capped = 0;
    let mut over_cap = 0;
    let qs = [0.3, 0.5, 1.0];
    for i in 0..50u64 {
        let k = 3 + (i as usize % 8);
        let q = qs[i as usize % 3];
        let problem = random_problem(k, 1000 + i);
        let aug = AugmentedProblem::new(&problem, q).unwrap();
        let result = multistart_solve(&aug, &config, 5, i).unwrap();
        corpus.absorb(&result);
        let cap = config.iteration_cap(k, q);
        for start in result.starts.iter().filter_map(|s| s.result.as_ref().ok()) {
            worst = worst.min(start.min_decrease);
            if start.certificate.termination == Termination::IterationCap {
                capped += 1;
            }
            if start.certificate.iterations > cap {
                over_cap += 1;
            }
        }
    }
    outcome(
        worst >= floor && capped == 0 && over_cap == 0,
        format!("min decrease {worst:.6} (floor {floor:.6}), capped runs {capped}, over cap {over_cap}"),
    )
}

fn certificate_soundness(corpus: &Corpus) -> Outcome {
    let mut kkt = 0;
    let mut optimal = 0;
    let mut bad = 0;
    let mut capped = 0;
    for c in &corpus.certificates {
        match c.termination {
            Termination::EpsKkt => {
                kkt += 1;
                if !(c.dual_residual >= -1e-8 && c.comp_gap <= c.epsilon) {
                    bad += 1;
                }
            }
            Termination::EpsOptimal => {
                optimal += 1;
                if !(c.f_value <= c.epsilon) {
                    bad += 1;
                }
            }
            Termination::IterationCap => capped += 1,
        }
    }
    outcome(
        bad == 0 && kkt + optimal > 0,
        format!(
            "{} certificates: {kkt} eps-kkt, {optimal} eps-optimal, {capped} capped, {bad} unsound",
            corpus.certificates.len()
        ),
    )
}

struct Comparison {
    benchmark: Vec<f64>,
    lq: Vec<f64>,
    l1: Vec<f64>,
    lq_matches: usize,
}

/// Benchmark, ℓ0.1 (N = 100) and ℓ1 on the study instances of size `k`.
fn compare_relaxations(k: usize, runs: usize, corpus: &mut Corpus) -> Comparison {
    let solver = study_solver();
    let mut out = Comparison {
        benchmark: Vec::new(),
        lq: Vec::new(),
        l1: Vec::new(),
        lq_matches: 0,
    };
    for run in 0..runs {
        let seed = instance_seed(0, k, run);
        let problem = random_problem(k, seed);
        let opt = enumerate_l0(&problem).unwrap();
        let opt_power = problem.budgets().dot(&optimum_allocation(&problem, &opt).unwrap()) * 1e3;
        out.benchmark.push(opt.best_support.len() as f64);

        let lq = multistart_solve(&AugmentedProblem::new(&problem, 0.1).unwrap(), &solver, 100, seed).unwrap();
        corpus.absorb(&lq);
        let support = revalidated_support(&problem, &lq.best_support, &lq.best_x).unwrap();
        let power = problem.budgets().dot(&lq.best_x) * 1e3;
        if matches_benchmark(&support, power, &opt.best_support, opt_power) {
            out.lq_matches += 1;
        }
        out.lq.push(support.len() as f64);

        let l1 = multistart_solve(&AugmentedProblem::new(&problem, 1.0).unwrap(), &solver, 1, seed).unwrap();
        corpus.absorb(&l1);
        let support = revalidated_support(&problem, &l1.best_support, &l1.best_x).unwrap();
        out.l1.push(support.len() as f64);
    }
    out
}

fn relaxation_comparison(corpus: &mut Corpus) -> Outcome {
    let start = Instant::now();
    let c = compare_relaxations(5, 100, corpus);
    let elapsed = start.elapsed();
    let (bench, lq) = (mean(&c.benchmark), mean(&c.lq));
    let recovery = c.lq_matches as f64 / c.lq.len() as f64;
    outcome(
        (lq - bench).abs() <= 0.1 && recovery >= 0.5 && elapsed <= Duration::from_secs(600),
        format!(
            "benchmark {bench:.2}, l0.1 {lq:.2}, l1 {:.2}; exact recovery {:.0}%; runtime {elapsed:.1?}",
            mean(&c.l1),
            recovery * 100.0
        ),
    )
}

fn lq_vs_l1(corpus: &mut Corpus) -> Outcome {
    let c = compare_relaxations(10, 100, corpus);
    let (lq, l1) = (mean(&c.lq), mean(&c.l1));
    outcome(
        lq - l1 >= 0.5,
        format!("l0.1 {lq:.2}, l1 {l1:.2}, gap {:.2} (benchmark {:.2})", lq - l1, mean(&c.benchmark)),
    )
}

fn study(experiment: Experiment, k_list: Vec<usize>, runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        k_list: Some(k_list),
        runs,
        record_runtime: false,
        ..ExperimentConfig::new(experiment)
    }
}

fn deflation_comparison() -> Outcome {
    let config = ExperimentConfig {
        q_list: Some(vec![0.5]),
        n: Some(5),
        ..study(Experiment::DeflateCompare, vec![20], 100)
    };
    let out = run_experiment(&config).unwrap();
    let s = &out.summary;
    let get = |alg: &str, q: Option<f64>, m: &str| s.get(20, q, alg, m).unwrap_or(f64::NAN);
    let lqmd = get("lqmd", Some(0.5), "mean_supported");
    let nlpd = get("nlpd", None, "mean_supported");
    let pair = |m: &str| get("lqmd-vs-nlpd", Some(0.5), m);
    let (pl, pn) = (pair("equal_mean_power_lqmd_mw"), pair("equal_mean_power_nlpd_mw"));
    outcome(
        s.skipped == 0 && lqmd >= nlpd - 0.05 && pl <= pn,
        format!(
            "supported lqmd {lqmd:.2} vs nlpd {nlpd:.2}; wins {}/{}/{} (lqmd/nlpd/equal); equal-cardinality power {pl:.2} vs {pn:.2} mW",
            pair("lqmd_wins"),
            pair("nlpd_wins"),
            pair("equal")
        ),
    )
}

fn scaling_ratios() -> Outcome {
    let out = run_experiment(&study(Experiment::ScalingRatio, vec![5, 10], 50)).unwrap();
    let mut pass = out.summary.skipped == 0;
    let mut detail = Vec::new();
    for k in [5, 10] {
        let get = |m: &str| out.summary.get(k, Some(0.5), "setup1-vs-setup2", m).unwrap_or(f64::NAN);
        let (count, power) = (get("count_ratio_mean"), get("power_ratio_mean"));
        pass &= (0.95..=1.05).contains(&count) && (3.5..=4.5).contains(&power);
        detail.push(format!("K={k}: count ratio {count:.3}, power ratio {power:.3}"));
    }
    outcome(pass, detail.join("; "))
}

fn oracle_cross_validation() -> Outcome {
    let mut rng = child_stream(9, 0);
    let mut pairs = 0;
    let mut worst_gap = 0.0f64;
    let mut worst_inverse = f64::INFINITY;
    let mut instance = 0u64;
    while pairs < 200 {
        instance += 1;
        let k = rng.gen_range(3..=10);
        let problem = random_problem(k, 5000 + instance);
        let set: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.5)).collect();
        if set.is_empty() {
            continue;
        }
        let Some(direct) = admissible(&problem, &set).unwrap() else {
            continue;
        };
        pairs += 1;
        let fm = foschini_miljanic(&problem, &set, &DVector::zeros(set.len()), 1e-13, 1_000_000).unwrap();
        worst_gap = worst_gap.max((&fm - &direct.x).amax());
        let sub = DMatrix::from_fn(set.len(), set.len(), |r, c| problem.a()[(set[r], set[c])]);
        let inverse = sub.try_inverse().expect("admissible block is invertible");
        worst_inverse = worst_inverse.min(inverse.min());
    }
    outcome(
        worst_gap <= 1e-8 && worst_inverse >= -1e-10,
        format!("{pairs} pairs from {instance} instances; max |FM - direct| {worst_gap:.2e}; min inverse entry {worst_inverse:.2e}"),
    )
}

fn qbar_statistics() -> Outcome {
    let config = ExperimentConfig {
        n: Some(100),
        ..study(Experiment::RecoverQbar, vec![5], 20)
    };
    let out = run_experiment(&config).unwrap();
    let rows: Vec<_> = out.rows.iter().filter(|r| !r.failed()).collect();
    let successes: Vec<f64> = rows
        .iter()
        .filter(|r| r.match_benchmark == Some(true))
        .filter_map(|r| r.qbar)
        .collect();
    let rate = successes.len() as f64 / out.rows.len() as f64;
    let qbar = mean(&successes);
    outcome(
        rate >= 0.8 && (0.3..=0.8).contains(&qbar),
        format!("success {}/{} ({:.0}%), mean q̄ {qbar:.4}", successes.len(), out.rows.len(), rate * 100.0),
    )
}

fn main() -> ExitCode {
    let mut corpus = Corpus::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "worked-example recovery", worked_example_recovery(&mut corpus));
    report(2, "l1 failure case", l1_failure_case(&mut corpus));
    report(3, "potential decrease", potential_decrease(&mut corpus));
    let relaxations = relaxation_comparison(&mut corpus);
    let separation = lq_vs_l1(&mut corpus);
    report(4, "certificate soundness", certificate_soundness(&corpus));
    report(5, "relaxation comparison", relaxations);
    report(6, "lq vs l1 separation", separation);
    report(7, "deflation comparison", deflation_comparison());
    report(8, "scaling ratios", scaling_ratios());
    report(9, "oracle cross-validation", oracle_cross_validation());
    report(10, "q-bar statistics", qbar_statistics());
    if failed == 0 {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
