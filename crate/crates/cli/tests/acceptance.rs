//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p fedaq-cli --test acceptance`.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fedaq::allocation::{
    alpha_joint, brute_force_allocation, ceiling_allocation, continuous_energy, continuous_joint,
    objective, AllocationPolicy, EnergyParams, RangeTrace,
};
use fedaq::bound::{
    downlink_only_bound, joint_bound, product_lower_bound, uplink_only_bound, BoundInputs,
    ObjectiveConstants,
};
use fedaq::data::{iid_partition, synth_generate, Dataset};
use fedaq::energy::{energy_to_reach, Crossing};
use fedaq::engine::{
    execute_round, ClientState, FlConfig, LocalTrainConfig, RunSeeds, ServerState,
    SupervisedObjective,
};
use fedaq::model::{loss_and_grad, ModelSpec};
use fedaq::quantizer::{level_value, quantize_levels, QuantizerSpec};
use fedaq::rng;
use fedaq::ParamVector;
use fedaq_cli::commands::{self, range_trends, Overrides};
use rand::Rng;

// Tolerances and budgets.
const UNBIASED_SE: f64 = 4.0;
const QUANT_TRIALS: u64 = 200_000;
const QUANT_VECTORS: usize = 20;
const QUANT_DIM: usize = 64;
const QUANT_BITS: [u8; 4] = [1, 2, 4, 8];
const RATIO_REL: f64 = 1e-12;
const ENERGY_REL: f64 = 1e-9;
const LOWER_BOUND_REL: f64 = 1e-9;
const ROUNDING_FACTOR: f64 = 2.0;
const WORKED_EXAMPLE_TOTAL: f64 = 22.5;
const WORKED_EXAMPLE_TOL: f64 = 1e-12;
const ERROR_BOUND_SE: f64 = 3.0;
const ERROR_BOUND_TRIALS: u64 = 10_000;
const FEDAVG_TOL: f64 = 1e-12;
const ACCURACY_GAP: f64 = 0.02;
/// Saving of reference-joint over reference-fixed8, recorded at the first
/// verified run, in percent.
const GOLDEN_SAVING_PCT: f64 = 25.0;
const GOLDEN_SAVING_TOL_PCT: f64 = 5.0;
const TREND_MIN_RHO: f64 = 0.5;
/// Rounds 1..=4 are excluded from the trend fit.
const TREND_SKIP: usize = 4;

type Outcome = Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

// 1 and 2 share one Monte-Carlo sweep.

struct SweepCase {
    bits: u8,
    /// Largest |mean deviation| / SE over coordinates with nonzero variance.
    worst_z: f64,
    /// Largest |mean deviation| over zero-variance coordinates.
    worst_exact: f64,
    mean_err_sq: f64,
    variance_bound: f64,
}

fn sweep() -> &'static (Vec<SweepCase>, Duration) {
    static SWEEP: OnceLock<(Vec<SweepCase>, Duration)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let mut r = rng::stream(0xacce97);
        let mut cases = Vec::new();
        for k in 0..QUANT_VECTORS {
            // ranges from 1e-3 to 1e3
            let scale = 10f64.powf(-3.0 + 6.0 * k as f64 / (QUANT_VECTORS - 1) as f64);
            let offset = r.random_range(-2.0..2.0) * scale;
            let v: Vec<f64> = (0..QUANT_DIM)
                .map(|_| offset + scale * r.random_range(-1.0..1.0))
                .collect();
            let (min, max) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            let range = max - min;
            for bits in QUANT_BITS {
                let spec = QuantizerSpec::new(bits).unwrap();
                let s = spec.bins();
                let mut dev = vec![0.0; QUANT_DIM];
                let mut err_sq = 0.0;
                for seed in 0..QUANT_TRIALS {
                    let (lo, hi, levels) = quantize_levels(&v, spec, seed).unwrap();
                    for (j, &l) in levels.iter().enumerate() {
                        let d = level_value(lo, hi, s, l as u64) - v[j];
                        dev[j] += d;
                        err_sq += d * d;
                    }
                }
                let step = range / s as f64;
                let (mut worst_z, mut worst_exact) = (0.0f64, 0.0f64);
                for j in 0..QUANT_DIM {
                    let x = (v[j] - min) / step;
                    let p = if v[j] == min || v[j] == max {
                        0.0
                    } else {
                        x - x.floor()
                    };
                    let se = step * (p * (1.0 - p) / QUANT_TRIALS as f64).sqrt();
                    let mean = dev[j] / QUANT_TRIALS as f64;
                    if se > 0.0 {
                        worst_z = worst_z.max(mean.abs() / se);
                    } else {
                        worst_exact = worst_exact.max(mean.abs());
                    }
                }
                cases.push(SweepCase {
                    bits,
                    worst_z,
                    worst_exact,
                    mean_err_sq: err_sq / QUANT_TRIALS as f64,
                    variance_bound: QUANT_DIM as f64 / (s * s) as f64 * range * range,
                });
            }
        }
        (cases, start.elapsed())
    })
}

fn c1_unbiasedness() -> Outcome {
    let (cases, t) = sweep();
    let worst = cases.iter().map(|c| c.worst_z).fold(0.0, f64::max);
    let exact = cases.iter().map(|c| c.worst_exact).fold(0.0, f64::max);
    ensure(worst <= UNBIASED_SE, || {
        format!("max |mean - v| = {worst:.2} SE > {UNBIASED_SE} SE")
    })?;
    ensure(exact == 0.0, || {
        format!("zero-variance coordinate moved by {exact}")
    })?;
    Ok(format!(
        "{} cases x {QUANT_TRIALS} seeds, max |mean - v| = {worst:.2} SE (limit {UNBIASED_SE}), sweep {:.1} s",
        cases.len(),
        t.as_secs_f64()
    ))
}

fn c2_variance_bound() -> Outcome {
    let (cases, _) = sweep();
    let bad: Vec<_> = cases
        .iter()
        .filter(|c| c.mean_err_sq > c.variance_bound)
        .collect();
    ensure(bad.is_empty(), || {
        format!("{} of {} cases exceed (d/s^2) R^2", bad.len(), cases.len())
    })?;
    let worst = cases
        .iter()
        .map(|c| c.mean_err_sq / c.variance_bound)
        .fold(0.0, f64::max);
    let bits = cases
        .iter()
        .max_by(|a, b| {
            (a.mean_err_sq / a.variance_bound).total_cmp(&(b.mean_err_sq / b.variance_bound))
        })
        .unwrap()
        .bits;
    Ok(format!(
        "{} of {} cases within bound, worst ratio {worst:.3} (bits {bits})",
        cases.len(),
        cases.len()
    ))
}

fn random_trace(r: &mut impl Rng, k: usize, n: usize) -> RangeTrace {
    RangeTrace::new(
        (0..k)
            .map(|_| (0..n).map(|_| r.random_range(0.01..2.0)).collect())
            .collect(),
        (0..k).map(|_| r.random_range(0.5..8.0)).collect(),
    )
    .unwrap()
}

const CONSTS: ObjectiveConstants = ObjectiveConstants {
    l: 1.5,
    tau: 5,
    eta: 0.05,
};

fn c3_closed_form_identities() -> Outcome {
    let mut r = rng::stream(3);
    let (mut ratio_err, mut beta_err, mut energy_err, mut lower_err) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (k, n, d) = (
            r.random_range(1..=8),
            r.random_range(1..=6),
            r.random_range(1..=1000),
        );
        let trace = random_trace(&mut r, k, n);
        let (e1, e2) = (r.random_range(0.2..3.0), r.random_range(0.2..3.0));
        let budget = r.random_range(2.0..12.0) * (k * n * d) as f64 * (e1 + e2);
        let ep = EnergyParams {
            e1,
            e2,
            budget,
            d,
            n,
            k,
        };
        let alpha = alpha_joint(&trace, &ep).map_err(|e| e.to_string())?;
        let s = continuous_joint(&trace, alpha);
        for (rr, ss) in trace.uplink().iter().zip(&s.uplink) {
            for (rv, sv) in rr.iter().zip(ss) {
                ratio_err = ratio_err.max(rel(rv / sv, alpha));
            }
        }
        let beta = alpha / (2.0 * n as f64).sqrt();
        for (rv, sv) in trace.downlink().iter().zip(&s.downlink) {
            beta_err = beta_err.max(rel(rv / sv, beta));
        }
        energy_err = energy_err.max(rel(continuous_energy(&ep, &s), budget));
        // objective written out directly; continuous bins may be below one
        let base = CONSTS.l * d as f64 / (k as f64 * CONSTS.tau as f64 * CONSTS.eta);
        let up: f64 = trace
            .uplink()
            .iter()
            .flatten()
            .zip(s.uplink.iter().flatten())
            .map(|(r, s)| (r / s).powi(2))
            .sum();
        let dn: f64 = trace
            .downlink()
            .iter()
            .zip(&s.downlink)
            .map(|(r, s)| (r / s).powi(2))
            .sum();
        let attained = base / (n * n) as f64 * up + 2.0 * base * dn;
        lower_err = lower_err.max(rel(
            attained,
            product_lower_bound(&trace, d, &CONSTS, &s.uplink, &s.downlink),
        ));
    }
    ensure(ratio_err <= RATIO_REL, || {
        format!("uplink R/s deviates by {ratio_err:e}")
    })?;
    ensure(beta_err <= RATIO_REL, || {
        format!("downlink R/s deviates from alpha/sqrt(2n) by {beta_err:e}")
    })?;
    ensure(energy_err <= ENERGY_REL, || {
        format!("energy deviates by {energy_err:e}")
    })?;
    ensure(lower_err <= LOWER_BOUND_REL, || {
        format!("lower bound missed by {lower_err:e}")
    })?;
    Ok(format!(
        "100 traces: ratio {ratio_err:.1e}, beta {beta_err:.1e}, energy {energy_err:.1e}, lower bound {lower_err:.1e}"
    ))
}

fn c4_integer_oracle() -> Outcome {
    let mut r = rng::stream(4);
    let (mut tested, mut worst, mut worst_energy) = (0, 0.0f64, f64::NEG_INFINITY);
    while tested < 50 {
        let (k, n) = (r.random_range(1..=5), r.random_range(1..=4));
        if k * n + k > 10 {
            continue;
        }
        let d = r.random_range(1..=50);
        let trace = random_trace(&mut r, k, n);
        let (e1, e2) = (r.random_range(0.5..2.0), r.random_range(0.5..2.0));
        let budget = r.random_range(2.0..8.0) * (k * n * d) as f64 * (e1 + e2);
        let ep = EnergyParams {
            e1,
            e2,
            budget,
            d,
            n,
            k,
        };
        let alpha = alpha_joint(&trace, &ep).map_err(|e| e.to_string())?;
        let s = continuous_joint(&trace, alpha);
        // instances whose continuous optimum needs 1..=10 bits everywhere
        if s.uplink
            .iter()
            .flatten()
            .chain(&s.downlink)
            .any(|&v| !(1.0..=1023.0).contains(&v))
        {
            continue;
        }
        let alloc = ceiling_allocation(&trace, alpha).map_err(|e| e.to_string())?;
        let brute =
            brute_force_allocation(&trace, &ep, &CONSTS, 1..=10).map_err(|e| e.to_string())?;
        let rounded = objective(&trace, d, &CONSTS, &alloc.bins()).map_err(|e| e.to_string())?;
        let ratio = rounded / brute.objective;
        ensure(ratio <= ROUNDING_FACTOR, || {
            format!("ceiling objective {ratio:.3}x the optimum (K={k}, n={n})")
        })?;
        let slack = (e1 + e2) * (k * n * d) as f64;
        let excess = alloc.energy(&ep) - budget;
        ensure(excess <= slack * (1.0 + 1e-12), || {
            format!("energy exceeds budget by {excess}, slack {slack}")
        })?;
        worst = worst.max(ratio);
        worst_energy = worst_energy.max(excess / slack);
        tested += 1;
    }
    Ok(format!(
        "50 instances, worst objective ratio {worst:.3} (limit {ROUNDING_FACTOR}), worst excess {worst_energy:.3} of slack"
    ))
}

fn c5_bound_example() -> Outcome {
    let example = BoundInputs {
        l: 1.0,
        eta: 0.1,
        sigma_sq: 0.0,
        f0_minus_fstar: 1.0,
        d: 10,
        tau: 1,
        trace: RangeTrace::new(vec![vec![1.0, 1.0]], vec![1.0]).unwrap(),
        s_up: vec![vec![10.0, 10.0]],
        s_dn: vec![10.0],
    };
    let total = joint_bound(&example).map_err(|e| e.to_string())?.total;
    ensure(
        (total - WORKED_EXAMPLE_TOTAL).abs() <= WORKED_EXAMPLE_TOL,
        || format!("total {total}"),
    )?;
    let mut r = rng::stream(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (k, n) = (r.random_range(1..6), r.random_range(1..6));
        let b = BoundInputs {
            l: r.random_range(0.1..5.0),
            eta: r.random_range(0.001..0.2),
            sigma_sq: r.random_range(0.0..2.0),
            f0_minus_fstar: r.random_range(0.0..3.0),
            d: r.random_range(1..1000),
            tau: r.random_range(1..8),
            s_up: (0..k)
                .map(|_| (0..n).map(|_| r.random_range(1.0..300.0)).collect())
                .collect(),
            s_dn: (0..k).map(|_| r.random_range(1.0..300.0)).collect(),
            trace: random_trace(&mut r, k, n),
        };
        let t = joint_bound(&b).map_err(|e| e.to_string())?;
        let t2 = uplink_only_bound(&b).map_err(|e| e.to_string())?;
        let t3 = downlink_only_bound(&b).map_err(|e| e.to_string())?;
        worst = worst
            .max(rel(t2 + t.downlink_term, t.total))
            .max(rel(t3 + t.uplink_term, t.total));
    }
    ensure(worst <= 1e-12, || {
        format!("structural identity off by {worst:e}")
    })?;
    Ok(format!(
        "worked example total {total}, identity error {worst:.1e} on 200 random inputs"
    ))
}

fn error_bound_setup() -> (Dataset, ModelSpec) {
    // d = 25 * 2 + 2 = 52
    (
        synth_generate(400, 25, 2, 1.0, 61).unwrap(),
        ModelSpec::logistic(25, 2),
    )
}

fn fresh_clients(n: usize, train_len: usize) -> (Vec<ClientState>, Vec<f64>) {
    let part = iid_partition(train_len, n, 6).unwrap();
    let clients = part
        .client_indices
        .iter()
        .enumerate()
        .map(|(i, c)| ClientState::new(i, c.clone()).unwrap())
        .collect();
    (clients, part.weights)
}

fn c6_error_bound() -> Outcome {
    let (train, spec) = error_bound_setup();
    let obj = SupervisedObjective { spec, data: &train };
    let n = 4;
    // full-batch local steps: only quantizer seeds vary
    let cfg = LocalTrainConfig {
        tau: 3,
        eta: 0.1,
        batch_size: train.len(),
        momentum: 0.0,
    };
    let mut r = rng::stream(66);
    let w = ParamVector::new(
        (0..spec.param_count())
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let d = w.len() as f64;
    let (mut cl, weights) = fresh_clients(n, train.len());
    let w_bar = execute_round(
        &w,
        &mut cl,
        &weights,
        &obj,
        &AllocationPolicy::Lossless,
        0,
        RunSeeds::single(0),
        &cfg,
    )
    .map_err(|e| e.to_string())?
    .new_global;
    let mut report = Vec::new();
    for bits in [2u8, 4, 8] {
        let s = ((1u64 << bits) - 1) as f64;
        let policy = AllocationPolicy::Fixed { bits };
        let (mut sum, mut sum_sq, mut bound) = (0.0, 0.0, 0.0);
        for t in 0..ERROR_BOUND_TRIALS {
            let (mut cl, _) = fresh_clients(n, train.len());
            let seeds = RunSeeds {
                data: 0,
                quantizer: t,
            };
            let art = execute_round(&w, &mut cl, &weights, &obj, &policy, 0, seeds, &cfg)
                .map_err(|e| e.to_string())?;
            let e = art
                .new_global
                .sub(&w_bar)
                .map_err(|e| e.to_string())?
                .l2_norm_sq();
            sum += e;
            sum_sq += e * e;
            let up: f64 = art.uploads.iter().map(|u| d * (u.range / s).powi(2)).sum();
            bound += d * (art.downlink_range / s).powi(2) + up / (n * n) as f64;
        }
        let trials = ERROR_BOUND_TRIALS as f64;
        let mean = sum / trials;
        let se = ((sum_sq / trials - mean * mean).max(0.0) / trials).sqrt();
        let bound = bound / trials;
        ensure(mean <= bound + ERROR_BOUND_SE * se, || {
            format!("bits {bits}: mean error {mean:.4e} > bound {bound:.4e}")
        })?;
        report.push(format!("{bits}b {:.3}", mean / bound));
    }
    Ok(format!(
        "d = {d}, {ERROR_BOUND_TRIALS} seeds, error/bound: {}",
        report.join(", ")
    ))
}

fn gd(
    spec: &ModelSpec,
    data: &Dataset,
    idx: &[usize],
    w: &[f64],
    steps: usize,
    eta: f64,
) -> Vec<f64> {
    let mut w = w.to_vec();
    for _ in 0..steps {
        let (_, g) = loss_and_grad(spec, &ParamVector::new(w.clone()).unwrap(), data, idx).unwrap();
        for (a, b) in w.iter_mut().zip(g.as_slice()) {
            *a -= eta * b;
        }
    }
    w
}

fn c7_fedavg_limit() -> Outcome {
    let train = synth_generate(300, 6, 3, 1.0, 71).unwrap();
    let test = synth_generate(100, 6, 3, 1.0, 72).unwrap();
    let spec = ModelSpec::mlp(6, 8, 3);
    let fl = |clients| FlConfig {
        rounds: 20,
        clients,
        local: LocalTrainConfig {
            tau: 3,
            eta: 0.1,
            batch_size: 300,
            momentum: 0.0,
        },
        policy: AllocationPolicy::Lossless,
        e1: 1.0,
        e2: 1.0,
        seed: 7,
        quantizer_seed: None,
    };
    let cfg = fl(4);
    let part = iid_partition(train.len(), 4, cfg.seed).unwrap();
    let mut server =
        ServerState::new(cfg.clone(), spec, &train, &test).map_err(|e| e.to_string())?;
    let mut w = spec.init_params(cfg.seed).unwrap().into_inner();
    let mut worst = 0.0f64;
    for _ in 0..cfg.rounds {
        let mut next = w.clone();
        for (idx, p) in part.client_indices.iter().zip(&part.weights) {
            let local = gd(&spec, &train, idx, &w, cfg.local.tau, cfg.local.eta);
            for j in 0..next.len() {
                next[j] += p * (local[j] - w[j]);
            }
        }
        w = next;
        server.step().map_err(|e| e.to_string())?;
        let diff = server
            .global_model()
            .as_slice()
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    ensure(worst <= FEDAVG_TOL, || {
        format!("FedAvg trajectory off by {worst:e}")
    })?;

    let single = fl(1);
    let out =
        fedaq::engine::run_federated(&single, spec, &train, &test).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..train.len()).collect();
    let w0 = spec.init_params(single.seed).unwrap();
    let sgd = gd(
        &spec,
        &train,
        &all,
        w0.as_slice(),
        single.rounds * single.local.tau,
        single.local.eta,
    );
    let diff = out
        .final_model
        .as_slice()
        .iter()
        .zip(&sgd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(diff <= FEDAVG_TOL, || {
        format!("n = 1 differs from sequential SGD by {diff:e}")
    })?;
    Ok(format!("20 rounds, max FedAvg deviation {worst:.1e}, n = 1 vs SGD {diff:.1e} (limit {FEDAVG_TOL:e})"))
}

fn run_reference(name: &str) -> Result<commands::Outcome, String> {
    let at =
        commands::load(&configs().join(name), &Overrides::default()).map_err(|e| e.to_string())?;
    commands::execute(&at, None).map_err(|e| e.to_string())
}

fn c8_energy_saving() -> Outcome {
    let fixed = run_reference("reference-fixed8.toml")?;
    let joint = run_reference("reference-joint.toml")?;
    let lossless = run_reference("reference-lossless.toml")?;
    let acc = |o: &commands::Outcome| {
        o.output
            .history
            .iter()
            .map(|r| r.test_accuracy)
            .collect::<Vec<_>>()
    };
    let target = *acc(&fixed).last().ok_or("empty run")?;
    let e_fixed = energy_to_reach(
        &fixed.output.ledger,
        &acc(&fixed),
        target,
        Crossing::AtLeast,
    )
    .unwrap();
    let e_joint = energy_to_reach(
        &joint.output.ledger,
        &acc(&joint),
        target,
        Crossing::AtLeast,
    )
    .ok_or_else(|| format!("adaptive run never reaches accuracy {target}"))?;
    let saving = 100.0 * (e_fixed - e_joint) / e_fixed;
    ensure(saving > 0.0, || {
        format!("saving {saving:.2}% is not positive")
    })?;
    let gap = (acc(&joint).last().unwrap() - acc(&lossless).last().unwrap()).abs();
    ensure(gap <= ACCURACY_GAP, || {
        format!("final accuracy {gap:.4} away from lossless")
    })?;
    ensure(
        (saving - GOLDEN_SAVING_PCT).abs() <= GOLDEN_SAVING_TOL_PCT,
        || {
            format!(
                "saving {saving:.2}% outside golden {GOLDEN_SAVING_PCT} +- {GOLDEN_SAVING_TOL_PCT}"
            )
        },
    )?;
    Ok(format!(
        "target acc {target}, saving {saving:.2}% (golden {GOLDEN_SAVING_PCT} +- {GOLDEN_SAVING_TOL_PCT}), gap to lossless {gap:.4}"
    ))
}

fn c9_range_trend() -> Outcome {
    let at = commands::load(&configs().join("mlp-trace.toml"), &Overrides::default())
        .map_err(|e| e.to_string())?;
    let seed = at.config.run.seed;
    let o = commands::execute(&at, Some(AllocationPolicy::Lossless)).map_err(|e| e.to_string())?;
    let (up, dn) = range_trends(&o.output, TREND_SKIP);
    let (ru, rd) = (up.spearman.unwrap_or(0.0), dn.spearman.unwrap_or(0.0));
    let detail = format!(
        "seed {seed}: uplink slope {:+.3e} rho {ru:+.3}, downlink slope {:+.3e} rho {rd:+.3}",
        up.slope, dn.slope
    );
    ensure(up.slope < 0.0 && dn.slope > 0.0, || {
        format!("wrong slope sign, {detail}")
    })?;
    ensure(
        ru.abs() >= TREND_MIN_RHO && rd.abs() >= TREND_MIN_RHO,
        || format!("weak trend, {detail}"),
    )?;
    Ok(detail)
}

fn c10_determinism() -> Outcome {
    let mut checked = Vec::new();
    for name in ["reference-joint.toml", "mlp-trace.toml"] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            let ov = Overrides {
                out_dir: Some(dir.path().into()),
                seed: None,
            };
            commands::cmd_run(&configs().join(name), &ov).map_err(|e| e.to_string())?;
        }
        for file in ["metrics.csv", "ledger.csv"] {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            ensure(a == b, || format!("{name}: {file} differs between runs"))?;
        }
        checked.push(name);
    }
    Ok(format!(
        "metrics.csv and ledger.csv byte-identical for {}",
        checked.join(", ")
    ))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "quantizer unbiasedness",
            limit: Duration::from_secs(30),
            run: c1_unbiasedness,
        },
        Criterion {
            id: 2,
            name: "quantizer variance bound",
            limit: Duration::from_secs(30),
            run: c2_variance_bound,
        },
        Criterion {
            id: 3,
            name: "closed-form allocation identities",
            limit: Duration::from_secs(5),
            run: c3_closed_form_identities,
        },
        Criterion {
            id: 4,
            name: "integer allocation oracle",
            limit: Duration::from_secs(120),
            run: c4_integer_oracle,
        },
        Criterion {
            id: 5,
            name: "bound evaluator",
            limit: Duration::from_secs(5),
            run: c5_bound_example,
        },
        Criterion {
            id: 6,
            name: "quantization error bound",
            limit: Duration::from_secs(60),
            run: c6_error_bound,
        },
        Criterion {
            id: 7,
            name: "FedAvg limit",
            limit: Duration::from_secs(60),
            run: c7_fedavg_limit,
        },
        Criterion {
            id: 8,
            name: "energy saving",
            limit: Duration::from_secs(60),
            run: c8_energy_saving,
        },
        Criterion {
            id: 9,
            name: "range trend",
            limit: Duration::from_secs(120),
            run: c9_range_trend,
        },
        Criterion {
            id: 10,
            name: "determinism",
            limit: Duration::from_secs(120),
            run: c10_determinism,
        },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        // the shared sweep is charged to criterion 1
        let elapsed = if c.id == 1 {
            sweep().1.max(start.elapsed())
        } else {
            start.elapsed()
        };
        let result = result.and_then(|msg| {
            if elapsed > c.limit {
                Err(format!(
                    "{msg}; took {:.1} s, limit {} s",
                    elapsed.as_secs_f64(),
                    c.limit.as_secs()
                ))
            } else {
                Ok(msg)
            }
        });
        let (tag, msg) = match &result {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!(
            "[{tag}] {:>2} {}: {msg} ({:.2} s)",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
