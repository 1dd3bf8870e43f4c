//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::{
    elbo_fd_error, elbo_parity_error, endpoint_errors, fixed_step_slope, kl_worst_z,
    mask_fuzz_mismatches,
};
use gridlode::eval::EvalReport;
use gridlode::griddata::{
    generate_dataset, read_dataset, unify_time_grid, write_dataset, FeederSpec, SamplingConfig,
    TAN_PHI,
};
use gridlode::lode::{kl_divergence, GradMode, LodeConfig, LogEntry, TrainConfig};
use gridlode::odesolve::SolverConfig;
use gridlode::workflow::{
    evaluate_holdout_imputation, evaluate_holdout_prediction, fit, Split, HOLDOUT_FRAC,
    PREDICT_SPLIT_MIN,
};

const SEED: u64 = 2024;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {} ({}): {}", o.id, o.name, o.detail);
}

fn solver_order() -> Outcome {
    let (slope, _) = fixed_step_slope();
    let errs = endpoint_errors(&SolverConfig::default());
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome {
        id: 4,
        name: "solver order",
        pass: (slope - 5.0).abs() <= 0.3 && worst <= 1e-6,
        detail: format!("slope {slope:.3}, worst analytic endpoint error {worst:.2e}"),
    }
}

fn gradient_parity() -> Outcome {
    let parity = elbo_parity_error();
    let fd_b = elbo_fd_error(GradMode::Backprop);
    let fd_a = elbo_fd_error(GradMode::Adjoint);
    Outcome {
        id: 5,
        name: "gradient parity",
        pass: parity <= 1e-4 && fd_b <= 1e-3 && fd_a <= 1e-3,
        detail: format!(
            "adjoint vs backprop {parity:.2e}; vs finite differences {fd_b:.2e} (backprop), {fd_a:.2e} (adjoint)"
        ),
    }
}

fn kl() -> Outcome {
    let z = kl_worst_z(20, 100_000);
    let zero = kl_divergence(&[0.0; 16], &[1.0; 16]);
    Outcome {
        id: 6,
        name: "KL correctness",
        pass: z <= 3.0 && zero == 0.0,
        detail: format!("worst deviation {z:.2} standard errors; KL(N(0,1)||N(0,1)) = {zero}"),
    }
}

fn masks() -> Outcome {
    let bad = mask_fuzz_mismatches(100);
    Outcome {
        id: 7,
        name: "mask semantics",
        pass: bad == 0,
        detail: format!("{bad} of 100 fuzz trials changed loss, gradients or posterior"),
    }
}

fn pipeline() -> Outcome {
    let mut worst_round_trip = 0.0f64;
    let mut idempotent = true;
    let mut csv_identical = true;
    let mut pf_exact = true;
    for seed in [SEED, 1, 2] {
        let (truth, ds) =
            generate_dataset(&FeederSpec::default(), &SamplingConfig::default(), seed).unwrap();
        let back = ds.normalize().unwrap().denormalize().unwrap();
        for (a, b) in ds.records.iter().zip(&back.records) {
            let scale = a.observed().fold(1.0f64, |m, (_, v)| m.max(v.abs()));
            for ((_, x), (_, y)) in a.observed().zip(b.observed()) {
                worst_round_trip = worst_round_trip.max((x - y).abs() / scale);
            }
        }
        idempotent &= unify_time_grid(&ds.records).unwrap() == ds;
        let mut first = Vec::new();
        write_dataset(&ds, &mut first).unwrap();
        let reread = read_dataset(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_dataset(&reread, &mut second).unwrap();
        csv_identical &= first == second && reread == ds;
        pf_exact &= truth.profiles.iter().all(|p| {
            p.p_kw
                .iter()
                .zip(&p.q_kvar)
                .all(|(p, q)| q.to_bits() == (p * TAN_PHI).to_bits())
        });
    }
    Outcome {
        id: 8,
        name: "data pipeline",
        pass: worst_round_trip <= 1e-12 && idempotent && csv_identical && pf_exact,
        detail: format!(
            "normalization round trip {worst_round_trip:.1e}; union idempotent {idempotent}; \
             CSV byte-identical {csv_identical}; power factor exact {pf_exact}"
        ),
    }
}

/// Generate, split, train and evaluate with a small model.
fn small_run() -> (Vec<LogEntry>, String) {
    let (truth, raw) =
        generate_dataset(&FeederSpec::default(), &SamplingConfig::default(), SEED).unwrap();
    let split = Split::new(&raw, HOLDOUT_FRAC, SEED).unwrap();
    let model_cfg = LodeConfig {
        latent_dim: 4,
        gru_hidden: 8,
        dyn_hidden: 16,
        dyn_layers: 1,
        ..LodeConfig::default()
    };
    let cfg = TrainConfig {
        iterations: 1,
        seed: SEED,
        solver: SolverConfig::with_tolerances(1e-4, 1e-5),
        ..TrainConfig::default()
    };
    let fitted = fit(&split, model_cfg, &cfg).unwrap();
    let imp = evaluate_holdout_imputation(&fitted.model, &raw, &split, &truth, cfg.solver, "small")
        .unwrap();
    let pred = evaluate_holdout_prediction(
        &fitted.model,
        &raw,
        &split,
        &truth,
        PREDICT_SPLIT_MIN,
        cfg.solver,
        "small",
    )
    .unwrap();
    (fitted.log, imp.to_csv() + &pred.to_csv())
}

fn determinism() -> Outcome {
    let (log_a, rep_a) = small_run();
    let (log_b, rep_b) = small_run();
    let logs = log_a == log_b && !log_a.is_empty();
    Outcome {
        id: 9,
        name: "determinism",
        pass: logs && rep_a == rep_b,
        detail: format!(
            "{} logged steps identical {logs}; reports identical {}",
            log_a.len(),
            rep_a == rep_b
        ),
    }
}

struct Full {
    log: Vec<LogEntry>,
    imputation: EvalReport,
    prediction: EvalReport,
    train_s: f64,
}

/// The default configuration on the default synthetic feeder.
fn full_run() -> Full {
    let (truth, raw) =
        generate_dataset(&FeederSpec::default(), &SamplingConfig::default(), SEED).unwrap();
    let split = Split::new(&raw, HOLDOUT_FRAC, SEED).unwrap();
    let cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let fitted = fit(&split, LodeConfig::default(), &cfg).unwrap();
    let train_s = started.elapsed().as_secs_f64();
    let imputation =
        evaluate_holdout_imputation(&fitted.model, &raw, &split, &truth, cfg.solver, "default")
            .unwrap();
    let prediction = evaluate_holdout_prediction(
        &fitted.model,
        &raw,
        &split,
        &truth,
        PREDICT_SPLIT_MIN,
        cfg.solver,
        "default",
    )
    .unwrap();
    Full {
        log: fitted.log,
        imputation,
        prediction,
        train_s,
    }
}

fn imputation(run: &Full) -> Outcome {
    let r = &run.imputation;
    let total = run.train_s + r.runtime_s;
    Outcome {
        id: 1,
        name: "imputation",
        pass: r.lode_mse_pct < r.baseline_mse_pct && r.lode_mse_pct <= 1.0 && total <= 900.0,
        detail: format!(
            "model {:.3}% vs linear interpolation {:.3}% over {} points; {total:.0} s",
            r.lode_mse_pct, r.baseline_mse_pct, r.points
        ),
    }
}

fn prediction(run: &Full) -> Outcome {
    let r = &run.prediction;
    Outcome {
        id: 2,
        name: "prediction",
        pass: r.lode_mse_pct <= 2.0 && r.lode_mse_pct < r.baseline_mse_pct,
        detail: format!(
            "model {:.3}% vs hold-last {:.3}% over {} points",
            r.lode_mse_pct, r.baseline_mse_pct, r.points
        ),
    }
}

fn convergence(run: &Full) -> Outcome {
    let log = &run.log;
    let finite = log
        .iter()
        .all(|e| e.neg_elbo.is_finite() && e.mse.is_finite());
    let (first, last) = (log.first().unwrap(), log.last().unwrap());
    let elbo_ok = last.neg_elbo < 0.5 * first.neg_elbo;
    let mse_ok = last.mse < 0.5 * first.mse;
    Outcome {
        id: 3,
        name: "loss convergence",
        pass: finite && elbo_ok && mse_ok,
        detail: format!(
            "{} steps, all finite {finite}; neg ELBO {:.1} -> {:.1}; MSE {:.3}% -> {:.3}%",
            log.len(),
            first.neg_elbo,
            last.neg_elbo,
            100.0 * first.mse,
            100.0 * last.mse
        ),
    }
}

fn main() {
    let mut outcomes = Vec::new();
    let started = Instant::now();
    for check in [
        solver_order,
        gradient_parity,
        kl,
        masks,
        pipeline,
        determinism,
    ] {
        let o = check();
        line(&o);
        outcomes.push(o);
    }
    println!(
        "property criteria took {:.0} s",
        started.elapsed().as_secs_f64()
    );

    let run = full_run();
    for check in [imputation, prediction, convergence] {
        let o = check(&run);
        line(&o);
        outcomes.push(o);
    }

    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", outcomes.len());
    } else {
        println!("acceptance: criteria {failed:?} fail");
        std::process::exit(1);
    }
}
