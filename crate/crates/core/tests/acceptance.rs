//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

#![allow(clippy::needless_range_loop)]

use trimdr::did_inference::{did_point_estimate, DidSample};
use trimdr::estimands::{ate_estimate, late_estimate, AteSample, EstimandOptions, LateSample};
use trimdr::first_stage::logistic;
use trimdr::legendre::LegendreBasis;
use trimdr::numkit::{mean, romberg, Matrix, RngStream};
use trimdr::sieve::fit_sieve;
use trimdr::simulation::{run_study, Cell, Dgp, DgpConfig, Method, SimulationReport};
use trimdr::trim_core::{alpha_hat_values, MomentValues, TrimConfig};

const SEED: u64 = 1;
const REPS: usize = 2000;
const N: usize = 500;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn record(out: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String) {
    println!("[{}] criterion {id:>2}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, name, pass, detail });
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn within_rel(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn study(dgp: Dgp, df: u32, methods: &[Method]) -> SimulationReport {
    let cfg = DgpConfig::new(dgp, df, N).unwrap();
    let report = run_study(&cfg, REPS, methods, SEED, None).unwrap();
    println!(
        "    {} df={df}: {:.1}s, {}",
        dgp.label(),
        report.runtime_secs,
        report
            .cells
            .iter()
            .map(|c| format!(
                "{} bias {:.4} sd {:.4} rmse {:.4} cov {:.4} mean_se {:.4} failed {}",
                c.method, c.bias, c.sd, c.rmse, c.coverage, c.mean_se, c.failures
            ))
            .collect::<Vec<_>>()
            .join("; ")
    );
    report
}

fn cell<'a>(r: &'a SimulationReport, m: &str) -> &'a Cell {
    r.cell(m).unwrap()
}

fn aipw_did(data: &DidSample, gamma: &[f64]) -> f64 {
    let p = data.x.ncols();
    let dy = data.delta_y();
    let dbar = mean(&data.d);
    let mut total = 0.0;
    for i in 0..data.n() {
        let row = data.x.row(i);
        let idx: f64 = (0..p).map(|j| row[j] * gamma[j]).sum();
        let nu: f64 = (0..p).map(|j| row[j] * gamma[p + j]).sum();
        let ps = logistic(idx);
        total += (data.d[i] / dbar - ps * (1.0 - data.d[i]) / ((1.0 - ps) * dbar)) * (dy[i] - nu);
    }
    total / data.n() as f64
}

fn criterion_5(out: &mut Vec<Outcome>) {
    let mut worst = 0.0f64;
    for s in 0..50u64 {
        let mut rng = RngStream::new(500 + s, 0);
        let n = 100 + 20 * s as usize;
        let x = Matrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.normal() });
        let mut d = vec![0.0; n];
        let mut y0 = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        for i in 0..n {
            d[i] = f64::from(rng.uniform() < logistic(0.3 * x[(i, 1)] - 0.5 * x[(i, 2)]));
            y0[i] = x[(i, 1)] + rng.normal();
            y1[i] = y0[i] + x[(i, 2)] + d[i] + rng.normal();
        }
        let data = DidSample::new(y0, y1, d, x).unwrap();
        let point = did_point_estimate(&data, &TrimConfig::untrimmed()).unwrap();
        let direct = aipw_did(&data, &point.first_stage.gamma);
        worst = worst.max((point.theta - direct).abs() / direct.abs().max(1e-300));
    }
    record(
        out,
        5,
        "h=0 equals untrimmed AIPW-DiD",
        worst <= 1e-12,
        format!("max relative gap {worst:.2e} over 50 datasets"),
    );
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let mut worst = 0.0f64;
    let mut rng = RngStream::new(600, 0);
    for _ in 0..20 {
        let n = 400;
        let c = 4.0 * rng.uniform() - 2.0;
        let a: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = a.iter().map(|v| c * v).collect();
        for h in [0.1, 0.3, 0.6] {
            let cfg = TrimConfig::new(h, 3, 3).unwrap();
            let res = alpha_hat_values("linear", MomentValues { a: a.clone(), b: b.clone() }, false, &cfg).unwrap();
            worst = worst.max((res.value - c).abs());
        }
    }
    record(out, 6, "exact bias correction for B = cA", worst <= 1e-8, format!("max |alpha - c| {worst:.2e}"));
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let mut worst = 0.0f64;
    let mut rng = RngStream::new(700, 0);
    for _ in 0..100 {
        let coef: [f64; 4] = std::array::from_fn(|_| 4.0 * rng.uniform() - 2.0);
        let n = 30 + (rng.uniform() * 300.0) as usize;
        let (lo, hi) = (0.3 * rng.uniform(), 0.7 + 0.3 * rng.uniform());
        let a: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        let b: Vec<f64> = a.iter().map(|v| coef[0] + coef[1] * v + coef[2] * v * v + coef[3] * v.powi(3)).collect();
        let fit = fit_sieve(&a, &b, 3).unwrap();
        let analytic = [coef[1], 2.0 * coef[2], 6.0 * coef[3]];
        for (kappa, target) in (1..=3).zip(analytic) {
            worst = worst.max((fit.deriv_at_zero(kappa).unwrap() - target).abs());
        }
    }
    record(
        out,
        7,
        "sieve exact on cubic regressions",
        worst <= 1e-6,
        format!("max derivative error {worst:.2e} over 100 designs"),
    );
}

fn criterion_8(out: &mut Vec<Outcome>) {
    let mut worst = 0.0f64;
    for degree in 0..=10 {
        let basis = LegendreBasis::new(degree);
        for i in 0..=degree {
            for j in i..=degree {
                let g = romberg(|a| basis.eval(a)[i] * basis.eval(a)[j], 0.0, 1.0, 11).unwrap();
                worst = worst.max((g - f64::from(u8::from(i == j))).abs());
            }
        }
    }
    let basis = LegendreBasis::new(10);
    let mut exact = true;
    for j in 0..=10usize {
        let norm = ((2 * j + 1) as f64).sqrt();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        // P_j(0) = (−1)^{j/2} (j−1)!!/j!! for even j, 0 for odd j.
        let mid = if j % 2 == 1 {
            0.0
        } else {
            let half = (1..=j / 2).fold(1.0, |acc, m| acc * (2 * m - 1) as f64 / (2 * m) as f64);
            if (j / 2) % 2 == 0 {
                half
            } else {
                -half
            }
        };
        exact &= (basis.eval(0.0)[j] - sign * norm).abs() <= 1e-12 * norm;
        exact &= (basis.eval(1.0)[j] - norm).abs() <= 1e-12 * norm;
        exact &= (basis.eval(0.5)[j] - norm * mid).abs() <= 1e-12 * norm;
    }
    record(
        out,
        8,
        "Legendre orthonormality and closed forms",
        worst <= 1e-8 && exact,
        format!("max Gram error {worst:.2e}; closed-form values {}", if exact { "match" } else { "differ" }),
    );
}

fn hand_did() -> f64 {
    let data = DidSample::new(
        vec![0.0; 4],
        vec![3.0, 5.0, 1.0, 1.0],
        vec![1.0, 1.0, 0.0, 0.0],
        Matrix::from_element(4, 1, 1.0),
    )
    .unwrap();
    did_point_estimate(&data, &TrimConfig::default()).unwrap().theta
}

fn criterion_10(out: &mut Vec<Outcome>) {
    let ones = |n| Matrix::from_element(n, 1, 1.0);
    let y = vec![1.0, 3.0, 2.0, 0.0, 1.0, 2.0];
    let d = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let ate =
        ate_estimate(&AteSample::new(y.clone(), d.clone(), ones(6)).unwrap(), &EstimandOptions::default()).unwrap();
    // Treated mean 2, control mean 1.
    let diff = 2.0 - 1.0;
    let yl = vec![4.0, 2.0, 3.0, 1.0, 0.0, 2.0, 1.0, 0.0];
    let dl = vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let zl = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let late = late_estimate(&LateSample::new(yl, dl, zl, ones(8)).unwrap(), &EstimandOptions::default()).unwrap();
    // E[Y|Z=1] = 2.5, E[Y|Z=0] = 0.75, E[D|Z=1] = 0.75, E[D|Z=0] = 0.25.
    let wald = (2.5 - 0.75) / (0.75 - 0.25);
    let pass = within(ate.theta, diff, 1e-10) && within(late.theta, wald, 1e-10);
    record(
        out,
        10,
        "intercept-only ATE and LATE collapse",
        pass,
        format!("ATE {:.12} vs {diff}; LATE {:.12} vs {wald}", ate.theta, late.theta),
    );
}

#[test]
fn acceptance() {
    let mut out = Vec::new();

    let dgp1 = study(Dgp::Dgp1, 30, &[Method::new_default()]);
    let c = cell(&dgp1, "NEW");
    record(
        &mut out,
        1,
        "DGP1 df=30 NEW",
        within_rel(c.sd, 0.249, 0.15)
            && within_rel(c.rmse, 0.249, 0.15)
            && within(c.coverage, 0.924, 0.03)
            && c.bias.abs() <= 0.02,
        format!(
            "BIAS {:.4} (|.|<=0.02), SD {:.4} / RMSE {:.4} (0.249 ±15%), 95% {:.4} (0.924 ±0.03)",
            c.bias, c.sd, c.rmse, c.coverage
        ),
    );

    let dgp2 = study(Dgp::Dgp2, 30, &[Method::con(), Method::new_default()]);
    let (con, new) = (cell(&dgp2, "CON"), cell(&dgp2, "NEW"));
    record(
        &mut out,
        2,
        "DGP2 df=30 NEW",
        within(new.bias, 0.006, 0.03) && within_rel(new.sd, 0.253, 0.15) && within(new.coverage, 0.943, 0.03),
        format!(
            "BIAS {:.4} (0.006 ±0.03), SD {:.4} (0.253 ±15%), 95% {:.4} (0.943 ±0.03)",
            new.bias, new.sd, new.coverage
        ),
    );
    let gap = con.sd / new.sd;
    record(
        &mut out,
        3,
        "DGP2 CON/NEW SD gap",
        gap >= 5.0,
        format!("CON SD {:.3} / NEW SD {:.3} = {gap:.1} (>= 5)", con.sd, new.sd),
    );

    let dgp3 = study(Dgp::Dgp3, 10, &[Method::new_default()]);
    let c3 = cell(&dgp3, "NEW");
    record(
        &mut out,
        4,
        "DGP3 df=10 NEW",
        within(c3.bias, -0.115, 0.04) && within_rel(c3.sd, 0.330, 0.15),
        format!("BIAS {:.4} (-0.115 ±0.04), SD {:.4} (0.330 ±15%)", c3.bias, c3.sd),
    );

    criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);

    let theta_hand = hand_did();
    let se_ratio = c.mean_se / c.sd;
    record(
        &mut out,
        9,
        "influence-function SE validity",
        within_rel(c.mean_se, c.sd, 0.10) && theta_hand == 3.0,
        format!(
            "DGP1 mean SE {:.4} vs SD {:.4} (ratio {se_ratio:.3}, ±10%); hand 2x2 theta {theta_hand}",
            c.mean_se, c.sd
        ),
    );

    criterion_10(&mut out);

    let cfg = DgpConfig::new(Dgp::Dgp2, 30, N).unwrap();
    let methods = [Method::con(), Method::new_default()];
    let one = run_study(&cfg, 100, &methods, SEED, Some(1)).unwrap().to_json();
    let four = run_study(&cfg, 100, &methods, SEED, Some(4)).unwrap().to_json();
    record(
        &mut out,
        11,
        "determinism across thread counts",
        one == four,
        format!("1 vs 4 threads, {} bytes", one.len()),
    );

    out.sort_by_key(|o| o.id);
    let failed: Vec<_> =
        out.iter().filter(|o| !o.pass).map(|o| format!("{} ({}: {})", o.id, o.name, o.detail)).collect();
    println!("{} of {} criteria passed", out.len() - failed.len(), out.len());
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
