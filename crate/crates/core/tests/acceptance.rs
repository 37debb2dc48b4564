//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//!
//! Soft criteria are reported but do not affect the exit status.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coagfrag::evolve::{step, Problem};
use coagfrag::io_cli::{comparable_payload, parse_config, report_json, solve, SolveOutcome};
use coagfrag::operators::{assemble_coagulation, assemble_fragmentation, DistributionState};
use coagfrag::verify::{
    chi_theta, discrete_weak_form, dlp_profile_check, fit_small_size_exponent, log_space, moment,
    n_theta, operator_weak_form, solve_bernstein, TestFunction,
};
use coagfrag::{
    CoagulationParams, DaughterKind, DaughterSpec, FragmentationParams, SizeGrid, Truncation,
};

struct Outcome {
    name: &'static str,
    passed: bool,
    soft: bool,
    detail: String,
}

#[derive(Default)]
struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn hard(&mut self, name: &'static str, passed: bool, detail: String) {
        self.record(name, passed, false, detail);
    }

    fn soft(&mut self, name: &'static str, passed: bool, detail: String) {
        self.record(name, passed, true, detail);
    }

    fn record(&mut self, name: &'static str, passed: bool, soft: bool, detail: String) {
        let tag = match (passed, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        println!("{tag} {name}: {detail}");
        self.outcomes.push(Outcome {
            name,
            passed,
            soft,
            detail,
        });
    }
}

fn config(alpha: f64, beta: f64, gamma: f64, grid: (f64, f64, usize), epsilons: &[f64]) -> String {
    let mut text = format!(
        "rho = 1.0\n\
         grid.x_min = {:e}\ngrid.x_max = {:e}\ngrid.n_cells = {}\n\
         coagulation.k0 = 1.0\ncoagulation.alpha = {alpha:?}\ncoagulation.beta = {beta:?}\n\
         fragmentation.a0 = 1.0\nfragmentation.gamma = {gamma:?}\n\
         fragmentation.daughter = \"power_law\"\nfragmentation.nu = 0.0\n\
         verify.exponential = [0.1, 1.0, 10.0]\nverify.fit_decades = 2.0\n\
         verify.moments = [-0.95, 0.25, 1.0, 2.0]\n",
        grid.0, grid.1, grid.2
    );
    for eps in epsilons {
        text.push_str(&format!("[[schedule]]\nepsilon = {eps:e}\n"));
    }
    text
}

const DEFAULT_EPS: [f64; 5] = [0.1, 0.03, 0.01, 0.003, 0.001];
const DEEP_EPS: [f64; 10] = [0.1, 0.03, 0.01, 0.003, 0.001, 3e-4, 1e-4, 3e-5, 1e-5, 1e-6];
const BASE_GRID: (f64, f64, usize) = (1e-6, 1e3, 180);
const WIDE_GRID: (f64, f64, usize) = (1e-6, 1e6, 300);

fn run(text: &str) -> (SolveOutcome, String) {
    let cfg = parse_config(text).expect("acceptance config");
    let out = solve(&cfg).expect("solve");
    let json = report_json(&out.report, out.wall_clock_seconds).expect("json");
    (out, json)
}

fn conservation(name: &str, out: &SolveOutcome) -> (bool, String) {
    let drift = out
        .report
        .stages
        .iter()
        .map(|s| s.max_mass_drift_rate)
        .fold(0.0, f64::max);
    let overflow = out
        .report
        .stages
        .iter()
        .map(|s| s.max_overflow_rate)
        .fold(0.0, f64::max);
    let reproj: usize = out.report.stages.iter().map(|s| s.reprojections).sum();
    (
        drift <= 1e-8 && overflow <= 1e-6,
        format!("{name}: drift/t={drift:.2e} overflow/t={overflow:.2e} reprojections={reproj}"),
    )
}

fn stage_moment(out: &SolveOutcome, stage: usize, m: f64) -> f64 {
    out.report.stages[stage]
        .moments
        .iter()
        .find(|(mm, _)| *mm == m)
        .map(|(_, v)| *v)
        .expect("moment configured")
}

fn specs() -> Vec<DaughterSpec> {
    let z: Vec<f64> = log_space(1e-6, 1.0, 400);
    let b: Vec<f64> = z.iter().map(|z| 6.0 * (1.0 - z)).collect();
    vec![
        DaughterSpec::power_law(0.0, 2.0).unwrap(),
        DaughterSpec::power_law(1.0, 2.0).unwrap(),
        DaughterSpec::power_law(-0.5, 1.5).unwrap(),
        DaughterSpec::power_law(2.5, 3.0).unwrap(),
        DaughterSpec::parabolic(1.0, 2.0).unwrap(),
        DaughterSpec::parabolic(0.5, 1.5).unwrap(),
        DaughterSpec::parabolic(3.0, 4.0).unwrap(),
        DaughterSpec::tabulated_normalized(z, b, 2.0).unwrap(),
    ]
}

fn has_closed_form(d: &DaughterSpec) -> bool {
    !matches!(d.kind(), DaughterKind::Tabulated { .. })
}

fn main() -> ExitCode {
    let mut suite = Suite::default();
    let started = Instant::now();

    // 1. Constant kernel against e^{-x}.
    let (c1, c1_json) = run(&config(0.0, 0.0, 1.0, BASE_GRID, &DEFAULT_EPS));
    {
        let g = c1.state.grid();
        let (mut num, mut den) = (0.0, 0.0);
        for ((x, w), f) in g.pivots().iter().zip(g.widths()).zip(c1.state.densities()) {
            if (1e-4..=20.0).contains(x) {
                num += (f - (-x).exp()).abs() * w;
                den += (-x).exp() * w;
            }
        }
        let l1 = num / den;
        let mass_err = (c1.state.mass() - 1.0).abs();
        let secs = c1.wall_clock_seconds;
        suite.hard(
            "criterion 1 (constant-kernel closed form)",
            c1.report.converged && l1 <= 0.02 && mass_err <= 1e-6 && secs <= 300.0,
            format!(
                "converged={} L1={l1:.3e} |M1-1|={mass_err:.2e} runtime={secs:.2}s",
                c1.report.converged
            ),
        );
    }

    // 2. Weak stationarity.
    let (generic, _) = run(&config(0.2, 0.5, 1.0, BASE_GRID, &DEFAULT_EPS));
    {
        let r1 = c1.report.analysis.weak_form.max_residual();
        let r2 = generic.report.analysis.weak_form.max_residual();
        suite.hard(
            "criterion 2 (weak stationarity)",
            generic.report.converged && r1 <= 1e-2 && r2 <= 1e-2,
            format!("constant-kernel max residual={r1:.3e}, generic max residual={r2:.3e}"),
        );
    }

    // 5, 6 and 8 share these runs; 3 checks all of them.
    let (product, _) = run(&config(0.25, 0.25, 0.25, BASE_GRID, &DEFAULT_EPS));
    let (t1, _) = run(&config(0.0, 0.5, 1.0, WIDE_GRID, &DEEP_EPS));
    let (t4, _) = run(&config(0.4, 0.5, 0.2, WIDE_GRID, &DEEP_EPS));

    // 3. Conservation.
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, out) in [
            ("constant", &c1),
            ("generic", &generic),
            ("product", &product),
            ("t1", &t1),
            ("t4", &t4),
        ] {
            let (pass, detail) = conservation(name, out);
            ok &= pass;
            parts.push(detail);
        }
        suite.hard("criterion 3 (mass conservation)", ok, parts.join("; "));
    }

    // 4. Bernstein oracle.
    {
        let b = solve_bernstein(1e4, 400).expect("bernstein");
        let residual_ok = b.max_residual <= 1e-6;
        let slope_ok = (b.slope_at_zero - 1.0).abs() <= 1e-3;
        let limit_ok = (b.limit - 1.0).abs() <= 1e-2;
        suite.hard(
            "criterion 4 (Bernstein oracle)",
            residual_ok && slope_ok && limit_ok,
            format!(
                "max residual={:.2e} [{}], U'(0)={:.6} [{}], U(1e4)={:.6} [{}]",
                b.max_residual,
                if residual_ok { "ok" } else { "fail" },
                b.slope_at_zero,
                if slope_ok { "ok" } else { "fail" },
                b.limit,
                if limit_ok { "ok" } else { "fail" },
            ),
        );
    }

    // 5. Product-kernel family.
    {
        let prof = dlp_profile_check(&product.state, 2.0, 1.0, 0.5, &log_space(1e-2, 1e2, 161))
            .expect("dlp");
        let dlp = prof.max_residual_on(1e-2, 1e2);
        let want = 0.25 + 2.0 / 3.0;
        let fit = product.report.analysis.exponent_fit.expect("exponent fit");
        suite.hard(
            "criterion 5 (product-kernel family)",
            product.report.converged && dlp <= 2e-2 && (fit.tau_hat - want).abs() <= 0.1,
            format!(
                "profile residual={dlp:.3e}, tau_hat={:.4} (predicted {want:.4}, R2={:.5})",
                fit.tau_hat, fit.r_squared
            ),
        );
    }

    // 6. Exponent predictions (soft).
    for (name, out, want) in [
        ("criterion 6 (exponent prediction, gamma > alpha)", &t1, 0.0),
        ("criterion 6 (exponent prediction, gamma < alpha)", &t4, 1.7),
    ] {
        let predicted = out.report.analysis.tau_predicted.tau().unwrap_or(f64::NAN);
        match fit_small_size_exponent(&out.state, 2.0) {
            Ok(fit) => suite.soft(
                name,
                out.report.converged && (fit.tau_hat - want).abs() <= 0.15,
                format!(
                    "tau_hat={:.4} over [{:.2e}, {:.2e}] (predicted {predicted:.4}, R2={:.5})",
                    fit.tau_hat, fit.x_lo, fit.x_hi, fit.r_squared
                ),
            ),
            Err(e) => suite.soft(name, false, format!("fit failed: {e}")),
        }
    }

    // 7a. Closed forms against quadrature.
    {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for d in specs().iter().filter(|d| has_closed_form(d)) {
            let ms = d.m_star().value;
            for k in 1..=5 {
                let m = ms + 0.1 + 0.9 * k as f64;
                let exact = d.frak_b(m).unwrap();
                let quad = d.frak_b_quadrature(m).unwrap();
                worst = worst.max((exact - quad).abs() / exact.abs());
                count += 1;
            }
        }
        suite.hard(
            "criterion 7a (moment closed forms vs quadrature)",
            worst <= 1e-10,
            format!("{count} samples, worst relative difference {worst:.2e}"),
        );
    }

    // 7b. b_m < 1 exactly when m > 1.
    {
        let mut ok = true;
        for d in specs() {
            for m in [0.5, 0.99, 1.01, 2.0] {
                let b = d.frak_b(m).unwrap();
                ok &= (b < 1.0) == (m > 1.0);
            }
        }
        suite.hard(
            "criterion 7b (b_m < 1 iff m > 1)",
            ok,
            "m in {0.5, 0.99, 1.01, 2}".into(),
        );
    }

    // 7c. No mass lost by breakage.
    {
        let mut worst: f64 = 0.0;
        for d in specs() {
            for y in [1e-4, 0.1, 1.0, 30.0] {
                let id = TestFunction::capped_linear(2.0 * y).unwrap();
                worst = worst.max(n_theta(&id, &d, y).unwrap().abs() / y);
            }
        }
        suite.hard(
            "criterion 7c (N_identity = 0)",
            worst <= 1e-10,
            format!("worst |N|/y = {worst:.2e}"),
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20261019);

    // 7d. chi <= 0 for concave test functions.
    {
        let mut worst = f64::NEG_INFINITY;
        let tests = [
            TestFunction::exponential(1.0).unwrap(),
            TestFunction::exponential(0.01).unwrap(),
            TestFunction::capped_linear(1.0).unwrap(),
            TestFunction::power_small(0.5, 3.0).unwrap(),
            TestFunction::power_small(1.0, 0.1).unwrap(),
        ];
        for _ in 0..10_000 {
            let x = 10f64.powf(rng.random_range(-6.0..3.0));
            let y = 10f64.powf(rng.random_range(-6.0..3.0));
            for t in &tests {
                worst = worst.max(chi_theta(t, x, y).unwrap());
            }
        }
        suite.hard(
            "criterion 7d (chi <= 0 for concave theta)",
            worst <= 0.0,
            format!("10^4 pairs, max chi = {worst:.2e}"),
        );
    }

    // 7e. Positivity of the stepper.
    {
        let g = Arc::new(SizeGrid::geometric(1e-4, 1e3, 80).unwrap());
        let c = CoagulationParams::new(1.0, 0.2, 0.5).unwrap();
        let f = FragmentationParams::new(1.0, 1.0, DaughterSpec::power_law(-0.5, 1.5).unwrap())
            .unwrap();
        let p = Problem::new(g.clone(), &c, &f, Truncation::new(None, 0.01).unwrap()).unwrap();
        let mut ok = true;
        let mut min_value = f64::INFINITY;
        for trial in 0..20 {
            let dens: Vec<f64> = (0..g.len())
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        10f64.powf(rng.random_range(-8.0..2.0))
                    }
                })
                .collect();
            let s = DistributionState::new(g.clone(), dens, 0.0).unwrap();
            let dt = 10f64.powf(-3.0 + 6.0 * trial as f64 / 19.0);
            let (next, _) = step(&p.coag, &p.frag, &s, dt).unwrap();
            for v in next.densities() {
                ok &= *v >= 0.0 && v.is_finite();
                min_value = min_value.min(*v);
            }
        }
        suite.hard(
            "criterion 7e (positivity of step)",
            ok,
            format!("20 random states, dt in [1e-3, 1e3], min density {min_value:.2e}"),
        );
    }

    // 7f. Weak form through the operators and through chi/N.
    {
        let g = Arc::new(SizeGrid::geometric(1e-4, 1e2, 70).unwrap());
        let mut worst: f64 = 0.0;
        for trial in 0..20 {
            let alpha = rng.random_range(0.0..0.45);
            let c = CoagulationParams::new(1.0, alpha, 0.5).unwrap();
            let d = if trial % 2 == 0 {
                DaughterSpec::power_law(rng.random_range(-0.4..2.0), 2.0).unwrap()
            } else {
                DaughterSpec::parabolic(rng.random_range(0.8..3.0), 2.0).unwrap()
            };
            let f = FragmentationParams::new(1.0, rng.random_range(0.1..1.5), d).unwrap();
            let t = Truncation::new(None, 0.01).unwrap();
            let coag = assemble_coagulation(g.clone(), &c, &t);
            let frag = assemble_fragmentation(g.clone(), &f, &t).unwrap();
            let dens: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..3.0)).collect();
            let s = DistributionState::new(g.clone(), dens, 0.0).unwrap();
            let th = TestFunction::exponential(10f64.powf(rng.random_range(-1.0..1.0))).unwrap();
            let theta: Vec<f64> = g.pivots().iter().map(|x| th.eval(*x)).collect();
            let dw = discrete_weak_form(&coag, &frag, &s, &theta).unwrap();
            let ow = operator_weak_form(&coag, &frag, &s, &theta).unwrap();
            worst = worst
                .max((dw.total() - ow).abs() / (dw.coagulation.abs() + dw.fragmentation.abs()));
        }
        suite.hard(
            "criterion 7f (weak form consistency)",
            worst <= 1e-8,
            format!("20 random states, worst relative difference {worst:.2e}"),
        );
    }

    // 7g. Determinism.
    {
        let (_, again) = run(&config(0.0, 0.0, 1.0, BASE_GRID, &DEFAULT_EPS));
        let same = comparable_payload(&c1_json).unwrap() == comparable_payload(&again).unwrap();
        suite.hard(
            "criterion 7g (deterministic report)",
            same,
            format!("{} bytes compared", c1_json.len()),
        );
    }

    // 8. Moment finiteness.
    {
        let last = product.report.stages.len() - 1;
        let m_prev = stage_moment(&product, last - 1, 0.25);
        let m_last = stage_moment(&product, last, 0.25);
        let change = (m_last - m_prev).abs() / m_prev;
        let t1_neg = moment(&t1.state, -0.95);
        suite.hard(
            "criterion 8 (moment finiteness)",
            m_last.is_finite() && change <= 0.05,
            format!("product M_0.25: {m_prev:.5} -> {m_last:.5} (change {change:.2e}); reported t1 M_-0.95 = {t1_neg:.4e}"),
        );
    }

    let hard_failures: Vec<&Outcome> = suite
        .outcomes
        .iter()
        .filter(|o| !o.passed && !o.soft)
        .collect();
    let soft_failures = suite
        .outcomes
        .iter()
        .filter(|o| !o.passed && o.soft)
        .count();
    println!(
        "{} criteria checked in {:.1}s: {} hard failure(s), {} soft failure(s)",
        suite.outcomes.len(),
        started.elapsed().as_secs_f64(),
        hard_failures.len(),
        soft_failures
    );
    for o in &hard_failures {
        eprintln!("failed: {} ({})", o.name, o.detail);
    }
    if hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
