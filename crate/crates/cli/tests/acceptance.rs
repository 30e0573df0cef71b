//! End-to-end acceptance run: one verdict line per criterion, non-zero exit
//! if any criterion fails.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use qos_core::metrics::{correlate, ipdv_series, mean_abs_jitter_with, DelaySeries};
use qos_core::model::loss_from_throughput;
use qos_core::report::analyze_log;
use qos_core::sim::{simulate_summary, simulate_sweep, SimConfig, SweepAxis};
use qos_core::trace::{parse_log, round_sig9, synth_mobility_trace, write_log_string, MobilityScenario, QosLogRow};
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn qos() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qos"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn loss_identity() -> Verdict {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for (rho, buffer) in [(0.5, None), (0.9, Some(3)), (0.8, Some(10)), (1.2, Some(10)), (2.0, Some(1)), (0.99, Some(50))] {
        for seed in 0..2u64 {
            let config = SimConfig::new(1000.0, rho * 1000.0)
                .with_buffer(buffer)
                .with_packets(100_000)
                .with_seed(seed);
            let s = simulate_summary(&config).map_err(|e| e.to_string())?;
            let from_rates = loss_from_throughput(s.offered_lambda, s.throughput).map_err(|e| e.to_string())?;
            let rel = if s.loss == 0.0 { from_rates.abs() } else { (from_rates - s.loss).abs() / s.loss };
            worst = worst.max(rel);
            runs += 1;
        }
    }
    check(worst <= 1e-12, format!("worst relative error {worst:e} over {runs} runs"))?;
    Ok(format!("{runs} runs, worst relative error {worst:.1e}"))
}

fn mm1_sojourn() -> Verdict {
    let expected = 1.0 / (1000.0 - 500.0);
    let mut errors = Vec::new();
    for seed in 1..=5u64 {
        let s = simulate_summary(&SimConfig::new(1000.0, 500.0).with_seed(seed)).map_err(|e| e.to_string())?;
        errors.push((s.mean_sojourn - expected).abs() / expected);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    check(worst <= 0.02, format!("relative errors {errors:?}"))?;
    Ok(format!("5 seeds x 1e6 packets, worst |T - 2 ms| / 2 ms = {:.3}%", worst * 100.0))
}

fn mm1k_loss() -> Verdict {
    let (rho, k) = (0.8f64, 10);
    let expected = (1.0 - rho) * rho.powi(k) / (1.0 - rho.powi(k + 1));
    let config = SimConfig::new(1000.0, 800.0).with_buffer(Some(k as usize));
    let s = simulate_summary(&config).map_err(|e| e.to_string())?;
    let rel = (s.loss - expected).abs() / expected;
    check(rel <= 0.05, format!("loss {} vs {expected}", s.loss))?;
    Ok(format!("loss {:.5} vs closed form {expected:.5} ({:.2}%)", s.loss, rel * 100.0))
}

const REPORT_FILES: [&str; 4] = ["validation.csv", "runs.csv", "j_model.dat", "j_sim.dat"];

fn model_validation() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = qos()
        .args(["validate", "--capacity", "1000", "--grid", "0.2,0.3,0.4,0.5,0.6,0.7,0.8"])
        .args(["--packets", "1000000", "--seeds", "5", "--out"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.path().join("validation.csv")).map_err(|e| e.to_string())?;
    let failing: Vec<&str> = csv
        .lines()
        .filter(|l| l.ends_with(",false"))
        .map(|l| l.split(',').next().unwrap_or(""))
        .collect();
    match status.status.code() {
        Some(0) => Ok("every grid point within 15%".into()),
        Some(2) => {
            let committed = repo_root().join("reports/validation");
            for name in REPORT_FILES {
                let fresh = std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?;
                let kept = std::fs::read(committed.join(name)).map_err(|e| format!("{name}: {e}"))?;
                check(fresh == kept, format!("regenerated {name} differs from the committed report"))?;
            }
            Ok(format!(
                "exit 2: rho {} exceed 15%; discrepancy report regenerated byte-identical to reports/validation",
                failing.join(", ")
            ))
        }
        other => Err(format!(
            "unexpected exit {other:?}: {}",
            String::from_utf8_lossy(&status.stderr)
        )),
    }
}

fn throughput_loss_jitter_signs() -> Verdict {
    let grid: Vec<f64> = (0..9).map(|i| 0.6 + 0.1 * i as f64).collect();
    let base = SimConfig::new(1000.0, 500.0).with_buffer(Some(10));
    let runs = simulate_sweep(&base, &grid, 1, SweepAxis::Capacity).map_err(|e| e.to_string())?;
    let col = |f: fn(&qos_core::RunSummary) -> f64| runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>();
    let jitter = col(|s| s.empirical_jitter);
    let tput = correlate(&col(|s| s.throughput), &jitter).map_err(|e| e.to_string())?;
    let loss = correlate(&col(|s| s.loss), &jitter).map_err(|e| e.to_string())?;
    check(
        tput.spearman_rho <= -0.9 && loss.spearman_rho >= 0.9,
        format!("spearman(tput, jitter) {} spearman(loss, jitter) {}", tput.spearman_rho, loss.spearman_rho),
    )?;
    Ok(format!(
        "K=10, rho 0.6..1.4: spearman(tput, jitter) = {:+.3}, spearman(loss, jitter) = {:+.3}",
        tput.spearman_rho, loss.spearman_rho
    ))
}

fn pearson_of(rows: &[QosLogRow], a: fn(&QosLogRow) -> f64, b: fn(&QosLogRow) -> f64) -> Result<f64, String> {
    let x: Vec<f64> = rows.iter().map(a).collect();
    let y: Vec<f64> = rows.iter().map(b).collect();
    Ok(correlate(&x, &y).map_err(|e| e.to_string())?.pearson_r)
}

fn static_point_shape() -> Verdict {
    let rows = synth_mobility_trace(&MobilityScenario::static_point(1570.0, 600)).map_err(|e| e.to_string())?;
    let r = pearson_of(&rows, |r| r.tput_bps, |r| r.jitter_ms)?;
    check(r < -0.3, format!("pearson(tput, jitter) = {r}"))?;
    Ok(format!("1570 m, 600 s: pearson(tput, jitter) = {r:+.3}"))
}

fn constant_speed_shape() -> Verdict {
    let rows = synth_mobility_trace(&MobilityScenario::constant_speed(50.0, 600)).map_err(|e| e.to_string())?;
    let jl = pearson_of(&rows, |r| r.jitter_ms, |r| r.loss_fraction())?;
    let tj = pearson_of(&rows, |r| r.tput_bps, |r| r.jitter_ms)?;
    check(jl > 0.3 && tj < -0.3, format!("pearson(jitter, loss) = {jl}, pearson(tput, jitter) = {tj}"))?;
    Ok(format!("50 km/h, 600 s: pearson(jitter, loss) = {jl:+.3}, pearson(tput, jitter) = {tj:+.3}"))
}

fn variable_speed_shape() -> Verdict {
    let rows = synth_mobility_trace(&MobilityScenario::variable_speed(1800)).map_err(|e| e.to_string())?;
    let report = analyze_log(&rows, true).map_err(|e| e.to_string())?;
    let sign = |v: Option<f64>| v.map(f64::signum);
    let overall = &report.correlation.pearson;
    let pairs = [(0, 1), (1, 2), (0, 2)];
    let mut checked = Vec::new();
    for bin in report.by_speed.iter().flatten().filter(|b| b.n >= 30) {
        for (i, j) in pairs {
            let got = bin.correlation.pearson[i][j];
            check(
                got.is_some() && sign(got) == sign(overall[i][j]),
                format!("{} km/h bin: pair ({i}, {j}) = {got:?}, overall {:?}", bin.speed_kmh, overall[i][j]),
            )?;
        }
        checked.push(format!("{}", bin.speed_kmh));
    }
    check(checked.len() >= 2, "fewer than two populated speed bins")?;
    Ok(format!("signs of all three correlations agree in bins {} km/h", checked.join("/")))
}

fn canonical_rows() -> impl Strategy<Value = Vec<QosLogRow>> {
    let row = (
        1i64..4,
        (-90.0f64..=90.0, -180.0f64..=180.0, 0.0f64..=5e3, 0.0f64..=150.0, 0.0f64..=2e6, 0.0f64..=50.0),
        any::<u8>(),
        0u64..5000,
        0u64..5000,
    );
    (0i64..2_000_000_000, prop::collection::vec(row, 0..40)).prop_map(|(mut t, raw)| {
        raw.into_iter()
            .map(|(gap, f, integrity, a, b)| {
                t += gap;
                QosLogRow {
                    t_unix_s: t,
                    lat_deg: round_sig9(f.0),
                    lon_deg: round_sig9(f.1),
                    integrity,
                    dist_m: round_sig9(f.2),
                    speed_kmh: round_sig9(f.3),
                    tput_bps: round_sig9(f.4),
                    jitter_ms: round_sig9(f.5),
                    lost_pkts: a.min(b),
                    total_pkts: a.max(b),
                }
            })
            .collect()
    })
}

fn run_bytes(args: &[&str], file: &Path) -> Result<Vec<u8>, String> {
    let out = qos().args(args).output().map_err(|e| e.to_string())?;
    check(out.status.code() == Some(0), format!("qos {args:?} exited {:?}", out.status.code()))?;
    std::fs::read(file).map_err(|e| e.to_string())
}

fn determinism_and_round_trips() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let s = |path: &Path| path.to_str().unwrap().to_string();

    let trace = p("trace.csv");
    let synth = ["synth", "--preset", "variable-speed", "--duration", "300", "--seed", "7", "--out", &s(&trace)];
    check(run_bytes(&synth, &trace)? == run_bytes(&synth, &trace)?, "synth output differs between runs")?;

    let dump = p("packets.csv");
    let sim = ["simulate", "--capacity", "1000", "--rho", "0.9", "--buffer", "8", "--packets", "20000", "--seed", "3", "--trace-out", &s(&dump)];
    check(run_bytes(&sim, &dump)? == run_bytes(&sim, &dump)?, "packet dump differs between runs")?;

    let report = p("v").join("validation.csv");
    let validate = ["validate", "--grid", "0.3,0.6", "--packets", "20000", "--seeds", "2", "--out", &s(&p("v"))];
    let first = qos().args(validate).output().map_err(|e| e.to_string())?;
    let a = std::fs::read(&report).map_err(|e| e.to_string())?;
    let second = qos().args(validate).output().map_err(|e| e.to_string())?;
    let b = std::fs::read(&report).map_err(|e| e.to_string())?;
    check(first.status.code() == second.status.code() && a == b, "validation report differs between runs")?;

    let text = std::fs::read_to_string(&trace).map_err(|e| e.to_string())?;
    let rows = parse_log(text.as_bytes()).map_err(|e| e.to_string())?;
    check(write_log_string(&rows).map_err(|e| e.to_string())? == text, "synthetic log does not round-trip")?;

    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    runner
        .run(&canonical_rows(), |rows| {
            let text = write_log_string(&rows).unwrap();
            let again = write_log_string(&parse_log(text.as_bytes()).unwrap()).unwrap();
            prop_assert_eq!(again, text);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("synth, packet dump and report reruns byte-identical; log round trip holds on 256 generated corpora".into())
}

fn estimator_truths() -> Verdict {
    let est = |d: &[f64]| {
        mean_abs_jitter_with(&DelaySeries::new(d.to_vec()).unwrap(), 0, 0)
            .unwrap()
            .mean_abs_ipdv
    };
    check(est(&[1.0, 3.0, 2.0]) == 1.5, "[1, 3, 2] should give 1.5")?;
    check(est(&[0.25; 8]) == 0.0, "constant delays should give 0")?;
    // dyadic values keep every sum exact in binary floating point
    let d = [0.5, 1.25, 0.75, 2.0, 1.5, 0.125];
    let shifted: Vec<f64> = d.iter().map(|x| x + 3.0).collect();
    let scaled: Vec<f64> = d.iter().map(|x| x * 4.0).collect();
    check(est(&shifted) == est(&d), "translation changed the estimate")?;
    check(est(&scaled) == 4.0 * est(&d), "scaling by 4 did not scale the estimate")?;
    let ipdv = ipdv_series(&DelaySeries::new(d.to_vec()).unwrap()).map_err(|e| e.to_string())?;
    check(ipdv.iter().sum::<f64>() == d[5] - d[0], "ipdv does not telescope")?;
    Ok("hand cases, translation, scaling and telescoping exact".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("loss identity on counters", loss_identity),
        ("M/M/1 mean sojourn", mm1_sojourn),
        ("M/M/1/K loss", mm1k_loss),
        ("model vs simulated jitter", model_validation),
        ("throughput/loss/jitter rank signs", throughput_loss_jitter_signs),
        ("static trace tput-jitter", static_point_shape),
        ("constant-speed trace", constant_speed_shape),
        ("variable-speed bins", variable_speed_shape),
        ("determinism and round trips", determinism_and_round_trips),
        ("estimator truths", estimator_truths),
    ];
    let mut failed = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(criterion).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS [{secs:6.2}s] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{secs:6.2}s] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
