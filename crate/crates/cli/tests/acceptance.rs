//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails.
//!
//! Reference values are computed here by independent code (hand counts,
//! closed forms, brute-force reimplementations) rather than by calling back
//! into the library under test.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use designspace::complexity::network_metrics;
use designspace::evalstore::{apply_surrogate, SurrogateConfig};
use designspace::popstats::{bootstrap_best, random_search_efficiency, BootstrapConfig, Edf};
use designspace::quantlin::{fit_linear, gen_block_widths, to_stages, FitGrid};
use designspace::sampler::{derive_seed, sample_regnet, SamplerConfig};
use designspace::space::check_constraints;
use designspace::{
    design_space_size, AnyNetSpec, BlockType, DesignSpaceDef, PopulationFile, StageSpec, StemType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---- criterion 1 ----

fn resnet50() -> AnyNetSpec {
    let stages = [(3, 256), (4, 512), (6, 1024), (3, 2048)]
        .iter()
        .map(|&(d, w)| StageSpec::new(d, w, 4.0, w / 4))
        .collect();
    AnyNetSpec::new(BlockType::R, stages).with_stem(StemType::Resnet, 64)
}

/// Layer-by-layer count: (flops, params, acts).
fn resnet50_hand_count() -> (u64, u64, u64) {
    let mut total = (0u64, 0u64, 0u64);
    let mut conv = |k: u64, cin: u64, cout: u64, r: u64| {
        total.0 += k * k * cin * cout * r * r;
        total.1 += k * k * cin * cout;
        total.2 += cout * r * r;
    };
    // 7x7 stride 2 at 224 -> 112, then a 3x3 stride 2 max-pool -> 56
    conv(7, 3, 64, 112);
    let mut r = 56;
    let mut w_in = 64;
    for (i, &(d, w)) in [(3u64, 256u64), (4, 512), (6, 1024), (3, 2048)].iter().enumerate() {
        let inner = w / 4;
        for j in 0..d {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            let r_out = r / stride;
            conv(1, w_in, inner, r);
            conv(3, inner, inner, r_out);
            conv(1, inner, w, r_out);
            if j == 0 {
                conv(1, w_in, w, r_out);
            }
            r = r_out;
            w_in = w;
        }
    }
    // average pool then the classifier; no activation counted for the FC
    total.0 += 2048 * 1000;
    total.1 += 2048 * 1000;
    total
}

fn criterion_1() -> Outcome {
    let c = network_metrics(&resnet50()).map_err(|e| e.to_string())?;
    let (flops, params, acts) = resnet50_hand_count();
    ensure!(c.params == params, "params {} != hand count {}", c.params, params);
    ensure!(c.flops == flops, "flops {} != hand count {}", c.flops, flops);
    ensure!(c.acts == acts, "acts {} != hand count {}", c.acts, acts);
    ensure!(rel(c.flops as f64, 4.1e9) <= 0.02, "flops {} not within 2% of 4.1e9", c.flops);
    ensure!(rel(c.acts as f64, 11.1e6) <= 0.02, "acts {} not within 2% of 11.1e6", c.acts);
    Ok(format!(
        "flops {:.3}G ({:+.2}%), acts {:.3}M ({:+.2}%), params {} = hand count",
        c.flops as f64 / 1e9,
        100.0 * (c.flops as f64 / 4.1e9 - 1.0),
        c.acts as f64 / 1e6,
        100.0 * (c.acts as f64 / 11.1e6 - 1.0),
        c.params
    ))
}

// ---- criterion 2 ----

fn criterion_2() -> Outcome {
    let p = |x: f64, k: i32| x.powi(k);
    let fact4 = 24.0;
    let table = [
        ("anynetx-a", p(16.0 * 128.0 * 3.0 * 6.0, 4), "1.8e18"),
        ("anynetx-b", p(16.0 * 128.0 * 6.0, 4) * 3.0, "6.8e16"),
        ("anynetx-c", p(16.0 * 128.0, 4) * 3.0 * 6.0, "3.2e14"),
        ("anynetx-d", p(16.0 * 128.0, 4) * 3.0 * 6.0 / fact4, "1.3e13"),
        ("anynetx-e", p(16.0 * 128.0, 4) * 3.0 * 6.0 / (fact4 * fact4), "5.5e11"),
        ("regnetx", p(64.0, 4) * 6.0 * 3.0, "3.0e8"),
    ];
    let mut shown = Vec::new();
    for (name, formula, paper) in table {
        let def = DesignSpaceDef::preset(name).map_err(|e| e.to_string())?;
        let got = design_space_size(&def);
        ensure!(rel(got, formula) <= 0.02, "{name}: {got:.3e} vs formula {formula:.3e}");
        ensure!(format!("{got:.1e}") == paper, "{name}: {got:.3e} does not round to {paper}");
        shown.push(format!("{name} {got:.2e}"));
    }
    Ok(shown.join(", "))
}

// ---- criterion 3 ----

fn criterion_3() -> Outcome {
    let grid = FitGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w0s: Vec<f64> = grid.w0.iter().copied().filter(|&v| v <= 248.0).collect();
    let was: Vec<f64> = grid.wa.iter().copied().filter(|&v| v < 256.0).collect();
    let wms: Vec<f64> = grid.wm.iter().copied().filter(|&v| (1.5..=3.0).contains(&v)).collect();
    let mut four_stage = 0;
    for i in 0..1000 {
        let d = rng.gen_range(1..64usize);
        let w0 = w0s[rng.gen_range(0..w0s.len())];
        let wa = was[rng.gen_range(0..was.len())];
        let wm = wms[rng.gen_range(0..wms.len())];
        let orig = gen_block_widths(d, w0, wa, wm).map_err(|e| e.to_string())?;
        let stages = to_stages(&orig, 8, Some(4));
        if stages.clone().accepted().is_some() {
            four_stage += 1;
        }
        let fit = fit_linear(&orig.w).map_err(|e| e.to_string())?;
        ensure!(fit.e_fit == 0.0, "case {i} ({d},{w0},{wa},{wm}): e_fit {}", fit.e_fit);
        let regen = gen_block_widths(d, fit.w0, fit.wa, fit.wm).map_err(|e| e.to_string())?;
        ensure!(regen.w == orig.w, "case {i}: regenerated widths differ");
        ensure!(
            to_stages(&regen, 8, Some(4)) == stages,
            "case {i}: regenerated stages differ"
        );
    }
    Ok(format!("1000/1000 exact ({four_stage} with 4 stages)"))
}

// ---- criterion 4 ----

/// Eqs. 2-4 evaluated directly.
fn brute_widths(d: usize, w0: f64, wa: f64, wm: f64) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let u = w0 + wa * j as f64;
            let s = (u / w0).ln() / wm.ln();
            w0 * wm.powf(s.round())
        })
        .collect()
}

fn criterion_4() -> Outcome {
    for (d, w0, wa, wm, want) in [
        (4, 48.0, 48.0, 2.0, vec![48.0, 96.0, 192.0, 192.0]),
        (3, 24.0, 36.0, 2.5, vec![24.0, 60.0, 150.0]),
    ] {
        let got = gen_block_widths(d, w0, wa, wm).map_err(|e| e.to_string())?.w;
        let brute = brute_widths(d, w0, wa, wm);
        for j in 0..d {
            ensure!(
                (got[j] - want[j]).abs() < 1e-9 && (brute[j] - want[j]).abs() < 1e-9,
                "({d},{w0},{wa},{wm}) block {j}: got {} brute {} want {}",
                got[j],
                brute[j],
                want[j]
            );
        }
    }
    Ok("[48,96,192,192] and [24,60,150]".into())
}

// ---- criterion 5 ----

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(1..300);
        // a coarse grid in some cases to force ties
        let coarse = case % 3 == 0;
        let errors: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = rng.gen();
                if coarse {
                    (e * 20.0).floor() / 20.0
                } else {
                    e
                }
            })
            .collect();
        let f = Edf::new(&errors).map_err(|e| e.to_string())?;
        let mut xs = errors.clone();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let (min, max) = (xs[0], *xs.last().unwrap());
        ensure!(f.eval(min) == 0.0, "case {case}: F(min) = {}", f.eval(min));
        ensure!(f.eval(max + 1e-12) == 1.0, "case {case}: F(max+eps) != 1");
        let mut prev = 0.0;
        for &x in &xs {
            for e in [x, x.next_up()] {
                let v = f.eval(e);
                ensure!(v >= prev, "case {case}: F decreases at {e}");
                prev = v;
            }
        }
        // on (x_i, x_{i+1}] the EDF equals #{e <= x_i} / n
        let integral: f64 = xs
            .windows(2)
            .map(|w| {
                let below = errors.iter().filter(|&&e| e <= w[0]).count() as f64 / n as f64;
                (w[1] - w[0]) * (1.0 - below)
            })
            .sum();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let gap = (mean - (min + integral)).abs();
        worst = worst.max(gap);
        ensure!(gap <= 1e-9, "case {case}: integral identity off by {gap:e}");
    }
    Ok(format!("1000 vectors, worst integral gap {worst:.1e}"))
}

// ---- criterion 6 ----

fn type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The footnote procedure written out step by step.
fn brute_bootstrap(pairs: &[(f64, f64)], frac: f64, reps: usize, ci: f64, seed: u64) -> (f64, f64, f64) {
    let mut data = pairs.to_vec();
    data.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    let n = data.len();
    let m = (frac * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut best: Option<usize> = None;
        for _ in 0..m {
            let i = rng.gen_range(0..n);
            best = match best {
                Some(b) if data[b].1 < data[i].1 || (data[b].1 == data[i].1 && b < i) => Some(b),
                _ => Some(i),
            };
        }
        xs.push(data[best.unwrap()].0);
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - ci) / 2.0;
    (type7(&xs, tail), type7(&xs, 0.5), type7(&xs, 1.0 - tail))
}

fn criterion_6() -> Outcome {
    let cfg = BootstrapConfig::with_seed(6);
    ensure!(
        (cfg.frac, cfg.reps, cfg.ci) == (0.25, 10_000, 0.95),
        "defaults are {:?}",
        cfg
    );
    let flat: Vec<(f64, f64)> = (0..50).map(|i| (7.0, i as f64 / 50.0)).collect();
    let b = bootstrap_best(&flat, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        (b.ci_low, b.median, b.ci_high) == (7.0, 7.0, 7.0),
        "degenerate CI {b:?}"
    );

    let pairs: Vec<(f64, f64)> = (1..=100).map(|x| (x as f64, x as f64 / 1000.0)).collect();
    let b = bootstrap_best(&pairs, &cfg).map_err(|e| e.to_string())?;
    let brute = brute_bootstrap(&pairs, 0.25, 10_000, 0.95, 6);
    ensure!(
        (b.ci_low, b.median, b.ci_high) == brute,
        "library {:?} vs brute force {:?}",
        (b.ci_low, b.median, b.ci_high),
        brute
    );
    ensure!(b.median <= 10.0, "median {} > 10", b.median);

    // the best of 25 draws from {1..100}: P(min <= k) = 1 - ((100 - k) / 100)^25
    let upper = (1..=100)
        .find(|&k| 1.0 - ((100 - k) as f64 / 100.0).powi(25) >= 0.975)
        .unwrap() as f64;
    ensure!(b.ci_high <= upper, "ci_high {} above the analytic 97.5% point {upper}", b.ci_high);
    let xs: Vec<f64> = (1..=100).map(|x| x as f64).collect();
    let p10 = type7(&xs, 0.10);
    Ok(format!(
        "brute-force match; CI [{}, {}], median {}; ci_high <= analytic bound {upper} \
         (p10 of x = {p10}: unreachable, P(min of 25 > 10) = {:.3})",
        b.ci_low,
        b.ci_high,
        b.median,
        0.9f64.powi(25)
    ))
}

// ---- criterion 7 ----

fn criterion_7() -> Outcome {
    let window = (360e6, 400e6);
    let mut notes = Vec::new();
    for name in ["anynetx-a", "anynetx-e"] {
        let def = DesignSpaceDef::preset(name).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for workers in [1, 4, 8] {
            let mut cfg = SamplerConfig::new(def.clone(), window, 500, 7);
            cfg.workers = Some(workers);
            let pop = PopulationFile::sample(&cfg, None).map_err(|e| e.to_string())?;
            outputs.push(pop);
        }
        let bytes: Vec<Vec<u8>> = outputs.iter().map(|p| p.to_bytes()).collect();
        ensure!(bytes[0] == bytes[1] && bytes[0] == bytes[2], "{name}: bytes differ across workers");
        let pop = &outputs[0];
        ensure!(pop.records.len() == 500, "{name}: {} records", pop.records.len());
        let outside = pop
            .records
            .iter()
            .filter(|r| {
                let f = r.complexity.flops as f64;
                f < window.0 || f > window.1
            })
            .count();
        ensure!(outside == 0, "{name}: {outside} flop-window violations");
        if name == "anynetx-e" {
            for level in ["anynetx-a", "anynetx-b", "anynetx-c", "anynetx-d", "anynetx-e"] {
                let d = DesignSpaceDef::preset(level).map_err(|e| e.to_string())?;
                let bad = pop.records.iter().filter(|r| !check_constraints(&r.spec, &d).pass()).count();
                ensure!(bad == 0, "{bad} AnyNetXE samples fail the {level} predicates");
            }
        }
        notes.push(format!("{name} 500/500 in window"));
    }
    notes.push("A-E predicates pass on E".into());
    notes.push("identical bytes for 1/4/8 workers".into());
    Ok(notes.join(", "))
}

// ---- criterion 8 ----

fn criterion_8() -> Outcome {
    let mut shown = Vec::new();
    for name in ["regnetx-constrained", "regnety-constrained"] {
        let def = DesignSpaceDef::preset(name).map_err(|e| e.to_string())?;
        let mut violations = 0;
        for i in 0..10_000u64 {
            let (p, spec) = sample_regnet(&def, derive_seed(8, i)).map_err(|e| e.to_string())?;
            let ok = p.b == 1.0
                && spec.stages.iter().all(|s| s.bottleneck == 1.0)
                && p.wm >= 2.0
                && (12..=28).contains(&p.d)
                && (12..=28).contains(&spec.total_depth());
            if !ok {
                violations += 1;
            }
        }
        ensure!(violations == 0, "{name}: {violations} violations in 10^4 samples");
        shown.push(format!("{name} 0/10000 violations"));
    }
    Ok(shown.join(", "))
}

// ---- criterion 9 ----

fn criterion_9() -> Outcome {
    let def = DesignSpaceDef::preset("anynetx-a").map_err(|e| e.to_string())?;
    let cfg = SamplerConfig::new(def, (360e6, 400e6), 200, 9);
    let mut pop = PopulationFile::sample(&cfg, None).map_err(|e| e.to_string())?;
    apply_surrogate(&mut pop, 9, &SurrogateConfig::default()).map_err(|e| e.to_string())?;
    let errors: Vec<f64> = pop.records.iter().map(|r| r.error.unwrap()).collect();
    let budgets: Vec<usize> = (1..=errors.len()).collect();
    let pts = random_search_efficiency(&errors, &budgets, 2000, 9).map_err(|e| e.to_string())?;
    for w in pts.windows(2) {
        ensure!(
            w[1].expected_best <= w[0].expected_best,
            "not monotone at budget {}",
            w[1].budget
        );
    }
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let last = pts.last().unwrap().expected_best;
    ensure!(last == min, "budget = n gives {last}, min is {min}");

    // e_k = k / (N + 1): E[min of 32 without replacement] = 1/33 exactly
    let n = 1000;
    let uniform: Vec<f64> = (1..=n).map(|k| k as f64 / (n + 1) as f64).collect();
    let p = random_search_efficiency(&uniform, &[32], 20_000, 9).map_err(|e| e.to_string())?[0];
    let target = 1.0 / 33.0;
    let z = (p.expected_best - target).abs() / p.std_err;
    ensure!(z <= 2.0, "E[min of 32] = {} vs 1/33, {z:.2} standard errors", p.expected_best);
    Ok(format!(
        "monotone over 1..=200, budget 200 = min; E[min of 32] = {:.5} vs {:.5} ({z:.2} se)",
        p.expected_best, target
    ))
}

// ---- criterion 10 ----

fn dds(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dds"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "dds {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cwd = dir.path();
    let spaces = ["anynetx-a", "anynetx-e", "regnetx"];
    for s in spaces {
        let raw = format!("{s}.jsonl");
        let done = format!("{s}.err.jsonl");
        dds(&["sample", "--space", s, "--n", "500", "--flops", "360e6:400e6", "--seed", "7", "--out", &raw], cwd)?;
        dds(&["surrogate", &raw, "--seed", "1", "--out", &done], cwd)?;
    }
    let inputs: Vec<String> = spaces.iter().map(|s| format!("{s}.err.jsonl")).collect();
    let mut args = vec!["analyze", "--compare", "--out", "report", "--reps", "1000"];
    args.extend(inputs.iter().map(String::as_str));
    dds(&args, cwd)?;

    let mut rd = csv::Reader::from_path(cwd.join("report/compare.csv")).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push((rec[0].to_string(), rec[1].to_string(), rec[4].to_string(), rec[5].to_string()));
    }
    let mut shown = Vec::new();
    for (better, worse) in [("regnetx", "anynetx-e"), ("anynetx-e", "anynetx-a")] {
        let row = rows
            .iter()
            .find(|r| r.0 == better && r.1 == worse)
            .ok_or_else(|| format!("compare.csv does not rank {better} above {worse}"))?;
        ensure!(row.2 == "true", "EDF({better}) >= EDF({worse}) violated (min gap {})", row.3);
        shown.push(format!("{better} >= {worse} (min gap {})", row.3));
    }
    Ok(shown.join(", "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 complexity oracle (ResNet-50)", Duration::from_secs(1), criterion_1),
        ("2 design-space sizes (Table 1)", Duration::from_secs(1), criterion_2),
        ("3 quantized-linear roundtrip", Duration::from_secs(30), criterion_3),
        ("4 Eq. 2-4 hand cases", Duration::from_secs(1), criterion_4),
        ("5 EDF properties", Duration::from_secs(10), criterion_5),
        ("6 bootstrap procedure", Duration::from_secs(20), criterion_6),
        ("7 sampler contracts", Duration::from_secs(60), criterion_7),
        ("8 constrained RegNet", Duration::from_secs(60), criterion_8),
        ("9 random-search property", Duration::from_secs(20), criterion_9),
        ("10 end-to-end EDF ordering", Duration::from_secs(120), criterion_10),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (name, limit, run) in criteria {
        let t = Instant::now();
        let result = run();
        let dt = t.elapsed();
        let (status, detail) = match result {
            Ok(d) if dt <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {dt:.2?}, limit {limit:?}")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        writeln!(out, "criterion {name}: {status} [{dt:.2?} / {limit:?}] {detail}").unwrap();
    }
    writeln!(out, "acceptance: {}/10 passed", 10 - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
