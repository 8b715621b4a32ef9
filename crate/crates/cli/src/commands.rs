use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use designspace::complexity::format_flops;
use designspace::evalstore::{
    apply_surrogate, ingest_errors, read_error_file, ErrorSource, RunManifest, SurrogateConfig,
};
use designspace::popstats::{
    dominates, param_trends, quantile_sorted, random_search_efficiency, trend_fit, BootstrapConfig,
    Edf, TrendModel, TrendOptions, TrendPoint,
};
use designspace::quantlin::{fit_linear, gen_block_widths};
use designspace::report::{self, BootstrapRow, CompareRow, TrendRow};
use designspace::sampler::{SamplerConfig, DEFAULT_MAX_ATTEMPTS};
use designspace::space::PRESETS;
use designspace::{network_metrics, AnyNetSpec, DesignSpaceDef, PopulationFile, PopulationSample};

use crate::failure::{require, Failure};
use crate::Global;

type Res = Result<(), Failure>;

const DEFAULT_WINDOW: (f64, f64) = (360e6, 400e6);

fn load_population(path: &Path) -> Result<PopulationFile, Failure> {
    require(path)?;
    Ok(PopulationFile::load(path)?)
}

fn design_space(g: &Global, space: Option<&str>) -> Result<DesignSpaceDef, Failure> {
    match (&g.config, space) {
        (Some(path), _) => {
            require(path)?;
            Ok(DesignSpaceDef::from_toml_file(path)?)
        }
        (None, Some(name)) => Ok(DesignSpaceDef::preset(name)?),
        (None, None) => Ok(DesignSpaceDef::preset("anynetx-a")?),
    }
}

/// Parse `lo:hi` in raw flops; scientific notation is accepted.
pub fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad lower bound `{lo}`: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad upper bound `{hi}`: {e}"))?;
    if !(lo < hi) || lo < 0.0 {
        return Err(format!("window needs 0 <= lo < hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn manifest(g: &Global, command: &str, inputs: &[&Path], outputs: &[&Path]) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.config_path = g.config.as_ref().map(|p| p.display().to_string());
    m.master_seed = Some(g.seed);
    m.inputs = inputs.iter().map(|p| p.display().to_string()).collect();
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    m
}

fn write_manifest(path: &Path, m: &RunManifest) -> Res {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `<file>.manifest.json` next to a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn save_population(pop: &PopulationFile, out: Option<&Path>) -> Res {
    match out {
        Some(p) => pop.save(p)?,
        None => pop.write_to(BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Preset name; ignored when --config is given.
    #[arg(long)]
    space: Option<String>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Flop window `lo:hi`, e.g. 360e6:400e6.
    #[arg(long, value_parser = parse_window)]
    flops: Option<(f64, f64)>,
    /// Worker threads (output does not depend on this).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u64,
}

pub fn sample(g: &Global, a: SampleArgs) -> Res {
    let def = design_space(g, a.space.as_deref())?;
    let window = a.flops.or(def.flop_window).unwrap_or(DEFAULT_WINDOW);
    let mut cfg = SamplerConfig::new(def, window, a.n, g.seed);
    cfg.max_attempts_per_sample = a.max_attempts;
    cfg.workers = a.workers;
    cfg.check()?;
    let outputs: Vec<&Path> = g.out.iter().map(|p| p.as_path()).collect();
    let m = manifest(g, "sample", &[], &outputs);
    let pop = PopulationFile::sample(&cfg, Some(m))?;
    save_population(&pop, g.out.as_deref())?;
    eprintln!(
        "sampled {} models from {} in [{}, {}]",
        pop.records.len(),
        cfg.design_space.name,
        format_flops(window.0 as u64),
        format_flops(window.1 as u64)
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Spec JSON files or population files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

pub fn complexity(g: &Global, a: ComplexityArgs) -> Res {
    let mut rows: Vec<(String, AnyNetSpec)> = Vec::new();
    for path in &a.inputs {
        require(path)?;
        let text = std::fs::read_to_string(path)?;
        match AnyNetSpec::from_json(&text) {
            Ok(spec) => rows.push((path.display().to_string(), spec)),
            Err(_) => {
                let pop = PopulationFile::read_from(text.as_bytes())?;
                rows.extend(pop.records.into_iter().map(|r| (r.spec_hash, r.spec)));
            }
        }
    }
    let mut w = csv::Writer::from_writer(output(g.out.as_deref())?);
    w.write_record(["name", "flops", "params", "acts", "flops_readable"])?;
    for (name, spec) in &rows {
        let c = network_metrics(spec)?;
        w.write_record([
            name.clone(),
            c.flops.to_string(),
            c.params.to_string(),
            c.acts.to_string(),
            format_flops(c.flops),
        ])?;
    }
    w.flush()?;
    if let Some(out) = &g.out {
        let inputs: Vec<&Path> = a.inputs.iter().map(|p| p.as_path()).collect();
        write_manifest(&sidecar(out), &manifest(g, "complexity", &inputs, &[out]))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    population: PathBuf,
}

pub fn fit(g: &Global, a: FitArgs) -> Res {
    let pop = load_population(&a.population)?;
    let mut w = csv::Writer::from_writer(output(g.out.as_deref())?);
    w.write_record(["spec_hash", "d", "w0", "wa", "wm", "e_fit", "e_fit_spec", "error"])?;
    let mut pairs = Vec::new();
    let mut efits = Vec::new();
    for r in &pop.records {
        let spec_fit = fit_linear(&r.spec.block_widths())?;
        // RegNet records are fit on their generator's unrounded profile
        let fit = match &r.regnet_params {
            Some(p) => fit_linear(&gen_block_widths(p.d as usize, p.w0, p.wa, p.wm)?.w)?,
            None => spec_fit,
        };
        efits.push(fit.e_fit);
        if let Some(e) = r.error {
            pairs.push((fit.e_fit, e));
        }
        w.write_record([
            r.spec_hash.clone(),
            r.spec.total_depth().to_string(),
            fit.w0.to_string(),
            fit.wa.to_string(),
            fit.wm.to_string(),
            fit.e_fit.to_string(),
            spec_fit.e_fit.to_string(),
            r.error.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    drop(w);

    if !efits.is_empty() {
        let f = Edf::new(&efits)?;
        eprintln!("e_fit over {} models: mean {:.4}, max {:.4}", f.len(), f.mean(), f.max());
    }
    if pairs.len() >= 2 {
        let b = designspace::popstats::bootstrap_best(&pairs, &BootstrapConfig::with_seed(g.seed))?;
        eprintln!(
            "e_fit of best models: {:.4} [{:.4}, {:.4}] ({:.0}% CI)",
            b.median,
            b.ci_low,
            b.ci_high,
            BootstrapConfig::default().ci * 100.0
        );
    }
    if let Some(out) = &g.out {
        write_manifest(&sidecar(out), &manifest(g, "fit", &[&a.population], &[out]))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Population files with errors.
    #[arg(required = true)]
    populations: Vec<PathBuf>,
    /// Also write compare.csv with pairwise EDF dominance.
    #[arg(long)]
    compare: bool,
    /// Log-spaced flop bins for the bootstrap bands.
    #[arg(long, default_value_t = 1)]
    bins: usize,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    /// Random search trials per budget.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Also write edf.svg.
    #[arg(long)]
    svg: bool,
}

struct Loaded {
    name: String,
    pop: PopulationFile,
    edf: Edf,
}

fn named(pops: Vec<(PathBuf, PopulationFile)>) -> Result<Vec<Loaded>, Failure> {
    let mut out: Vec<Loaded> = Vec::new();
    let mut source = None;
    for (path, pop) in pops {
        let sources = pop.sources();
        if sources.len() > 1 {
            return Err(Failure::Config(format!(
                "{} mixes ingested and surrogate errors",
                path.display()
            )));
        }
        if let Some(&s) = sources.first() {
            if source.is_some_and(|prev: ErrorSource| prev != s) {
                return Err(Failure::Config(
                    "populations mix ingested and surrogate errors".into(),
                ));
            }
            source = Some(s);
        }
        let errors: Vec<f64> = pop.complete().filter_map(|r| r.error).collect();
        if errors.is_empty() {
            return Err(Failure::Missing(format!(
                "{} has no models with errors; run `surrogate` or `ingest` first",
                path.display()
            )));
        }
        let base = pop.header.design_space.clone();
        let mut name = base.clone();
        let mut k = 2;
        while out.iter().any(|l| l.name == name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        out.push(Loaded {
            name,
            edf: Edf::new(&errors)?,
            pop,
        });
    }
    Ok(out)
}

type Extractor = fn(&PopulationSample) -> Option<f64>;

fn extractors() -> Vec<(&'static str, Extractor)> {
    fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
        let v: Vec<f64> = v.collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
    vec![
        ("d", |r| Some(r.spec.total_depth() as f64)),
        ("w_first", |r| r.spec.stages.first().map(|s| s.width as f64)),
        ("w_last", |r| r.spec.stages.last().map(|s| s.width as f64)),
        ("b", |r| mean(r.spec.stages.iter().map(|s| s.bottleneck))),
        ("g", |r| mean(r.spec.stages.iter().map(|s| s.group_width as f64))),
        ("w0", |r| r.regnet_params.map(|p| p.w0)),
        ("wa", |r| r.regnet_params.map(|p| p.wa)),
        ("wm", |r| r.regnet_params.map(|p| p.wm)),
    ]
}

fn flop_edges(flops: &[f64], bins: usize) -> Vec<f64> {
    let lo = flops.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = flops.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        hi = lo.next_up();
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| (llo + (lhi - llo) * i as f64 / bins as f64).exp())
        .collect();
    edges[0] = lo;
    edges[bins] = hi;
    edges
}

fn budgets(n: usize) -> Vec<usize> {
    let mut b: Vec<usize> = std::iter::successors(Some(1usize), |&x| Some(x * 2))
        .take_while(|&x| x < n)
        .collect();
    b.push(n);
    b
}

pub fn analyze(g: &Global, a: AnalyzeArgs) -> Res {
    if a.bins == 0 {
        return Err(Failure::Config("--bins must be at least 1".into()));
    }
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("analysis"));
    let mut pops = Vec::new();
    for p in &a.populations {
        pops.push((p.clone(), load_population(p)?));
    }
    let loaded = named(pops)?;
    std::fs::create_dir_all(&dir)?;
    let edfs: Vec<(&str, &Edf)> = loaded.iter().map(|l| (l.name.as_str(), &l.edf)).collect();
    let mut written: Vec<PathBuf> = Vec::new();
    let mut create = |name: &str| -> Result<BufWriter<File>, Failure> {
        let p = dir.join(name);
        let f = File::create(&p)?;
        written.push(p);
        Ok(BufWriter::new(f))
    };

    report::write_edf_csv(create("edf.csv")?, &edfs)?;
    report::write_summary_csv(create("summary.csv")?, &edfs)?;

    let mut cfg = BootstrapConfig::with_seed(g.seed);
    cfg.reps = a.reps;
    let mut boot_rows = Vec::new();
    let mut trend_rows = Vec::new();
    let mut eff_rows = Vec::new();
    for l in &loaded {
        let complete: Vec<&PopulationSample> = l.pop.complete().collect();
        let flops: Vec<f64> = complete.iter().map(|r| r.complexity.flops as f64).collect();
        let edges = flop_edges(&flops, a.bins);
        for (param, extract) in extractors() {
            let samples: Option<Vec<(f64, f64, f64)>> = complete
                .iter()
                .map(|r| Some((r.complexity.flops as f64, extract(r)?, r.error?)))
                .collect();
            let Some(samples) = samples else { continue };
            for bin in param_trends(&samples, &edges, &cfg)? {
                boot_rows.push(BootstrapRow {
                    space: &l.name,
                    parameter: param,
                    bin,
                });
            }
        }

        for (quantity, model) in [
            ("params", TrendModel::Linear),
            ("params", TrendModel::LinearSqrt),
            ("acts", TrendModel::Sqrt),
            ("acts", TrendModel::LinearSqrt),
        ] {
            let points: Vec<TrendPoint> = complete
                .iter()
                .map(|r| TrendPoint {
                    flops: r.complexity.flops as f64,
                    y: if quantity == "params" {
                        r.complexity.params as f64
                    } else {
                        r.complexity.acts as f64
                    },
                    error: r.error,
                })
                .collect();
            for frontier in [false, true] {
                let opts = TrendOptions {
                    frontier,
                    ..Default::default()
                };
                match trend_fit(&points, model, opts) {
                    Ok(fit) => trend_rows.push(TrendRow {
                        space: &l.name,
                        quantity,
                        frontier,
                        fit,
                    }),
                    Err(e) => eprintln!("note: {} {quantity} trend (frontier={frontier}) skipped: {e}", l.name),
                }
            }
        }

        let errors: Vec<f64> = complete.iter().filter_map(|r| r.error).collect();
        let pts = random_search_efficiency(&errors, &budgets(errors.len()), a.trials, g.seed)?;
        eff_rows.push((l.name.as_str(), pts));
    }
    report::write_bootstrap_csv(create("bootstrap.csv")?, &boot_rows)?;
    report::write_trends_csv(create("trends.csv")?, &trend_rows)?;
    report::write_efficiency_csv(create("efficiency.csv")?, &eff_rows)?;

    for (name, f) in &edfs {
        println!("{name}: n={} min={:.4} mean={:.4}", f.len(), f.min(), f.mean());
    }

    if a.compare {
        // better populations first, by mean error
        let mut order: Vec<&Loaded> = loaded.iter().collect();
        order.sort_by(|x, y| x.edf.mean().total_cmp(&y.edf.mean()));
        let mut pooled: Vec<f64> = loaded.iter().flat_map(|l| l.edf.sorted().iter().copied()).collect();
        pooled.sort_by(f64::total_cmp);
        let range = (quantile_sorted(&pooled, 0.05), quantile_sorted(&pooled, 0.95));
        let mut rows = Vec::new();
        for (i, better) in order.iter().enumerate() {
            for worse in &order[i + 1..] {
                let d = dominates(&better.edf, &worse.edf, range.0, range.1);
                println!(
                    "EDF({}) >= EDF({}) on [{:.4}, {:.4}]: {} (min gap {:.4} at {:.4})",
                    better.name,
                    worse.name,
                    range.0,
                    range.1,
                    if d.holds { "holds" } else { "violated" },
                    d.min_gap,
                    d.at
                );
                rows.push(CompareRow {
                    better: &better.name,
                    worse: &worse.name,
                    range,
                    dominance: d,
                });
            }
        }
        report::write_compare_csv(create("compare.csv")?, &rows)?;
    }
    if a.svg {
        let p = dir.join("edf.svg");
        std::fs::write(&p, report::edf_svg(&edfs))?;
        written.push(p);
    }

    let inputs: Vec<&Path> = a.populations.iter().map(|p| p.as_path()).collect();
    let outputs: Vec<&Path> = written.iter().map(|p| p.as_path()).collect();
    write_manifest(&dir.join("manifest.json"), &manifest(g, "analyze", &inputs, &outputs))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BestArgs {
    population: PathBuf,
    #[arg(long, short, default_value_t = 1)]
    k: usize,
}

pub fn best(g: &Global, a: BestArgs) -> Res {
    let pop = load_population(&a.population)?;
    let mut done: Vec<&PopulationSample> = pop.complete().collect();
    if done.is_empty() {
        return Err(Failure::Missing(format!(
            "{} has no models with errors",
            a.population.display()
        )));
    }
    if a.k == 0 || a.k > done.len() {
        return Err(Failure::Config(format!(
            "k must be in 1..={} (models with errors)",
            done.len()
        )));
    }
    done.sort_by(|x, y| {
        x.error
            .unwrap()
            .total_cmp(&y.error.unwrap())
            .then_with(|| x.spec_hash.cmp(&y.spec_hash))
    });
    let mut w = csv::Writer::from_writer(output(g.out.as_deref())?);
    w.write_record([
        "rank", "spec_hash", "error", "flops", "params", "acts", "d", "g", "wm", "wa", "w0", "widths",
        "depths",
    ])?;
    let join = |v: Vec<String>| v.join(" ");
    for (i, r) in done.iter().take(a.k).enumerate() {
        let p = r.regnet_params;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let g_field = match p {
            Some(p) => p.g.to_string(),
            None => join(r.spec.stages.iter().map(|s| s.group_width.to_string()).collect()),
        };
        w.write_record([
            (i + 1).to_string(),
            r.spec_hash.clone(),
            r.error.unwrap().to_string(),
            format_flops(r.complexity.flops),
            r.complexity.params.to_string(),
            r.complexity.acts.to_string(),
            r.spec.total_depth().to_string(),
            g_field,
            opt(p.map(|p| p.wm)),
            opt(p.map(|p| p.wa)),
            opt(p.map(|p| p.w0)),
            join(r.spec.stages.iter().map(|s| s.width.to_string()).collect()),
            join(r.spec.stages.iter().map(|s| s.depth.to_string()).collect()),
        ])?;
    }
    w.flush()?;
    if let Some(out) = &g.out {
        write_manifest(&sidecar(out), &manifest(g, "best", &[&a.population], &[out]))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Preset names; all presets when empty and no --config is given.
    spaces: Vec<String>,
}

pub fn size(g: &Global, a: SizeArgs) -> Res {
    let mut defs = Vec::new();
    if let Some(path) = &g.config {
        require(path)?;
        defs.push(DesignSpaceDef::from_toml_file(path)?);
    }
    for s in &a.spaces {
        defs.push(DesignSpaceDef::preset(s)?);
    }
    if defs.is_empty() {
        for s in PRESETS {
            defs.push(DesignSpaceDef::preset(s)?);
        }
    }
    let mut out = output(g.out.as_deref())?;
    for d in &defs {
        writeln!(out, "{:<22}{:.2e}", d.name, d.size())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    population: PathBuf,
}

pub fn export(g: &Global, a: ExportArgs) -> Res {
    let pop = load_population(&a.population)?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("specs"));
    let paths = pop.export_specs(&dir)?;
    let outputs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    write_manifest(&dir.join("manifest.json"), &manifest(g, "export", &[&a.population], &outputs))?;
    eprintln!("wrote {} specs to {}", paths.len(), dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    population: PathBuf,
    /// Surrogate coefficients (TOML); defaults otherwise.
    #[arg(long)]
    coefficients: Option<PathBuf>,
}

pub fn surrogate(g: &Global, a: SurrogateArgs) -> Res {
    let mut pop = load_population(&a.population)?;
    let cfg = match &a.coefficients {
        Some(p) => {
            require(p)?;
            toml::from_str::<SurrogateConfig>(&std::fs::read_to_string(p)?)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => SurrogateConfig::default(),
    };
    apply_surrogate(&mut pop, g.seed, &cfg)?;
    let outputs: Vec<&Path> = g.out.iter().map(|p| p.as_path()).collect();
    pop.header.manifest = Some(manifest(g, "surrogate", &[&a.population], &outputs));
    save_population(&pop, g.out.as_deref())
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    population: PathBuf,
    /// Error files: JSON lines or `.csv` with spec_hash,error columns.
    #[arg(required = true)]
    errors: Vec<PathBuf>,
}

pub fn ingest(g: &Global, a: IngestArgs) -> Res {
    let mut pop = load_population(&a.population)?;
    let mut records = Vec::new();
    for p in &a.errors {
        require(p)?;
        records.extend(read_error_file(p)?);
    }
    let rep = ingest_errors(&mut pop, &records);
    eprintln!(
        "matched {}, pending {}, orphans {}, conflicts {}",
        rep.matched,
        rep.pending,
        rep.orphans.len(),
        rep.conflicts.len()
    );
    for o in &rep.orphans {
        eprintln!("orphan: {} (error {})", o.spec_hash, o.error);
    }
    for c in &rep.conflicts {
        eprintln!("conflict: {} kept {} rejected {:?}", c.spec_hash, c.kept, c.rejected);
    }
    let mut inputs: Vec<&Path> = vec![&a.population];
    inputs.extend(a.errors.iter().map(|p| p.as_path()));
    let outputs: Vec<&Path> = g.out.iter().map(|p| p.as_path()).collect();
    pop.header.manifest = Some(manifest(g, "ingest", &inputs, &outputs));
    save_population(&pop, g.out.as_deref())
}
