use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gtp_core::acceptance::{format_table, run_selected, CRITERIA};
use gtp_core::cost::{backbone_macs, CostReport};
use gtp_core::graph::GraphKind;
use gtp_core::linalg::macs::MacCount;
use gtp_core::overhead::{bench_overhead, OverheadCase};
use gtp_core::reduction::Strategy;
use gtp_core::runtime::{
    forward, generate_image, generate_weights, ForwardInput, ForwardOutput, Image, Model, ModelConfig, WeightStore,
};
use serde::Serialize;

use crate::error::{exit, CliError, CliResult};
use crate::output::{create_dir, join_ids, logits_checksum, mask_pgm, opt_f64, write_file, write_json};
use crate::spec::{
    parse_f64_axis, parse_list, parse_usize_axis, BenchArgs, Cli, Command, FixtureArgs, ForwardArgs, RunSpec,
    SweepArgs, VerifyArgs,
};

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Forward(a) => cmd_forward(&a).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(&a).map(|_| 0),
        Command::BenchOverhead(a) => cmd_bench_overhead(&a).map(|_| 0),
        Command::Verify(a) => cmd_verify(&a),
        Command::GenFixture(a) => cmd_gen_fixture(&a).map(|_| 0),
    }
}

fn run_forward(model: &Model, image: &Image) -> CliResult<ForwardOutput> {
    Ok(forward(model, ForwardInput::Image(image))?)
}

#[derive(Serialize)]
struct ForwardSummary<'a> {
    run: &'a str,
    seed: u64,
    weights: String,
    weights_sha256: String,
    config: &'a ModelConfig,
    logits_checksum: String,
    argmax: usize,
    graph_builds: usize,
    initial_oversmoothing: Option<f64>,
    final_oversmoothing: Option<f64>,
    final_live_tokens: usize,
    instrumented_macs: MacCount,
    cost: CostReport,
    warnings: &'a [String],
    logits: &'a [f64],
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

pub fn cmd_forward(args: &ForwardArgs) -> CliResult<()> {
    let spec = args.spec.resolve()?;
    let cfg = &spec.model;
    let (store, weights) = match &args.weights {
        Some(path) => (WeightStore::load(path)?, path.display().to_string()),
        None => (generate_weights(spec.seed, cfg), "seeded".to_string()),
    };
    let image = generate_image(spec.seed, cfg);
    let model = Model::from_store(cfg, &store)?;
    let out = run_forward(&model, &image)?;

    create_dir(&args.out)?;
    write_diagnostics(&args.out.join("diagnostics.csv"), &out)?;
    let masks = args.out.join("masks");
    create_dir(&masks)?;
    let side = cfg.grid_side();
    let all: Vec<usize> = (0..cfg.img_tokens).collect();
    write_file(&masks.join("layer_00.pgm"), mask_pgm(side, &all))?;
    for d in &out.diagnostics.layers {
        write_file(&masks.join(format!("layer_{:02}.pgm", d.layer + 1)), mask_pgm(side, &d.kept_ids))?;
    }

    let summary = ForwardSummary {
        run: &spec.label,
        seed: spec.seed,
        weights,
        weights_sha256: store.sha256(),
        config: cfg,
        logits_checksum: logits_checksum(&out.logits),
        argmax: argmax(&out.logits),
        graph_builds: out.diagnostics.graph_builds,
        initial_oversmoothing: out.diagnostics.initial_oversmoothing,
        final_oversmoothing: out.diagnostics.layers.last().and_then(|d| d.oversmoothing),
        final_live_tokens: out.final_tokens.live_image_tokens(),
        instrumented_macs: out.diagnostics.macs,
        cost: backbone_macs(cfg),
        warnings: &out.diagnostics.warnings,
        logits: &out.logits,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    for w in &out.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} blocks, {} live tokens at the end, logits {} -> {}",
        spec.label,
        out.diagnostics.layers.len(),
        summary.final_live_tokens,
        summary.logits_checksum,
        args.out.display()
    );
    Ok(())
}

fn write_diagnostics(path: &Path, out: &ForwardOutput) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    w.write_record(["layer", "live_tokens", "oversmoothing", "kept_ids", "propagated_ids", "attention_nonzeros"])?;
    for d in &out.diagnostics.layers {
        w.write_record([
            (d.layer + 1).to_string(),
            d.live_tokens.to_string(),
            opt_f64(d.oversmoothing),
            join_ids(&d.kept_ids),
            join_ids(&d.propagated_ids),
            join_ids(&d.attention_nonzeros),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
struct Cell {
    p: usize,
    alpha: f64,
    theta: f64,
    m: usize,
    graph: GraphKind,
    strategy: Strategy,
}

fn cells(args: &SweepArgs, base: &ModelConfig) -> CliResult<Vec<Cell>> {
    let r = &base.reduction;
    let ps = args.p_values.as_deref().map(|t| parse_usize_axis("p-values", t)).transpose()?.unwrap_or(vec![r.p_per_layer]);
    let alphas = args.alphas.as_deref().map(|t| parse_f64_axis("alphas", t)).transpose()?.unwrap_or(vec![r.alpha]);
    let thetas = args.thetas.as_deref().map(|t| parse_f64_axis("thetas", t)).transpose()?.unwrap_or(vec![r.theta]);
    let ms = args.ms.as_deref().map(|t| parse_usize_axis("ms", t)).transpose()?.unwrap_or(vec![r.m_neighbors]);
    let graphs = args.graphs.as_deref().map(|t| parse_list("graphs", t)).transpose()?.unwrap_or(vec![r.graph_kind]);
    let strategies =
        args.strategies.as_deref().map(|t| parse_list("strategies", t)).transpose()?.unwrap_or(vec![r.strategy]);
    let mut out = Vec::new();
    for &p in &ps {
        for &alpha in &alphas {
            for &theta in &thetas {
                for &m in &ms {
                    for &graph in &graphs {
                        for &strategy in &strategies {
                            out.push(Cell { p, alpha, theta, m, graph, strategy });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn cell_config(base: &ModelConfig, c: &Cell) -> ModelConfig {
    let mut cfg = base.clone();
    let r = &mut cfg.reduction;
    r.p_per_layer = c.p;
    r.alpha = c.alpha;
    r.theta = c.theta;
    r.m_neighbors = c.m;
    r.graph_kind = c.graph;
    r.strategy = c.strategy;
    cfg
}

/// Worker limit from `GTP_THREADS`, else the available parallelism.
pub fn worker_limit() -> CliResult<usize> {
    match std::env::var("GTP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::spec(format!("GTP_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

const SWEEP_HEADER: [&str; 15] = [
    "run",
    "p",
    "alpha",
    "theta",
    "m",
    "graph",
    "strategy",
    "backbone_gmacs",
    "overhead_mmacs",
    "initial_oversmoothing",
    "final_oversmoothing",
    "mean_oversmoothing",
    "final_live_tokens",
    "logits_checksum",
    "status",
];

fn sweep_row(spec: &RunSpec, cell: &Cell, cfg: &ModelConfig, store: &WeightStore, image: &Image) -> Vec<String> {
    let cost = backbone_macs(cfg);
    let mut row = vec![
        spec.label.clone(),
        cell.p.to_string(),
        cell.alpha.to_string(),
        cell.theta.to_string(),
        cell.m.to_string(),
        cell.graph.to_string(),
        cell.strategy.to_string(),
        format!("{:.6}", cost.backbone_gmacs()),
        format!("{:.6}", cost.overhead_macs / 1e6),
    ];
    match Model::from_store(cfg, store).and_then(|m| forward(&m, ForwardInput::Image(image))) {
        Ok(out) => {
            let trace: Vec<f64> = out.diagnostics.layers.iter().filter_map(|d| d.oversmoothing).collect();
            let mean = (!trace.is_empty()).then(|| trace.iter().sum::<f64>() / trace.len() as f64);
            row.extend([
                opt_f64(out.diagnostics.initial_oversmoothing),
                opt_f64(trace.last().copied()),
                opt_f64(mean),
                out.final_tokens.live_image_tokens().to_string(),
                logits_checksum(&out.logits),
                "ok".to_string(),
            ]);
        }
        Err(e) => {
            row.extend(["", "", "", "", ""].map(String::from));
            row.push(format!("error: {e}"));
        }
    }
    row
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let spec = args.spec.resolve()?;
    let cells = cells(args, &spec.model)?;
    let configs: Vec<ModelConfig> = cells.iter().map(|c| cell_config(&spec.model, c)).collect();
    for (c, cfg) in cells.iter().zip(&configs) {
        cfg.validate().map_err(|e| CliError::spec(format!("sweep cell {c:?}: {e}")))?;
    }
    let workers = worker_limit()?.min(cells.len()).max(1);
    let store = generate_weights(spec.seed, &spec.model);
    let image = generate_image(spec.seed, &spec.model);

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Vec<String>>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let row = sweep_row(&spec, &cells[i], &configs[i], &store, &image);
                rows.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });

    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for row in rows.into_inner().expect("no worker panicked").into_iter().flatten() {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bench_overhead(args: &BenchArgs) -> CliResult<()> {
    let mut case = match args.case.as_str() {
        "vit-b8" => OverheadCase::vit_b8(),
        "deit-s" => OverheadCase::deit_s(),
        other => return Err(CliError::spec(format!("unknown bench case '{other}' (known: vit-b8, deit-s)"))),
    };
    if let Some(n) = args.n {
        case.n = n;
    }
    if let Some(c) = args.c {
        case.c = c;
    }
    if let Some(h) = args.heads {
        case.heads = h;
    }
    if let Some(p) = args.p {
        case.p = p;
    }
    if let Some(m) = args.m {
        case.m_neighbors = m;
    }
    let r = bench_overhead(&case, args.repeats, args.seed)?;
    let ms = |ns: f64| ns / 1e6;
    println!("case N={} C={} H={} P={} repeats={}", case.n, case.c, case.heads, case.p, args.repeats);
    println!(
        "propagation  median {:.4} ms  mad {:.4} ms  analytic {:.4} MMACs/layer",
        ms(r.gtp.median_ns),
        ms(r.gtp.mad_ns),
        r.analytic_gtp_layer / 1e6
    );
    println!(
        "matching     median {:.4} ms  mad {:.4} ms  analytic {:.4} MMACs/layer",
        ms(r.tome.median_ns),
        ms(r.tome.mad_ns),
        r.analytic_tome_layer / 1e6
    );
    if let (Some(g), Some(t)) = (r.analytic_gtp_total, r.analytic_tome_total) {
        println!("whole model ({} blocks): {:.3} vs {:.3} MMACs", case.depth, g / 1e6, t / 1e6);
    }
    if let Some(path) = &args.out {
        write_json(path, &r)?;
    }
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<u8> {
    let ids: Vec<u8> = match &args.only {
        Some(text) => parse_list("only", text)?,
        None => CRITERIA.iter().map(|c| c.0).collect(),
    };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        return Err(CliError::spec(format!("no criterion {bad}")));
    }
    let results = run_selected(&ids);
    print!("{}", format_table(&results));
    std::io::stdout().flush()?;
    Ok(if results.iter().all(|r| r.passed) { 0 } else { exit::CRITERIA_FAILED })
}

pub fn cmd_gen_fixture(args: &FixtureArgs) -> CliResult<()> {
    let spec = args.spec.resolve()?;
    let store = generate_weights(spec.seed, &spec.model);
    create_dir(&args.out)?;
    store.save(&args.out.join("weights.gtpw")).map_err(CliError::from)?;
    let mut config = spec.model.to_json();
    config.push('\n');
    write_file(&args.out.join("config.json"), config)?;
    println!("{}  {}", store.sha256(), args.out.join("weights.gtpw").display());
    Ok(())
}
