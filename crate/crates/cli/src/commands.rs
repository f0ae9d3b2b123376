//! Subcommand implementations.

use crate::output::{write_records, OutputFormat, Record};
use crate::{Caps, UsageError};
use anyhow::Result;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use repeater_core::analytic::{self, AlphaMode};
use repeater_core::chain;
use repeater_core::model::{ErrorBound, RateEstimate};
use repeater_core::sim::{self, SimConfig};
use repeater_core::trees;
use repeater_core::{NetworkParams, Occupation};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RateMethodArg {
    /// Stationary solve of the exact reduced chain.
    Exact,
    /// Closed form, single memory per party (requires m = 1).
    AnalyticM1,
    /// Extreme-value approximation for general n, m.
    Approx,
    /// First-order-in-p bipartite closed form (requires n = 2).
    SmallpBipartite,
    /// Large-m bipartite asymptotic (requires n = 2).
    LargeM,
    /// Monte Carlo simulation of the full model.
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AlphaModeArg {
    /// Extreme-value correction factor alpha(n).
    Asymptotic,
    /// Fixed alpha = 1.
    One,
}

impl From<AlphaModeArg> for AlphaMode {
    fn from(v: AlphaModeArg) -> Self {
        match v {
            AlphaModeArg::Asymptotic => AlphaMode::Asymptotic,
            AlphaModeArg::One => AlphaMode::One,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SimArgs {
    /// Rounds per replica (including burn-in).
    #[arg(long, default_value_t = 100_000)]
    pub rounds: u64,
    /// Rounds discarded before averaging.
    #[arg(long, default_value_t = 1_000)]
    pub burn_in: u64,
    /// Independent replicas.
    #[arg(long, default_value_t = 32)]
    pub replicas: u32,
    /// Base seed; random when omitted. The effective seed is printed in the
    /// seed column and re-running with it reproduces the output
    /// (wall_ms aside).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SimArgs {
    fn config(&self, seed: u64) -> SimConfig {
        SimConfig {
            rounds: self.rounds,
            burn_in: self.burn_in,
            replicas: self.replicas,
            seed,
        }
    }

    fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or_else(rand::random)
    }
}

#[derive(Debug, clap::Args)]
pub struct RateArgs {
    /// Number of parties of the star network.
    #[arg(short = 'n', long, conflicts_with = "chain_segments", required_unless_present = "chain_segments")]
    pub n: Option<usize>,
    /// Equivalent repeater-chain framing: number of segments between two end
    /// nodes (a chain of s segments behaves like an s-party star).
    #[arg(long, value_name = "S")]
    pub chain_segments: Option<usize>,
    /// Memories per party.
    #[arg(short = 'm', long)]
    pub m: usize,
    /// Per-link storage success probability per round.
    #[arg(short = 'p', long)]
    pub p: f64,
    /// Computation method; omitted: exact below 20 000 states, otherwise
    /// approx plus simulate.
    #[arg(long, value_enum)]
    pub method: Option<RateMethodArg>,
    #[arg(long, value_enum, default_value = "asymptotic")]
    pub alpha_mode: AlphaModeArg,
    /// Power-iteration tolerance (l1).
    #[arg(long, default_value_t = chain::DEFAULT_POWER_TOL)]
    pub tol: f64,
    /// Power-iteration budget.
    #[arg(long, default_value_t = chain::DEFAULT_MAX_ITER)]
    pub max_iter: u64,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
    /// Write the records here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RateArgs {
    fn parties(&self) -> usize {
        self.n.or(self.chain_segments).expect("clap enforces one")
    }
}

fn estimate_record(name: &str, n: usize, m: usize, p: f64, est: &RateEstimate, seed: Option<u64>, wall_ms: u64) -> Record {
    Record {
        n,
        m,
        p,
        method: name.to_string(),
        l_mean: Some(est.l_mean),
        rate: Some(est.rate),
        error: est.error.to_string(),
        seed,
        wall_ms,
    }
}

struct MethodOutcome {
    estimate: RateEstimate,
    seed: Option<u64>,
    /// Monte Carlo standard error of l_mean, when applicable.
    stderr: Option<f64>,
}

fn run_method(
    params: &NetworkParams,
    method: RateMethodArg,
    caps: &Caps,
    alpha_mode: AlphaMode,
    tol: f64,
    max_iter: u64,
    sim_config: SimConfig,
) -> Result<MethodOutcome> {
    let (n, m, p) = (params.n(), params.m(), params.p());
    let outcome = match method {
        RateMethodArg::Exact => MethodOutcome {
            estimate: chain::exact_rate_capped(params, caps.state_cap, tol, max_iter)?,
            seed: None,
            stderr: None,
        },
        RateMethodArg::AnalyticM1 => {
            if m != 1 {
                return Err(UsageError(format!("method analytic-m1 requires m=1 (got m={m})")).into());
            }
            MethodOutcome {
                estimate: analytic::rate_no_multiplexing_alt(n, p)?,
                seed: None,
                stderr: None,
            }
        }
        RateMethodArg::Approx => MethodOutcome {
            estimate: analytic::general_l_approx(n, m, p, alpha_mode)?,
            seed: None,
            stderr: None,
        },
        RateMethodArg::SmallpBipartite => {
            if n != 2 {
                return Err(UsageError(format!(
                    "method smallp-bipartite requires n=2 (got n={n})"
                ))
                .into());
            }
            MethodOutcome {
                estimate: analytic::bipartite_rate_small_p(m, p)?,
                seed: None,
                stderr: None,
            }
        }
        RateMethodArg::LargeM => {
            if n != 2 {
                return Err(UsageError(format!("method large-m requires n=2 (got n={n})")).into());
            }
            MethodOutcome {
                estimate: analytic::bipartite_rate_large_m(m, p)?,
                seed: None,
                stderr: None,
            }
        }
        RateMethodArg::Simulate => {
            let result = sim::run_full(params, &sim_config)?;
            MethodOutcome {
                estimate: result.rate_estimate(m),
                seed: Some(sim_config.seed),
                stderr: Some(result.l_stderr),
            }
        }
    };
    Ok(outcome)
}

pub fn cmd_rate(args: RateArgs, caps: &Caps) -> Result<()> {
    let params = NetworkParams::new(args.parties(), args.m, args.p)?;
    let methods: Vec<RateMethodArg> = match args.method {
        Some(m) => vec![m],
        None => {
            let states = params.reduced_state_count().unwrap_or(u128::MAX);
            if states <= caps.direct_cap as u128 {
                vec![RateMethodArg::Exact]
            } else {
                vec![RateMethodArg::Approx, RateMethodArg::Simulate]
            }
        }
    };
    let seed = args.sim.effective_seed();
    let mut records = Vec::new();
    for method in methods {
        let started = Instant::now();
        let outcome = run_method(
            &params,
            method,
            caps,
            args.alpha_mode.into(),
            args.tol,
            args.max_iter,
            args.sim.config(seed),
        )?;
        records.push(estimate_record(
            method_name(method),
            params.n(),
            params.m(),
            params.p(),
            &outcome.estimate,
            outcome.seed,
            started.elapsed().as_millis() as u64,
        ));
    }
    write_records(&records, args.format, args.out.as_deref())
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    #[arg(short = 'n', long, conflicts_with = "chain_segments", required_unless_present = "chain_segments")]
    pub n: Option<usize>,
    /// Repeater-chain framing; see `rate --help`.
    #[arg(long, value_name = "S")]
    pub chain_segments: Option<usize>,
    #[arg(short = 'm', long)]
    pub m: usize,
    #[arg(short = 'p', long)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "asymptotic")]
    pub alpha_mode: AlphaModeArg,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Emit machine-readable records instead of the table.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_compare(args: CompareArgs, caps: &Caps) -> Result<()> {
    let n = args.n.or(args.chain_segments).expect("clap enforces one");
    let params = NetworkParams::new(n, args.m, args.p)?;
    let (n, m, p) = (params.n(), params.m(), params.p());
    let seed = args.sim.effective_seed();

    let mut applicable = vec![RateMethodArg::Exact];
    if m == 1 {
        applicable.push(RateMethodArg::AnalyticM1);
    }
    if n == 2 {
        applicable.push(RateMethodArg::SmallpBipartite);
        applicable.push(RateMethodArg::LargeM);
    }
    applicable.push(RateMethodArg::Approx);
    applicable.push(RateMethodArg::Simulate);

    let mut records = Vec::new();
    let mut outcomes: Vec<(String, MethodOutcome)> = Vec::new();
    for method in applicable {
        let started = Instant::now();
        match run_method(
            &params,
            method,
            caps,
            args.alpha_mode.into(),
            chain::DEFAULT_POWER_TOL,
            chain::DEFAULT_MAX_ITER,
            args.sim.config(seed),
        ) {
            Ok(outcome) => {
                let wall = started.elapsed().as_millis() as u64;
                records.push(estimate_record(method_name(method), n, m, p, &outcome.estimate, outcome.seed, wall));
                outcomes.push((method_name(method).to_string(), outcome));
            }
            Err(err) => {
                let wall = started.elapsed().as_millis() as u64;
                let name = method_name(method);
                records.push(Record::failure(n, m, p, name, format!("n/a: {err}"), wall));
            }
        }
    }

    if let Some(format) = args.format {
        return write_records(&records, format, args.out.as_deref());
    }

    println!("n={n} m={m} p={p}");
    println!("{:<20}{:>14}{:>14}   {}", "method", "L_mean", "rate", "error");
    for r in &records {
        match (r.l_mean, r.rate) {
            (Some(l), Some(rate)) => {
                println!("{:<20}{:>14.8}{:>14.8}   {}", r.method, l, rate, r.error)
            }
            _ => println!("{:<20}{:>14}{:>14}   {}", r.method, "n/a", "n/a", r.error),
        }
    }

    println!("\npairwise relative deviations:");
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            let (na, a) = &outcomes[i];
            let (nb, b) = &outcomes[j];
            let (la, lb) = (a.estimate.l_mean, b.estimate.l_mean);
            if lb != 0.0 {
                println!("  {na} vs {nb}: {:+.4}", (la - lb) / lb);
            }
        }
    }

    let bounds = analytic::multiplexing_bounds(n, m, p)?;
    println!(
        "\nbounds on L_mean: [{:.8}, {:.8}]",
        bounds.lower, bounds.upper
    );
    let mut violations = 0;
    for (name, outcome) in &outcomes {
        // the closed forms are approximations and may sit below the lower
        // bound by construction; only exact and simulated values are checked
        let slack = match outcome.stderr {
            Some(se) => 3.0 * se,
            None if name == "exact" => 1e-9,
            None => continue,
        };
        let l = outcome.estimate.l_mean;
        if l < bounds.lower - slack || l > bounds.upper + slack {
            println!("  BOUND VIOLATION: {name} L_mean={l}");
            violations += 1;
        }
    }
    if violations == 0 {
        println!("  no bound violations");
    }
    Ok(())
}

fn method_name(method: RateMethodArg) -> &'static str {
    match method {
        RateMethodArg::Exact => "exact",
        RateMethodArg::AnalyticM1 => "analytic-m1",
        RateMethodArg::Approx => "approx",
        RateMethodArg::SmallpBipartite => "smallp-bipartite",
        RateMethodArg::LargeM => "large-m",
        RateMethodArg::Simulate => "simulate",
    }
}

#[derive(Debug, clap::Args)]
pub struct TreesArgs {
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(short = 'm', long)]
    pub m: usize,
    /// Only report this root, e.g. `--root 2,2,0`.
    #[arg(long)]
    pub root: Option<String>,
    /// Also print the stationary distribution via arborescence weights.
    #[arg(long)]
    pub stationary: bool,
    /// Work on the plain occupation-tuple graph instead of the
    /// permutation-merged one.
    #[arg(long)]
    pub plain: bool,
    /// Write the graph as an edge list (from, to, weight numerator,
    /// weight denominator per line) to this path.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

pub fn cmd_trees(args: TreesArgs) -> Result<()> {
    let unordered = trees::build_small_p_graph(args.n, args.m)?;
    let graph = if args.plain {
        unordered
    } else {
        trees::merge_permutations(&unordered)?
    };

    if let Some(path) = &args.export {
        let file = std::fs::File::create(path)?;
        graph.write_edge_list(std::io::BufWriter::new(file))?;
        eprintln!("wrote {} edges to {}", graph.edge_count(), path.display());
    }

    let roots: Vec<Occupation> = match &args.root {
        Some(text) => vec![parse_root(text)?],
        None => graph.vertices().to_vec(),
    };
    for root in &roots {
        let res = trees::count_arborescences(&graph, root)?;
        println!("root={root} count={} weight_sum={}", res.count, res.weight_sum);
    }
    if args.stationary {
        let pi = trees::stationary_via_mctt(&graph)?;
        println!("stationary distribution (weights up to the common power of p):");
        for (k, prob) in graph.vertices().iter().zip(&pi) {
            println!(
                "  pi{k} = {prob} (~{:.8})",
                prob.to_f64().unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn parse_root(text: &str) -> Result<Occupation> {
    let parts: Result<Vec<u32>, _> = text
        .split(',')
        .map(|t| t.trim().parse::<u32>())
        .collect();
    match parts {
        Ok(v) if !v.is_empty() => Ok(Occupation(v)),
        _ => Err(UsageError(format!("cannot parse root '{text}' (expected e.g. 2,2,0)")).into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepMethodArg {
    Exact,
    /// Closed form for m = 1 rows (marked n/a elsewhere).
    Analytic,
    Approx,
    /// Bipartite small-p form for n = 2 rows (marked n/a elsewhere).
    Smallp,
    Simulate,
    /// Emits the L_mean sandwich as bounds-lower / bounds-upper records.
    Bounds,
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// Party counts: comma list and/or inclusive ranges, e.g. `2,3,8-10`.
    #[arg(long, value_name = "LIST")]
    pub n: String,
    /// Memory counts, same syntax as --n.
    #[arg(long, value_name = "LIST")]
    pub m: String,
    /// Success probabilities, comma separated.
    #[arg(long, value_name = "LIST")]
    pub p: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "exact,approx")]
    pub methods: Vec<SweepMethodArg>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "asymptotic")]
    pub alpha_mode: AlphaModeArg,
    /// Rate-gain threshold of the per-(n,p) saturation detection emitted
    /// when the approx method is swept.
    #[arg(long, default_value_t = 1e-4)]
    pub saturation_threshold: f64,
    #[command(flatten)]
    pub sim: SimArgs,
}

fn parse_usize_list(text: &str, axis: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((a, b)) = token.split_once('-') {
            let (a, b) = (
                a.trim().parse::<usize>().map_err(|_| bad_axis(axis, token))?,
                b.trim().parse::<usize>().map_err(|_| bad_axis(axis, token))?,
            );
            if a > b {
                return Err(bad_axis(axis, token).into());
            }
            out.extend(a..=b);
        } else {
            out.push(token.parse::<usize>().map_err(|_| bad_axis(axis, token))?);
        }
    }
    if out.is_empty() {
        return Err(UsageError(format!("axis --{axis} is empty")).into());
    }
    Ok(out)
}

fn bad_axis(axis: &str, token: &str) -> UsageError {
    UsageError(format!("cannot parse --{axis} element '{token}'"))
}

fn parse_f64_list(text: &str, axis: &str) -> Result<Vec<f64>> {
    let out: Result<Vec<f64>, _> = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>())
        .collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(UsageError(format!("cannot parse --{axis} list '{text}'")).into()),
    }
}

/// Per-cell seed derivation: splitmix64 of the base seed offset by the
/// cell's position in the sweep grid.
fn cell_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cmd_sweep(args: SweepArgs, caps: &Caps) -> Result<()> {
    let ns = parse_usize_list(&args.n, "n")?;
    let ms = parse_usize_list(&args.m, "m")?;
    let ps = parse_f64_list(&args.p, "p")?;
    if args.methods.is_empty() {
        return Err(UsageError("at least one method is required".into()).into());
    }
    let base_seed = args.sim.effective_seed();
    let alpha_mode: AlphaMode = args.alpha_mode.into();

    struct Cell {
        index: u64,
        n: usize,
        m: usize,
        p: f64,
        method: SweepMethodArg,
    }
    let mut cells = Vec::new();
    let mut index = 0u64;
    for &n in &ns {
        for &m in &ms {
            for &p in &ps {
                for &method in &args.methods {
                    cells.push(Cell {
                        index,
                        n,
                        m,
                        p,
                        method,
                    });
                    index += 1;
                }
            }
        }
    }

    let mut records: Vec<Record> = cells
        .par_iter()
        .flat_map(|cell| {
            let started = Instant::now();
            let result = sweep_cell(cell.n, cell.m, cell.p, cell.method, caps, alpha_mode, &args, base_seed, cell.index);
            let wall = started.elapsed().as_millis() as u64;
            match result {
                Ok(mut recs) => {
                    for r in recs.iter_mut() {
                        r.wall_ms = wall;
                    }
                    recs
                }
                Err(err) => vec![Record::failure(
                    cell.n,
                    cell.m,
                    cell.p,
                    sweep_method_name(cell.method),
                    format!("n/a: {err}"),
                    wall,
                )],
            }
        })
        .collect();

    // saturation detection per (n, p) when the approximation is swept
    if args.methods.contains(&SweepMethodArg::Approx) {
        for &n in &ns {
            for &p in &ps {
                let started = Instant::now();
                match analytic::find_saturation_m(n, p, args.saturation_threshold, alpha_mode) {
                    Ok(m_sat) => {
                        let est = analytic::general_l_approx(n, m_sat, p, alpha_mode)?;
                        records.push(Record {
                            n,
                            m: m_sat,
                            p,
                            method: "saturation".into(),
                            l_mean: Some(est.l_mean),
                            rate: Some(est.rate),
                            error: format!("gain<{}", args.saturation_threshold),
                            seed: None,
                            wall_ms: started.elapsed().as_millis() as u64,
                        });
                    }
                    Err(err) => records.push(Record::failure(
                        n,
                        0,
                        p,
                        "saturation",
                        format!("n/a: {err}"),
                        started.elapsed().as_millis() as u64,
                    )),
                }
            }
        }
    }

    write_records(&records, args.format, args.out.as_deref())
}

fn sweep_method_name(m: SweepMethodArg) -> &'static str {
    match m {
        SweepMethodArg::Exact => "exact",
        SweepMethodArg::Analytic => "analytic-m1",
        SweepMethodArg::Approx => "approx",
        SweepMethodArg::Smallp => "smallp-bipartite",
        SweepMethodArg::Simulate => "simulate",
        SweepMethodArg::Bounds => "bounds",
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    n: usize,
    m: usize,
    p: f64,
    method: SweepMethodArg,
    caps: &Caps,
    alpha_mode: AlphaMode,
    args: &SweepArgs,
    base_seed: u64,
    index: u64,
) -> Result<Vec<Record>> {
    let params = NetworkParams::new(n, m, p)?;
    let name = sweep_method_name(method);
    let record = |est: &RateEstimate, seed: Option<u64>| estimate_record(name, n, m, p, est, seed, 0);
    Ok(match method {
        SweepMethodArg::Exact => {
            let est = chain::exact_rate_capped(
                &params,
                caps.state_cap,
                chain::DEFAULT_POWER_TOL,
                chain::DEFAULT_MAX_ITER,
            )?;
            vec![record(&est, None)]
        }
        SweepMethodArg::Analytic => {
            if m != 1 {
                return Err(UsageError("analytic applies to m=1".into()).into());
            }
            vec![record(&analytic::rate_no_multiplexing_alt(n, p)?, None)]
        }
        SweepMethodArg::Approx => {
            vec![record(&analytic::general_l_approx(n, m, p, alpha_mode)?, None)]
        }
        SweepMethodArg::Smallp => {
            if n != 2 {
                return Err(UsageError("smallp applies to n=2".into()).into());
            }
            vec![record(&analytic::bipartite_rate_small_p(m, p)?, None)]
        }
        SweepMethodArg::Simulate => {
            let seed = cell_seed(base_seed, index);
            let result = sim::run_full(&params, &args.sim.config(seed))?;
            vec![record(&result.rate_estimate(m), Some(seed))]
        }
        SweepMethodArg::Bounds => {
            let bounds = analytic::multiplexing_bounds(n, m, p)?;
            let make = |name: &str, l: f64| Record {
                n,
                m,
                p,
                method: name.into(),
                l_mean: Some(l),
                rate: Some(l / m as f64),
                error: ErrorBound::Exact.to_string(),
                seed: None,
                wall_ms: 0,
            };
            vec![
                make("bounds-lower", bounds.lower),
                make("bounds-upper", bounds.upper),
            ]
        }
    })
}
