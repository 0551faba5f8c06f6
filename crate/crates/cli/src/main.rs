//! Command-line interface: operator generation, norms, Ramsey extraction,
//! almost-diagonalization, factorization, and re-verification.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when a
//! verification ran and failed.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dyadic_factor::combinatorics::{ramsey_extract, Coloring};
use dyadic_factor::dyadic::DyadicRectangle;
use dyadic_factor::error::CoreError;
use dyadic_factor::factor::{factor_identity, plan_dimensions, FactorParams, Overrides};
use dyadic_factor::gamlen_gaudet::{bitree_verify, jones_verify, BlockFamily};
use dyadic_factor::json;
use dyadic_factor::norms::{bmo_norm_exact, bmo_norm_lower, h1_norm, BmoLowerBudget};
use dyadic_factor::operator::{caps, HaarOperator};
use dyadic_factor::quasi_diag::{quasi_diagonalize, verify_almost_diagonal, EpsSchedule, Mode};
use dyadic_factor::{HaarOperator64, HaarVector64};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "dyadic-factor",
    about = "Dyadic-rectangle combinatorics and identity factorization at finite depth",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Strict,
    BestEffort,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Strict => Mode::Strict,
            ModeArg::BestEffort => Mode::BestEffort,
        }
    }
}

#[derive(Args, Clone)]
struct IoArgs {
    /// Input file (JSON); `-` reads stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (JSON); defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Indentation width for JSON output (0 = compact).
    #[arg(long, default_value_t = 2)]
    json_indent: usize,
}

impl IoArgs {
    fn indent(&self) -> Option<usize> {
        if self.json_indent == 0 {
            None
        } else {
            Some(self.json_indent)
        }
    }

    fn read_input(&self) -> anyhow::Result<String> {
        match &self.input {
            None => bail!("--input is required for this subcommand"),
            Some(p) if p.as_os_str() == "-" => {
                let mut buf = String::new();
                std::io::Read::read_to_string(&mut std::io::stdin(), &mut buf)?;
                Ok(buf)
            }
            Some(p) => std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display())),
        }
    }

    fn write_output(&self, content: &str) -> anyhow::Result<()> {
        match &self.output {
            None => {
                println!("{content}");
                Ok(())
            }
            Some(p) => {
                std::fs::write(p, content).with_context(|| format!("writing {}", p.display()))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an operator (identity, multiplier, random contraction).
    GenOperator {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, value_enum)]
        kind: OperatorKind,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier diagonal values are iid fair bits in {0,1} from the
        /// seed unless a constant is given here.
        #[arg(long)]
        diag: Option<f64>,
    },
    /// H1 and BMO norms of a vector.
    Norms {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ramsey extraction from a coloring (explicit rectangle list JSON or a
    /// built-in generator).
    Ramsey {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value_t = 1)]
        n0: u32,
        /// Built-in coloring: random / everything / empty / threshold (of an
        /// operator's diagonal) — used when no --input is given.
        #[arg(long)]
        generator: Option<String>,
        /// Depth for generated colorings.
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Operator file for the threshold generator.
        #[arg(long)]
        op: Option<PathBuf>,
    },
    /// Almost-diagonalize an operator.
    Quasidiag {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        n: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::BestEffort)]
        mode: ModeArg,
        /// "pow2" (default) or "const:<x>".
        #[arg(long, default_value = "pow2")]
        eps_schedule: String,
        /// Also write the per-stage report here.
        #[arg(long)]
        stage_report: Option<PathBuf>,
    },
    /// Run the full factorization pipeline.
    Factor {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        n1_work: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::BestEffort)]
        mode: ModeArg,
        #[arg(long, default_value = "pow2")]
        eps_schedule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the E and P maps into this directory.
        #[arg(long)]
        emit_maps: Option<PathBuf>,
        /// Write the <Hb,b> table as CSV.
        #[arg(long)]
        hbb_csv: Option<PathBuf>,
    },
    /// Recheck a serialized block system against an operator.
    Verify {
        /// Block-system JSON.
        #[arg(long)]
        system: PathBuf,
        /// Operator JSON.
        #[arg(long)]
        op: PathBuf,
        #[arg(long, default_value = "pow2")]
        eps_schedule: String,
        #[arg(long, default_value_t = 2)]
        json_indent: usize,
    },
    /// Report the nominal dimension chain for (n, M).
    Plan {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long)]
        n1_work: Option<u32>,
        #[arg(long)]
        n_work: Option<u32>,
        #[arg(long, default_value_t = 2)]
        json_indent: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OperatorKind {
    Identity,
    Zero,
    Multiplier,
    Random,
}

fn parse_eps(spec: &str) -> anyhow::Result<EpsSchedule> {
    if spec == "pow2" {
        return Ok(EpsSchedule::DefaultPow2);
    }
    if let Some(rest) = spec.strip_prefix("const:") {
        let v: f64 = rest.parse().context("eps constant")?;
        if v <= 0.0 {
            bail!("eps constant must be positive");
        }
        return Ok(EpsSchedule::Const(v));
    }
    bail!("unknown eps schedule `{spec}` (expected `pow2` or `const:<x>`)")
}

fn load_operator(path: &Path) -> anyhow::Result<HaarOperator64> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let parsed: json::OperatorJson = serde_json::from_str(&text)
        .map_err(|e| anyhow!(CoreError::from(e)))
        .with_context(|| format!("parsing operator {}", path.display()))?;
    Ok(json::operator_from_json(&parsed)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenOperator {
            io,
            kind,
            depth,
            seed,
            diag,
        } => {
            if depth > caps::max_depth() {
                bail!(CoreError::OverrideExceedsCap {
                    depth,
                    cap: caps::max_depth(),
                    what: "gen-operator depth".into(),
                });
            }
            let op: HaarOperator64 = match kind {
                OperatorKind::Identity => HaarOperator::identity(depth),
                OperatorKind::Zero => HaarOperator::zero(depth),
                OperatorKind::Multiplier => {
                    let mut m = match diag {
                        Some(v) => HaarOperator::haar_multiplier(depth, |_| v),
                        None => {
                            use rand::Rng;
                            let indexer = dyadic_factor::operator::shared_indexer(depth);
                            let mut rng = rand_seed(seed);
                            let bits: Vec<f64> = (0..indexer.len())
                                .map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 })
                                .collect();
                            HaarOperator::haar_multiplier(depth, |r| {
                                bits[indexer.position(r).expect("indexed")]
                            })
                        }
                    };
                    m.metadata.seed = Some(seed);
                    m
                }
                OperatorKind::Random => HaarOperator::random_contraction(depth, seed)?,
            };
            io.write_output(&json::to_json_string(&json::operator_to_json(&op), io.indent())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Norms { io, seed } => {
            let text = io.read_input()?;
            let parsed: json::VectorJson =
                serde_json::from_str(&text).map_err(|e| anyhow!(CoreError::from(e)))?;
            let v: HaarVector64 = json::vector_from_json(&parsed)?;
            let h1 = h1_norm(&v);
            let (bmo_exact, bmo_error) = match bmo_norm_exact(&v, None) {
                Ok(x) => (Some(x), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let lower = bmo_norm_lower(&v, &BmoLowerBudget::default(), seed);
            let out = serde_json::json!({
                "schema": json::SCHEMA,
                "kind": "norms",
                "depth": v.depth(),
                "support": v.support_len(),
                "h1": h1,
                "bmo_exact": bmo_exact,
                "bmo_exact_error": bmo_error,
                "bmo_lower": json::norm_estimate_to_json(&lower),
            });
            io.write_output(&json::to_json_string(&out, io.indent())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ramsey {
            io,
            n0,
            generator,
            depth,
            seed,
            op,
        } => {
            let coloring = match (&io.input, generator.as_deref()) {
                (Some(_), _) => {
                    let text = io.read_input()?;
                    #[derive(serde::Deserialize)]
                    struct ColoringJson {
                        depth: u32,
                        rects: Vec<String>,
                    }
                    let parsed: ColoringJson =
                        serde_json::from_str(&text).map_err(|e| anyhow!(CoreError::from(e)))?;
                    let members: HashSet<DyadicRectangle> = parsed
                        .rects
                        .iter()
                        .map(|s| DyadicRectangle::from_str(s))
                        .collect::<Result<_, _>>()?;
                    Coloring::from_set(parsed.depth, members)
                }
                (None, Some("random")) => {
                    let d = depth.ok_or_else(|| anyhow!("--depth required for --generator"))?;
                    Coloring::random(d, seed)
                }
                (None, Some("everything")) => {
                    let d = depth.ok_or_else(|| anyhow!("--depth required for --generator"))?;
                    Coloring::everything(d)
                }
                (None, Some("empty")) => {
                    let d = depth.ok_or_else(|| anyhow!("--depth required for --generator"))?;
                    Coloring::empty(d)
                }
                (None, Some("threshold")) => {
                    let path = op.ok_or_else(|| anyhow!("--op required for threshold coloring"))?;
                    let t = load_operator(&path)?;
                    let n = depth.ok_or_else(|| anyhow!("--depth required for --generator"))?;
                    let sys =
                        quasi_diagonalize(&t, n, &EpsSchedule::DefaultPow2, Mode::BestEffort)?;
                    dyadic_factor::factor::color_by_diagonal(&sys)
                }
                (None, Some(other)) => bail!("unknown coloring generator `{other}`"),
                (None, None) => bail!("either --input or --generator is required"),
            };
            let res = ramsey_extract(&coloring, n0)?;
            io.write_output(&json::to_json_string(&json::ramsey_to_json(&res), io.indent())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Quasidiag {
            io,
            n,
            mode,
            eps_schedule,
            stage_report,
        } => {
            let text = io.read_input()?;
            let parsed: json::OperatorJson =
                serde_json::from_str(&text).map_err(|e| anyhow!(CoreError::from(e)))?;
            let t: HaarOperator64 = json::operator_from_json(&parsed)?;
            let eps = parse_eps(&eps_schedule)?;
            let sys = quasi_diagonalize(&t, n, &eps, mode.into())?;
            let sys_json = json::block_system_to_json(&sys);
            io.write_output(&json::to_json_string(&sys_json, io.indent())?)?;
            if let Some(path) = stage_report {
                let rows = verify_almost_diagonal(&t, &sys, &eps);
                let report = serde_json::json!({
                    "schema": json::SCHEMA,
                    "kind": "stage-report",
                    "rows": rows.iter().map(|r| serde_json::json!({
                        "index": r.index.to_string(),
                        "rect": r.rect.to_string(),
                        "off_diag_sum": r.off_diag_sum,
                        "bound": r.bound,
                        "sharper_bound": r.sharper_bound,
                        "pass": r.pass,
                        "pass_sharper": r.pass_sharper,
                    })).collect::<Vec<_>>(),
                });
                std::fs::write(&path, json::to_json_string(&report, io.indent())?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Factor {
            io,
            n,
            n1_work,
            mode,
            eps_schedule,
            seed,
            emit_maps,
            hbb_csv,
        } => {
            let text = io.read_input()?;
            let parsed: json::OperatorJson =
                serde_json::from_str(&text).map_err(|e| anyhow!(CoreError::from(e)))?;
            let t: HaarOperator64 = json::operator_from_json(&parsed)?;
            let params = FactorParams {
                n1_work,
                eps: parse_eps(&eps_schedule)?,
                mode: mode.into(),
                n0: None,
                seed,
            };
            let out = factor_identity(&t, n, &params)?;
            io.write_output(&json::to_json_string(&out.report, io.indent())?)?;
            if let Some(dir) = emit_maps {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(
                    dir.join("e.json"),
                    json::to_json_string(&json::map_to_json(&out.e, "embedding-e"), io.indent())?,
                )?;
                std::fs::write(
                    dir.join("p.json"),
                    json::to_json_string(&json::map_to_json(&out.p, "projection-p"), io.indent())?,
                )?;
            }
            if let Some(path) = hbb_csv {
                std::fs::write(&path, out.report.hbb_csv())?;
            }
            let ok = out.report.residual_max <= 1e-8 && out.report.eq33_ok;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Verify {
            system,
            op,
            eps_schedule,
            json_indent,
        } => {
            let sys_text = std::fs::read_to_string(&system)
                .with_context(|| format!("reading {}", system.display()))?;
            let sys_json: json::BlockSystemJson =
                serde_json::from_str(&sys_text).map_err(|e| anyhow!(CoreError::from(e)))?;
            let fam = json::block_family_from_json(&sys_json)?;
            let t = load_operator(&op)?;
            let eps = parse_eps(&eps_schedule)?;

            let mut failures: Vec<String> = Vec::new();
            let mut seen: HashSet<DyadicRectangle> = HashSet::new();
            for idx in fam.indices() {
                let coll = fam.collection(&idx).expect("indexed");
                if !coll.is_pairwise_disjoint() {
                    failures.push(format!("{idx}: members overlap"));
                }
                for r in coll.members() {
                    if !seen.insert(*r) {
                        failures.push(format!("{idx}: rectangle {r} reused across indices"));
                    }
                }
                if !coll.is_empty() {
                    let l2 = coll.sum_measure();
                    let half =
                        idx.measure() / dyadic_factor::dyadic::Exact::from_integer(2.into());
                    if l2 < half || l2 > idx.measure() {
                        failures.push(format!(
                            "{idx}: ||b||^2 = {l2} outside [{half}, {}]",
                            idx.measure()
                        ));
                    }
                }
            }
            let bt = bitree_verify(&fam);
            failures.extend(bt.violations.iter().map(|v| format!("bi-tree: {v}")));
            let jones = if fam.indices().len() <= 256 {
                let j = jones_verify(&fam);
                failures.extend(j.violations.iter().map(|v| format!("jones: {v}")));
                Some(j.c3)
            } else {
                None
            };
            // almost-diagonality recomputed from the operator
            let mut ad_failures = 0u64;
            let indices = fam.indices();
            let blocks: Vec<HaarVector64> =
                indices.iter().map(|i| fam.block_vector(i)).collect();
            let images: Vec<HaarVector64> = blocks.iter().map(|b| t.apply(b)).collect();
            for (i, bi) in blocks.iter().enumerate() {
                let mut sum = 0.0;
                for (j, tbj) in images.iter().enumerate() {
                    if i != j {
                        sum += tbj.pairing(bi)?.abs();
                    }
                }
                let l2: f64 = bi.l2_norm_sq();
                let e: f64 = eps.eps((i + 1) as u128);
                if sum > e * l2 + 1e-12 {
                    ad_failures += 1;
                    failures.push(format!(
                        "almost-diagonal: index {} off-diagonal sum {sum} above eps bound {}",
                        indices[i],
                        e * l2
                    ));
                }
            }
            let report = serde_json::json!({
                "schema": json::SCHEMA,
                "kind": "verify-report",
                "indices": indices.len(),
                "bitree_c2": bt.c2,
                "jones_c3": jones,
                "almost_diag_failures": ad_failures,
                "failures": failures,
                "passed": failures.is_empty(),
            });
            let indent = if json_indent == 0 { None } else { Some(json_indent) };
            println!("{}", json::to_json_string(&report, indent)?);
            Ok(if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Plan {
            n,
            m,
            n1_work,
            n_work,
            json_indent,
        } => {
            let plan = plan_dimensions(n, m, Overrides { n1_work, n_work })?;
            let indent = if json_indent == 0 { None } else { Some(json_indent) };
            println!("{}", json::to_json_string(&plan, indent)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
