//! Command-line flags and their resolution into a validated model config.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gtp_core::graph::GraphKind;
use gtp_core::reduction::Strategy;
use gtp_core::runtime::ModelConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "gtp", version, about = "Graph-based token propagation for vision transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one forward pass and write diagnostics, a summary and token masks.
    Forward(ForwardArgs),
    /// Run the Cartesian product of reduction settings and write one CSV row per cell.
    Sweep(SweepArgs),
    /// Time one layer of token reduction against bipartite matching.
    BenchOverhead(BenchArgs),
    /// Run the acceptance suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Write seeded weights and the resolved config to disk.
    GenFixture(FixtureArgs),
}

/// Flags shared by every model-running command.
#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    /// Model preset: deit-s, deit-b, vitm-gap or tiny.
    #[arg(long, default_value = "deit-s")]
    pub preset: String,
    /// JSON model config; replaces the preset and every model flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tokens propagated per block.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of attention entries kept per head.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Semantic neighbours per token.
    #[arg(long)]
    pub m: Option<usize>,
    /// spatial, semantic, mixed or none.
    #[arg(long)]
    pub graph: Option<GraphKind>,
    /// mixed-attn, diag-attn, broad-attn, cls-attn, cos-sim or random.
    #[arg(long)]
    pub strategy: Option<Strategy>,
}

/// A resolved, validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Preset name, or the config path when one was given.
    pub label: String,
    pub seed: u64,
    pub model: ModelConfig,
}

impl SpecArgs {
    pub fn resolve(&self) -> CliResult<RunSpec> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
            let model = ModelConfig::from_json(&text)?;
            return Ok(RunSpec { label: path.display().to_string(), seed: self.seed, model });
        }
        let mut model = ModelConfig::preset(&self.preset)?;
        let r = &mut model.reduction;
        if let Some(p) = self.p {
            r.p_per_layer = p;
        }
        if let Some(a) = self.alpha {
            r.alpha = a;
        }
        if let Some(t) = self.theta {
            r.theta = t;
        }
        if let Some(m) = self.m {
            r.m_neighbors = m;
        }
        if let Some(g) = self.graph {
            r.graph_kind = g;
        }
        if let Some(s) = self.strategy {
            r.strategy = s;
        }
        r.seed = self.seed;
        model.validate()?;
        Ok(RunSpec { label: self.preset.to_ascii_lowercase(), seed: self.seed, model })
    }
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// GTPW weight file to use instead of seeded weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "gtp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// P values: a list `0,4,8` or a range `lo:hi:step`.
    #[arg(long)]
    pub p_values: Option<String>,
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub thetas: Option<String>,
    #[arg(long)]
    pub ms: Option<String>,
    /// Comma-separated graph kinds.
    #[arg(long)]
    pub graphs: Option<String>,
    /// Comma-separated strategies.
    #[arg(long)]
    pub strategies: Option<String>,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Base case: vit-b8 (N=785, C=768, P=20) or deit-s (N=197, C=384, P=8).
    #[arg(long, default_value = "vit-b8")]
    pub case: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated criterion ids; all when absent.
    #[arg(long)]
    pub only: Option<String>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value = "gtp-fixture")]
    pub out: PathBuf,
}

fn parse_item<T: FromStr>(axis: &str, s: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| CliError::spec(format!("{axis}: bad value '{s}': {e}")))
}

/// `a,b,c` or `lo:hi:step` (inclusive of `hi`).
pub fn parse_f64_axis(axis: &str, text: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step): (f64, f64, f64) =
                (parse_item(axis, lo)?, parse_item(axis, hi)?, parse_item(axis, step)?);
            if step.is_nan() || step <= 0.0 || hi < lo {
                return Err(CliError::spec(format!("{axis}: empty or invalid range '{text}'")));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect())
        }
        [_] => text.split(',').map(|s| parse_item(axis, s)).collect(),
        _ => Err(CliError::spec(format!("{axis}: expected a list or lo:hi:step, got '{text}'"))),
    }
}

pub fn parse_usize_axis(axis: &str, text: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step): (usize, usize, usize) =
                (parse_item(axis, lo)?, parse_item(axis, hi)?, parse_item(axis, step)?);
            if step == 0 || hi < lo {
                return Err(CliError::spec(format!("{axis}: empty or invalid range '{text}'")));
            }
            Ok((lo..=hi).step_by(step).collect())
        }
        [_] => text.split(',').map(|s| parse_item(axis, s)).collect(),
        _ => Err(CliError::spec(format!("{axis}: expected a list or lo:hi:step, got '{text}'"))),
    }
}

pub fn parse_list<T: FromStr>(axis: &str, text: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',').map(|s| parse_item(axis, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_ranges_hit_the_endpoint() {
        assert_eq!(parse_f64_axis("theta", "0.5:1.0:0.1").unwrap(), vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(parse_f64_axis("alpha", "0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_f64_axis("alpha", "0.2,0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_f64_axis("alpha", "1:0:0.1").is_err());
        assert!(parse_f64_axis("alpha", "a,b").is_err());
    }

    #[test]
    fn integer_axes() {
        assert_eq!(parse_usize_axis("p", "0:16:4").unwrap(), vec![0, 4, 8, 12, 16]);
        assert_eq!(parse_usize_axis("m", "2,4,8,16").unwrap(), vec![2, 4, 8, 16]);
        assert!(parse_usize_axis("p", "0:4:0").is_err());
    }

    #[test]
    fn list_of_enums() {
        let g: Vec<GraphKind> = parse_list("graphs", "spatial,none").unwrap();
        assert_eq!(g, vec![GraphKind::Spatial, GraphKind::None]);
        assert!(parse_list::<Strategy>("strategies", "mixed-attn,bogus").is_err());
    }

    #[test]
    fn flags_override_preset() {
        let cli = Cli::parse_from(["gtp", "forward", "--preset", "tiny", "--p", "2", "--alpha", "0.5", "--seed", "9"]);
        let Command::Forward(args) = cli.command else { panic!() };
        let spec = args.spec.resolve().unwrap();
        assert_eq!(spec.model.reduction.p_per_layer, 2);
        assert_eq!(spec.model.reduction.alpha, 0.5);
        assert_eq!(spec.model.reduction.seed, 9);
        assert_eq!(spec.label, "tiny");
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let cli = Cli::parse_from(["gtp", "forward", "--preset", "tiny", "--p", "6"]);
        let Command::Forward(args) = cli.command else { panic!() };
        assert_eq!(args.spec.resolve().unwrap_err().code, crate::error::exit::INVALID_SPEC);
    }
}
