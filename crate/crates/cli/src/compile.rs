use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use kagome_gibbs::hexcompile::{
    cycle_depth, embed_kagome, fold_for_zne, optimize_orientations, schedule_trotter_step, text_report, HeavyHexGraph,
};
use kagome_gibbs::lattice::{build_kagome, KagomeSpec};

use crate::config::{lattice_preset, short_hash, ExperimentConfig};
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Lattice spec file (TOML).
    #[arg(long, group = "lattice_source")]
    lattice: Option<PathBuf>,
    /// Built-in lattice, e.g. `ns79-open`.
    #[arg(long, group = "lattice_source")]
    lattice_preset: Option<String>,
    /// Experiment preset whose model lattice to compile.
    #[arg(long, group = "lattice_source")]
    preset: Option<String>,
    /// Experiment configuration whose model lattice to compile.
    #[arg(long, group = "lattice_source")]
    config: Option<PathBuf>,
    /// Environment qubits to place.
    #[arg(long)]
    n_env: Option<usize>,
    /// Trotter steps per cycle.
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Check the embedding against this heavy-hex edge list.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Fold each two-qubit gate with this probability for noise amplification.
    #[arg(long)]
    fold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
}

fn lattice_spec(args: &CompileArgs) -> CliResult<(KagomeSpec, usize)> {
    let from_cfg = |cfg: ExperimentConfig| -> CliResult<(KagomeSpec, usize)> {
        match cfg.model {
            crate::config::ModelConfig::KagomeAfim { lattice, .. }
            | crate::config::ModelConfig::KagomeAfhm { lattice } => Ok((lattice, cfg.channel.n_env)),
            _ => Err(CliError::Config("the configured model is not a kagome lattice".into())),
        }
    };
    if let Some(path) = &args.lattice {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        return Ok((KagomeSpec::from_toml(&text)?, 1));
    }
    if let Some(name) = &args.lattice_preset {
        return Ok((lattice_preset(name)?, 1));
    }
    if let Some(name) = &args.preset {
        return from_cfg(crate::config::preset(name)?);
    }
    if let Some(path) = &args.config {
        return from_cfg(ExperimentConfig::load(path)?);
    }
    Err(CliError::Config("pass --lattice, --lattice-preset, --preset or --config".into()))
}

pub fn execute(args: &CompileArgs, out: &Path) -> CliResult<()> {
    let (spec, default_env) = lattice_spec(args)?;
    let n_env = args.n_env.unwrap_or(default_env);
    let lat = build_kagome(&spec)?;
    let (graph, emb) = embed_kagome(&lat, n_env)?;
    emb.validate(&graph, &lat)?;
    if let Some(path) = &args.graph {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let target = HeavyHexGraph::from_edge_list(&text)?;
        emb.validate(&target, &lat)
            .map_err(|e| CliError::Config(format!("embedding does not fit {}: {e}", path.display())))?;
    }
    let orient = optimize_orientations(&lat, &emb)?;
    let step = schedule_trotter_step(&lat, &emb, &orient.orientations)?;
    step.schedule.check_couplings(&graph)?;
    let cycle = cycle_depth(&lat, &emb, &orient.orientations, args.steps)?;

    let key = format!("{}\nn_env={n_env}", spec.to_toml());
    let dir = out.join("compile").join(short_hash(key.as_bytes()));
    fs::create_dir_all(&dir)?;
    let mut report =
        format!("sites {}\nbonds {}\nenv_qubits {n_env}\nqubits {}\n", lat.n_sites, lat.n_bonds(), graph.n_qubits);
    report.push_str(&text_report(&step, &cycle, &orient));
    fs::write(dir.join("schedule.json"), step.schedule.to_json())?;
    fs::write(dir.join("graph.edges"), graph.to_edge_list())?;
    fs::write(dir.join("lattice.toml"), spec.to_toml())?;
    if let Some(p) = args.fold {
        let folded = fold_for_zne(&step.schedule, p, args.fold_seed)?;
        fs::write(dir.join("folded.json"), folded.to_json())?;
        writeln!(
            report,
            "folded_p {p}\nfolded_two_qubit_gates {}\nfolded_depth {}",
            folded.gate_count(),
            folded.depth()
        )
        .unwrap();
    }
    fs::write(dir.join("report.txt"), &report)?;
    print!("{report}");
    println!("schedule in {}", dir.display());
    Ok(())
}
