use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lapdeform_core::geom::{
    load_point_cloud, load_tet_mesh, save_ply, save_tet_mesh, save_xyz, synth_shape, CloudFormat,
    ShapeKind,
};
use lapdeform_core::lapnet::{self, history_csv, kps, load_manifest, load_model, save_model};
use lapdeform_core::metrics::eval_pipeline;
use lapdeform_core::pcl::{knn_graph_laplacian, Bandwidth};
use lapdeform_core::{
    cotan_laplacian, deformation_energy, handles_from_fps, inverse_mass, lbs_deform, lumped_mass,
    solve_bbw, BbwOptions, DeformationRequest, DiagMatrix, EnergySource, Error, EvalOptions,
    HandleSet, PointCloud, SparseSymMatrix, TrainConfig, WeightMatrix,
};

use crate::CliError;

type CliResult = std::result::Result<(), CliError>;

/// Two comma-separated paths, e.g. `shape.node,shape.ele`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPair(pub PathBuf, pub PathBuf);

fn path_pair(s: &str) -> std::result::Result<PathPair, String> {
    match s.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(PathPair(a.into(), b.into())),
        _ => Err(format!("expected two comma-separated paths, got '{s}'")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "lapdeform", version, about = "Handle-based shape deformation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cotangent Laplacian and lumped mass of a tet mesh.
    Laplacian {
        #[arg(long, value_parser = path_pair, value_name = "NODE,ELE")]
        mesh: PathPair,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mass: Option<PathBuf>,
        #[arg(long)]
        invmass: Option<PathBuf>,
    },
    /// Deformation energy `L M^-1 L`.
    Energy {
        #[arg(long)]
        lap: PathBuf,
        #[arg(long)]
        invmass: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bounded biharmonic weights; writes CSV, or LBSW for a `.lbsw` path.
    Bbw {
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        handles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Linear blend skinning of a cloud.
    Deform {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// KNN point pairs, one `i j` line each.
    Kps {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 32)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian KNN-graph Laplacian and mass.
    PclLap {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 12)]
        k: usize,
        /// Kernel width; defaults to the mean k-th neighbor distance.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, value_parser = path_pair, value_name = "L,MINV")]
        out: PathPair,
    },
    /// Synthetic tet mesh.
    Synth {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 4)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = path_pair, value_name = "NODE,ELE")]
        out: PathPair,
    },
    /// Farthest point sampled point handles as handle JSON.
    Fps {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Laplacian network on FEM targets.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learned Laplacian and inverse mass of a cloud.
    Predict {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = path_pair, value_name = "L,MINV")]
        out: PathPair,
        #[arg(long, default_value_t = 32)]
        k: usize,
        /// Zero every pair whose gate is below this value.
        #[arg(long)]
        hard_gate: Option<f64>,
    },
    /// Weight L1 and shape distances against FEM ground truth.
    Eval {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, value_parser = path_pair, value_name = "NODE,ELE")]
        gt: PathPair,
        #[arg(long, conflicts_with_all = ["baseline", "oracle"])]
        model: Option<PathBuf>,
        /// KNN-graph baseline with this k instead of a model.
        #[arg(long, conflicts_with = "oracle")]
        baseline: Option<usize>,
        /// Feed the ground-truth operators through the pipeline.
        #[arg(long)]
        oracle: bool,
        /// Pair neighborhood size for the model.
        #[arg(long, default_value_t = 32)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        handles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the CSV header and row to stdout.
        #[arg(long)]
        csv: bool,
    },
    /// HTTP deform service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory served under /app.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn load_cloud(path: &Path) -> Result<PointCloud, Error> {
    load_point_cloud(path, CloudFormat::from_path(path))
}

fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), Error> {
    match CloudFormat::from_path(path) {
        CloudFormat::PlyAscii => save_ply(cloud, path),
        _ => save_xyz(cloud, path),
    }
}

fn is_lbsw(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("lbsw")
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_weights(path: &Path) -> Result<WeightMatrix, Error> {
    if is_lbsw(path) {
        WeightMatrix::from_lbsw(&read_file(path)?)
    } else {
        WeightMatrix::load_csv(path)
    }
}

fn read_json(path: &Path) -> Result<String, Error> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| Error::InvalidArgument(format!("{} is not UTF-8", path.display())))
}

pub fn execute(cmd: Command) -> CliResult {
    match cmd {
        Command::Laplacian {
            mesh,
            out,
            mass,
            invmass,
        } => {
            let mesh = load_tet_mesh(&mesh.0, &mesh.1)?;
            cotan_laplacian(&mesh)?.save(&out)?;
            if mass.is_some() || invmass.is_some() {
                let m = lumped_mass(&mesh)?;
                if let Some(p) = invmass {
                    inverse_mass(&m)?.save(p)?;
                }
                if let Some(p) = mass {
                    m.save(p)?;
                }
            }
        }
        Command::Energy { lap, invmass, out } => {
            let l = SparseSymMatrix::load(&lap)?;
            let minv = DiagMatrix::load(&invmass)?;
            deformation_energy(&l, &minv)?.save(&out)?;
        }
        Command::Bbw {
            energy,
            handles,
            out,
            tol,
            max_iter,
        } => {
            if !(tol > 0.0) {
                return Err(CliError::Usage("--tol must be positive".into()));
            }
            let a = SparseSymMatrix::load(&energy)?;
            let h = HandleSet::from_json(&read_json(&handles)?, a.order())?;
            let opts = BbwOptions {
                tol,
                max_iter,
                record_objective: false,
            };
            let (w, report) = solve_bbw(&a, &h, &opts)?;
            if is_lbsw(&out) {
                write_file(&out, w.to_lbsw())?;
            } else {
                w.save_csv(&out)?;
            }
            eprintln!("{}", serde_json::to_string(&report).expect("report json"));
        }
        Command::Deform {
            cloud,
            weights,
            transforms,
            out,
        } => {
            let cloud = load_cloud(&cloud)?;
            let w = load_weights(&weights)?;
            let req = DeformationRequest::load(&transforms)?;
            save_cloud(&lbs_deform(&cloud, &w, &req)?, &out)?;
        }
        Command::Kps { cloud, k, out } => {
            if k == 0 {
                return Err(CliError::Usage("--k must be positive".into()));
            }
            let cloud = load_cloud(&cloud)?;
            let mut text = String::new();
            for p in kps(&cloud, k) {
                text.push_str(&format!("{} {}\n", p.i, p.j));
            }
            write_file(&out, text)?;
        }
        Command::PclLap {
            cloud,
            k,
            bandwidth,
            out,
        } => {
            let cloud = load_cloud(&cloud)?;
            let bw = bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
            let (l, m) = knn_graph_laplacian(&cloud, k, bw)?;
            l.save(&out.0)?;
            inverse_mass(&m)?.save(&out.1)?;
        }
        Command::Synth {
            kind,
            res,
            seed,
            out,
        } => {
            let kind: ShapeKind = kind.parse()?;
            let mesh = synth_shape(kind, res, seed)?;
            save_tet_mesh(&mesh, &out.0, &out.1)?;
        }
        Command::Fps {
            cloud,
            m,
            seed,
            out,
        } => {
            let cloud = load_cloud(&cloud)?;
            write_file(&out, handles_from_fps(&cloud, m, seed)?.to_json())?;
        }
        Command::Train {
            manifest,
            config,
            out,
            history,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_json(&read_json(&p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = load_manifest(&manifest)?;
            let outcome = match lapnet::train(&data, &cfg) {
                Ok(o) => o,
                Err(Error::DivergedLoss { epoch, checkpoint }) => {
                    // keep the last finite parameters for inspection
                    save_model(&checkpoint, &out)?;
                    return Err(Error::DivergedLoss { epoch, checkpoint }.into());
                }
                Err(e) => return Err(e.into()),
            };
            save_model(&outcome.params, &out)?;
            if let Some(p) = history {
                write_file(&p, history_csv(&outcome.history))?;
            }
            log::info!("best epoch {}", outcome.best_epoch);
        }
        Command::Predict {
            cloud,
            model,
            out,
            k,
            hard_gate,
        } => {
            let cloud = load_cloud(&cloud)?;
            let params = load_model(&model)?;
            let pred = lapnet::predict(&cloud, &params, k)?;
            match hard_gate {
                Some(t) => pred.hard_gated_laplacian(t)?.save(&out.0)?,
                None => pred.laplacian.save(&out.0)?,
            }
            pred.inv_mass.save(&out.1)?;
        }
        Command::Eval {
            cloud,
            gt,
            model,
            baseline,
            oracle,
            k,
            handles,
            seed,
            out,
            csv,
        } => {
            let cloud = load_cloud(&cloud)?;
            let mesh = load_tet_mesh(&gt.0, &gt.1)?;
            let params = model.as_deref().map(load_model).transpose()?;
            let source = match (&params, baseline, oracle) {
                (Some(p), _, _) => EnergySource::Learned { params: p, k },
                (None, Some(bk), _) => EnergySource::Baseline { k: bk },
                (None, None, true) => EnergySource::Oracle,
                (None, None, false) => {
                    return Err(CliError::Usage(
                        "one of --model, --baseline or --oracle is required".into(),
                    ))
                }
            };
            let opts = EvalOptions {
                handles,
                handle_seed: seed,
                deform_seed: seed,
                ..Default::default()
            };
            let report = eval_pipeline(&cloud, &mesh, source, &opts)?;
            match out {
                Some(p) => write_file(&p, report.to_json())?,
                None if !csv => println!("{}", report.to_json()),
                None => {}
            }
            if csv {
                println!("{}", lapdeform_core::EvalReport::CSV_HEADER);
                println!("{}", report.csv_row());
            }
        }
        Command::Serve {
            port,
            host,
            static_dir,
        } => {
            let addr = format!("{host}:{port}");
            let runtime = tokio::runtime::Runtime::new().map_err(|source| Error::Io {
                path: PathBuf::from(&addr),
                source,
            })?;
            runtime
                .block_on(crate::service::serve(&addr, static_dir))
                .map_err(|source| Error::Io {
                    path: PathBuf::from(&addr),
                    source,
                })?;
        }
    }
    Ok(())
}
