//! Command-line front end. Every subcommand prints one JSON document.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lokrisk_core::calibration::CalibrationProblem;
use lokrisk_core::consensus::{CancelToken, PairWeights, BRUTE_FORCE_BOUND};
use lokrisk_core::fixtures::{case_study_characterizations, demo_bundle, trap_risk_factor, trap_structure_questionnaire};
use lokrisk_core::model::{Characterization, Expert, Questionnaire, RiskFactor};
use lokrisk_core::pos::{validate_pos, LikelihoodRegion, PosScaleKind};
use lokrisk_core::store::ImportBundle;
use lokrisk_core::Relation;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_region, Config, STORAGE_ENV};
use crate::error::AppError;
use crate::oracle;
use crate::service::{PosEntryRequest, Service};

pub const WORKSPACE_ENV: &str = "LOKRISK_WORKSPACE";

#[derive(Debug, Parser)]
#[command(name = "lokrisk", version, about = "LOK/POS risk assessment engine")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding workspace documents; overrides the configuration.
    #[arg(long, global = true, env = STORAGE_ENV)]
    pub storage: Option<PathBuf>,
    #[arg(short, long, global = true, env = WORKSPACE_ENV, default_value = "default")]
    pub workspace: String,
    /// Version the workspace must be at for a mutating command to apply.
    #[arg(long, global = true)]
    pub expected_version: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the workspace.
    Init {
        /// Also import the demo fixture (questionnaire, experts, case-study rows, history).
        #[arg(long)]
        demo: bool,
        /// Comparison threshold for this workspace.
        #[arg(long)]
        t: Option<f64>,
    },
    /// Import a bundle, a questionnaire, or characterizations.
    Import(ImportArgs),
    /// Print a built-in fixture.
    Fixture {
        #[arg(value_enum)]
        which: Fixture,
    },
    /// Register an expert.
    Expert {
        id: String,
        #[arg(long)]
        name: Option<String>,
    },
    /// Add one comparison: `compare --expert alice A lt B`.
    Compare {
        #[arg(long)]
        expert: String,
        a: String,
        #[arg(value_enum)]
        relation: RelationArg,
        b: String,
        #[arg(long)]
        risk_factor: Option<String>,
    },
    /// Remove an asserted comparison by id.
    Uncompare {
        #[arg(long)]
        expert: String,
        id: u64,
        #[arg(long)]
        risk_factor: Option<String>,
    },
    /// An expert's asserted and inferred relations.
    Comparisons {
        #[arg(long)]
        expert: String,
        #[arg(long)]
        risk_factor: Option<String>,
    },
    /// LOK scales.
    Lok {
        #[command(subcommand)]
        scale: LokCommand,
    },
    /// Retrain and store the reference model.
    Train {
        #[arg(long)]
        risk_factor: Option<String>,
    },
    /// Solve and store the consensus ordering.
    Consensus {
        #[arg(long)]
        risk_factor: Option<String>,
    },
    /// POS entry and peer review.
    Pos {
        #[command(subcommand)]
        command: PosCommand,
    },
    /// Peer-reviewed assessments most similar to a characterization.
    Similar {
        characterization: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Check solvers against exhaustive oracles.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Print the workspace document.
    Show,
    /// Print the mutation log.
    Log,
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Bundle with settings, questionnaires, risk factors, experts,
    /// characterizations and reviewed history.
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub questionnaire: Option<PathBuf>,
    /// Risk factor for `--questionnaire`; derived from it when omitted.
    #[arg(long)]
    pub risk_factor: Option<PathBuf>,
    /// JSON array of characterizations.
    #[arg(long)]
    pub characterizations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fixture {
    /// Import bundle used by `init --demo`.
    Demo,
    Questionnaire,
    CaseStudy,
    Region,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelationArg {
    Lt,
    Eq,
    Gt,
}

#[derive(Debug, Subcommand)]
pub enum LokCommand {
    Reference {
        #[arg(long)]
        risk_factor: Option<String>,
    },
    Expert {
        id: String,
        #[arg(long)]
        risk_factor: Option<String>,
    },
    Global {
        #[arg(long)]
        risk_factor: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Expert,
    Global,
}

#[derive(Debug, Subcommand)]
pub enum PosCommand {
    /// Region geometry, optionally at one LOK with similar assessments.
    Region {
        #[arg(long)]
        lok: Option<f64>,
        #[arg(long)]
        characterization: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Check a (LOK, POS) pair. Uses `--region`, else the workspace region
    /// if the workspace exists, else the configured one.
    Validate {
        #[arg(long)]
        lok: f64,
        #[arg(long)]
        pos: f64,
        #[arg(long)]
        region: Option<PathBuf>,
    },
    /// Enter an expert's POS for a characterization.
    Enter {
        #[arg(long)]
        expert: String,
        #[arg(long)]
        characterization: String,
        #[arg(long)]
        pos: f64,
        #[arg(long, value_enum, default_value = "expert")]
        scale: ScaleArg,
    },
    /// Peer-review suggestion; `--confirm` records the final value.
    Consensus {
        #[arg(long)]
        characterization: String,
        #[arg(long)]
        confirm: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Solver vs enumeration of every weak ordering.
    Consensus {
        /// PairWeights JSON; random instances when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of characterizations in random instances.
        #[arg(long, default_value_t = BRUTE_FORCE_BOUND)]
        max: usize,
        #[arg(long, default_value_t = 4)]
        experts: usize,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// LP vs exhaustive grid search with step 0.001.
    Calibrate {
        /// CalibrationProblem JSON; random instances when omitted.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = oracle::GRID_MAX_IDS)]
        max: usize,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::input(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| AppError::input(path.display(), e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn relation(a: String, r: RelationArg, b: String) -> Relation {
    match r {
        RelationArg::Lt => Relation::lt(a, b),
        RelationArg::Eq => Relation::eq(a, b),
        RelationArg::Gt => Relation::lt(b, a),
    }
}

pub fn load_config(cli: &Cli) -> Result<Config, AppError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.storage {
        cfg.storage_path = dir.clone();
    }
    Ok(cfg)
}

/// Runs every subcommand except `serve`, returning the JSON to print.
pub fn execute(cli: &Cli, cfg: &Config) -> Result<Value, AppError> {
    let ws = cli.workspace.as_str();
    let expected = cli.expected_version;
    let service = || Service::from_config(cfg);
    let cancel = CancelToken::new();
    Ok(match &cli.command {
        Command::Init { demo, t } => {
            let svc = service()?;
            let mut settings = cfg.settings();
            if let Some(t) = t {
                settings.t = *t;
            }
            let summary = svc.create(ws, Some(settings))?;
            if *demo {
                to_value(&svc.import(ws, Some(summary.version), &demo_bundle())?)
            } else {
                to_value(&summary)
            }
        }
        Command::Import(args) => to_value(&import(&service()?, ws, expected, args)?),
        Command::Fixture { which } => match which {
            Fixture::Demo => to_value(&demo_bundle()),
            Fixture::Questionnaire => json!({
                "questionnaire": trap_structure_questionnaire(),
                "risk_factor": trap_risk_factor(),
            }),
            Fixture::CaseStudy => to_value(&case_study_characterizations()),
            Fixture::Region => to_value(&cfg.region),
        },
        Command::Expert { id, name } => {
            let expert = Expert {
                id: id.clone(),
                display_name: name.clone().unwrap_or_else(|| id.clone()),
            };
            to_value(&service()?.put_expert(ws, expected, expert)?)
        }
        Command::Compare {
            expert,
            a,
            relation: r,
            b,
            risk_factor,
        } => to_value(&service()?.add_comparison(
            ws,
            expected,
            expert,
            risk_factor.as_deref(),
            relation(a.clone(), *r, b.clone()),
        )?),
        Command::Uncompare { expert, id, risk_factor } => {
            to_value(&service()?.remove_comparison(ws, expected, expert, risk_factor.as_deref(), *id)?)
        }
        Command::Comparisons { expert, risk_factor } => {
            to_value(&service()?.comparisons(ws, expert, risk_factor.as_deref())?)
        }
        Command::Lok { scale } => match scale {
            LokCommand::Reference { risk_factor } => to_value(&service()?.reference(ws, risk_factor.as_deref())?),
            LokCommand::Expert { id, risk_factor } => {
                to_value(&service()?.expert_scale(ws, id, risk_factor.as_deref())?.1)
            }
            LokCommand::Global { risk_factor } => {
                to_value(&service()?.global_scale(ws, risk_factor.as_deref(), &cancel)?.1)
            }
        },
        Command::Train { risk_factor } => to_value(&service()?.train_reference(ws, risk_factor.as_deref())?),
        Command::Consensus { risk_factor } => {
            to_value(&service()?.solve_consensus(ws, risk_factor.as_deref(), &cancel)?)
        }
        Command::Pos { command } => pos(cli, cfg, command, &cancel)?,
        Command::Similar { characterization, k } => to_value(&service()?.similar(ws, characterization, *k)?.1),
        Command::Oracle { command } => run_oracle(command)?,
        Command::Show => to_value(&service()?.load(ws)?),
        Command::Log => to_value(&service()?.log(ws)?),
        Command::Serve { .. } => {
            return Err(AppError::BadRequest("`serve` runs in the async entry point".into()));
        }
    })
}

fn import(svc: &Service, ws: &str, expected: Option<u64>, args: &ImportArgs) -> Result<Value, AppError> {
    let mut bundle = match &args.bundle {
        Some(p) => read_json::<ImportBundle>(p)?,
        None => ImportBundle::default(),
    };
    if let Some(p) = &args.questionnaire {
        let q: Questionnaire = read_json(p)?;
        let rf = match &args.risk_factor {
            Some(rp) => read_json::<RiskFactor>(rp)?,
            None => RiskFactor {
                id: q.risk_factor_id.clone(),
                name: q.risk_factor_id.clone(),
                questionnaire_id: q.id.clone(),
            },
        };
        bundle.questionnaires.push(q);
        bundle.risk_factors.push(rf);
    } else if args.risk_factor.is_some() {
        return Err(AppError::BadRequest("--risk-factor needs --questionnaire".into()));
    }
    if let Some(p) = &args.characterizations {
        bundle.characterizations.extend(read_json::<Vec<Characterization>>(p)?);
    }
    if bundle == ImportBundle::default() {
        return Err(AppError::BadRequest("nothing to import".into()));
    }
    Ok(to_value(&svc.import(ws, expected, &bundle)?))
}

fn pos(cli: &Cli, cfg: &Config, command: &PosCommand, cancel: &CancelToken) -> Result<Value, AppError> {
    let ws = cli.workspace.as_str();
    let expected = cli.expected_version;
    Ok(match command {
        PosCommand::Region { lok, characterization, k } => {
            let svc = Service::from_config(cfg)?;
            to_value(&svc.region(ws, *lok, characterization.as_deref(), *k)?.1)
        }
        PosCommand::Validate { lok, pos, region } => {
            let region: LikelihoodRegion = match region {
                Some(p) => read_region(p)?,
                None => {
                    let svc = Service::from_config(cfg)?;
                    if svc.store().exists(ws) {
                        svc.load(ws)?.settings.region
                    } else {
                        cfg.region.clone()
                    }
                }
            };
            to_value(&validate_pos(&region, *lok, *pos)?)
        }
        PosCommand::Enter {
            expert,
            characterization,
            pos,
            scale,
        } => {
            let req = PosEntryRequest {
                expected_version: expected,
                expert_id: expert.clone(),
                characterization_id: characterization.clone(),
                pos: *pos,
                scale_kind: match scale {
                    ScaleArg::Expert => PosScaleKind::Expert,
                    ScaleArg::Global => PosScaleKind::Global,
                },
            };
            to_value(&Service::from_config(cfg)?.add_pos_entry(ws, &req)?)
        }
        PosCommand::Consensus {
            characterization,
            confirm,
        } => to_value(&Service::from_config(cfg)?.pos_consensus(ws, expected, characterization, *confirm, cancel)?),
    })
}

fn summarize<T: Serialize>(checks: Vec<(u64, T, bool)>) -> Result<Value, AppError> {
    let failures: Vec<u64> = checks.iter().filter(|c| !c.2).map(|c| c.0).collect();
    let value = if checks.len() == 1 {
        to_value(&checks[0].1)
    } else {
        json!({ "checked": checks.len(), "agree": failures.is_empty(), "failed_seeds": failures })
    };
    if failures.is_empty() {
        Ok(value)
    } else {
        Err(AppError::OracleMismatch(value.to_string()))
    }
}

fn run_oracle(command: &OracleCommand) -> Result<Value, AppError> {
    match command {
        OracleCommand::Consensus {
            weights,
            seed,
            max,
            experts,
            count,
        } => {
            if let Some(p) = weights {
                let w: PairWeights = read_json(p)?;
                let c = oracle::check_consensus(&w)?;
                let agree = c.agree;
                return summarize(vec![(0, c, agree)]);
            }
            let mut checks = Vec::new();
            for s in *seed..seed + count.max(&1) {
                let c = oracle::check_consensus(&oracle::random_weights(s, *max, *experts))?;
                let agree = c.agree;
                checks.push((s, c, agree));
            }
            summarize(checks)
        }
        OracleCommand::Calibrate {
            problem,
            seed,
            max,
            count,
        } => {
            if let Some(p) = problem {
                let p: CalibrationProblem = read_json(p)?;
                let c = oracle::check_calibration(&p)?;
                let agree = c.agree;
                return summarize(vec![(0, c, agree)]);
            }
            let mut checks = Vec::new();
            for s in *seed..seed + count.max(&1) {
                let c = oracle::check_calibration(&oracle::random_problem(s, *max))?;
                let agree = c.agree;
                checks.push((s, c, agree));
            }
            summarize(checks)
        }
    }
}
