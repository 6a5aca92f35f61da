use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::canonical::{sha256_hex, to_canonical_line, to_canonical_string};
use super::checkpoint::{Checkpoint, Role};
use super::config::{EvalConfig, ExperimentConfig, FORMAT_VERSION};
use super::dataset::{dataset_hash, generate_dataset, read_dataset, write_dataset, hash_dataset_dir, Dataset};
use super::verify::{run_suite, Suite, SuiteReport};
use super::{read_text, write_text, HarnessError, Result};
use crate::csrec::{train_csrec, CsrecHyper, CsrecModel};
use crate::metrics::{
    ahr_threshold, alpha_label, bce_metric, multi_step_eval, observational_ranks, ranking_report, ter_estimate,
    EvalReport, Scorer, TerRow, UserSequence,
};
use crate::rng::{derive_seed, tag};
use crate::seqrec::{train_observational, Hyperparams, TrainReport};
use crate::sim::conditional_accept_probs;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Obs,
    Csrec,
}

impl FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "obs" => Ok(TrainMode::Obs),
            "csrec" => Ok(TrainMode::Csrec),
            _ => Err(format!("unknown train mode {s:?} (expected obs or csrec)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Obs,
    Intv,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Obs => "obs",
            EvalMode::Intv => "intv",
        }
    }
}

impl FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "obs" => Ok(EvalMode::Obs),
            "intv" => Ok(EvalMode::Intv),
            _ => Err(format!("unknown eval mode {s:?} (expected obs or intv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemSet {
    All,
    List(Vec<usize>),
}

impl FromStr for ItemSet {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(ItemSet::All);
        }
        s.split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad item id {x:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ItemSet::List)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub checkpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub reports: BTreeMap<String, String>,
    /// Only set from `SOURCE_DATE_EPOCH`, so unset runs stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(cfg)?,
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()),
            ..Default::default()
        })
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &to_canonical_line(self)?)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(to_canonical_string(cfg)?.as_bytes()))
}

/// Simulates the dataset into `out_dir` with its config copy and manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let ds = generate_dataset(cfg)?;
    let files = write_dataset(out_dir, &ds)?;
    write_text(&out_dir.join(CONFIG_FILE), &to_canonical_line(cfg)?)?;
    let mut manifest = RunManifest::new(cfg)?;
    manifest.dataset_hash = dataset_hash(&files);
    manifest.files = files;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint_hash: String,
    pub report: TrainReport,
    pub trace_path: PathBuf,
}

/// `<stem>.trace.csv` next to the checkpoint.
pub fn trace_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("trace.csv")
}

fn trace_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,loss,bce,residual_ms\n");
    for (k, e) in report.epochs.iter().enumerate() {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", k + 1, e.loss, e.bce, e.residual_ms);
    }
    s
}

fn effective_ftilde_hyper(cfg: &ExperimentConfig) -> Hyperparams {
    let mut h = cfg.model.ftilde.clone();
    h.seed = derive_seed(cfg.seed, tag::FTILDE, h.seed);
    h
}

fn effective_csrec_hyper(cfg: &ExperimentConfig) -> CsrecHyper {
    let mut h = cfg.model.csrec.clone();
    h.train.seed = derive_seed(cfg.seed, tag::CSREC, h.train.seed);
    h
}

fn load_role(path: &Path, role: Role, n_items: usize) -> Result<crate::seqrec::SeqModelParams> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_role(role)?;
    let params = ckpt.params()?;
    if params.n_items != n_items {
        return Err(HarnessError::Format(format!(
            "{}: {} items, dataset has {n_items}",
            path.display(),
            params.n_items
        )));
    }
    Ok(params)
}

/// Trains on the training split and writes the checkpoint plus a per-epoch
/// loss trace.
pub fn cmd_train(
    mode: TrainMode,
    data_dir: &Path,
    cfg: &ExperimentConfig,
    ftilde: Option<&Path>,
    out: &Path,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if mode == TrainMode::Csrec && ftilde.is_none() {
        return Err(HarnessError::MissingFtilde);
    }
    let ds = read_dataset(data_dir)?;
    let train = &ds.split.train;
    if train.is_empty() {
        return Err(HarnessError::Validation { field: "simulator.split".into(), reason: "training split is empty".into() });
    }
    let n_items = ds.catalog.len();
    let (ckpt, report) = match mode {
        TrainMode::Obs => {
            let h = effective_ftilde_hyper(cfg);
            let (params, report) = train_observational(&ds.obs_of(train)?, n_items, &h)?;
            (Checkpoint::new(Role::Ftilde, &h, &params)?, report)
        }
        TrainMode::Csrec => {
            let ft = load_role(ftilde.expect("checked above"), Role::Ftilde, n_items)?;
            let h = effective_csrec_hyper(cfg);
            let (model, report) = train_csrec(&ds.intv_of(train)?, &ft, &h)?;
            (Checkpoint::new(Role::Csrec, &h, &model.params)?, report)
        }
    };
    let checkpoint_hash = ckpt.save(out)?;
    let trace = trace_path(out);
    write_text(&trace, &trace_csv(&report))?;
    Ok(TrainOutput { checkpoint_hash, report, trace_path: trace })
}

fn eval_users(ds: &Dataset) -> &[u64] {
    if ds.split.test.is_empty() {
        &ds.split.valid
    } else {
        &ds.split.test
    }
}

fn write_report(out: &Path, report: &EvalReport) -> Result<String> {
    let csv = report.to_csv();
    write_text(out, &csv)?;
    write_text(&out.with_extension("md"), &report.to_markdown())?;
    Ok(sha256_hex(csv.as_bytes()))
}

/// Evaluates a checkpoint on the held-out users and writes `out` (CSV) and
/// its markdown twin.
pub fn cmd_eval(data_dir: &Path, ckpt_path: &Path, mode: EvalMode, eval: &EvalConfig, out: &Path) -> Result<EvalReport> {
    let ds = read_dataset(data_dir)?;
    let ckpt_text = read_text(ckpt_path)?;
    let ckpt = Checkpoint::from_text(&ckpt_text, &ckpt_path.display().to_string())?;
    let params = ckpt.params()?;
    if params.n_items != ds.catalog.len() {
        return Err(HarnessError::Format("checkpoint and dataset disagree on catalog size".into()));
    }
    let users = eval_users(&ds);
    let model = CsrecModel { params };
    let scorer = match ckpt.role {
        Role::Csrec => Scorer::Csrec(&model),
        Role::Ftilde => Scorer::Baseline(&model.params),
    };
    let mut report = match mode {
        EvalMode::Obs => {
            let seqs: Vec<UserSequence> =
                users.iter().map(|&u| Ok(UserSequence { user_id: u, events: &ds.record(u)?.obs })).collect::<Result<_>>()?;
            ranking_report(&observational_ranks(scorer, &seqs)?, &eval.k)?
        }
        EvalMode::Intv => {
            let seqs: Vec<UserSequence> =
                users.iter().map(|&u| Ok(UserSequence { user_id: u, events: &ds.record(u)?.intv })).collect::<Result<_>>()?;
            multi_step_eval(scorer, &seqs, eval.beta, &eval.alpha, eval.history)?
        }
    };
    let meta = &mut report.meta;
    meta.insert("role".into(), ckpt.role.to_string());
    meta.insert("mode".into(), mode.name().into());
    meta.insert("dataset_hash".into(), hash_dataset_dir(data_dir)?);
    meta.insert("checkpoint_hash".into(), sha256_hex(ckpt_text.as_bytes()));
    if let Some(seed) = ckpt.hyperparams.get("seed").or_else(|| ckpt.hyperparams.pointer("/train/seed")) {
        meta.insert("seed".into(), seed.to_string());
    }
    meta.insert("users".into(), users.len().to_string());
    match mode {
        EvalMode::Obs => meta.insert("k".into(), format!("{:?}", eval.k)),
        EvalMode::Intv => meta.insert("alpha".into(), format!("{:?}", eval.alpha)),
    };
    write_report(out, &report)?;
    Ok(report)
}

/// Bayes-optimal reference on the held-out interventional steps: the true
/// acceptance probability given each recorded history.
pub fn oracle_report(ds: &Dataset, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let beta = cfg.eval.beta;
    let mut z = Vec::new();
    let mut d = Vec::new();
    for &u in eval_users(ds) {
        let r = ds.record(u)?;
        let user = &ds.users[u as usize];
        let probs = conditional_accept_probs(user, &cfg.simulator.decision, &ds.catalog, &r.intv)?;
        let start = r.intv.len().saturating_sub(beta);
        z.extend_from_slice(&probs[start..]);
        d.extend(r.intv[start..].iter().map(|e| e.accepted));
    }
    let mut report = EvalReport::default();
    for &alpha in &cfg.eval.alpha {
        report.push(alpha_label("AHR", alpha), ahr_threshold(&z, &d, alpha)?);
    }
    report.push("BCE", bce_metric(&z, &d)?);
    report.meta.insert("role".into(), "oracle".into());
    report.meta.insert("beta".into(), beta.to_string());
    Ok(report)
}

/// Per-user, per-item treatment effects for the held-out users. Each user's
/// interventional sequence is the CSRec context and the observational
/// sequence the f̃ context.
pub fn cmd_ter(csrec_ckpt: &Path, ftilde_ckpt: &Path, data_dir: &Path, items: &ItemSet, out: &Path) -> Result<Vec<(u64, TerRow)>> {
    let ds = read_dataset(data_dir)?;
    let n = ds.catalog.len();
    let model = CsrecModel { params: load_role(csrec_ckpt, Role::Csrec, n)? };
    let ft = load_role(ftilde_ckpt, Role::Ftilde, n)?;
    let items: Vec<usize> = match items {
        ItemSet::All => (0..n).collect(),
        ItemSet::List(v) => v.clone(),
    };
    let mut rows = Vec::new();
    let mut csv = String::from("user_id,item_id,f_intv,f_obs,ter\n");
    for &u in eval_users(&ds) {
        let r = ds.record(u)?;
        for row in ter_estimate(&model, &ft, &items, &r.intv, &r.obs)? {
            let _ = writeln!(csv, "{u},{},{:?},{:?},{:?}", row.item, row.f_intv, row.f_obs, row.ter);
            rows.push((u, row));
        }
    }
    write_text(out, &csv)?;
    Ok(rows)
}

pub fn cmd_verify(suites: &[Suite], seed: u64) -> Result<Vec<SuiteReport>> {
    suites.iter().map(|&s| run_suite(s, seed)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub manifest: RunManifest,
    pub reports: BTreeMap<String, EvalReport>,
    pub ftilde_trace: TrainReport,
    pub csrec_trace: TrainReport,
}

/// gen-data → f̃ → CSRec → evaluations → TER, all under `out_dir`, with a
/// manifest hashing every artifact.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let data = out_dir.join("data");
    let data_manifest = cmd_gen_data(cfg, &data)?;
    let mut manifest = RunManifest::new(cfg)?;
    manifest.dataset_hash = data_manifest.dataset_hash;
    manifest.files = data_manifest.files.into_iter().map(|(k, v)| (format!("data/{k}"), v)).collect();

    let ft_path = out_dir.join("ftilde.json");
    let cs_path = out_dir.join("csrec.json");
    let ft = cmd_train(TrainMode::Obs, &data, cfg, None, &ft_path)?;
    let cs = cmd_train(TrainMode::Csrec, &data, cfg, Some(&ft_path), &cs_path)?;
    manifest.checkpoints.insert("ftilde.json".into(), ft.checkpoint_hash);
    manifest.checkpoints.insert("csrec.json".into(), cs.checkpoint_hash);
    for (name, trace) in [("ftilde.trace.csv", &ft.trace_path), ("csrec.trace.csv", &cs.trace_path)] {
        manifest.files.insert(name.into(), sha256_hex(read_text(trace)?.as_bytes()));
    }

    let reports_dir = out_dir.join("reports");
    let mut reports = BTreeMap::new();
    for (role, ckpt) in [("ftilde", &ft_path), ("csrec", &cs_path)] {
        for mode in [EvalMode::Obs, EvalMode::Intv] {
            let name = format!("{role}_{}", mode.name());
            let path = reports_dir.join(format!("{name}.csv"));
            let report = cmd_eval(&data, ckpt, mode, &cfg.eval, &path)?;
            manifest.reports.insert(format!("reports/{name}.csv"), sha256_hex(report.to_csv().as_bytes()));
            reports.insert(name, report);
        }
    }
    let ds = read_dataset(&data)?;
    let oracle = oracle_report(&ds, cfg)?;
    let hash = write_report(&reports_dir.join("oracle_intv.csv"), &oracle)?;
    manifest.reports.insert("reports/oracle_intv.csv".into(), hash);
    reports.insert("oracle_intv".into(), oracle);

    let ter_path = out_dir.join("ter.csv");
    cmd_ter(&cs_path, &ft_path, &data, &ItemSet::All, &ter_path)?;
    manifest.reports.insert("ter.csv".into(), sha256_hex(read_text(&ter_path)?.as_bytes()));
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(PipelineOutput { manifest, reports, ftilde_trace: ft.report, csrec_trace: cs.report })
}
