//! Workflow orchestration: a line-oriented stage list executed in dependency
//! order with checksum-gated reruns.
//!
//! ```text
//! # comments start with '#'
//! workspace work
//! file decode.cfg
//!   scorer mt2pe model=models/mt2pe/model.bin input=mt weight=1
//! end
//! stage pe generate out=pe.txt count=2000 seed=3
//! stage data corrupt in=pe.txt out=data/all noise=0.15 seed=4
//! ```
//!
//! Each `stage NAME KIND key=value...` line declares one step; see
//! [`STAGE_KINDS`]. Paths are relative to the workspace. A stage depends on
//! every stage producing one of its inputs, plus any listed in
//! `after=a,b`. `file` blocks write auxiliary files (indentation stripped)
//! into the workspace before any stage runs.

mod roundtrip;
mod stages;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use roundtrip::{roundtrip_generate, single_model_decoder, translate, RoundTrip};
pub use stages::{parse_keep, STAGE_KINDS};
pub use synth::{cipher, cipher_token, synth_corrupt, ConfusionTable, Corruptor, NoiseSpec, ToyGrammar};

/// Environment variable overriding the configured workspace.
pub const WORKSPACE_ENV: &str = "APEFORGE_WORKSPACE";
pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "#apeforge-manifest 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDecl {
    pub name: String,
    pub kind: String,
    pub params: BTreeMap<String, String>,
    pub after: Vec<String>,
}

impl StageDecl {
    /// Hash of the kind and parameters; a change forces re-execution.
    fn signature(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.as_bytes());
        for (k, v) in &self.params {
            h.update(b"\0");
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
        }
        hex(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub files: Vec<(String, String)>,
    pub stages: Vec<StageDecl>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl PipelineConfig {
    /// Parses a config; a relative workspace resolves against `base_dir`.
    pub fn parse(text: &str, location: &str, base_dir: &Path) -> Result<Self> {
        let mut workspace = None;
        let mut files = Vec::new();
        let mut stages: Vec<StageDecl> = Vec::new();
        let mut lines = text.lines().enumerate();
        while let Some((i, raw)) = lines.next() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            let mut words = line.split_whitespace();
            let Some(head) = words.next() else { continue };
            let err = |m: String| Error::parse(location, ln, m);
            match head {
                "workspace" => {
                    let p = words.next().ok_or_else(|| err("workspace needs a path".into()))?;
                    workspace = Some(stages::normalize(&base_dir.join(p)));
                }
                "file" => {
                    let name = words.next().ok_or_else(|| err("file needs a name".into()))?;
                    let mut body = String::new();
                    loop {
                        let Some((_, l)) = lines.next() else {
                            return Err(err(format!("file `{name}` lacks `end`")));
                        };
                        if l.trim() == "end" {
                            break;
                        }
                        body.push_str(l.trim());
                        body.push('\n');
                    }
                    files.push((name.to_owned(), body));
                }
                "stage" => {
                    let name = words.next().ok_or_else(|| err("stage needs a name".into()))?;
                    let kind = words.next().ok_or_else(|| err("stage needs a kind".into()))?;
                    if !STAGE_KINDS.contains(&kind) {
                        return Err(err(format!("unknown stage kind `{kind}`")));
                    }
                    if stages.iter().any(|s| s.name == name) {
                        return Err(err(format!("duplicate stage `{name}`")));
                    }
                    let mut params = BTreeMap::new();
                    let mut after = Vec::new();
                    for w in words {
                        let (k, v) = w
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, found `{w}`")))?;
                        if k == "after" {
                            after.extend(v.split(',').filter(|s| !s.is_empty()).map(str::to_owned));
                        } else if params.insert(k.to_owned(), v.to_owned()).is_some() {
                            return Err(err(format!("duplicate key `{k}`")));
                        }
                    }
                    stages.push(StageDecl {
                        name: name.to_owned(),
                        kind: kind.to_owned(),
                        params,
                        after,
                    });
                }
                _ => return Err(err(format!("unknown declaration `{head}`"))),
            }
        }
        Ok(PipelineConfig {
            workspace: workspace.unwrap_or_else(|| base_dir.to_owned()),
            files,
            stages,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Applies [`WORKSPACE_ENV`] when set.
    pub fn with_env_workspace(mut self) -> Self {
        if let Some(ws) = std::env::var_os(WORKSPACE_ENV).filter(|v| !v.is_empty()) {
            self.workspace = PathBuf::from(ws);
        }
        self
    }
}

/// Per-stage record: inputs and outputs with SHA-256 digests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub name: String,
    pub kind: String,
    pub signature: String,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for s in &self.stages {
            let _ = writeln!(out, "stage\t{}\t{}\t{}", s.name, s.kind, s.signature);
            for (p, d) in &s.inputs {
                let _ = writeln!(out, "in\t{}\t{p}\t{d}", s.name);
            }
            for (p, d) in &s.outputs {
                let _ = writeln!(out, "out\t{}\t{p}\t{d}", s.name);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::parse(MANIFEST_FILE, i + 1, "malformed manifest line");
            match (f.as_slice(), m.stages.last_mut()) {
                (["stage", n, k, s], _) => m.stages.push(StageRecord {
                    name: n.to_string(),
                    kind: k.to_string(),
                    signature: s.to_string(),
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                }),
                (["in", n, p, d], Some(s)) if *n == s.name => s.inputs.push((p.to_string(), d.to_string())),
                (["out", n, p, d], Some(s)) if *n == s.name => s.outputs.push((p.to_string(), d.to_string())),
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    pub fn get(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub manifest: Manifest,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&data)))
}

fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, data).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Stage indices in dependency order, ties by declaration order.
pub fn schedule(cfg: &PipelineConfig) -> Result<Vec<usize>> {
    let n = cfg.stages.len();
    let mut producer: HashMap<String, usize> = HashMap::new();
    let mut io = Vec::with_capacity(n);
    for (i, s) in cfg.stages.iter().enumerate() {
        let (ins, outs) = stages::io(s, &cfg.workspace).map_err(|e| stage_err(s, e))?;
        for o in &outs {
            if let Some(j) = producer.insert(o.clone(), i) {
                return Err(Error::Config(format!(
                    "`{o}` is produced by both `{}` and `{}`",
                    cfg.stages[j].name, s.name
                )));
            }
        }
        io.push(ins);
    }
    let index: HashMap<&str, usize> = cfg.stages.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut deps: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for (i, s) in cfg.stages.iter().enumerate() {
        for input in &io[i] {
            if let Some(&j) = producer.get(input) {
                if j != i {
                    deps[i].insert(j);
                }
            }
        }
        for a in &s.after {
            let &j = index
                .get(a.as_str())
                .ok_or_else(|| Error::Config(format!("stage `{}` waits for unknown `{a}`", s.name)))?;
            deps[i].insert(j);
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && deps[i].iter().all(|&j| done[j]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => {
                let stuck: Vec<&str> = (0..n).filter(|&i| !done[i]).map(|i| cfg.stages[i].name.as_str()).collect();
                return Err(Error::Config(format!("dependency cycle among stages {stuck:?}")));
            }
        }
    }
    Ok(order)
}

fn stage_err(s: &StageDecl, e: Error) -> Error {
    match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: s.name.clone(),
            message: e.to_string(),
        },
    }
}

fn digests(paths: &[String], ws: &Path) -> Result<Vec<(String, String)>> {
    paths
        .iter()
        .map(|p| Ok((p.clone(), file_digest(&ws.join(p))?)))
        .collect()
}

/// Executes the pipeline. Stages whose signature, input digests and output
/// digests match the previous manifest are skipped. The manifest is
/// rewritten atomically after every stage; wall times go to `run.log`.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    let ws = &cfg.workspace;
    std::fs::create_dir_all(ws).map_err(|e| Error::io(ws, e))?;
    for (name, body) in &cfg.files {
        let path = ws.join(name);
        if std::fs::read_to_string(&path).ok().as_deref() != Some(body.as_str()) {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
    }
    let order = schedule(cfg)?;
    let manifest_path = ws.join(MANIFEST_FILE);
    let previous = match std::fs::read_to_string(&manifest_path) {
        Ok(t) => Manifest::parse(&t)?,
        Err(_) => Manifest::default(),
    };
    let mut summary = RunSummary {
        executed: Vec::new(),
        skipped: Vec::new(),
        manifest: Manifest::default(),
    };
    let mut log = String::new();
    for i in order {
        let s = &cfg.stages[i];
        let (ins, outs) = stages::io(s, ws).map_err(|e| stage_err(s, e))?;
        let signature = s.signature();
        let in_digests = digests(&ins, ws).map_err(|e| stage_err(s, e))?;
        let up_to_date = previous.get(&s.name).is_some_and(|r| {
            r.kind == s.kind
                && r.signature == signature
                && r.inputs == in_digests
                && digests(&outs, ws).ok().as_ref() == Some(&r.outputs)
        });
        let record = if up_to_date {
            summary.skipped.push(s.name.clone());
            let _ = writeln!(log, "{}\tskipped", s.name);
            previous.get(&s.name).unwrap().clone()
        } else {
            log::info!("running stage {} ({})", s.name, s.kind);
            let start = Instant::now();
            stages::execute(s, ws).map_err(|e| stage_err(s, e))?;
            let _ = writeln!(log, "{}\t{:.3}s", s.name, start.elapsed().as_secs_f64());
            summary.executed.push(s.name.clone());
            StageRecord {
                name: s.name.clone(),
                kind: s.kind.clone(),
                signature,
                inputs: in_digests,
                outputs: digests(&outs, ws).map_err(|e| stage_err(s, e))?,
            }
        };
        summary.manifest.stages.push(record);
        write_atomic(&manifest_path, summary.manifest.to_text().as_bytes())?;
    }
    write_atomic(&manifest_path, summary.manifest.to_text().as_bytes())?;
    let log_path = ws.join("run.log");
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    Ok(summary)
}
