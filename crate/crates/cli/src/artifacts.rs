//! Path resolution and audited artifact loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gnia_core::eval::{AccessLog, VICTIM_ARTIFACT};
use gnia_core::gnia::{load_gnia, GniaParams};
use gnia_core::graph::{load_graph_dir, Graph};
use gnia_core::models::{load_surrogate, SurrogateModel};

/// Resolves paths against the data directory and logs every artifact
/// read, tagged with the run phase it happened in.
pub struct Store {
    root: Option<PathBuf>,
    pub log: AccessLog,
}

impl Store {
    pub fn new(root: Option<PathBuf>) -> Self {
        Store {
            root,
            log: AccessLog::default(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn graph(&self, p: &Path) -> Result<Graph> {
        let path = self.resolve(p);
        self.log.record(format!("graph:{}", path.display()));
        load_graph_dir(&path).with_context(|| format!("loading graph {}", path.display()))
    }

    pub fn surrogate(&self, p: &Path, g: &Graph) -> Result<SurrogateModel> {
        let path = self.resolve(p);
        self.log.record(format!("surrogate:{}", path.display()));
        model_from(&path, g)
    }

    /// Loads the victim. Only the evaluation side of a run may hold it.
    pub fn victim(&self, p: &Path, g: &Graph) -> Result<SurrogateModel> {
        let path = self.resolve(p);
        self.log.record(format!("{VICTIM_ARTIFACT}:file:{}", path.display()));
        model_from(&path, g)
    }

    pub fn generator(&self, p: &Path) -> Result<GniaParams> {
        let path = self.resolve(p);
        self.log.record(format!("generator:{}", path.display()));
        load_gnia(&path).with_context(|| format!("loading generator {}", path.display()))
    }

    /// Output path with its parent directory created.
    pub fn output(&self, p: &Path) -> Result<PathBuf> {
        let path = self.resolve(p);
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    pub fn output_dir(&self, p: &Path) -> Result<PathBuf> {
        let path = self.resolve(p);
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(path)
    }
}

fn model_from(path: &Path, g: &Graph) -> Result<SurrogateModel> {
    let params = load_surrogate(path).with_context(|| format!("loading model {}", path.display()))?;
    SurrogateModel::new(params, g).with_context(|| format!("binding {} to the graph", path.display()))
}
