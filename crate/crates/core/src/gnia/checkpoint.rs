//! Generator checkpoint: magic line, JSON header line, eight tensors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::gnia::{Ablation, GniaParams};
use crate::graph::AttrKind;

const MAGIC: &str = "GNIA-GENERATOR 1";

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    h: usize,
    #[serde(rename = "K")]
    k: usize,
    h_a: usize,
    h_e: usize,
    attr_kind: AttrKind,
    tau: f64,
    ablation: Ablation,
}

pub fn write_gnia<W: Write>(params: &GniaParams, w: &mut W) -> Result<()> {
    let header = Header {
        d: params.features(),
        h: params.surrogate_hidden(),
        k: params.classes,
        h_a: params.attr_hidden(),
        h_e: params.edge_hidden(),
        attr_kind: params.attr_kind,
        tau: params.tau,
        ablation: params.ablation,
    };
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for t in params.tensors() {
        t.write_to(w).map_err(io)?;
    }
    Ok(())
}

pub fn read_gnia<R: BufRead>(r: &mut R) -> Result<GniaParams> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let h: Header = serde_json::from_str(line.trim_end())?;
    let mut t = Vec::with_capacity(8);
    for _ in 0..8 {
        t.push(Tensor::read_from(r)?);
    }
    let mut it = t.into_iter();
    let mut next = || it.next().expect("eight tensors read");
    let params = GniaParams {
        wa0: next(),
        ba0: next(),
        wa1: next(),
        ba1: next(),
        we0: next(),
        be0: next(),
        we1: next(),
        be1: next(),
        attr_kind: h.attr_kind,
        classes: h.k,
        tau: h.tau,
        ablation: h.ablation,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(format!("inconsistent tensors: {e}")))?;
    if params.features() != h.d
        || params.surrogate_hidden() != h.h
        || params.attr_hidden() != h.h_a
        || params.edge_hidden() != h.h_e
    {
        return Err(Error::Checkpoint("tensor shapes disagree with header".into()));
    }
    Ok(params)
}

pub fn save_gnia(params: &GniaParams, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_gnia(params, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_gnia(path: &Path) -> Result<GniaParams> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gnia(&mut BufReader::new(f))
}
