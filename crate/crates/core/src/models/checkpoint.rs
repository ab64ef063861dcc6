//! Surrogate checkpoint: a magic line, one JSON header line, then the two
//! weight tensors in the binary tensor format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{ModelKind, SurrogateParams};

const MAGIC: &str = "GNIA-SURROGATE 1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    d: usize,
    h: usize,
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    steps: usize,
    graph_checksum: Option<u64>,
}

pub fn write_surrogate<W: Write>(params: &SurrogateParams, w: &mut W) -> Result<()> {
    let header = Header {
        kind: params.kind,
        d: params.features(),
        h: params.hidden(),
        k: params.classes(),
        alpha: params.alpha,
        steps: params.steps,
        graph_checksum: params.graph_checksum,
    };
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    writeln!(w, "{MAGIC}").map_err(io)?;
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    params.w0.write_to(w).map_err(io)?;
    params.w1.write_to(w).map_err(io)?;
    Ok(())
}

pub fn read_surrogate<R: BufRead>(r: &mut R) -> Result<SurrogateParams> {
    let mut line = String::new();
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    let w0 = Tensor::read_from(r)?;
    let w1 = Tensor::read_from(r)?;
    if w0.shape() != (header.d, header.h) || w1.shape() != (header.h, header.k) {
        return Err(Error::Checkpoint(format!(
            "tensor shapes {:?}/{:?} disagree with header d={} h={} K={}",
            w0.shape(),
            w1.shape(),
            header.d,
            header.h,
            header.k
        )));
    }
    let params = SurrogateParams {
        kind: header.kind,
        w0,
        w1,
        alpha: header.alpha,
        steps: header.steps,
        graph_checksum: header.graph_checksum,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_surrogate(params: &SurrogateParams, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_surrogate(params, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateParams> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_surrogate(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut p = SurrogateParams::appnp(
            Tensor::from_rows(&[vec![0.1, -0.2], vec![1.0 / 3.0, 4.0]]).unwrap(),
            Tensor::from_rows(&[vec![1e-300, 2.0, 3.0], vec![-1.0, 0.0, 0.5]]).unwrap(),
            0.1,
            10,
        );
        p.graph_checksum = Some(0xdead_beef);
        let mut buf = Vec::new();
        write_surrogate(&p, &mut buf).unwrap();
        let back = read_surrogate(&mut buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut r: &[u8] = b"NOPE\n{}\n";
        assert!(matches!(read_surrogate(&mut r), Err(Error::Checkpoint(_))));
    }
}
