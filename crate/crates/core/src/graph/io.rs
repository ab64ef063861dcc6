//! Text formats for edges, attributes, labels and splits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{AttrKind, Graph, Split};

/// File locations of a graph stored as a directory.
#[derive(Clone, Debug)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub attributes: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl GraphFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        GraphFiles {
            edges: dir.join("edges.tsv"),
            attributes: dir.join("attributes.txt"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{}:{}", path.display(), line + 1),
        message: message.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Loads a graph from its three text files.
///
/// `attr_kind`, when given, must agree with the kind declared in the
/// attribute header. The number of classes is one more than the largest
/// label unless `classes` is supplied.
pub fn load_graph(
    edge_path: &Path,
    attr_path: &Path,
    label_path: &Path,
    attr_kind: Option<AttrKind>,
    classes: Option<usize>,
) -> Result<Graph> {
    let attr_text = read(attr_path)?;
    let mut lines = content_lines(&attr_text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(attr_path, 0, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(attr_path, hline, "header must be `n d kind`"));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| parse_err(attr_path, hline, "bad node count"))?;
    let d: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(attr_path, hline, "bad dimension"))?;
    let kind: AttrKind = fields[2].parse()?;
    if let Some(expected) = attr_kind {
        if expected != kind {
            return Err(parse_err(
                attr_path,
                hline,
                format!("declared kind {kind:?}, expected {expected:?}"),
            ));
        }
    }
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (i, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(attr_path, i, format!("bad value {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(parse_err(attr_path, i, format!("expected {d} values")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(attr_path, hline, format!("header says {n} rows, found {rows}")));
    }
    let attributes = Tensor::from_vec(n, d, data)?;

    let label_text = read(label_path)?;
    let mut labels = Vec::with_capacity(n);
    for (i, line) in content_lines(&label_text) {
        labels.push(
            line.parse::<usize>()
                .map_err(|_| parse_err(label_path, i, format!("bad label {line:?}")))?,
        );
    }
    if labels.len() != n {
        return Err(parse_err(label_path, 0, format!("{} labels for {n} nodes", labels.len())));
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));

    let edge_text = read(edge_path)?;
    let mut edges = Vec::new();
    for (i, line) in content_lines(&edge_text) {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(edge_path, i, "expected `src<TAB>dst`"));
        };
        let u = a.parse().map_err(|_| parse_err(edge_path, i, format!("bad id {a:?}")))?;
        let v = b.parse().map_err(|_| parse_err(edge_path, i, format!("bad id {b:?}")))?;
        edges.push((u, v));
    }

    Graph::new(&edges, attributes, labels, classes, kind)
}

fn io_err(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the edge, attribute and label files. Values are written in their
/// shortest round-trip decimal form, so reloading is bit-exact.
pub fn write_graph(g: &Graph, edge_path: &Path, attr_path: &Path, label_path: &Path) -> Result<()> {
    let mut w = create(edge_path)?;
    for (u, v) in g.edges() {
        writeln!(w, "{u}\t{v}").map_err(io_err(edge_path))?;
    }
    w.flush().map_err(io_err(edge_path))?;

    let mut w = create(attr_path)?;
    writeln!(
        w,
        "{} {} {}",
        g.num_nodes(),
        g.num_features(),
        g.attr_kind().file_tag()
    )
    .map_err(io_err(attr_path))?;
    for r in 0..g.num_nodes() {
        let row: Vec<String> = g.attributes().row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(" ")).map_err(io_err(attr_path))?;
    }
    w.flush().map_err(io_err(attr_path))?;

    let mut w = create(label_path)?;
    for y in g.labels() {
        writeln!(w, "{y}").map_err(io_err(label_path))?;
    }
    w.flush().map_err(io_err(label_path))?;
    Ok(())
}

pub fn write_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = GraphFiles::in_dir(dir);
    write_graph(g, &files.edges, &files.attributes, &files.labels)?;
    let mut w = create(&files.splits)?;
    for s in g.splits() {
        writeln!(w, "{s}").map_err(|e| Error::io(&files.splits, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.splits, e))?;
    Ok(())
}

/// Loads a graph directory. The split file is optional; without it every
/// node is tagged as training.
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    let files = GraphFiles::in_dir(dir);
    let mut g = load_graph(&files.edges, &files.attributes, &files.labels, None, None)?;
    if files.splits.exists() {
        let text = read(&files.splits)?;
        let splits = content_lines(&text)
            .map(|(_, l)| l.parse::<Split>())
            .collect::<Result<Vec<_>>>()?;
        g.set_splits(splits)?;
    }
    Ok(g)
}
