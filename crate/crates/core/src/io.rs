//! File formats: instances and queries as JSON Lines, samples as JSON Lines of
//! weighted records, and hard instances as a JSON document pointing at both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardness::{HardInstance, HardKind, HardParams};
use crate::model::{Instance, ObjectiveSpec};
use crate::objective::{QuerySet, QueryTag};
use crate::sampler::WeightedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceHeader {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub a: Vec<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub x: Vec<f64>,
    pub tag: QueryTag,
    /// Atom the query isolates, for hard instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

fn parse_line<T: DeserializeOwned>(line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: e.to_string(),
    })
}

/// Non-empty lines with their 1-based line numbers.
fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn write_jsonl<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_instance<W: Write>(mut out: W, instance: &Instance) -> Result<()> {
    write_jsonl(
        &mut out,
        &InstanceHeader {
            dim: instance.dim(),
            n: instance.len(),
        },
    )?;
    for (a, &p) in instance.atoms().zip(instance.masses()) {
        write_jsonl(&mut out, &AtomRecord { a: a.to_vec(), p })?;
    }
    out.flush()?;
    Ok(())
}

/// Streams atoms of an instance file after validating the header and each
/// record's dimension. Masses are returned as stored.
pub struct AtomStream {
    header: InstanceHeader,
    inner: Box<dyn Iterator<Item = Result<(usize, String)>>>,
}

impl AtomStream {
    pub fn new<R: BufRead + 'static>(reader: R) -> Result<Self> {
        let mut inner: Box<dyn Iterator<Item = Result<(usize, String)>>> = Box::new(lines(reader));
        let (lineno, first) = inner.next().transpose()?.ok_or(Error::Parse {
            line: 1,
            msg: "missing header line".into(),
        })?;
        let header: InstanceHeader = parse_line(&first, lineno)?;
        if header.dim == 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: "dimension must be positive".into(),
            });
        }
        Ok(AtomStream { header, inner })
    }

    pub fn header(&self) -> InstanceHeader {
        self.header
    }
}

impl Iterator for AtomStream {
    type Item = Result<AtomRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.inner.next()?;
        Some(item.and_then(|(lineno, line)| {
            let rec: AtomRecord = parse_line(&line, lineno)?;
            if rec.a.len() != self.header.dim {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} coordinates, got {}", self.header.dim, rec.a.len()),
                });
            }
            if !(rec.p > 0.0 && rec.p.is_finite()) || !rec.a.iter().all(|v| v.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "coordinates must be finite and mass positive".into(),
                });
            }
            Ok(rec)
        }))
    }
}

pub fn read_instance<R: BufRead + 'static>(reader: R) -> Result<Instance> {
    let stream = AtomStream::new(reader)?;
    let header = stream.header();
    let mut rows = Vec::with_capacity(header.n);
    let mut masses = Vec::with_capacity(header.n);
    for rec in stream {
        let rec = rec?;
        rows.push(rec.a);
        masses.push(rec.p);
    }
    if rows.len() != header.n {
        return Err(Error::Parse {
            line: rows.len() + 2,
            msg: format!("header announces {} atoms, found {}", header.n, rows.len()),
        });
    }
    Instance::new(rows, masses)
}

/// Writes the queries, skipping the origin, which every loaded set regains.
pub fn write_queries<W: Write>(mut out: W, queries: &QuerySet, targets: Option<&[Option<usize>]>) -> Result<()> {
    for (i, (x, tag)) in queries.queries().iter().zip(queries.tags()).enumerate() {
        if *tag == QueryTag::Origin {
            continue;
        }
        let target = targets.and_then(|t| t.get(i).copied().flatten());
        write_jsonl(
            &mut out,
            &QueryRecord {
                x: x.clone(),
                tag: *tag,
                target,
            },
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a query file; returns the set (with the origin appended) and the
/// target of each query.
pub fn read_queries<R: BufRead>(reader: R, dim: usize) -> Result<(QuerySet, Vec<Option<usize>>)> {
    let mut xs = Vec::new();
    let mut tags = Vec::new();
    let mut targets = Vec::new();
    for item in lines(reader) {
        let (lineno, line) = item?;
        let rec: QueryRecord = parse_line(&line, lineno)?;
        if rec.x.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {dim} coordinates, got {}", rec.x.len()),
            });
        }
        xs.push(rec.x);
        tags.push(rec.tag);
        targets.push(rec.target);
    }
    let qs = QuerySet::new(dim, xs, tags)?;
    targets.resize(qs.len(), None);
    Ok((qs, targets))
}

pub fn write_samples<W: Write>(mut out: W, samples: &[WeightedSample]) -> Result<()> {
    for s in samples {
        write_jsonl(&mut out, s)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<WeightedSample>> {
    lines(reader)
        .map(|item| {
            let (lineno, line) = item?;
            let s: WeightedSample = parse_line(&line, lineno)?;
            if !(s.w > 0.0 && s.w.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("weight must be positive, got {}", s.w),
                });
            }
            Ok(s)
        })
        .collect()
}

/// JSON description of a hard instance; the atoms and queries live in
/// separate JSONL files next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardDoc {
    pub kind: HardKind,
    pub params: HardParams,
    pub spec: ObjectiveSpec,
    pub instance: PathBuf,
    pub queries: PathBuf,
}

pub const INSTANCE_FILE: &str = "instance.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const HARD_FILE: &str = "hard.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes `hard.json`, `instance.jsonl` and `queries.jsonl` into `dir` and
/// returns their paths.
pub fn save_hard(dir: &Path, hard: &HardInstance) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let inst = dir.join(INSTANCE_FILE);
    let qry = dir.join(QUERIES_FILE);
    let doc_path = dir.join(HARD_FILE);
    write_instance(create(&inst)?, &hard.instance)?;
    write_queries(create(&qry)?, &hard.queries, Some(&hard.targets))?;
    let doc = HardDoc {
        kind: hard.kind,
        params: hard.params.clone(),
        spec: hard.spec,
        instance: INSTANCE_FILE.into(),
        queries: QUERIES_FILE.into(),
    };
    let mut w = create(&doc_path)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(vec![doc_path, inst, qry])
}

/// Loads a hard instance from its JSON document (or a directory holding
/// `hard.json`) and re-verifies it.
pub fn load_hard(path: &Path) -> Result<HardInstance> {
    let doc_path = if path.is_dir() { path.join(HARD_FILE) } else { path.to_path_buf() };
    let base = doc_path.parent().unwrap_or(Path::new("."));
    let doc: HardDoc = serde_json::from_reader(open(&doc_path)?)?;
    let instance = read_instance(open(&base.join(&doc.instance))?)?;
    let (queries, targets) = read_queries(open(&base.join(&doc.queries))?, instance.dim())?;
    let hard = HardInstance {
        kind: doc.kind,
        instance,
        spec: doc.spec,
        queries,
        targets,
        params: doc.params,
    };
    hard.verify()?;
    Ok(hard)
}
