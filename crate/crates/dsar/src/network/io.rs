//! Edge-list ingestion and export.
//!
//! Input format: one `src_id dst_id` pair per line, whitespace-separated.
//! Arbitrary non-negative integer ids are remapped to dense 0-based indices
//! in first-seen order; the remap table can be exported as CSV.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::CsrMatrix;

/// Mapping between external node ids and dense internal indices.
#[derive(Debug, Clone, Default)]
pub struct IdRemap {
    to_internal: std::collections::HashMap<u64, u32>,
    to_external: Vec<u64>,
}

impl IdRemap {
    pub fn len(&self) -> usize {
        self.to_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_external.is_empty()
    }

    pub fn intern(&mut self, external: u64) -> u32 {
        if let Some(&i) = self.to_internal.get(&external) {
            return i;
        }
        let i = self.to_external.len() as u32;
        self.to_internal.insert(external, i);
        self.to_external.push(external);
        i
    }

    pub fn internal(&self, external: u64) -> Option<u32> {
        self.to_internal.get(&external).copied()
    }

    pub fn external(&self, internal: u32) -> u64 {
        self.to_external[internal as usize]
    }

    /// Write `external_id,internal_id` rows with a header.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "external_id,internal_id")?;
        for (i, &ext) in self.to_external.iter().enumerate() {
            writeln!(w, "{ext},{i}")?;
        }
        Ok(())
    }
}

/// Read a whitespace-separated edge list into a 0/1 adjacency matrix.
///
/// Blank lines and lines starting with `#` are skipped. Duplicate edges
/// collapse to a single edge.
pub fn read_edge_list<P: AsRef<Path>>(path: P) -> Result<(CsrMatrix, IdRemap)> {
    let file = std::fs::File::open(&path)?;
    let reader = BufReader::new(file);
    let mut remap = IdRemap::default();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let src = parse_id(fields.next(), lineno)?;
        let dst = parse_id(fields.next(), lineno)?;
        if fields.next().is_some() {
            return Err(Error::Data(format!(
                "line {}: expected `src dst`, found extra fields",
                lineno + 1
            )));
        }
        edges.push((remap.intern(src), remap.intern(dst)));
    }
    edges.sort_unstable();
    edges.dedup();
    let n = remap.len();
    let triplets = edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    let adjacency = CsrMatrix::from_triplets(n, n, triplets)?;
    Ok((adjacency, remap))
}

fn parse_id(field: Option<&str>, lineno: usize) -> Result<u64> {
    let field = field.ok_or_else(|| {
        Error::Data(format!("line {}: expected `src dst` pair", lineno + 1))
    })?;
    field.parse::<u64>().map_err(|_| {
        Error::Data(format!(
            "line {}: node id `{field}` is not a non-negative integer",
            lineno + 1
        ))
    })
}

/// Write the adjacency as an edge list using internal 0-based ids.
pub fn write_edge_list<P: AsRef<Path>>(adjacency: &CsrMatrix, path: P) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..adjacency.n_rows() {
        for (j, _) in adjacency.row(i) {
            writeln!(w, "{i} {j}")?;
        }
    }
    Ok(())
}
