//! Trace file I/O: two plain-text pair formats plus a key-value sidecar.
//!
//! `csv-pairs` is one `src,dst` line per request with an optional single
//! `src,dst` header; `ws-pairs` is the whitespace-separated variant. Both
//! parse base-10 non-negative integers and preserve request order exactly.

use super::{Request, Trace, TraceError, TraceMeta};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum TraceFormat {
    /// `src,dst` per line, optional `src,dst` header.
    CsvPairs,
    /// `src dst` per line (any whitespace), optional `src dst` header.
    WsPairs,
}

impl TraceFormat {
    fn split(self, line: &str) -> Option<(&str, &str)> {
        match self {
            TraceFormat::CsvPairs => {
                let (a, b) = line.split_once(',')?;
                Some((a.trim(), b.trim()))
            }
            TraceFormat::WsPairs => {
                let mut it = line.split_whitespace();
                let a = it.next()?;
                let b = it.next()?;
                if it.next().is_some() {
                    return None;
                }
                Some((a, b))
            }
        }
    }

    fn separator(self) -> char {
        match self {
            TraceFormat::CsvPairs => ',',
            TraceFormat::WsPairs => ' ',
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TraceError {
    TraceError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_pairs(path: &Path, format: TraceFormat) -> Result<Vec<Request>, TraceError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut requests = Vec::new();
    let mut first_data_line = true;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let Some((a, b)) = format.split(line) else {
            return Err(TraceError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected two fields, got {line:?}"),
            });
        };
        // A single header line is tolerated at the top of the file.
        if first_data_line && a.eq_ignore_ascii_case("src") && b.eq_ignore_ascii_case("dst") {
            first_data_line = false;
            continue;
        }
        first_data_line = false;
        let src: u32 = a.parse().map_err(|_| TraceError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad source ID {a:?}"),
        })?;
        let dst: u32 = b.parse().map_err(|_| TraceError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad destination ID {b:?}"),
        })?;
        requests.push(Request::new(src, dst));
    }
    if requests.is_empty() {
        return Err(TraceError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    Ok(requests)
}

/// Load a trace, validating every ID against `meta.n_nodes`.
pub fn load_trace(path: &Path, format: TraceFormat, meta: TraceMeta) -> Result<Trace, TraceError> {
    let requests = parse_pairs(path, format)?;
    // Re-walk to report the offending line for range errors.
    for (i, r) in requests.iter().enumerate() {
        if r.src >= meta.n_nodes || r.dst >= meta.n_nodes {
            return Err(TraceError::IdOutOfRange {
                path: path.display().to_string(),
                line: i + 1,
                id: r.src.max(r.dst) as u64,
                n_nodes: meta.n_nodes,
            });
        }
    }
    Ok(Trace { meta, requests })
}

/// Load a trace and infer its metadata: `n_nodes` is max observed ID + 1,
/// the name comes from the file stem, and a sidecar (if present next to the
/// file) overrides everything.
pub fn load_trace_auto(path: &Path, format: TraceFormat) -> Result<Trace, TraceError> {
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let meta = load_sidecar(&sidecar)?;
        return load_trace(path, format, meta);
    }
    let requests = parse_pairs(path, format)?;
    let n_nodes = requests.iter().map(|r| r.src.max(r.dst)).max().unwrap() + 1;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_string());
    Ok(Trace {
        meta: TraceMeta::new(name, 0, n_nodes, 1),
        requests,
    })
}

/// Write a trace in the given format (no header line).
pub fn save_trace(trace: &Trace, path: &Path, format: TraceFormat) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let sep = format.separator();
    for r in &trace.requests {
        writeln!(w, "{}{}{}", r.src, sep, r.dst).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Conventional sidecar location for a trace file: `<file>.meta`.
pub fn sidecar_path(trace_path: &Path) -> std::path::PathBuf {
    let mut s = trace_path.as_os_str().to_owned();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

/// Write the key-value metadata sidecar.
pub fn save_sidecar(meta: &TraceMeta, path: &Path) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "name={}", meta.name).map_err(|e| io_err(path, e))?;
    writeln!(w, "trace_id={}", meta.trace_id).map_err(|e| io_err(path, e))?;
    writeln!(w, "n_nodes={}", meta.n_nodes).map_err(|e| io_err(path, e))?;
    writeln!(w, "segment_count={}", meta.segment_count).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a key-value metadata sidecar.
pub fn load_sidecar(path: &Path) -> Result<TraceMeta, TraceError> {
    let bad = |msg: String| TraceError::BadSidecar {
        path: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut name = None;
    let mut trace_id = None;
    let mut n_nodes = None;
    let mut segment_count = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(bad(format!("expected key=value, got {line:?}")));
        };
        match k.trim() {
            "name" => name = Some(v.to_string()),
            "trace_id" => trace_id = Some(v.trim().parse().map_err(|_| bad(format!("bad trace_id {v:?}")))?),
            "n_nodes" => n_nodes = Some(v.trim().parse().map_err(|_| bad(format!("bad n_nodes {v:?}")))?),
            "segment_count" => {
                segment_count =
                    Some(v.trim().parse().map_err(|_| bad(format!("bad segment_count {v:?}")))?)
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    Ok(TraceMeta {
        name: name.ok_or_else(|| bad("missing name".into()))?,
        trace_id: trace_id.ok_or_else(|| bad("missing trace_id".into()))?,
        n_nodes: n_nodes.ok_or_else(|| bad("missing n_nodes".into()))?,
        segment_count: segment_count.ok_or_else(|| bad("missing segment_count".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_pairs() {
        let f = tmp("0,1\n1,0\n");
        let t = load_trace(f.path(), TraceFormat::CsvPairs, TraceMeta::new("t", 0, 2, 1)).unwrap();
        assert_eq!(t.requests, vec![Request::new(0, 1), Request::new(1, 0)]);
    }

    #[test]
    fn load_skips_header_and_blank_lines() {
        let f = tmp("src,dst\n0,1\n\n1,0\n");
        let t = load_trace(f.path(), TraceFormat::CsvPairs, TraceMeta::new("t", 0, 2, 1)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn load_ws_pairs() {
        let f = tmp("3 1\n1\t2\n");
        let t = load_trace(f.path(), TraceFormat::WsPairs, TraceMeta::new("t", 0, 4, 1)).unwrap();
        assert_eq!(t.requests, vec![Request::new(3, 1), Request::new(1, 2)]);
    }

    #[test]
    fn load_rejects_out_of_range_id() {
        let f = tmp("0,1\n2,0\n");
        let err = load_trace(f.path(), TraceFormat::CsvPairs, TraceMeta::new("t", 0, 2, 1));
        match err {
            Err(TraceError::IdOutOfRange { id, n_nodes, .. }) => {
                assert_eq!(id, 2);
                assert_eq!(n_nodes, 2);
            }
            other => panic!("expected IdOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_line_number_on_parse_error() {
        let f = tmp("0,1\nx,0\n");
        match load_trace(f.path(), TraceFormat::CsvPairs, TraceMeta::new("t", 0, 2, 1)) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = tmp("");
        assert!(matches!(
            load_trace(f.path(), TraceFormat::CsvPairs, TraceMeta::new("t", 0, 2, 1)),
            Err(TraceError::EmptyFile { .. })
        ));
    }

    #[test]
    fn save_load_round_trip_both_formats() {
        let meta = TraceMeta::new("rt", 3, 5, 2);
        let t = Trace::new(
            meta.clone(),
            vec![Request::new(0, 4), Request::new(4, 0), Request::new(2, 2)],
        )
        .unwrap();
        for format in [TraceFormat::CsvPairs, TraceFormat::WsPairs] {
            let f = tempfile::NamedTempFile::new().unwrap();
            save_trace(&t, f.path(), format).unwrap();
            let back = load_trace(f.path(), format, meta.clone()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let meta = TraceMeta::new("web cluster", 2, 158, 24);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_sidecar(&meta, f.path()).unwrap();
        assert_eq!(load_sidecar(f.path()).unwrap(), meta);
    }

    #[test]
    fn auto_load_infers_n_nodes() {
        let f = tmp("0,7\n3,2\n");
        let t = load_trace_auto(f.path(), TraceFormat::CsvPairs).unwrap();
        assert_eq!(t.meta.n_nodes, 8);
    }
}
