//! JSON Lines trace reading/writing and CSV conversion.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{RequestId, RequestSpec, Trace, WorkloadError};

/// Loads a JSONL trace: one request object per line, blank lines ignored.
/// The result is sorted by arrival time; ties keep file order.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, WorkloadError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut trace = parse_trace(BufReader::new(file))?;
    trace.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    trace.source = path.display().to_string();
    Ok(trace)
}

pub fn parse_trace(reader: impl BufRead) -> Result<Trace, WorkloadError> {
    let mut requests = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| WorkloadError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RequestSpec = serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        r.validate()
            .map_err(|msg| WorkloadError::Parse { line: line_no, msg })?;
        if !seen.insert(r.id.clone()) {
            return Err(WorkloadError::DuplicateId {
                line: line_no,
                id: r.id,
            });
        }
        requests.push(r);
    }
    requests.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    Ok(Trace::new("", "", requests))
}

pub fn write_trace(trace: &Trace, mut out: impl Write) -> std::io::Result<()> {
    for r in &trace.requests {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), WorkloadError> {
    let path = path.as_ref();
    let io_err = |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    write_trace(trace, &mut file).map_err(io_err)?;
    file.flush().map_err(io_err)
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    arrival_s: f64,
    #[serde(default)]
    image_tokens: String,
    prompt_tokens: u64,
    output_tokens: u64,
    #[serde(default)]
    ttft_slo_s: Option<f64>,
    #[serde(default)]
    tbt_slo_s: Option<f64>,
}

/// Converts a CSV trace with the JSONL column names into a [`Trace`].
/// `image_tokens` holds per-image counts separated by `;` (empty for none);
/// numeric ids become integer ids.
pub fn convert_csv(reader: impl Read) -> Result<Trace, WorkloadError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut lines = Vec::new();
    for (idx, row) in rdr.deserialize::<CsvRow>().enumerate() {
        // header is line 1
        let line = idx + 2;
        let row = row.map_err(|e| WorkloadError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let image_tokens = row
            .image_tokens
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u64>().map_err(|e| WorkloadError::Parse {
                    line,
                    msg: format!("image_tokens entry {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let id = row
            .id
            .parse::<u64>()
            .map(RequestId::Int)
            .unwrap_or(RequestId::Str(row.id));
        let spec = RequestSpec {
            id,
            arrival_s: row.arrival_s,
            image_tokens,
            prompt_tokens: row.prompt_tokens,
            output_tokens: row.output_tokens,
            ttft_slo_s: row.ttft_slo_s,
            tbt_slo_s: row.tbt_slo_s,
        };
        lines.push(serde_json::to_string(&spec).expect("request serializes"));
    }
    // Re-parse through the JSONL path so both formats share validation.
    parse_trace(lines.join("\n").as_bytes())
}
