//! Line-oriented input with chunked, order-preserving batch processing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use coreset_core::par::{self, Exec};
use coreset_core::record::{parse_record, Format};
use coreset_core::scoring::{parse_score_row, score_record};
use coreset_core::{Error, ScoreRow, SelectionConfig};

use crate::Failure;

/// Lines handed to one parallel batch.
const CHUNK_LINES: usize = 4096;

/// Reads nonblank lines of `path` in chunks and maps each through `f`,
/// calling `sink` in file order. Errors name the 1-based line number.
pub fn for_each_chunk<R, F, S>(path: &Path, exec: Exec, f: F, mut sink: S) -> Result<usize, Failure>
where
    R: Send,
    F: Fn(&[u8]) -> Result<R, Error> + Send + Sync,
    S: FnMut(R) -> Result<(), Failure>,
{
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut line_no = 0usize;
    let mut count = 0usize;
    let mut chunk: Vec<(usize, Vec<u8>)> = Vec::with_capacity(CHUNK_LINES);
    loop {
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Failure::io(path, e))?;
        if n > 0 {
            line_no += 1;
            while matches!(buf.last(), Some(b'\n' | b'\r')) {
                buf.pop();
            }
            if !buf.iter().all(u8::is_ascii_whitespace) {
                chunk.push((line_no, buf));
            }
        }
        if chunk.len() == CHUNK_LINES || (n == 0 && !chunk.is_empty()) {
            let results = par::map(exec, &chunk, |(_, line)| f(line));
            for ((no, _), r) in chunk.iter().zip(results) {
                let value = r.map_err(|e| Failure::data(path, *no, e))?;
                sink(value)?;
                count += 1;
            }
            chunk.clear();
        }
        if n == 0 {
            return Ok(count);
        }
    }
}

/// Scores every record in `path`, streaming rows to `sink` in file order.
pub fn score_file<S>(path: &Path, format: Format, cfg: &SelectionConfig, exec: Exec, sink: S) -> Result<usize, Failure>
where
    S: FnMut(ScoreRow) -> Result<(), Failure>,
{
    for_each_chunk(path, exec, |line| score_record(&parse_record(line, format)?, cfg), sink)
}

pub fn read_scores(path: &Path, exec: Exec) -> Result<Vec<ScoreRow>, Failure> {
    let mut rows = Vec::new();
    for_each_chunk(path, exec, parse_score_row, |r| {
        rows.push(r);
        Ok(())
    })?;
    Ok(rows)
}

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Failure::io(path, e))?;
    Ok(BufWriter::with_capacity(1 << 20, file))
}

pub fn write_all(path: &Path, text: &str) -> Result<(), Failure> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Failure::io(path, e))?;
    w.flush().map_err(|e| Failure::io(path, e))
}
