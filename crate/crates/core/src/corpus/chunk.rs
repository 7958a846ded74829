use std::ops::Range;

use super::CorpusError;

/// Window ranges starting at multiples of `window - overlap`, stopping at the
/// first window that reaches the end of the sequence.
pub fn chunk_ranges(len: usize, window: usize, overlap: usize) -> Result<Vec<Range<usize>>, CorpusError> {
    if window <= overlap {
        return Err(CorpusError::InvalidArguments(format!(
            "window ({window}) must exceed overlap ({overlap})"
        )));
    }
    let stride = window - overlap;
    let mut ranges = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + window).min(len);
        ranges.push(start..end);
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(ranges)
}

pub fn chunk<T>(tokens: &[T], window: usize, overlap: usize) -> Result<Vec<&[T]>, CorpusError> {
    Ok(chunk_ranges(tokens.len(), window, overlap)?
        .into_iter()
        .map(|r| &tokens[r])
        .collect())
}
