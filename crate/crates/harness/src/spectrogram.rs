//! LPS matrix export for external plotting.

use std::path::Path;

use dereverb_core::dsp::{lps_of, AnalysisConfig, LpsMatrix};

use crate::error::{io_err, CoreContext, Result};
use crate::wav::read_wav;

/// Writes `frames x bins` LPS values with a `bin_<k>` header row. Returns the matrix.
pub fn spectrogram(input: &Path, output: &Path, analysis: &AnalysisConfig) -> Result<LpsMatrix> {
    let w = read_wav(input)?;
    let lps = lps_of(&w, analysis).context(input.display().to_string())?;
    let mut out = csv::Writer::from_path(output)?;
    out.write_record((0..lps.bins()).map(|k| format!("bin_{k}")))?;
    for row in lps.as_matrix().row_iter() {
        out.write_record(row.iter().map(f64::to_string))?;
    }
    out.flush().map_err(io_err(output))?;
    Ok(lps)
}
