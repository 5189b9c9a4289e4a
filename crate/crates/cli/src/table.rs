//! The fixed CSV schema shared by `keyrate`, `optimize` and `sweep`.

use std::io::Write;

use decoy_core::{FreeParams, KeyRateResult};

pub const HEADER: [&str; 12] = [
    "L_km", "n_X", "q_x", "p_mu1", "p_mu2", "mu1", "mu2", "ell", "N", "R", "eps_sec", "aborted",
];

/// Nine significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.8e}")
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Evaluated { params: FreeParams, result: KeyRateResult },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub length_km: f64,
    /// `None` marks an infinite-key row.
    pub n_x: Option<f64>,
    pub outcome: Outcome,
}

impl Row {
    pub fn rate(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Evaluated { result, .. } => Some(result.rate),
            Outcome::Failed(_) => None,
        }
    }

    /// Field strings in [`HEADER`] order.
    ///
    /// `aborted` is `0` or `1`, or `error: <message>` when the point could
    /// not be evaluated; the numeric fields are then empty.
    pub fn fields(&self) -> [String; 12] {
        let n_x = self.n_x.map_or_else(|| "inf".to_string(), sci);
        match &self.outcome {
            Outcome::Evaluated { params: x, result: r } => [
                sci(self.length_km),
                n_x,
                sci(x.q_x),
                sci(x.p_mu1),
                sci(x.p_mu2),
                sci(x.mu1),
                sci(x.mu2),
                r.ell.to_string(),
                sci(r.pulses),
                sci(r.rate),
                r.eps_sec.map(sci).unwrap_or_default(),
                u8::from(r.aborted).to_string(),
            ],
            Outcome::Failed(msg) => {
                let mut f: [String; 12] = Default::default();
                f[0] = sci(self.length_km);
                f[1] = n_x;
                f[11] = format!("error: {msg}");
                f
            }
        }
    }
}

/// Writes the header and `rows` as UTF-8 CSV with LF line endings.
pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}
