//! Toy experiments contrasting the period and scale discriminators:
//! classifying sinusoids by frequency ([`periodic`]) and fitting a sinc
//! target adversarially ([`sinc`]).

pub mod periodic;
pub mod sinc;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::audio::write_atomic;
use crate::error::{Error, Result};

/// Which discriminator family an experiment uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscKind {
    Mpd,
    Msd,
}

impl DiscKind {
    pub const BOTH: [DiscKind; 2] = [DiscKind::Msd, DiscKind::Mpd];
}

impl fmt::Display for DiscKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscKind::Mpd => "MPD",
            DiscKind::Msd => "MSD",
        })
    }
}

impl FromStr for DiscKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mpd" => Ok(DiscKind::Mpd),
            "msd" => Ok(DiscKind::Msd),
            _ => Err(Error::Config(format!(
                "unknown discriminator kind {s:?} (expected mpd or msd)"
            ))),
        }
    }
}

/// Writes equal-length columns as whitespace-separated text with a `#`
/// header line.
pub fn write_columns(path: impl AsRef<Path>, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    assert_eq!(headers.len(), columns.len(), "one header per column");
    let rows = columns.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    writeln!(out, "# {}", headers.join(" "))?;
    for r in 0..rows {
        let line: Vec<String> = columns
            .iter()
            .map(|c| {
                c.get(r)
                    .map_or_else(|| "nan".to_string(), |v| format!("{v:.9e}"))
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    write_atomic(path, &out)
}
