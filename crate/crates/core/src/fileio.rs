//! Text constellation files.
//!
//! ```text
//! # free-form comment lines
//! N N_J M N_b
//! c_1 ... c_{2N_J+1}        (M lines, one column each)
//! w_1 ... w_M               (bit word carried by each column)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BitLabeling, JointConstellation};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationFile {
    pub n: usize,
    pub n_j: usize,
    pub n_b: u32,
    pub constellation: JointConstellation,
    pub labeling: BitLabeling,
    /// Comment lines without the leading `# `.
    pub comments: Vec<String>,
}

impl ConstellationFile {
    pub fn new(
        n: usize,
        n_b: u32,
        constellation: JointConstellation,
        labeling: BitLabeling,
    ) -> Result<Self> {
        let dims = constellation.dims();
        if dims.is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!("even point dimension {dims}")));
        }
        if labeling.size() != constellation.size() {
            return Err(Error::DimensionMismatch(format!(
                "labeling of {} words for {} points",
                labeling.size(),
                constellation.size()
            )));
        }
        Ok(ConstellationFile {
            n,
            n_j: (dims - 1) / 2,
            n_b,
            constellation,
            labeling,
            comments: Vec::new(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.n,
            self.n_j,
            self.constellation.size(),
            self.n_b
        );
        for col in self.constellation.columns() {
            let row: Vec<String> = col.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        let words: Vec<String> = self.labeling.words().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "{}", words.join(" "));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut lines = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let t = line.trim();
            if let Some(c) = t.strip_prefix('#') {
                comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            } else if !t.is_empty() {
                lines.push((no + 1, t));
            }
        }
        let mut it = lines.into_iter();
        let (hno, header) = it
            .next()
            .ok_or_else(|| Error::Parse("missing header line".into()))?;
        let head: Vec<u64> = parse_fields(header, hno)?;
        let [n, n_j, m, n_b] = head[..] else {
            return Err(Error::Parse(format!(
                "line {hno}: header needs 4 fields `N N_J M N_b`, found {}",
                head.len()
            )));
        };
        let (n, n_j, m) = (n as usize, n_j as usize, m as usize);
        let dims = 2 * n_j + 1;
        let mut data = Vec::with_capacity(m * dims);
        for _ in 0..m {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {m} point lines")))?;
            let row: Vec<f64> = parse_fields(line, no)?;
            if row.len() != dims {
                return Err(Error::Parse(format!(
                    "line {no}: {} values, expected {dims}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        let (no, line) = it
            .next()
            .ok_or_else(|| Error::Parse("missing labeling line".into()))?;
        let words: Vec<usize> = parse_fields(line, no)?;
        if words.len() != m {
            return Err(Error::Parse(format!(
                "line {no}: labeling has {} entries, expected {m}",
                words.len()
            )));
        }
        if let Some((no, _)) = it.next() {
            return Err(Error::Parse(format!("line {no}: unexpected trailing content")));
        }
        let n_b = u32::try_from(n_b).map_err(|_| Error::Parse("N_b too large".into()))?;
        let mut file = ConstellationFile::new(
            n,
            n_b,
            JointConstellation::from_columns(dims, data)?,
            BitLabeling::from_word_of_point(words)?,
        )?;
        file.comments = comments;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, no: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|f| {
            f.parse()
                .map_err(|_| Error::Parse(format!("line {no}: cannot parse `{f}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ConstellationFile {
        let c = JointConstellation::from_columns(3, vec![1.0, 0.1, -0.2, 2.5, 1.0 / 3.0, 1e-300]).unwrap();
        let mut f = ConstellationFile::new(4, 1, c, BitLabeling::from_word_of_point(vec![1, 0]).unwrap()).unwrap();
        f.comments = vec!["seed 7".into()];
        f
    }

    #[test]
    fn layout() {
        let text = sample().to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed 7");
        assert_eq!(lines[1], "4 1 2 1");
        assert_eq!(lines[2].split(' ').count(), 3);
        assert_eq!(lines[4], "1 0");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn round_trip() {
        let f = sample();
        assert_eq!(ConstellationFile::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = sample().to_text();
        let bad = [
            good.replace("4 1 2 1", "4 1 2"),
            good.replace("1 0\n", "1 1\n"),
            good.replace("1 0\n", "1\n"),
            good.replace("4 1 2 1", "4 1 3 1"),
            format!("{good}7\n"),
            good.replacen("e0", "x", 1),
        ];
        for b in bad {
            assert!(ConstellationFile::parse(&b).is_err(), "{b}");
        }
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 3..=15)) {
            let m = vals.len() / 3;
            let c = JointConstellation::from_columns(3, vals[..3 * m].to_vec()).unwrap();
            let f = ConstellationFile::new(8, 2, c, BitLabeling::identity(m)).unwrap();
            let back = ConstellationFile::parse(&f.to_text()).unwrap();
            prop_assert_eq!(back.constellation.as_slice(), f.constellation.as_slice());
        }
    }
}
