//! Plain-text instance formats.
//!
//! `knap-linear`: first line `n tau`, then `n` lines `p_i w_i` (diagonal
//! profit and weight).
//!
//! `qkp-text`: first line `n tau`, second line the `n` weights, then zero or
//! more lines `i j v` (1-based, `i <= j`, diagonal allowed). The lower
//! triangle is filled in on read. Blank lines and lines starting with `#`
//! are ignored in both formats.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{InstanceError, Provenance, QkpInstance};
use crate::sparse::SymCsr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    KnapLinear,
    QkpText,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::KnapLinear => "knap-linear",
            Format::QkpText => "qkp-text",
        }
    }
}

impl FromStr for Format {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knap-linear" => Ok(Format::KnapLinear),
            "qkp-text" => Ok(Format::QkpText),
            other => Err(InstanceError::InvalidSpec(format!("unknown format '{other}'"))),
        }
    }
}

pub fn read_instance(path: impl AsRef<Path>, format: Format) -> Result<QkpInstance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| InstanceError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_instance_str(&text, format)?.with_provenance(Provenance::File(path.display().to_string())))
}

pub fn read_instance_str(text: &str, format: Format) -> Result<QkpInstance, InstanceError> {
    let mut lines = Lines::new(text);
    let header = lines.expect_line("header 'n tau'")?;
    let n: usize = header.field(0, "n")?;
    let tau: f64 = header.field(1, "tau")?;
    header.expect_len(2)?;

    let inst = match format {
        Format::KnapLinear => {
            let mut diag = Vec::with_capacity(n);
            let mut a = Vec::with_capacity(n);
            for _ in 0..n {
                let l = lines.expect_line("'profit weight' line")?;
                diag.push(l.field::<f64>(0, "profit")?);
                a.push(l.field::<f64>(1, "weight")?);
                l.expect_len(2)?;
            }
            if let Some(extra) = lines.next_line() {
                return Err(extra.error(0, "unexpected trailing data"));
            }
            QkpInstance::new_unchecked(SymCsr::from_diagonal(&diag), a, tau)
        }
        Format::QkpText => {
            let l = lines.expect_line("weight line")?;
            let a: Vec<f64> = (0..n).map(|k| l.field(k, "weight")).collect::<Result<_, _>>()?;
            l.expect_len(n)?;
            let mut trip = Vec::new();
            while let Some(l) = lines.next_line() {
                let i: usize = l.field(0, "row index")?;
                let j: usize = l.field(1, "column index")?;
                let v: f64 = l.field(2, "value")?;
                l.expect_len(3)?;
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(l.error(0, &format!("index ({i}, {j}) outside 1..={n}")));
                }
                if i > j {
                    return Err(l.error(0, "entries must be given in the upper triangle (i <= j)"));
                }
                trip.push((i - 1, j - 1, v));
            }
            QkpInstance::new_unchecked(SymCsr::from_triplets(n, &trip)?, a, tau)
        }
    };
    inst.validate()?;
    Ok(inst)
}

pub fn write_instance_string(inst: &QkpInstance, format: Format) -> Result<String, InstanceError> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.n(), inst.tau());
    match format {
        Format::KnapLinear => {
            if !inst.c().is_diagonal() {
                return Err(InstanceError::Unrepresentable("knap-linear", "profit matrix is not diagonal"));
            }
            for (p, w) in inst.c().diagonal().iter().zip(inst.a()) {
                let _ = writeln!(out, "{p} {w}");
            }
        }
        Format::QkpText => {
            let weights: Vec<String> = inst.a().iter().map(|w| w.to_string()).collect();
            let _ = writeln!(out, "{}", weights.join(" "));
            for (i, j, v) in inst.c().upper_triplets() {
                let _ = writeln!(out, "{} {} {v}", i + 1, j + 1);
            }
        }
    }
    Ok(out)
}

pub fn write_instance(inst: &QkpInstance, path: impl AsRef<Path>, format: Format) -> Result<(), InstanceError> {
    let path = path.as_ref();
    let text = write_instance_string(inst, format)?;
    std::fs::write(path, text).map_err(|e| InstanceError::Io(format!("{}: {e}", path.display())))
}

struct Line<'a> {
    number: usize,
    tokens: Vec<(usize, &'a str)>,
}

impl<'a> Line<'a> {
    fn error(&self, token: usize, message: &str) -> InstanceError {
        let column = self.tokens.get(token).map_or(1, |(c, _)| c + 1);
        InstanceError::Parse {
            line: self.number,
            column,
            message: message.to_string(),
        }
    }

    fn field<T: FromStr>(&self, k: usize, what: &str) -> Result<T, InstanceError> {
        match self.tokens.get(k) {
            None => Err(InstanceError::Parse {
                line: self.number,
                column: self.tokens.last().map_or(1, |(c, t)| c + t.len() + 1),
                message: format!("missing {what}"),
            }),
            Some((_, tok)) => tok.parse().map_err(|_| self.error(k, &format!("cannot parse {what} from '{tok}'"))),
        }
    }

    fn expect_len(&self, len: usize) -> Result<(), InstanceError> {
        if self.tokens.len() > len {
            return Err(self.error(len, "unexpected extra field"));
        }
        Ok(())
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last_line: 0,
        }
    }

    fn next_line(&mut self) -> Option<Line<'a>> {
        for (idx, raw) in self.inner.by_ref() {
            self.last_line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens = raw
                .split_whitespace()
                .map(|t| (t.as_ptr() as usize - raw.as_ptr() as usize, t))
                .collect();
            return Some(Line {
                number: idx + 1,
                tokens,
            });
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<Line<'a>, InstanceError> {
        self.next_line().ok_or_else(|| InstanceError::Parse {
            line: self.last_line + 1,
            column: 1,
            message: format!("unexpected end of input, expected {what}"),
        })
    }
}
