//! Tensor/dataset file formats and run configuration.
//!
//! Tensor block, text mode (magic `DTNS1`):
//!
//! ```text
//! DTNS1
//! <order>
//! <dim_1> ... <dim_P>
//! colmajor
//! <values, whitespace-separated, column-major>
//! ```
//!
//! Binary mode uses magic `DTNSB1`, the same header lines, and a payload of
//! `prod(dims)` little-endian f64 words. Text values are written in
//! shortest round-trip form, so both modes restore values exactly. Datasets
//! are plain concatenations of blocks. CP coefficients are stored as a
//! `CPTN1` section file holding one weight-vector block plus one block per
//! factor.
//!
//! Run configuration is a flat `key = value` file validated against a fixed
//! schema; unknown keys are rejected with their line number.

use crate::tensor::{CpTensor, DenseTensor, Matrix};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> IoFormatError {
    IoFormatError::Parse { line, message: message.into() }
}

/// Buffered reader with a line counter so malformed input can be reported
/// by position. Binary payloads do not advance the counter.
pub struct BlockReader<R: BufRead> {
    inner: R,
    line: usize,
}

impl<R: BufRead> BlockReader<R> {
    pub fn new(inner: R) -> Self {
        BlockReader { inner, line: 0 }
    }

    pub fn line(&self) -> usize {
        self.line
    }

    /// Next non-empty line, trimmed; `None` at end of input.
    fn next_line(&mut self) -> Result<Option<String>, IoFormatError> {
        loop {
            let mut buf = String::new();
            let n = self.inner.read_line(&mut buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line += 1;
            let t = buf.trim();
            if !t.is_empty() {
                return Ok(Some(t.to_string()));
            }
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<String, IoFormatError> {
        self.next_line()?.ok_or_else(|| {
            parse_err(self.line + 1, format!("unexpected end of file, expected {what}"))
        })
    }
}

/// Write one tensor block in text mode.
pub fn write_tensor_text(w: &mut impl Write, t: &DenseTensor) -> std::io::Result<()> {
    writeln!(w, "DTNS1")?;
    writeln!(w, "{}", t.order())?;
    let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{}", dims.join(" "))?;
    writeln!(w, "colmajor")?;
    for chunk in t.values().chunks(8) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Write one tensor block in binary mode (little-endian f64 payload).
pub fn write_tensor_binary(w: &mut impl Write, t: &DenseTensor) -> std::io::Result<()> {
    writeln!(w, "DTNSB1")?;
    writeln!(w, "{}", t.order())?;
    let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{}", dims.join(" "))?;
    writeln!(w, "colmajor")?;
    for v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    writeln!(w)?;
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &DenseTensor, binary: bool) -> std::io::Result<()> {
    if binary {
        write_tensor_binary(w, t)
    } else {
        write_tensor_text(w, t)
    }
}

/// Read one tensor block (either mode); `Ok(None)` at end of input.
pub fn read_tensor_block<R: BufRead>(
    r: &mut BlockReader<R>,
) -> Result<Option<DenseTensor>, IoFormatError> {
    let magic = match r.next_line()? {
        Some(m) => m,
        None => return Ok(None),
    };
    let binary = match magic.as_str() {
        "DTNS1" => false,
        "DTNSB1" => true,
        other => {
            return Err(parse_err(
                r.line(),
                format!("expected magic DTNS1 or DTNSB1, found {other:?}"),
            ))
        }
    };
    let order_line = r.expect_line("tensor order")?;
    let order: usize = order_line
        .parse()
        .map_err(|_| parse_err(r.line(), format!("invalid order {order_line:?}")))?;
    if order == 0 {
        return Err(parse_err(r.line(), "order must be >= 1"));
    }
    let dims_line = r.expect_line("dimension list")?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| parse_err(r.line(), format!("invalid extent {tok:?}")))
        })
        .collect::<Result<_, _>>()?;
    if dims.len() != order {
        return Err(parse_err(
            r.line(),
            format!("declared order {order} but {} extents given", dims.len()),
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(parse_err(r.line(), "extents must be >= 1"));
    }
    let layout = r.expect_line("layout tag")?;
    if layout != "colmajor" {
        return Err(parse_err(r.line(), format!("unsupported layout {layout:?}")));
    }
    let count: usize = dims.iter().product();
    let values = if binary {
        let mut payload = vec![0u8; count * 8];
        r.inner.read_exact(&mut payload).map_err(|e| {
            parse_err(r.line(), format!("binary payload of {count} values truncated: {e}"))
        })?;
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    } else {
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let line = r.expect_line("tensor values")?;
            for tok in line.split_whitespace() {
                if values.len() == count {
                    return Err(parse_err(
                        r.line(),
                        format!("more than the declared {count} values"),
                    ));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(r.line(), format!("invalid value {tok:?}")))?;
                values.push(v);
            }
        }
        values
    };
    DenseTensor::new(dims, values).map(Some).map_err(|e| parse_err(r.line(), e.to_string()))
}

/// Read every tensor block until end of input.
pub fn read_tensor_stream<R: BufRead>(reader: R) -> Result<Vec<DenseTensor>, IoFormatError> {
    let mut r = BlockReader::new(reader);
    let mut out = Vec::new();
    while let Some(t) = read_tensor_block(&mut r)? {
        out.push(t);
    }
    Ok(out)
}

/// Read exactly one tensor.
pub fn read_tensor<R: BufRead>(reader: R) -> Result<DenseTensor, IoFormatError> {
    let mut r = BlockReader::new(reader);
    read_tensor_block(&mut r)?.ok_or_else(|| parse_err(1, "empty input, expected a tensor block"))
}

fn matrix_to_tensor(m: &Matrix) -> DenseTensor {
    DenseTensor::new(vec![m.rows(), m.cols()], m.data().to_vec()).expect("consistent dims")
}

fn tensor_to_matrix(t: &DenseTensor, line: usize) -> Result<Matrix, IoFormatError> {
    if t.order() != 2 {
        return Err(parse_err(line, format!("factor block must be 2-D, got {:?}", t.dims())));
    }
    Ok(Matrix::from_col_major(t.dims()[0], t.dims()[1], t.values().to_vec()))
}

/// Write a CP coefficient as a section file: weights plus one block per
/// factor, so estimates round-trip through a single format.
pub fn write_cp_tensor(w: &mut impl Write, cp: &CpTensor, binary: bool) -> std::io::Result<()> {
    writeln!(w, "CPTN1")?;
    writeln!(w, "rank {}", cp.rank())?;
    writeln!(w, "covariate_factors {}", cp.covariate_factors().len())?;
    writeln!(w, "response_factors {}", cp.response_factors().len())?;
    writeln!(w, "[lambda]")?;
    let lambda = DenseTensor::new(vec![cp.rank()], cp.weights().to_vec()).expect("rank >= 1");
    write_tensor(w, &lambda, binary)?;
    for (q, f) in cp.covariate_factors().iter().enumerate() {
        writeln!(w, "[covariate_factor {}]", q + 1)?;
        write_tensor(w, &matrix_to_tensor(f), binary)?;
    }
    for (p, f) in cp.response_factors().iter().enumerate() {
        writeln!(w, "[response_factor {}]", p + 1)?;
        write_tensor(w, &matrix_to_tensor(f), binary)?;
    }
    Ok(())
}

pub fn read_cp_tensor<R: BufRead>(reader: R) -> Result<CpTensor, IoFormatError> {
    let mut r = BlockReader::new(reader);
    let magic = r.expect_line("CPTN1 magic")?;
    if magic != "CPTN1" {
        return Err(parse_err(r.line(), format!("expected magic CPTN1, found {magic:?}")));
    }
    let field = |r: &mut BlockReader<R>, name: &str| -> Result<usize, IoFormatError> {
        let line = r.expect_line(name)?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(r.line(), format!("expected `{name} <count>`")))?;
        if key != name {
            return Err(parse_err(r.line(), format!("expected field {name:?}, found {key:?}")));
        }
        value
            .trim()
            .parse()
            .map_err(|_| parse_err(r.line(), format!("invalid count {value:?}")))
    };
    let rank = field(&mut r, "rank")?;
    let n_cov = field(&mut r, "covariate_factors")?;
    let n_resp = field(&mut r, "response_factors")?;

    let section = |r: &mut BlockReader<R>, name: String| -> Result<DenseTensor, IoFormatError> {
        let header = r.expect_line("section header")?;
        if header != name {
            return Err(parse_err(
                r.line(),
                format!("expected section {name:?}, found {header:?}"),
            ));
        }
        read_tensor_block(r)?
            .ok_or_else(|| parse_err(r.line(), format!("missing tensor block after {name:?}")))
    };
    let lambda = section(&mut r, "[lambda]".to_string())?;
    if lambda.dims() != [rank] {
        return Err(parse_err(r.line(), format!("lambda block must have dims [{rank}]")));
    }
    let mut cov = Vec::with_capacity(n_cov);
    for q in 1..=n_cov {
        let t = section(&mut r, format!("[covariate_factor {q}]"))?;
        let line = r.line();
        cov.push(tensor_to_matrix(&t, line)?);
    }
    let mut resp = Vec::with_capacity(n_resp);
    for p in 1..=n_resp {
        let t = section(&mut r, format!("[response_factor {p}]"))?;
        let line = r.line();
        resp.push(tensor_to_matrix(&t, line)?);
    }
    let line = r.line();
    CpTensor::new(lambda.values().to_vec(), cov, resp)
        .map_err(|e| parse_err(line, format!("invalid CP tensor: {e}")))
}

/// Value kinds accepted by the run-configuration schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    UInt,
    Float,
    Bool,
    UIntList,
    FloatList,
    /// Free-form token validated by the consumer (e.g. lag blocks).
    Token,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
}

/// `key = value` schema: estimator knobs, geometry, scenario parameters.
const SCHEMA: &[(&str, Kind)] = &[
    ("rank", Kind::UInt),
    ("ranks", Kind::UIntList),
    ("outer_tol", Kind::Float),
    ("inner_tol", Kind::Float),
    ("inner_max_iter", Kind::UInt),
    ("outer_max_sweeps", Kind::UInt),
    ("restarts", Kind::UInt),
    ("seed", Kind::UInt),
    ("param_convention", Kind::Choice(&["raw", "constrained"])),
    ("threads", Kind::UInt),
    ("angles", Kind::UInt),
    ("radial_bins", Kind::UInt),
    ("binning", Kind::Choice(&["nearest", "linear"])),
    ("fraction", Kind::Float),
    ("fractions", Kind::FloatList),
    ("iters", Kind::UInt),
    ("method", Kind::Choice(&["mlem", "ptotr", "both"])),
    ("phantom", Kind::Choice(&["shepp-logan", "blocks", "uniform"])),
    ("floor", Kind::Float),
    ("scale", Kind::Float),
    ("n1", Kind::UInt),
    ("n2", Kind::UInt),
    ("m1", Kind::UInt),
    ("m2", Kind::UInt),
    ("m3", Kind::UInt),
    ("t", Kind::UInt),
    ("tau", Kind::UInt),
    ("tau_candidates", Kind::UIntList),
    ("a", Kind::Float),
    ("topic", Kind::UInt),
    ("trend_degree", Kind::UInt),
    ("lag_blocks", Kind::Token),
    ("intercept_slab", Kind::Bool),
    ("burn_in", Kind::UInt),
    ("rate_cap", Kind::Float),
    ("binary", Kind::Bool),
];

/// Flat key=value run configuration, schema-validated at parse time.
/// Command-line flags override file values.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn empty() -> Self {
        RunConfig::default()
    }

    pub fn parse(reader: impl BufRead) -> Result<Self, IoFormatError> {
        let mut values = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| parse_err(lineno, format!("expected `key = value`, got {body:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let kind = SCHEMA
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, kind)| *kind)
                .ok_or_else(|| parse_err(lineno, format!("unknown key {key:?}")))?;
            validate_value_kind(kind, key, value, lineno)?;
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(parse_err(lineno, format!("duplicate key {key:?}")));
            }
        }
        Ok(RunConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.get(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn get_usize_list(&self, key: &str) -> Option<Vec<usize>> {
        self.get(key).map(|v| {
            v.split(',')
                .map(|t| t.trim().parse().expect("validated at parse time"))
                .collect()
        })
    }

    pub fn get_f64_list(&self, key: &str) -> Option<Vec<f64>> {
        self.get(key).map(|v| {
            v.split(',')
                .map(|t| t.trim().parse().expect("validated at parse time"))
                .collect()
        })
    }
}

fn validate_value_kind(
    kind: Kind,
    key: &str,
    value: &str,
    lineno: usize,
) -> Result<(), IoFormatError> {
    let bad = |what: &str| parse_err(lineno, format!("key {key:?}: {what}, got {value:?}"));
    match kind {
        Kind::UInt => {
            value.parse::<u64>().map(|_| ()).map_err(|_| bad("expected an unsigned integer"))
        }
        Kind::Float => value.parse::<f64>().map(|_| ()).map_err(|_| bad("expected a number")),
        Kind::Bool => value.parse::<bool>().map(|_| ()).map_err(|_| bad("expected true/false")),
        Kind::UIntList => value
            .split(',')
            .try_for_each(|t| t.trim().parse::<u64>().map(|_| ()))
            .map_err(|_| bad("expected a comma-separated list of unsigned integers")),
        Kind::FloatList => value
            .split(',')
            .try_for_each(|t| t.trim().parse::<f64>().map(|_| ()))
            .map_err(|_| bad("expected a comma-separated list of numbers")),
        Kind::Token => {
            if value.is_empty() {
                Err(bad("expected a non-empty token"))
            } else {
                Ok(())
            }
        }
        Kind::Choice(allowed) => {
            if allowed.contains(&value) {
                Ok(())
            } else {
                Err(bad(&format!("expected one of {allowed:?}")))
            }
        }
    }
}
