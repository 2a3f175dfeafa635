//! Line-oriented text format for models and input vectors.
//!
//! ```text
//! # comment
//! model <name> input <n>
//! layer dense in=<n> out=<m> bits=<b> signed=<0|1> bnn=<0|1>
//! weights
//! <out rows of in integers>
//! thresholds
//! <out rows of 1/3/15/255 integers>
//! ```
//!
//! The last layer has no `thresholds` block. Blank lines and lines starting
//! with `#` are skipped everywhere. Input vectors hold one integer per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LayerConfig, ModelDescriptor, ModelError};
use crate::bitmath::PrecisionMode;
use crate::mac::ThresholdSet;

fn parse_err(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Parse {
        line,
        message: message.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let iter: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            inner: iter.peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.inner.next();
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), ModelError> {
        self.next().ok_or_else(|| {
            parse_err(
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner
            .peek()
            .and_then(|(_, l)| l.split_whitespace().next())
    }
}

fn parse_ints(line: usize, text: &str) -> Result<Vec<i32>, ModelError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<i32>()
                .map_err(|_| parse_err(line, format!("`{tok}` is not an integer")))
        })
        .collect()
}

fn parse_header(line: usize, text: &str) -> Result<(String, usize), ModelError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    match tokens.as_slice() {
        ["model", name, "input", width] => {
            let width = width
                .parse()
                .map_err(|_| parse_err(line, format!("bad input width `{width}`")))?;
            Ok((name.to_string(), width))
        }
        _ => Err(parse_err(line, "expected `model <name> input <n>`")),
    }
}

fn parse_layer_header(
    line: usize,
    text: &str,
) -> Result<(usize, usize, PrecisionMode), ModelError> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("layer") || tokens.next() != Some("dense") {
        return Err(parse_err(line, "expected `layer dense ...`"));
    }
    let mut fields = HashMap::new();
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value, got `{tok}`")))?;
        let value: u32 = value
            .parse()
            .map_err(|_| parse_err(line, format!("`{key}` must be a non-negative integer")))?;
        if fields.insert(key, value).is_some() {
            return Err(parse_err(line, format!("duplicate field `{key}`")));
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(line, format!("missing field `{key}`")))
    };
    let flag = |key: &str| match get(key)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(parse_err(
            line,
            format!("`{key}` must be 0 or 1, got {other}"),
        )),
    };
    let (in_f, out_f) = (get("in")? as usize, get("out")? as usize);
    if in_f == 0 || out_f == 0 {
        return Err(parse_err(line, "layer dimensions must be positive"));
    }
    let signed = flag("signed")?;
    let bnn = flag("bnn")?;
    let mode =
        PrecisionMode::new(get("bits")?, signed).map_err(|e| parse_err(line, e.to_string()))?;
    if mode.is_bipolar() != bnn {
        return Err(parse_err(
            line,
            "bnn=1 exactly when bits=1 and signed=1 (bipolar mode)",
        ));
    }
    Ok((in_f, out_f, mode))
}

pub fn parse_model(text: &str) -> Result<ModelDescriptor, ModelError> {
    let mut lines = Lines::new(text);
    let (line, header) = lines.expect("model header")?;
    let (name, input_width) = parse_header(line, header)?;
    let mut layers = Vec::new();
    let mut header_lines = Vec::new();

    while let Some((line, text)) = lines.next() {
        let (in_features, out_features, mode) = parse_layer_header(line, text)?;
        header_lines.push(line);

        let (wline, wtext) = lines.expect("`weights`")?;
        if wtext != "weights" {
            return Err(parse_err(wline, "expected `weights`"));
        }
        let mut weights = Vec::with_capacity(in_features * out_features);
        for _ in 0..out_features {
            let (rline, rtext) = lines.expect("weight row")?;
            let row = parse_ints(rline, rtext)?;
            if row.len() != in_features {
                return Err(parse_err(
                    rline,
                    format!("expected {in_features} weights, got {}", row.len()),
                ));
            }
            if let Some(bad) = row.iter().find(|&&w| !mode.admits(w)) {
                return Err(parse_err(
                    rline,
                    format!("weight {bad} out of range for mode {mode}"),
                ));
            }
            weights.extend(row);
        }

        let thresholds = if lines.peek_keyword() == Some("thresholds") {
            lines.next();
            let mut sets = Vec::with_capacity(out_features);
            for _ in 0..out_features {
                let (rline, rtext) = lines.expect("threshold row")?;
                let set = ThresholdSet::new(parse_ints(rline, rtext)?)
                    .map_err(|e| parse_err(rline, e.to_string()))?;
                sets.push(set);
            }
            Some(sets)
        } else {
            None
        };

        layers.push(LayerConfig {
            in_features,
            out_features,
            mode,
            weights,
            thresholds,
        });
    }

    let model = ModelDescriptor {
        name,
        input_width,
        layers,
    };
    // Attribute chain errors to the header of the offending layer.
    if let Err(err) = model.validate() {
        let line = match &err {
            ModelError::Validation(msg) => msg
                .strip_prefix("layer ")
                .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
                .and_then(|idx| idx.parse::<usize>().ok())
                .and_then(|idx| header_lines.get(idx).copied())
                .unwrap_or(1),
            _ => 1,
        };
        return Err(parse_err(line, err.to_string()));
    }
    Ok(model)
}

pub fn write_model(model: &ModelDescriptor) -> String {
    let mut out = String::new();
    let join = |row: &[i32]| row.iter().map(i32::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "model {} input {}", model.name, model.input_width);
    for layer in &model.layers {
        let _ = writeln!(
            out,
            "layer dense in={} out={} bits={} signed={} bnn={}",
            layer.in_features,
            layer.out_features,
            layer.mode.bits(),
            layer.mode.is_signed() as u8,
            layer.mode.is_bipolar() as u8
        );
        out.push_str("weights\n");
        for n in 0..layer.out_features {
            out.push_str(&join(layer.weight_row(n)));
            out.push('\n');
        }
        if let Some(sets) = &layer.thresholds {
            out.push_str("thresholds\n");
            for set in sets {
                out.push_str(&join(set.as_slice()));
                out.push('\n');
            }
        }
    }
    out
}

fn read(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), ModelError> {
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDescriptor, ModelError> {
    parse_model(&read(path.as_ref())?)
}

pub fn save_model(model: &ModelDescriptor, path: impl AsRef<Path>) -> Result<(), ModelError> {
    model.validate()?;
    write(path.as_ref(), &write_model(model))
}

pub fn parse_vector(text: &str) -> Result<Vec<i32>, ModelError> {
    let mut lines = Lines::new(text);
    let mut values = Vec::new();
    while let Some((line, text)) = lines.next() {
        let value = text
            .parse()
            .map_err(|_| parse_err(line, format!("`{text}` is not an integer")))?;
        values.push(value);
    }
    Ok(values)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<i32>, ModelError> {
    parse_vector(&read(path.as_ref())?)
}

pub fn save_vector(values: &[i32], path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut text = String::with_capacity(values.len() * 4);
    for v in values {
        let _ = writeln!(text, "{v}");
    }
    write(path.as_ref(), &text)
}
