//! Line-oriented text container for network parameters.
//!
//! ```text
//! MESO-SDE-MLP v1
//! input_dim 2
//! hidden_layers 5
//! hidden_width 150
//! output_dim 2
//! activation elu
//! layer 0 weight 150 2
//! <one row of the weight matrix per line>
//! layer 0 bias 150
//! <bias values on one line>
//! ...
//! end
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so a write/read cycle is lossless.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{Layer, MlpParams, MlpSpec};
use crate::{Error, Result};

pub const MAGIC: &str = "MESO-SDE-MLP v1";

pub fn write_mlp<W: Write>(params: &MlpParams, w: &mut W) -> std::io::Result<()> {
    let s = params.spec();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "input_dim {}", s.input_dim)?;
    writeln!(w, "hidden_layers {}", s.hidden_layers)?;
    writeln!(w, "hidden_width {}", s.hidden_width)?;
    writeln!(w, "output_dim {}", s.output_dim)?;
    writeln!(w, "activation elu")?;
    for (i, l) in params.layers.iter().enumerate() {
        let (o, n) = l.weight.dim();
        writeln!(w, "layer {i} weight {o} {n}")?;
        for row in l.weight.rows() {
            write_values(w, row.iter())?;
        }
        writeln!(w, "layer {i} bias {o}")?;
        write_values(w, l.bias.iter())?;
    }
    writeln!(w, "end")
}

fn write_values<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    writeln!(w)
}

/// Reads one network block from `lines`, consuming through its `end` line.
pub fn read_mlp<B: BufRead>(lines: &mut std::io::Lines<B>) -> Result<MlpParams> {
    let mut next = || -> Result<String> {
        loop {
            match lines.next() {
                None => return Err(Error::Format("unexpected end of model data".into())),
                Some(Err(e)) => return Err(Error::Format(e.to_string())),
                Some(Ok(l)) if l.trim().is_empty() => continue,
                Some(Ok(l)) => return Ok(l.trim().to_string()),
            }
        }
    };
    let magic = next()?;
    if magic != MAGIC {
        return Err(Error::Format(format!("expected `{MAGIC}`, found `{magic}`")));
    }
    let mut field = |key: &str| -> Result<usize> {
        let line = next()?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next().and_then(|v| v.parse().ok())) {
            (Some(k), Some(v)) if k == key => Ok(v),
            _ => Err(Error::Format(format!("expected `{key} <count>`, found `{line}`"))),
        }
    };
    let spec = MlpSpec::new(
        field("input_dim")?,
        field("hidden_layers")?,
        field("hidden_width")?,
        field("output_dim")?,
    )?;
    let act = next()?;
    if act != "activation elu" {
        return Err(Error::Format(format!("unsupported activation line `{act}`")));
    }
    let mut layers = Vec::new();
    for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let header = next()?;
        if header != format!("layer {i} weight {fan_out} {fan_in}") {
            return Err(Error::Format(format!("unexpected layer header `{header}`")));
        }
        let mut weight = Array2::zeros((fan_out, fan_in));
        for r in 0..fan_out {
            let row = parse_values(&next()?, fan_in)?;
            weight.row_mut(r).assign(&Array1::from(row));
        }
        let header = next()?;
        if header != format!("layer {i} bias {fan_out}") {
            return Err(Error::Format(format!("unexpected bias header `{header}`")));
        }
        let bias = Array1::from(parse_values(&next()?, fan_out)?);
        layers.push(Layer { weight, bias });
    }
    let end = next()?;
    if end != "end" {
        return Err(Error::Format(format!("expected `end`, found `{end}`")));
    }
    MlpParams::from_layers(spec, layers)
}

fn parse_values(line: &str, n: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{t}`"))))
        .collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::Format(format!(
            "expected {n} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, Cursor};

    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn write_read_is_lossless() {
        let mut rng = stream_rng(9, 0);
        let p = MlpParams::glorot(MlpSpec::new(2, 3, 7, 3).unwrap(), &mut rng);
        let mut buf = Vec::new();
        write_mlp(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(MAGIC));
        let back = read_mlp(&mut Cursor::new(buf).lines()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let e = read_mlp(&mut Cursor::new("MESO-SDE-MLP v2\n").lines()).unwrap_err();
        assert!(e.to_string().contains("expected"));
        let mut buf = Vec::new();
        let p = MlpParams::zeros(MlpSpec::new(2, 1, 2, 2).unwrap());
        write_mlp(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 10);
        assert!(read_mlp(&mut Cursor::new(buf).lines()).is_err());
    }
}
