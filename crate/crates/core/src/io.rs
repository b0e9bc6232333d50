//! On-disk formats: the model container and saved variation realizations.
//!
//! Both use a short plain-text header (magic, version, shapes) followed by
//! raw little-endian f64 sections, separated by a `---` line. Parameters
//! round-trip bit-exactly; the text header keeps the files inspectable with
//! `head`.

use crate::error::{Result, SnnError};
use crate::network::{CircuitParams, Layer, Matrix, Network, NeuronModel};
use crate::variation::VariationRealization;
use std::fs;
use std::io::Write;
use std::path::Path;

const MODEL_MAGIC: &str = "TTFS-SNN-MODEL v1";
const REALIZATION_MAGIC: &str = "TTFS-SNN-REALIZATION v1";

fn fmt_err(path: &Path, problem: impl Into<String>) -> SnnError {
    SnnError::ModelFormat {
        path: path.display().to_string(),
        problem: problem.into(),
    }
}

/// `fs::read` with the path baked into the error message.
pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        SnnError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn push_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential reader over the binary payload that names the section it is in
/// when the payload runs short.
struct SectionReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, count: usize, section: &str) -> Result<Vec<f64>> {
        let need = count * 8;
        if self.pos + need > self.bytes.len() {
            return Err(SnnError::ModelTruncated {
                path: self.path.display().to_string(),
                section: section.to_string(),
            });
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += need;
        Ok(out)
    }

    fn finish(self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra != 0 {
            return Err(SnnError::ModelTrailingBytes {
                path: self.path.display().to_string(),
                extra,
            });
        }
        Ok(())
    }
}

/// Split a header+payload file at the `---` line.
fn split_container<'a>(data: &'a [u8], path: &Path, magic: &str) -> Result<(Vec<String>, &'a [u8])> {
    let sep = b"\n---\n";
    let cut = data
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| fmt_err(path, "missing --- separator"))?;
    let header = std::str::from_utf8(&data[..cut])
        .map_err(|_| fmt_err(path, "header is not valid UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(magic) {
        return Err(fmt_err(path, format!("bad magic line, expected '{magic}'")));
    }
    Ok((
        lines.map(str::to_string).collect(),
        &data[cut + sep.len()..],
    ))
}

fn header_field<'a>(lines: &'a [String], key: &str, path: &Path) -> Result<&'a str> {
    lines
        .iter()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .ok_or_else(|| fmt_err(path, format!("missing header field '{key}'")))
}

fn parse_sizes(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| fmt_err(path, format!("bad layer size '{s}'")))
        })
        .collect()
}

/// Write a network to `path`. Zero delays are recorded in the header rather
/// than as a payload section, which halves the file for the common case.
pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let sizes: Vec<String> = net.layer_sizes().iter().map(usize::to_string).collect();
    let has_delays = net.layers.iter().any(|l| l.delays.is_some());
    let mut header = String::new();
    header.push_str(MODEL_MAGIC);
    header.push('\n');
    header.push_str(match net.model {
        NeuronModel::Linear => "model = linear\n",
        NeuronModel::Circuit => "model = circuit\n",
    });
    header.push_str(&format!(
        "vpulse = {} {}\n",
        net.circuit.v_pulse_pos, net.circuit.v_pulse_neg
    ));
    header.push_str(&format!("layers = {}\n", sizes.join(" ")));
    header.push_str(&format!(
        "delays = {}\n",
        if has_delays { "dense" } else { "zero" }
    ));
    header.push_str("sections = per layer: weights thresholds [delays], row-major f64 le");

    let mut payload = Vec::new();
    for layer in &net.layers {
        push_f64s(&mut payload, layer.weights.iter().copied());
        push_f64s(&mut payload, layer.thresholds.iter().copied());
        if has_delays {
            match &layer.delays {
                Some(d) => push_f64s(&mut payload, d.iter().copied()),
                None => push_f64s(
                    &mut payload,
                    std::iter::repeat_n(0.0, layer.fan_out() * layer.fan_in()),
                ),
            }
        }
    }

    let mut f = fs::File::create(path)?;
    f.write_all(header.as_bytes())?;
    f.write_all(b"\n---\n")?;
    f.write_all(&payload)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let data = read_file(path)?;
    let (lines, payload) = split_container(&data, path, MODEL_MAGIC)?;

    let model = match header_field(&lines, "model", path)? {
        "linear" => NeuronModel::Linear,
        "circuit" => NeuronModel::Circuit,
        other => return Err(fmt_err(path, format!("unknown model kind '{other}'"))),
    };
    let circuit = {
        let text = header_field(&lines, "vpulse", path)?;
        let parts: Vec<&str> = text.split_whitespace().collect();
        let [pos, neg] = parts.as_slice() else {
            return Err(fmt_err(path, "vpulse needs two values"));
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| fmt_err(path, format!("bad vpulse value '{s}'")))
        };
        let rails = CircuitParams {
            v_pulse_pos: parse(pos)?,
            v_pulse_neg: parse(neg)?,
        };
        if rails.v_pulse_pos <= 0.0 || rails.v_pulse_neg >= 0.0 {
            return Err(fmt_err(path, "vpulse rails must be positive then negative"));
        }
        rails
    };
    let sizes = parse_sizes(header_field(&lines, "layers", path)?, path)?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(SnnError::BadArchitecture(sizes));
    }
    let has_delays = match header_field(&lines, "delays", path)? {
        "dense" => true,
        "zero" => false,
        other => return Err(fmt_err(path, format!("unknown delays mode '{other}'"))),
    };

    let mut reader = SectionReader {
        bytes: payload,
        pos: 0,
        path,
    };
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for (l, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let wdata = reader.take(fan_out * fan_in, &format!("layer {l} weights"))?;
        let thresholds = reader.take(fan_out, &format!("layer {l} thresholds"))?;
        let delays = if has_delays {
            let d = reader.take(fan_out * fan_in, &format!("layer {l} delays"))?;
            // Canonical form: all-zero delays collapse back to None.
            if d.iter().all(|&x| x == 0.0) {
                None
            } else {
                let mut m = Matrix::zeros(fan_out, fan_in);
                m.as_mut_slice().copy_from_slice(&d);
                Some(m)
            }
        } else {
            None
        };
        let mut weights = Matrix::zeros(fan_out, fan_in);
        weights.as_mut_slice().copy_from_slice(&wdata);
        layers.push(Layer {
            weights,
            thresholds,
            delays,
        });
    }
    reader.finish()?;

    Ok(Network {
        input_size: sizes[0],
        layers,
        model,
        circuit,
    })
}

/// Save one realization. The header records which fields are present and the
/// layer sizes they must match.
pub fn save_realization(
    real: &VariationRealization,
    layer_sizes: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let sizes: Vec<String> = layer_sizes.iter().map(usize::to_string).collect();
    let fields = match (&real.thresholds, &real.delays) {
        (Some(_), Some(_)) => "thresholds delays",
        (Some(_), None) => "thresholds",
        (None, Some(_)) => "delays",
        (None, None) => "none",
    };
    let mut payload = Vec::new();
    if let Some(ths) = &real.thresholds {
        for t in ths {
            push_f64s(&mut payload, t.iter().copied());
        }
    }
    if let Some(ds) = &real.delays {
        for d in ds {
            push_f64s(&mut payload, d.iter().copied());
        }
    }
    let mut f = fs::File::create(path)?;
    write!(
        f,
        "{REALIZATION_MAGIC}\nlayers = {}\nfields = {fields}\n---\n",
        sizes.join(" ")
    )?;
    f.write_all(&payload)?;
    Ok(())
}

/// Load a realization plus the layer sizes it was drawn for.
pub fn load_realization(path: impl AsRef<Path>) -> Result<(Vec<usize>, VariationRealization)> {
    let path = path.as_ref();
    let data = read_file(path)?;
    let (lines, payload) = split_container(&data, path, REALIZATION_MAGIC)?;
    let sizes = parse_sizes(header_field(&lines, "layers", path)?, path)?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(SnnError::BadArchitecture(sizes));
    }
    let fields = header_field(&lines, "fields", path)?;
    let (want_th, want_d) = match fields {
        "thresholds delays" => (true, true),
        "thresholds" => (true, false),
        "delays" => (false, true),
        "none" => (false, false),
        other => return Err(fmt_err(path, format!("unknown fields '{other}'"))),
    };

    let mut reader = SectionReader {
        bytes: payload,
        pos: 0,
        path,
    };
    let thresholds = if want_th {
        let mut per_layer = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            per_layer.push(reader.take(w[1], &format!("layer {l} thresholds"))?);
        }
        Some(per_layer)
    } else {
        None
    };
    let delays = if want_d {
        let mut per_layer = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let d = reader.take(w[1] * w[0], &format!("layer {l} delays"))?;
            let mut m = Matrix::zeros(w[1], w[0]);
            m.as_mut_slice().copy_from_slice(&d);
            per_layer.push(m);
        }
        Some(per_layer)
    } else {
        None
    };
    reader.finish()?;
    Ok((sizes, VariationRealization { thresholds, delays }))
}
