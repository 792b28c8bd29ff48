//! Plain-text file formats: register descriptions, pulse tables, density
//! matrices and the rotating-frame audit.

use crate::dynamics::{PulseSequence, Slice};
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMat, C64};
use crate::rotframe::RotatingFrame;
use crate::spinsys::{ControlChannel, NvParams, RegisterModel};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Register description as stored on disk (TOML). The static field is in
/// millitesla; everything else uses the library's units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterFile {
    pub static_field_mt: [f64; 3],
    pub dipolar_coupling_hz: f64,
    pub separation_m: f64,
    pub nv_a: NvParams,
    pub nv_b: NvParams,
    #[serde(default)]
    pub channels: Vec<ControlChannel>,
}

impl RegisterFile {
    pub fn from_model(model: &RegisterModel, channels: Vec<ControlChannel>) -> Self {
        Self {
            static_field_mt: model.static_field_t.map(|b| b * 1e3),
            dipolar_coupling_hz: model.dipolar_coupling_hz,
            separation_m: model.separation_m,
            nv_a: model.nv_a.clone(),
            nv_b: model.nv_b.clone(),
            channels,
        }
    }

    pub fn model(&self) -> Result<RegisterModel> {
        let m = RegisterModel {
            nv_a: self.nv_a.clone(),
            nv_b: self.nv_b.clone(),
            static_field_t: self.static_field_mt.map(|b| b * 1e-3),
            dipolar_coupling_hz: self.dipolar_coupling_hz,
            separation_m: self.separation_m,
        };
        m.validate()?;
        for ch in &self.channels {
            ch.validate()?;
        }
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.model()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {field}"),
    })
}

/// Numeric rows of a text table, skipping blank lines and `#` comments.
fn numeric_rows(text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields = line
            .split_whitespace()
            .map(|f| parse_f64(f, n + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push((n + 1, fields));
    }
    Ok(rows)
}

/// Pulse table: `index duration_s` then `I_hz Q_hz` per carrier.
pub fn write_pulses(seq: &PulseSequence) -> String {
    let k = seq.n_channels().unwrap_or(0);
    let mut out = String::from("# slice duration_s");
    for c in 0..k {
        let _ = write!(out, " i{c}_hz q{c}_hz");
    }
    out.push('\n');
    for (i, s) in seq.slices.iter().enumerate() {
        let _ = write!(out, "{i} {:e}", s.duration);
        for z in &s.amplitudes_hz {
            let _ = write!(out, " {:e} {:e}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

pub fn read_pulses(text: &str) -> Result<PulseSequence> {
    let mut slices = Vec::new();
    let mut width = None;
    for (line, f) in numeric_rows(text)? {
        let err = |msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        if f.len() < 2 || f.len() % 2 != 0 {
            return Err(err("expected index, duration and I/Q pairs"));
        }
        if *width.get_or_insert(f.len()) != f.len() {
            return Err(err("rows have different numbers of carriers"));
        }
        if f[0] != slices.len() as f64 {
            return Err(err("slice indices must count up from 0"));
        }
        slices.push(Slice {
            duration: f[1],
            amplitudes_hz: f[2..].chunks(2).map(|p| C64::new(p[0], p[1])).collect(),
        });
    }
    Ok(PulseSequence::new(slices))
}

/// Density matrix with optional per-entry magnitude-only flags.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub matrix: CMat,
    /// Row-major; present only if the file carried a flag column.
    pub magnitude_only: Option<Vec<bool>>,
}

/// Dimension header, then one line per row with `re im` pairs; with flags,
/// each pair gains a third `0|1` column.
pub fn write_matrix(m: &CMat, magnitude_only: Option<&[bool]>) -> String {
    let n = m.nrows();
    let mut out = format!("{n}\n");
    for i in 0..n {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| {
                let z = m[(i, j)];
                match magnitude_only {
                    Some(f) => format!("{:e} {:e} {}", z.re, z.im, u8::from(f[i * n + j])),
                    None => format!("{:e} {:e}", z.re, z.im),
                }
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_matrix(text: &str) -> Result<MatrixFile> {
    let rows = numeric_rows(text)?;
    let Some(((hline, head), body)) = rows.split_first() else {
        return Err(Error::Parse {
            line: 0,
            msg: "empty matrix file".into(),
        });
    };
    if head.len() != 1 || head[0] < 1.0 || head[0].fract() != 0.0 {
        return Err(Error::Parse {
            line: *hline,
            msg: "expected the dimension".into(),
        });
    }
    let n = head[0] as usize;
    if body.len() != n {
        return Err(Error::Parse {
            line: *hline,
            msg: format!("expected {n} rows, found {}", body.len()),
        });
    }
    let flagged = body[0].1.len() == 3 * n;
    let stride = if flagged { 3 } else { 2 };
    let mut m = crate::linalg::zeros(n, n);
    let mut flags = Vec::new();
    for (i, (line, f)) in body.iter().enumerate() {
        if f.len() != stride * n {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected {} numbers", stride * n),
            });
        }
        for j in 0..n {
            let e = &f[stride * j..stride * (j + 1)];
            m[(i, j)] = C64::new(e[0], e[1]);
            if flagged {
                flags.push(match e[2] {
                    0.0 => false,
                    1.0 => true,
                    _ => {
                        return Err(Error::Parse {
                            line: *line,
                            msg: "flag must be 0 or 1".into(),
                        })
                    }
                });
            }
        }
    }
    Ok(MatrixFile {
        matrix: m,
        magnitude_only: flagged.then_some(flags),
    })
}

/// Audit table of every frame term: channel, frequency, norm, retention.
pub fn frame_dump(frame: &RotatingFrame) -> String {
    let mut out = String::from("channel,frequency_hz,norm,fast,retained\n");
    for r in &frame.audit {
        let ch = r.channel.map_or("static".to_string(), |c| c.to_string());
        let _ = writeln!(out, "{ch},{:e},{:e},{},{}", r.frequency_hz, r.norm, r.fast, r.retained);
    }
    out
}

/// Reads a file, mapping errors to the library error type.
pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            invalid("path", format!("{} does not exist", path.display()))
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{projector, random_state};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn register_round_trip() {
        let model = RegisterModel::reference_pair();
        let ch = crate::setup::nv_channels(&model, crate::spinsys::NvLabel::A, 10e6).unwrap();
        let file = RegisterFile::from_model(&model, ch);
        let text = file.to_toml().unwrap();
        let back = RegisterFile::parse(&text).unwrap();
        assert_eq!(back, file);
        let m = back.model().unwrap();
        for k in 0..3 {
            assert!((m.static_field_t[k] - model.static_field_t[k]).abs() < 1e-18);
        }
        assert!(RegisterFile::parse(&text.replace("separation_m", "spacing_m")).is_err());
    }

    #[test]
    fn pulses_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = PulseSequence::new(
            (0..7)
                .map(|_| Slice {
                    duration: rng.random_range(1e-8..1e-6),
                    amplitudes_hz: (0..2)
                        .map(|_| C64::new(rng.random_range(-1e7..1e7), rng.random_range(-1e7..1e7)))
                        .collect(),
                })
                .collect(),
        );
        assert_eq!(read_pulses(&write_pulses(&seq)).unwrap(), seq);
        assert!(matches!(read_pulses("0 1e-7 1 2\n2 1e-7 1 2\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn matrices_round_trip_with_and_without_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rho = projector(&random_state(4, &mut rng));
        let plain = read_matrix(&write_matrix(&rho, None)).unwrap();
        assert_eq!(plain.matrix, rho);
        assert!(plain.magnitude_only.is_none());
        let flags: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        let flagged = read_matrix(&write_matrix(&rho, Some(&flags))).unwrap();
        assert_eq!(flagged.matrix, rho);
        assert_eq!(flagged.magnitude_only.unwrap(), flags);
        assert!(read_matrix("2\n1 0 0 0\n").is_err());
    }
}
