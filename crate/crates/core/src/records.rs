//! On-disk formats: the line-oriented detection log, per-frame track files
//! and the bench results table.
//!
//! Detection log, one frame per line:
//!
//! ```text
//! <frame> [gt px py pz ax ay az angle] [act tx ty tz rx ry rz] label:x:y ...
//! ```
//!
//! `gt` carries the true pose as position plus unit axis and angle, `act` the
//! action that led to this frame. Unlabeled body points use the label `body`
//! and keep their order. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::PixelPoint;
use crate::error::{Error, Result};
use crate::needle::{TAIL, TIP};
use crate::observation::DetectionSet;
use crate::pose::{Action, Pose6D};
use crate::simulator::{ErrorSummary, SimFrame};

pub const BODY_LABEL: &str = "body";

/// Pose stored as position, unit rotation axis and angle (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedPose {
    pub position: [f64; 3],
    pub axis: [f64; 3],
    pub angle: f64,
}

impl LoggedPose {
    pub fn from_pose(pose: &Pose6D) -> Self {
        let angle = pose.orientation.norm();
        let axis = if angle > 0.0 {
            pose.orientation / angle
        } else {
            Vector3::z()
        };
        Self {
            position: pose.position.into(),
            axis: axis.into(),
            angle,
        }
    }

    pub fn to_pose(&self) -> Pose6D {
        let axis = Vector3::from(self.axis);
        let n = axis.norm();
        let orientation = if n > 0.0 {
            axis * (self.angle / n)
        } else {
            Vector3::zeros()
        };
        Pose6D::new(Vector3::from(self.position), orientation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedFrame {
    pub frame: usize,
    pub truth: Option<LoggedPose>,
    pub action: Option<Action>,
    pub detections: DetectionSet,
}

impl From<&SimFrame> for LoggedFrame {
    fn from(f: &SimFrame) -> Self {
        Self {
            frame: f.frame,
            truth: Some(LoggedPose::from_pose(&f.truth)),
            action: Some(f.action),
            detections: f.detections.clone(),
        }
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label != "gt"
        && label != "act"
        && !label.contains(':')
        && !label.chars().any(char::is_whitespace)
}

pub fn format_frame(f: &LoggedFrame) -> Result<String> {
    let mut line = f.frame.to_string();
    if let Some(t) = &f.truth {
        let [px, py, pz] = t.position;
        let [ax, ay, az] = t.axis;
        let _ = write!(line, " gt {px} {py} {pz} {ax} {ay} {az} {}", t.angle);
    }
    if let Some(a) = &f.action {
        let [tx, ty, tz] = a.translation;
        let [rx, ry, rz] = a.rotation;
        let _ = write!(line, " act {tx} {ty} {tz} {rx} {ry} {rz}");
    }
    let d = &f.detections;
    let ordered = [TAIL, TIP]
        .into_iter()
        .filter_map(|l| d.labeled.get_key_value(l))
        .chain(
            d.labeled
                .iter()
                .filter(|(l, _)| l.as_str() != TAIL && l.as_str() != TIP),
        );
    for (label, p) in ordered {
        if !valid_label(label) || label == BODY_LABEL {
            return Err(Error::Parse {
                frame: f.frame,
                reason: format!("label `{label}` cannot be written"),
            });
        }
        let _ = write!(line, " {label}:{}:{}", p.x, p.y);
    }
    for p in &d.body {
        let _ = write!(line, " {BODY_LABEL}:{}:{}", p.x, p.y);
    }
    Ok(line)
}

fn numbers<'a, const N: usize>(
    tokens: &mut impl Iterator<Item = &'a str>,
    frame: usize,
    what: &str,
) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (i, v) in out.iter_mut().enumerate() {
        let tok = tokens.next().ok_or_else(|| Error::Parse {
            frame,
            reason: format!("`{what}` needs {N} numbers, found {i}"),
        })?;
        *v = tok.parse().map_err(|_| Error::Parse {
            frame,
            reason: format!("`{what}` value `{tok}` is not a number"),
        })?;
    }
    Ok(out)
}

/// Parses one log line. `line_no` (1-based) stands in for the frame index in
/// errors when the frame field itself is unreadable.
pub fn parse_frame(line: &str, line_no: usize) -> Result<LoggedFrame> {
    let mut tokens = line.split_whitespace().peekable();
    let first = tokens.next().ok_or_else(|| Error::Parse {
        frame: line_no,
        reason: "empty line".into(),
    })?;
    let frame: usize = first.parse().map_err(|_| Error::Parse {
        frame: line_no,
        reason: format!("line {line_no}: frame index `{first}` is not a nonnegative integer"),
    })?;
    let mut out = LoggedFrame {
        frame,
        truth: None,
        action: None,
        detections: DetectionSet::new(frame),
    };
    while let Some(tok) = tokens.next() {
        match tok {
            "gt" => {
                if out.truth.is_some() {
                    return Err(Error::Parse {
                        frame,
                        reason: "duplicate `gt`".into(),
                    });
                }
                let v: [f64; 7] = numbers(&mut tokens, frame, "gt")?;
                out.truth = Some(LoggedPose {
                    position: [v[0], v[1], v[2]],
                    axis: [v[3], v[4], v[5]],
                    angle: v[6],
                });
            }
            "act" => {
                if out.action.is_some() {
                    return Err(Error::Parse {
                        frame,
                        reason: "duplicate `act`".into(),
                    });
                }
                let v: [f64; 6] = numbers(&mut tokens, frame, "act")?;
                out.action = Some(Action {
                    translation: [v[0], v[1], v[2]],
                    rotation: [v[3], v[4], v[5]],
                });
            }
            _ => {
                let mut parts = tok.split(':');
                let (Some(label), Some(x), Some(y), None) =
                    (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(Error::Parse {
                        frame,
                        reason: format!("expected `label:x:y`, found `{tok}`"),
                    });
                };
                if !valid_label(label) {
                    return Err(Error::Parse {
                        frame,
                        reason: format!("bad label in `{tok}`"),
                    });
                }
                let coord = |s: &str| -> Result<f64> {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            frame,
                            reason: format!("coordinate `{s}` in `{tok}` is not a finite number"),
                        })
                };
                let p = PixelPoint::new(coord(x)?, coord(y)?);
                if label == BODY_LABEL {
                    out.detections.body.push(p);
                } else if out
                    .detections
                    .labeled
                    .insert(label.to_string(), p)
                    .is_some()
                {
                    return Err(Error::Parse {
                        frame,
                        reason: format!("duplicate label `{label}`"),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn read_log(reader: impl BufRead) -> Result<Vec<LoggedFrame>> {
    let mut frames: Vec<LoggedFrame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f = parse_frame(trimmed, i + 1)?;
        if let Some(prev) = frames.last() {
            if f.frame <= prev.frame {
                return Err(Error::Parse {
                    frame: f.frame,
                    reason: format!("frame follows frame {} out of order", prev.frame),
                });
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn write_log(mut writer: impl Write, frames: &[LoggedFrame]) -> Result<()> {
    for f in frames {
        writeln!(writer, "{}", format_frame(f)?)?;
    }
    writer.flush()?;
    Ok(())
}

/// One row of a track file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub neff: f64,
    pub resampled: bool,
    pub updated: bool,
    pub pos_err_mm: Option<f64>,
    pub ori_err_deg: Option<f64>,
}

impl TrackRow {
    pub fn pose(&self) -> Pose6D {
        Pose6D::from_arrays([self.x, self.y, self.z], [self.rx, self.ry, self.rz])
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse {
            frame: p.record() as usize,
            reason: e.to_string(),
        },
        None => Error::Io(e.to_string()),
    }
}

pub fn write_csv<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(reader: impl std::io::Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

/// Appends summary rows one at a time so partial bench results survive an abort.
pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn push(&mut self, row: &ErrorSummary) -> Result<()> {
        self.inner.serialize(row).map_err(csv_error)?;
        self.inner.flush()?;
        Ok(())
    }
}
