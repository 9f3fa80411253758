//! Versioned text formats: models, r-vector archives and score files.
//! Values render in shortest round-trip decimal form, so identical
//! parameters serialize to identical bytes and loading is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::{RVector, Task};
use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::lstmp::{LstmpDims, LstmpParams};
use crate::multitask::{
    CrossTaskWeights, FeedbackRouting, MultiTaskModel, Sink, Source,
};

const MAGIC: &str = "lsrec-model v1";

/// A single-task branch with its class label table.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTaskModel {
    pub params: LstmpParams,
    pub labels: Vec<String>,
    pub task: Task,
}

/// Either flavor, as found in a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Single(SingleTaskModel),
    Multi(MultiTaskModel),
}

fn write_block(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "block {} {} {}", name, m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

fn routing_line(routing: &FeedbackRouting) -> String {
    if !routing.enabled() {
        return "routing none".to_string();
    }
    let sinks: Vec<&str> = routing.sinks.iter().map(|s| s.short_name()).collect();
    let sources: Vec<&str> = routing.sources.iter().map(|s| s.short_name()).collect();
    format!("routing sinks={} sources={}", sinks.join(","), sources.join(","))
}

pub fn model_to_string(model: &ModelFile) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    match model {
        ModelFile::Single(m) => {
            let _ = writeln!(out, "kind single");
            let _ = writeln!(out, "task {}", m.task.as_str());
            let _ = writeln!(out, "labels {}", m.labels.join(" "));
            let d = &m.params.dims;
            let _ = writeln!(
                out,
                "dims input={} cell={} rproj={} pproj={} out={}",
                d.input, d.cell, d.rproj, d.pproj, d.out
            );
            for (name, blk) in m.params.blocks() {
                if !blk.all_finite() {
                    return Err(CoreError::numeric(format!("non-finite value in block {name}")));
                }
                write_block(&mut out, name, blk);
            }
        }
        ModelFile::Multi(m) => {
            let _ = writeln!(out, "kind multitask");
            let _ = writeln!(out, "languages {}", m.languages.join(" "));
            let _ = writeln!(out, "speakers {}", m.speakers.join(" "));
            let _ = writeln!(out, "{}", routing_line(&m.routing));
            let dl = &m.lre.dims;
            let ds = &m.sre.dims;
            let _ = writeln!(
                out,
                "dims input={} cell={} rproj={} pproj={} out_lre={} out_sre={}",
                dl.input, dl.cell, dl.rproj, dl.pproj, dl.out, ds.out
            );
            for (name, blk) in m.lre.blocks() {
                write_block(&mut out, &format!("lre.{name}"), blk);
            }
            for (name, blk) in m.sre.blocks() {
                write_block(&mut out, &format!("sre.{name}"), blk);
            }
            for (name, blk) in m.cross.blocks() {
                write_block(&mut out, &name, blk);
            }
        }
    }
    out.push_str("end\n");
    Ok(out)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let text = model_to_string(model)?;
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| CoreError::parse(self.path, 0, "unexpected end of file"))
    }

    fn expect_prefix(&mut self, prefix: &str) -> Result<(usize, &'a str)> {
        let (ln, line) = self.next_line()?;
        line.strip_prefix(prefix)
            .map(|rest| (ln, rest.trim()))
            .ok_or_else(|| {
                CoreError::parse(self.path, ln, format!("expected line starting with `{prefix}`"))
            })
    }
}

fn parse_kv(path: &Path, ln: usize, pairs: &str) -> Result<Vec<(String, String)>> {
    pairs
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CoreError::parse(path, ln, format!("expected key=value, found `{kv}`")))
        })
        .collect()
}

fn kv_usize(path: &Path, ln: usize, kvs: &[(String, String)], key: &str) -> Result<usize> {
    kvs.iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| CoreError::parse(path, ln, format!("missing `{key}`")))?
        .1
        .parse()
        .map_err(|_| CoreError::parse(path, ln, format!("`{key}` is not a number")))
}

fn read_block(
    reader: &mut LineReader<'_>,
    expected_name: &str,
) -> Result<Mat> {
    let (ln, rest) = reader.expect_prefix("block ")?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(CoreError::parse(reader.path, ln, "malformed block header"));
    }
    if parts[0] != expected_name {
        return Err(CoreError::parse(
            reader.path,
            ln,
            format!("expected block `{expected_name}`, found `{}`", parts[0]),
        ));
    }
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| CoreError::parse(reader.path, ln, "block rows not a number"))?;
    let cols: usize = parts[2]
        .parse()
        .map_err(|_| CoreError::parse(reader.path, ln, "block cols not a number"))?;
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        let (rln, line) = reader.next_line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(CoreError::parse(
                reader.path,
                rln,
                format!("block {expected_name}: expected {cols} values, found {}", vals.len()),
            ));
        }
        for (c, v) in vals.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| CoreError::parse(reader.path, rln, format!("`{v}` is not a number")))?;
            m.set(r, c, x);
        }
    }
    Ok(m)
}

fn read_params(reader: &mut LineReader<'_>, dims: LstmpDims, prefix: &str) -> Result<LstmpParams> {
    let mut params = LstmpParams::zeros(dims);
    let names: Vec<&'static str> = params.blocks().iter().map(|(n, _)| *n).collect();
    for name in names {
        let full = if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        };
        let m = read_block(reader, &full)?;
        let target = params
            .blocks_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .unwrap()
            .1;
        if m.rows() != target.rows() || m.cols() != target.cols() {
            return Err(CoreError::parse(
                reader.path,
                0,
                format!("block {full} has shape {}x{}, expected {}x{}", m.rows(), m.cols(), target.rows(), target.cols()),
            ));
        }
        *target = m;
    }
    Ok(params)
}

fn parse_routing(path: &Path, ln: usize, rest: &str) -> Result<FeedbackRouting> {
    if rest == "none" {
        return Ok(FeedbackRouting::none());
    }
    let kvs = parse_kv(path, ln, rest)?;
    let sinks = kvs
        .iter()
        .find(|(k, _)| k == "sinks")
        .ok_or_else(|| CoreError::parse(path, ln, "routing missing sinks"))?;
    let sources = kvs
        .iter()
        .find(|(k, _)| k == "sources")
        .ok_or_else(|| CoreError::parse(path, ln, "routing missing sources"))?;
    FeedbackRouting::parse(&sinks.1, &sources.1)
        .map_err(|e| CoreError::parse(path, ln, e.to_string()))
}

pub fn model_from_string(path: &Path, text: &str) -> Result<ModelFile> {
    let mut reader = LineReader {
        path,
        lines: text.lines().enumerate(),
    };
    let (ln, magic) = reader.next_line()?;
    if magic != MAGIC {
        return Err(CoreError::parse(path, ln, format!("bad magic `{magic}`")));
    }
    let (_, kind) = reader.expect_prefix("kind ")?;
    match kind {
        "single" => {
            let (tln, task) = reader.expect_prefix("task ")?;
            let task = Task::from_str(task).map_err(|e| CoreError::parse(path, tln, e.to_string()))?;
            let (_, labels) = reader.expect_prefix("labels ")?;
            let labels: Vec<String> = labels.split_whitespace().map(|s| s.to_string()).collect();
            let (dln, dims_line) = reader.expect_prefix("dims ")?;
            let kvs = parse_kv(path, dln, dims_line)?;
            let dims = LstmpDims {
                input: kv_usize(path, dln, &kvs, "input")?,
                cell: kv_usize(path, dln, &kvs, "cell")?,
                rproj: kv_usize(path, dln, &kvs, "rproj")?,
                pproj: kv_usize(path, dln, &kvs, "pproj")?,
                out: kv_usize(path, dln, &kvs, "out")?,
            };
            if labels.len() != dims.out {
                return Err(CoreError::parse(path, dln, "label count does not match out dim"));
            }
            let params = read_params(&mut reader, dims, "")?;
            let (eln, end) = reader.next_line()?;
            if end != "end" {
                return Err(CoreError::parse(path, eln, "expected `end`"));
            }
            Ok(ModelFile::Single(SingleTaskModel {
                params,
                labels,
                task,
            }))
        }
        "multitask" => {
            let (_, langs) = reader.expect_prefix("languages ")?;
            let languages: Vec<String> = langs.split_whitespace().map(|s| s.to_string()).collect();
            let (_, spks) = reader.expect_prefix("speakers ")?;
            let speakers: Vec<String> = spks.split_whitespace().map(|s| s.to_string()).collect();
            let (rln, routing_rest) = reader.expect_prefix("routing ")?;
            let routing = parse_routing(path, rln, routing_rest)?;
            let (dln, dims_line) = reader.expect_prefix("dims ")?;
            let kvs = parse_kv(path, dln, dims_line)?;
            let base = |out| LstmpDims {
                input: 0,
                cell: 0,
                rproj: 0,
                pproj: 0,
                out,
            };
            let mut lre_dims = base(kv_usize(path, dln, &kvs, "out_lre")?);
            let mut sre_dims = base(kv_usize(path, dln, &kvs, "out_sre")?);
            for d in [&mut lre_dims, &mut sre_dims] {
                d.input = kv_usize(path, dln, &kvs, "input")?;
                d.cell = kv_usize(path, dln, &kvs, "cell")?;
                d.rproj = kv_usize(path, dln, &kvs, "rproj")?;
                d.pproj = kv_usize(path, dln, &kvs, "pproj")?;
            }
            if languages.len() != lre_dims.out || speakers.len() != sre_dims.out {
                return Err(CoreError::parse(path, dln, "label tables do not match output dims"));
            }
            let lre = read_params(&mut reader, lre_dims, "lre")?;
            let sre = read_params(&mut reader, sre_dims, "sre")?;
            let mut cross = CrossTaskWeights::zeros(&routing, &lre_dims, &sre_dims);
            let names: Vec<String> = cross.blocks().iter().map(|(n, _)| n.clone()).collect();
            for name in names {
                let m = read_block(&mut reader, &name)?;
                let target = cross
                    .blocks_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1;
                if m.rows() != target.rows() || m.cols() != target.cols() {
                    return Err(CoreError::parse(path, 0, format!("cross block {name} shape mismatch")));
                }
                *target = m;
            }
            let (eln, end) = reader.next_line()?;
            if end != "end" {
                return Err(CoreError::parse(path, eln, "expected `end`"));
            }
            Ok(ModelFile::Multi(MultiTaskModel {
                lre,
                sre,
                cross,
                routing,
                languages,
                speakers,
            }))
        }
        other => Err(CoreError::parse(path, ln, format!("unknown model kind `{other}`"))),
    }
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    model_from_string(path, &text)
}

/// r-vector archive: one line per vector, `utt_id task dim v1 .. vdim`.
pub fn save_rvectors(path: &Path, rvectors: &[RVector]) -> Result<()> {
    let mut out = String::new();
    for rv in rvectors {
        let _ = write!(out, "{} {} {}", rv.utt_id, rv.task.as_str(), rv.values.len());
        for v in &rv.values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn load_rvectors(path: &Path) -> Result<Vec<RVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 3 {
            return Err(CoreError::parse(path, ln + 1, "malformed r-vector line"));
        }
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| CoreError::parse(path, ln + 1, "dim is not a number"))?;
        if parts.len() != 3 + dim {
            return Err(CoreError::parse(
                path,
                ln + 1,
                format!("expected {dim} values, found {}", parts.len() - 3),
            ));
        }
        let values = parts[3..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CoreError::parse(path, ln + 1, format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(RVector {
            utt_id: parts[0].to_string(),
            task: Task::from_str(parts[1])
                .map_err(|e| CoreError::parse(path, ln + 1, e.to_string()))?,
            values,
        });
    }
    Ok(out)
}

/// SRE score file: `enroll_id<TAB>test_utt<TAB>score<TAB>target{0,1}`.
pub fn save_sre_scores(path: &Path, rows: &[(String, String, f64, bool)]) -> Result<()> {
    let mut out = String::new();
    for (enroll, utt, score, target) in rows {
        let _ = writeln!(out, "{enroll}\t{utt}\t{score}\t{}", if *target { 1 } else { 0 });
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn load_sre_scores(path: &Path) -> Result<Vec<(String, String, f64, bool)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(CoreError::parse(path, ln + 1, "expected 4 tab-separated fields"));
        }
        let score: f64 = parts[2]
            .parse()
            .map_err(|_| CoreError::parse(path, ln + 1, "score is not a number"))?;
        let target = match parts[3] {
            "1" => true,
            "0" => false,
            other => {
                return Err(CoreError::parse(
                    path,
                    ln + 1,
                    format!("target flag must be 0 or 1, found `{other}`"),
                ))
            }
        };
        out.push((parts[0].to_string(), parts[1].to_string(), score, target));
    }
    Ok(out)
}

/// LRE score file: `test_utt<TAB>predicted<TAB>true`.
pub fn save_lre_scores(path: &Path, rows: &[(String, String, String)]) -> Result<()> {
    let mut out = String::new();
    for (utt, pred, truth) in rows {
        let _ = writeln!(out, "{utt}\t{pred}\t{truth}");
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn load_lre_scores(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(CoreError::parse(path, ln + 1, "expected 3 tab-separated fields"));
        }
        out.push((parts[0].to_string(), parts[1].to_string(), parts[2].to_string()));
    }
    Ok(out)
}

/// Routing descriptor as written in model files, reused by the CLI.
pub fn routing_descriptor(routing: &FeedbackRouting) -> String {
    routing_line(routing)
}

/// Lists the cross-block names a routing implies, e.g. `cross.sl.i.r`.
pub fn cross_block_names(routing: &FeedbackRouting) -> Vec<String> {
    let mut out = Vec::new();
    for dir in ["ls", "sl"] {
        for sink in Sink::ALL {
            if !routing.sinks.contains(&sink) {
                continue;
            }
            for source in Source::ALL {
                if routing.sources.contains(&source) {
                    out.push(format!(
                        "cross.{dir}.{}.{}",
                        sink.short_name(),
                        source.short_name()
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstmp::init_params;
    use crate::multitask::{init_multitask, MultiTaskDims};

    fn single() -> SingleTaskModel {
        SingleTaskModel {
            params: init_params(
                LstmpDims {
                    input: 3,
                    cell: 4,
                    rproj: 2,
                    pproj: 2,
                    out: 2,
                },
                0.3,
                7,
            )
            .unwrap(),
            labels: vec!["L0".into(), "L1".into()],
            task: Task::Language,
        }
    }

    fn multi() -> MultiTaskModel {
        init_multitask(
            MultiTaskDims {
                input: 3,
                cell: 4,
                rproj: 2,
                pproj: 2,
                n_languages: 2,
                n_speakers: 3,
            },
            FeedbackRouting::cell_candidate_both(),
            0.3,
            0.2,
            9,
            None,
            vec!["L0".into(), "L1".into()],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn single_model_round_trips_bitwise() {
        let m = ModelFile::Single(single());
        let text = model_to_string(&m).unwrap();
        let parsed = model_from_string(Path::new("mem"), &text).unwrap();
        assert_eq!(m, parsed);
        // identical parameters serialize to identical bytes
        let text2 = model_to_string(&parsed).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn multitask_model_round_trips_bitwise() {
        let m = ModelFile::Multi(multi());
        let text = model_to_string(&m).unwrap();
        let parsed = model_from_string(Path::new("mem"), &text).unwrap();
        assert_eq!(m, parsed);
        assert_eq!(text, model_to_string(&parsed).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let m = ModelFile::Single(single());
        let text = model_to_string(&m).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(model_from_string(Path::new("mem"), cut).is_err());
    }

    #[test]
    fn rvector_archive_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("rv.txt");
        let rvs = vec![
            RVector {
                utt_id: "u1".into(),
                task: Task::Speaker,
                values: vec![0.25, -1.5e-8, 3.0],
            },
            RVector {
                utt_id: "u2".into(),
                task: Task::Language,
                values: vec![1.0, 2.0, -0.0625],
            },
        ];
        save_rvectors(&path, &rvs).unwrap();
        assert_eq!(load_rvectors(&path).unwrap(), rvs);
    }

    #[test]
    fn score_files_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let sre = tmp.path().join("sre.tsv");
        let rows = vec![
            ("spk1".to_string(), "u1".to_string(), 0.75, true),
            ("spk2".to_string(), "u1".to_string(), -0.1, false),
        ];
        save_sre_scores(&sre, &rows).unwrap();
        assert_eq!(load_sre_scores(&sre).unwrap(), rows);

        let lre = tmp.path().join("lre.tsv");
        let rows = vec![("u1".to_string(), "L0".to_string(), "L1".to_string())];
        save_lre_scores(&lre, &rows).unwrap();
        assert_eq!(load_lre_scores(&lre).unwrap(), rows);
    }

    #[test]
    fn cross_block_naming() {
        let names = cross_block_names(&FeedbackRouting::cell_candidate_both());
        assert_eq!(
            names,
            vec!["cross.ls.g.r", "cross.ls.g.p", "cross.sl.g.r", "cross.sl.g.p"]
        );
    }
}
