//! Verification pair protocols and the three benchmark scenarios.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Which sides of each comparison carry a synthetic mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Unaltered pairs.
    NoMask,
    /// Mask on the probe (second) side only.
    MaskedVsNonMasked,
    /// Mask on both sides.
    MaskedVsMasked,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NoMask => "none",
            Scenario::MaskedVsNonMasked => "masked-vs-nonmasked",
            Scenario::MaskedVsMasked => "both-masked",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "none" => Ok(Scenario::NoMask),
            "masked-vs-nonmasked" => Ok(Scenario::MaskedVsNonMasked),
            "both-masked" => Ok(Scenario::MaskedVsMasked),
            _ => Err(Error::Protocol(format!(
                "unknown scenario `{text}` (expected none, masked-vs-nonmasked, both-masked)"
            ))),
        }
    }

    fn flags(self) -> (bool, bool) {
        match self {
            Scenario::NoMask => (false, false),
            Scenario::MaskedVsNonMasked => (false, true),
            Scenario::MaskedVsMasked => (true, true),
        }
    }
}

/// One comparison: reference path, probe path, label, per-side mask flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolPair {
    pub ref_path: String,
    pub probe_path: String,
    pub genuine: bool,
    pub mask_ref: bool,
    pub mask_probe: bool,
}

/// A list of comparisons, its scenario, and optional k-fold boundaries.
#[derive(Debug, Clone)]
pub struct PairProtocol {
    pub pairs: Vec<ProtocolPair>,
    pub scenario: Scenario,
    fold_len: Option<usize>,
}

impl PairProtocol {
    pub fn new(pairs: Vec<ProtocolPair>, scenario: Scenario, k_folds: Option<usize>) -> Result<Self> {
        let (mask_ref, mask_probe) = scenario.flags();
        for (i, p) in pairs.iter().enumerate() {
            if p.mask_ref != mask_ref || p.mask_probe != mask_probe {
                return Err(Error::Protocol(format!(
                    "pair {i} mask flags ({}, {}) inconsistent with scenario {}",
                    p.mask_ref,
                    p.mask_probe,
                    scenario.as_str()
                )));
            }
        }
        let fold_len = match k_folds {
            None => None,
            Some(k) => {
                if k < 2 {
                    return Err(Error::Protocol(format!("k_folds must be >= 2, got {k}")));
                }
                if pairs.is_empty() || pairs.len() % k != 0 {
                    return Err(Error::Protocol(format!(
                        "{} pairs not divisible into {k} equal folds",
                        pairs.len()
                    )));
                }
                Some(pairs.len() / k)
            }
        };
        Ok(PairProtocol {
            pairs,
            scenario,
            fold_len,
        })
    }

    /// Contiguous fold ranges; `None` when the protocol is unfolded.
    pub fn folds(&self) -> Option<Vec<Range<usize>>> {
        self.fold_len.map(|len| {
            (0..self.pairs.len() / len)
                .map(|f| f * len..(f + 1) * len)
                .collect()
        })
    }

    pub fn num_folds(&self) -> Option<usize> {
        self.fold_len.map(|len| self.pairs.len() / len)
    }
}

/// Builds a protocol from a pair-list file.
///
/// Two line formats are accepted and detected per file:
///
/// * LFW convention: `name i j` (genuine: the i-th and j-th images of
///   identity `name`, 1-based, in sorted filename order) and
///   `name1 i name2 j` (impostor). Resolving indices to files requires
///   `data_root`. A leading header line of one or two integers is skipped.
/// * Generic 3-column: `ref_path probe_path {0|1}` with paths relative to
///   the dataset root and 1 marking a genuine pair.
pub fn build_protocol(
    pair_file: &Path,
    scenario: Scenario,
    k_folds: Option<usize>,
    data_root: Option<&Path>,
) -> Result<PairProtocol> {
    let text = std::fs::read_to_string(pair_file)?;
    let (mask_ref, mask_probe) = scenario.flags();

    let lines: Vec<(usize, Vec<String>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect::<Vec<_>>()))
        .filter(|(_, toks)| !toks.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::Protocol("pair file contains no pairs".to_string()));
    }

    // Header: a first line of one or two bare integers (LFW writes
    // "<folds> <pairs-per-fold>").
    let mut body = &lines[..];
    if let Some((_, toks)) = lines.first() {
        if toks.len() <= 2 && toks.iter().all(|t| t.parse::<u64>().is_ok()) {
            body = &lines[1..];
        }
    }
    if body.is_empty() {
        return Err(Error::Protocol("pair file contains no pairs".to_string()));
    }

    let is_index = |t: &str| t.parse::<u64>().map(|v| v >= 1).unwrap_or(false);
    let lfw_like = body.iter().all(|(_, toks)| match toks.len() {
        3 => is_index(&toks[1]) && is_index(&toks[2]),
        4 => is_index(&toks[1]) && is_index(&toks[3]),
        _ => false,
    });

    let mut pairs = Vec::with_capacity(body.len());
    if lfw_like {
        let root = data_root.ok_or_else(|| {
            Error::Protocol(
                "LFW-style pair file needs a dataset root to resolve image indices".to_string(),
            )
        })?;
        let mut resolver = LfwResolver::new(root);
        for (lineno, toks) in body {
            let (ref_path, probe_path, genuine) = match toks.len() {
                3 => {
                    let a = resolver.resolve(&toks[0], &toks[1], *lineno)?;
                    let b = resolver.resolve(&toks[0], &toks[2], *lineno)?;
                    (a, b, true)
                }
                4 => {
                    let a = resolver.resolve(&toks[0], &toks[1], *lineno)?;
                    let b = resolver.resolve(&toks[2], &toks[3], *lineno)?;
                    (a, b, false)
                }
                _ => unreachable!(),
            };
            pairs.push(ProtocolPair {
                ref_path,
                probe_path,
                genuine,
                mask_ref,
                mask_probe,
            });
        }
    } else {
        for (lineno, toks) in body {
            if toks.len() != 3 {
                return Err(Error::PairParse {
                    line: *lineno,
                    msg: format!("expected `ref probe 0|1`, got {} tokens", toks.len()),
                });
            }
            let genuine = match toks[2].as_str() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::PairParse {
                        line: *lineno,
                        msg: format!("expected label 0 or 1, got `{other}`"),
                    })
                }
            };
            pairs.push(ProtocolPair {
                ref_path: toks[0].clone(),
                probe_path: toks[1].clone(),
                genuine,
                mask_ref,
                mask_probe,
            });
        }
    }

    PairProtocol::new(pairs, scenario, k_folds)
}

/// Resolves LFW-style `(identity, 1-based index)` references against the
/// sorted image listing of each identity directory, caching per identity.
struct LfwResolver<'a> {
    root: &'a Path,
    cache: std::collections::HashMap<String, Vec<String>>,
}

impl<'a> LfwResolver<'a> {
    fn new(root: &'a Path) -> Self {
        LfwResolver {
            root,
            cache: std::collections::HashMap::new(),
        }
    }

    fn resolve(&mut self, identity: &str, index: &str, lineno: usize) -> Result<String> {
        let idx: usize = index.parse().map_err(|_| Error::PairParse {
            line: lineno,
            msg: format!("bad image index `{index}`"),
        })?;
        if !self.cache.contains_key(identity) {
            let dir = self.root.join(identity);
            let mut names: Vec<String> = std::fs::read_dir(&dir)
                .map_err(|e| Error::PairParse {
                    line: lineno,
                    msg: format!("unknown identity `{identity}`: {e}"),
                })?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| {
                    ["png", "jpg", "jpeg"]
                        .iter()
                        .any(|ext| n.to_lowercase().ends_with(&format!(".{ext}")))
                })
                .collect();
            names.sort();
            self.cache.insert(identity.to_string(), names);
        }
        let names = &self.cache[identity];
        if idx == 0 || idx > names.len() {
            return Err(Error::PairParse {
                line: lineno,
                msg: format!(
                    "identity `{identity}` has {} images, index {idx} out of range",
                    names.len()
                ),
            });
        }
        Ok(format!("{identity}/{}", names[idx - 1]))
    }
}

/// Writes a materialized protocol as CSV with a commented header.
pub fn write_protocol(protocol: &PairProtocol, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# scenario = {}", protocol.scenario.as_str())?;
    if let Some(k) = protocol.num_folds() {
        writeln!(f, "# folds = {k}")?;
    }
    writeln!(f, "ref,probe,genuine,mask_ref,mask_probe")?;
    for p in &protocol.pairs {
        writeln!(
            f,
            "{},{},{},{},{}",
            p.ref_path,
            p.probe_path,
            p.genuine as u8,
            p.mask_ref as u8,
            p.mask_probe as u8
        )?;
    }
    Ok(())
}

/// Reads a protocol CSV written by [`write_protocol`].
pub fn read_protocol(path: &Path) -> Result<PairProtocol> {
    let text = std::fs::read_to_string(path)?;
    let mut scenario = None;
    let mut folds = None;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                match k.trim() {
                    "scenario" => scenario = Some(Scenario::parse(v.trim())?),
                    "folds" => {
                        folds = Some(v.trim().parse::<usize>().map_err(|_| Error::PairParse {
                            line: lineno,
                            msg: "bad folds header".to_string(),
                        })?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        if line.starts_with("ref,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::PairParse {
                line: lineno,
                msg: format!("expected 5 columns, got {}", cols.len()),
            });
        }
        let flag = |s: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::PairParse {
                    line: lineno,
                    msg: format!("expected 0/1 flag, got `{s}`"),
                }),
            }
        };
        pairs.push(ProtocolPair {
            ref_path: cols[0].to_string(),
            probe_path: cols[1].to_string(),
            genuine: flag(cols[2])?,
            mask_ref: flag(cols[3])?,
            mask_probe: flag(cols[4])?,
        });
    }
    let scenario = scenario
        .ok_or_else(|| Error::Protocol("protocol file missing scenario header".to_string()))?;
    PairProtocol::new(pairs, scenario, folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_pairs(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn generic_6000() -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..6000 {
            writeln!(f, "a/{i}.png b/{i}.png {}", i % 2).unwrap();
        }
        f
    }

    #[test]
    fn six_thousand_pairs_ten_folds_no_mask() {
        let f = generic_6000();
        let p = build_protocol(f.path(), Scenario::NoMask, Some(10), None).unwrap();
        assert_eq!(p.pairs.len(), 6000);
        let folds = p.folds().unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds.iter().all(|r| r.len() == 600));
        assert!(p.pairs.iter().all(|q| !q.mask_ref && !q.mask_probe));
        // folds partition the list exactly
        let covered: usize = folds.iter().map(|r| r.len()).sum();
        assert_eq!(covered, 6000);
        assert_eq!(folds[0].start, 0);
        assert_eq!(folds[9].end, 6000);
    }

    #[test]
    fn masked_vs_masked_stamps_both_flags() {
        let f = generic_6000();
        let p = build_protocol(f.path(), Scenario::MaskedVsMasked, None, None).unwrap();
        assert!(p.pairs.iter().all(|q| q.mask_ref && q.mask_probe));
    }

    #[test]
    fn masked_vs_nonmasked_masks_probe_side_only() {
        let f = generic_6000();
        let p = build_protocol(f.path(), Scenario::MaskedVsNonMasked, None, None).unwrap();
        let total_flags: usize = p
            .pairs
            .iter()
            .map(|q| q.mask_ref as usize + q.mask_probe as usize)
            .sum();
        assert_eq!(total_flags, 6000);
        assert!(p.pairs.iter().all(|q| !q.mask_ref && q.mask_probe));
    }

    #[test]
    fn indivisible_fold_count_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..6001 {
            writeln!(f, "a/{i}.png b/{i}.png 1").unwrap();
        }
        let err = build_protocol(f.path(), Scenario::NoMask, Some(10), None).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_pairs(&["a.png b.png 1", "a.png b.png 2"]);
        let err = build_protocol(f.path(), Scenario::NoMask, None, None).unwrap_err();
        match err {
            Error::PairParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lfw_style_resolved_against_tree() {
        let dir = tempfile::tempdir().unwrap();
        for (ident, n) in [("alice", 3), ("bob", 2)] {
            let d = dir.path().join(ident);
            std::fs::create_dir(&d).unwrap();
            for i in 0..n {
                std::fs::write(d.join(format!("{ident}_{i:04}.png")), b"x").unwrap();
            }
        }
        let f = write_pairs(&["2 1", "alice 1 3", "alice 2 bob 1"]);
        let p = build_protocol(f.path(), Scenario::NoMask, None, Some(dir.path())).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!(p.pairs[0].ref_path, "alice/alice_0000.png");
        assert_eq!(p.pairs[0].probe_path, "alice/alice_0002.png");
        assert!(p.pairs[0].genuine);
        assert_eq!(p.pairs[1].probe_path, "bob/bob_0000.png");
        assert!(!p.pairs[1].genuine);
    }

    #[test]
    fn lfw_style_without_root_rejected() {
        let f = write_pairs(&["alice 1 2"]);
        let err = build_protocol(f.path(), Scenario::NoMask, None, None).unwrap_err();
        assert!(err.to_string().contains("dataset root"));
    }

    #[test]
    fn protocol_csv_round_trip() {
        let f = generic_6000();
        let p = build_protocol(f.path(), Scenario::MaskedVsNonMasked, Some(10), None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_protocol(&p, out.path()).unwrap();
        let back = read_protocol(out.path()).unwrap();
        assert_eq!(back.scenario, p.scenario);
        assert_eq!(back.num_folds(), p.num_folds());
        assert_eq!(back.pairs, p.pairs);
    }
}
