//! Plain-text population and cohort files.
//!
//! Both start with the schema tag line. Population records are
//! `id<TAB>gender<TAB>race<TAB>birth_offset<TAB>encounters`, with encounters
//! written as space-separated `day:CODE,CODE` groups. Cohort files add a
//! `vocab<TAB>CODE,CODE,…` header, then
//! `id<TAB>label<TAB>g,r,a<TAB>q1<TAB>q2<TAB>q3<TAB>q4` where `g,r,a` are the
//! hot positions of the demographic one-hot block and each quarter is a
//! comma-separated `index:count` list (empty when the quarter has no codes).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::types::{Code, Demographics, Encounter, EncounterStream, Label, PatientTensor, Vocabulary, N_QUARTERS};

pub const SCHEMA_TAG: &str = "savehr-cohort/1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    match lines.first() {
        Some(tag) if tag == SCHEMA_TAG => Ok(lines),
        _ => Err(Error::format(path, 1, format!("missing schema tag `{SCHEMA_TAG}`"))),
    }
}

pub fn format_stream(s: &EncounterStream) -> String {
    let enc: Vec<String> = s
        .encounters
        .iter()
        .map(|e| {
            let codes: Vec<String> = e.codes.iter().map(Code::to_string).collect();
            format!("{}:{}", e.day, codes.join(","))
        })
        .collect();
    format!(
        "{}\t{}\t{}\t{}\t{}",
        s.patient_id,
        s.gender,
        s.race,
        s.birth_offset,
        enc.join(" ")
    )
}

fn parse_stream(line: &str) -> std::result::Result<EncounterStream, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 5 {
        return Err(format!("expected 5 fields, found {}", f.len()));
    }
    let num = |s: &str, what: &str| s.parse::<i64>().map_err(|_| format!("bad {what} `{s}`"));
    let mut encounters = Vec::new();
    for group in f[4].split(' ').filter(|g| !g.is_empty()) {
        let (day, codes) = group.split_once(':').ok_or_else(|| format!("bad encounter `{group}`"))?;
        let codes = codes.split(',').map(str::parse).collect::<std::result::Result<Vec<Code>, _>>()?;
        encounters.push(Encounter::new(num(day, "day")?, codes));
    }
    let s = EncounterStream {
        patient_id: num(f[0], "id")? as u32,
        gender: num(f[1], "gender")? as u8,
        race: num(f[2], "race")? as u8,
        birth_offset: num(f[3], "birth offset")?,
        encounters,
    };
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

pub fn write_population(path: &Path, streams: &[EncounterStream]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{SCHEMA_TAG}").map_err(io)?;
    for s in streams {
        writeln!(w, "{}", format_stream(s)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_population(path: &Path) -> Result<Vec<EncounterStream>> {
    let lines = read_lines(path)?;
    lines
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_stream(l).map_err(|m| Error::format(path, i + 1, m)))
        .collect()
}

fn format_tensor(t: &PatientTensor) -> String {
    let demo = t.demographics.onehot_indices();
    let mut out = format!("{}\t{}\t{},{},{}", t.patient_id, t.label as u8, demo[0], demo[1], demo[2]);
    for q in &t.quarters {
        let cells: Vec<String> = q.iter().map(|(i, c)| format!("{i}:{c}")).collect();
        out.push('\t');
        out.push_str(&cells.join(","));
    }
    out
}

fn parse_tensor(line: &str, vocab_len: usize) -> std::result::Result<PatientTensor, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 3 + N_QUARTERS {
        return Err(format!("expected {} fields, found {}", 3 + N_QUARTERS, f.len()));
    }
    let label = match f[1] {
        "0" => Label::Control,
        "1" => Label::Case,
        other => return Err(format!("bad label `{other}`")),
    };
    let demo: Vec<usize> = f[2]
        .split(',')
        .map(|x| x.parse().map_err(|_| format!("bad demographic index `{x}`")))
        .collect::<std::result::Result<_, _>>()?;
    let demo: [usize; 3] = demo.try_into().map_err(|_| "expected 3 demographic indices".to_string())?;
    let mut quarters: [Vec<(usize, u32)>; N_QUARTERS] = Default::default();
    for (q, field) in f[3..].iter().enumerate() {
        for cell in field.split(',').filter(|c| !c.is_empty()) {
            let (i, c) = cell.split_once(':').ok_or_else(|| format!("bad count `{cell}`"))?;
            let i: usize = i.parse().map_err(|_| format!("bad index `{i}`"))?;
            let c: u32 = c.parse().map_err(|_| format!("bad count `{c}`"))?;
            if i >= vocab_len || c == 0 {
                return Err(format!("count `{cell}` outside vocabulary or zero"));
            }
            if quarters[q].last().is_some_and(|&(prev, _)| prev >= i) {
                return Err("quarter indices must increase".into());
            }
            quarters[q].push((i, c));
        }
    }
    Ok(PatientTensor {
        patient_id: f[0].parse().map_err(|_| format!("bad id `{}`", f[0]))?,
        label,
        demographics: Demographics::from_onehot_indices(demo).map_err(|e| e.to_string())?,
        quarters,
    })
}

pub fn write_cohort(path: &Path, vocab: &Vocabulary, tensors: &[PatientTensor]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{SCHEMA_TAG}").map_err(io)?;
    let codes: Vec<String> = vocab.codes().iter().map(Code::to_string).collect();
    writeln!(w, "vocab\t{}", codes.join(",")).map_err(io)?;
    for t in tensors {
        writeln!(w, "{}", format_tensor(t)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_cohort(path: &Path) -> Result<(Vocabulary, Vec<PatientTensor>)> {
    let lines = read_lines(path)?;
    let header = lines
        .get(1)
        .and_then(|l| l.strip_prefix("vocab\t"))
        .ok_or_else(|| Error::format(path, 2, "missing vocab header"))?;
    let codes = header
        .split(',')
        .map(str::parse)
        .collect::<std::result::Result<Vec<Code>, _>>()
        .map_err(|m| Error::format(path, 2, m))?;
    let vocab = Vocabulary::new(codes)?;
    let tensors = lines
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_tensor(l, vocab.len()).map_err(|m| Error::format(path, i + 1, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_population, ConditionModel, GeneratorConfig};
    use crate::par::Exec;

    #[test]
    fn population_roundtrip() {
        let cfg = GeneratorConfig::new(40, 20, vec![ConditionModel::synthetic(0, 20, vec![], 0.2)]);
        let streams = generate_population(1, &cfg, Exec::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pop.txt");
        write_population(&p, &streams).unwrap();
        assert_eq!(read_population(&p).unwrap(), streams);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("savehr-cohort/1\n"));
    }

    #[test]
    fn cohort_roundtrip_and_tag_check() {
        let vocab = Vocabulary::new(vec![Code(3), Code(8), Code(11)]).unwrap();
        let t = PatientTensor {
            patient_id: 12,
            label: Label::Case,
            demographics: Demographics { gender: 0, race: 3, age_bin: 6 },
            quarters: [vec![(0, 2), (2, 1)], vec![], vec![(1, 5)], vec![]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        write_cohort(&p, &vocab, std::slice::from_ref(&t)).unwrap();
        let (v2, ts) = read_cohort(&p).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(ts, vec![t]);

        std::fs::write(&p, "other/1\n").unwrap();
        assert!(matches!(read_cohort(&p), Err(Error::Format { line: 1, .. })));
        std::fs::write(&p, format!("{SCHEMA_TAG}\nvocab\tC0003\n1\t1\t0,2,7\t5:1\t\t\t\n")).unwrap();
        assert!(matches!(read_cohort(&p), Err(Error::Format { line: 3, .. })));
    }
}
