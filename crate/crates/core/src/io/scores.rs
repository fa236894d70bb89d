//! Per-latent explanation scores.
//!
//! Two comma-separated columns, `latent,score`, one latent per line. A
//! non-numeric first line is taken as a header, blank lines and lines
//! starting with `#` are skipped. Latents absent from the file are `None`.

use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub fn parse_scores(text: &str, m: usize) -> Result<Vec<Option<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut scores = vec![None; m];
    let mut first = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| FormatError::Line {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::from(FormatError::Line { line, message });
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let is_first = std::mem::replace(&mut first, false);
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", rec.len())));
        }
        let latent = match rec[0].parse::<usize>() {
            Ok(l) => l,
            Err(_) if is_first && rec[1].parse::<f64>().is_err() => continue,
            Err(_) => return Err(bad(format!("bad latent index {:?}", &rec[0]))),
        };
        let score: f64 = rec[1].parse().map_err(|_| bad(format!("bad score {:?}", &rec[1])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(FormatError::ScoreOutOfRange { line, score }.into());
        }
        if latent >= m {
            return Err(bad(format!("latent {latent} out of range for {m} latents")));
        }
        if scores[latent].replace(score).is_some() {
            return Err(FormatError::DuplicateLatent { line, latent }.into());
        }
    }
    Ok(scores)
}

pub fn load_scores(path: impl AsRef<Path>, m: usize) -> Result<Vec<Option<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let s = parse_scores("0,0.72", 3).unwrap();
        assert_eq!(s, vec![Some(0.72), None, None]);
    }

    #[test]
    fn empty_file_is_all_missing() {
        assert_eq!(parse_scores("", 4).unwrap(), vec![None; 4]);
        assert_eq!(parse_scores("latent,score\n", 2).unwrap(), vec![None; 2]);
    }

    #[test]
    fn header_comments_and_blank_lines() {
        let s = parse_scores("# detection\nlatent,score\n\n2, 0.5\n0,1\n", 3).unwrap();
        assert_eq!(s, vec![Some(1.0), None, Some(0.5)]);
    }

    #[test]
    fn out_of_range_reports_line() {
        match parse_scores("0,0.2\n1,1.5\n", 2) {
            Err(Error::Format(FormatError::ScoreOutOfRange { line: 2, score })) => assert_eq!(score, 1.5),
            other => panic!("{other:?}"),
        }
        assert!(parse_scores("0,-0.0001", 1).is_err());
        assert!(parse_scores("0,NaN", 1).is_err());
    }

    #[test]
    fn duplicates_and_garbage_rejected() {
        assert!(matches!(
            parse_scores("1,0.1\n1,0.2\n", 2),
            Err(Error::Format(FormatError::DuplicateLatent { line: 2, latent: 1 }))
        ));
        assert!(parse_scores("0,0.1\nx,0.2\n", 2).is_err());
        assert!(parse_scores("5,0.1\n", 2).is_err());
        assert!(parse_scores("0,0.1,3\n", 2).is_err());
    }

    #[test]
    fn reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "1,0.25\n").unwrap();
        assert_eq!(load_scores(&p, 2).unwrap(), vec![None, Some(0.25)]);
        assert!(matches!(load_scores(dir.path().join("missing"), 2), Err(Error::Io { .. })));
    }
}
